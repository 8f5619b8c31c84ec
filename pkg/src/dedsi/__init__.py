"""Desk-scale lab for sharded generative retrieval.

Train sequence-to-sequence retrievers that map raw queries to document
identifiers, shard the document space across simulated peer groups trained by
gossip, and fuse per-shard beam-search outputs with softmax-normalized
confidence scores into one ranked result list.
"""

__version__ = "0.1.0"
