"""Discrete-round simulation of decentralized retriever training.

Peers are split into equal groups, one per shard.  Every round each peer
sends one pair from its personal dataset to a random peer of its own group;
a peer trains whenever its batch fills to exactly ``batch_size`` pairs, then
reseeds the next batch with a small sample of its own data.  Peers gossip raw
training pairs, never model weights, so every model stays local.

All per-peer randomness comes from per-peer generators derived from the
global seed, which makes a run a pure function of (config, shards, seed) and
independent of any physical execution order.
"""

import json
import os
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .corpus import Corpus, QueryDocPair, Shard, sample_personal_dataset
from .model import GruRetriever
from .seeding import derive, rng_for
from .training import train_batch
from .vocab import build_vocab


@dataclass
class SimConfig:
    num_peers: int = 30
    num_shards: int = 3
    batch_size: int = 32
    batch_budget: int = 8000
    min_docs: int = 200            # personal dataset bounds per peer
    max_docs: int = 300
    seed: int = 0
    round_interval: float = 0.1    # informational; rounds are unit ticks
    model_width: int = 128
    model_lr: float = 5e-3

    def __post_init__(self):
        if self.num_peers % self.num_shards:
            raise ValueError(
                f"num_peers={self.num_peers} not divisible by "
                f"num_shards={self.num_shards}")
        if self.batch_size < 1 or self.batch_budget < 1:
            raise ValueError("batch_size and batch_budget must be >= 1")

    @property
    def group_size(self) -> int:
        return self.num_peers // self.num_shards

    @property
    def self_seed_size(self) -> int:
        # nearest-integer of batch_size / num_peers, half rounding to even
        return round(self.batch_size / self.num_peers)

    def to_dict(self) -> dict:
        return dict(vars(self))


@dataclass
class Peer:
    peer_id: int
    shard_id: int
    dataset: "list[QueryDocPair]"         # personal dataset S
    doc_ids: set
    model: object
    rng: np.random.Generator
    batch: "list[QueryDocPair]" = field(default_factory=list)
    batch_sources: "list[str]" = field(default_factory=list)  # "self"|"gossip"
    batches_done: int = 0
    loss_trace: "list[float]" = field(default_factory=list)
    sent: int = 0
    received: int = 0
    discarded_budget: int = 0
    discarded_capacity: int = 0
    batch_self_counts: "list[int]" = field(default_factory=list)

    def seed_batch(self, size: int):
        if size > 0:
            idx = self.rng.choice(len(self.dataset), size=size, replace=False)
            for i in idx:
                self.batch.append(self.dataset[int(i)])
                self.batch_sources.append("self")


@dataclass
class RoundEngine:
    cfg: SimConfig
    peers: "list[Peer]"
    groups: "dict[int, list[int]]"
    rounds: int = 0
    messages_sent: int = 0
    cross_group_messages: int = 0
    message_log: Optional[list] = None    # [(round, sender, recipient)] if kept

    def group_of(self, peer_id: int) -> int:
        return self.peers[peer_id].shard_id


def init_network(cfg: SimConfig, shards: "list[Shard]", vocab=None,
                 model_factory=None, keep_message_log: bool = False
                 ) -> RoundEngine:
    """Build peers, personal datasets, models, and pre-seeded first batches."""
    if len(shards) != cfg.num_shards:
        raise ValueError(f"expected {cfg.num_shards} shards, got {len(shards)}")
    if cfg.group_size < 2:
        raise ValueError("each group needs >= 2 peers so every sender has a "
                         "valid recipient")
    if vocab is None:
        union = {}
        for shard in shards:
            union.update(shard.docs)
        vocab = build_vocab(Corpus(union))
    if model_factory is None:
        def model_factory(peer_id):
            return GruRetriever(vocab, width=cfg.model_width,
                                seed=derive(cfg.seed, "model", peer_id),
                                lr=cfg.model_lr)
    peers = []
    groups: dict = {s.shard_id: [] for s in shards}
    for peer_id in range(cfg.num_peers):
        shard = shards[peer_id // cfg.group_size]
        doc_ids, pairs = sample_personal_dataset(
            shard, cfg.min_docs, cfg.max_docs,
            seed=derive(cfg.seed, "dataset", peer_id))
        peer = Peer(peer_id=peer_id, shard_id=shard.shard_id,
                    dataset=pairs, doc_ids=doc_ids,
                    model=model_factory(peer_id),
                    rng=rng_for(cfg.seed, "peer", peer_id))
        peer.seed_batch(cfg.self_seed_size)
        peers.append(peer)
        groups[shard.shard_id].append(peer_id)
    return RoundEngine(cfg=cfg, peers=peers, groups=groups,
                       message_log=[] if keep_message_log else None)


def gossip_round(engine: RoundEngine) -> RoundEngine:
    """One tick: every peer sends one own pair to a random peer of its group.

    Deliveries land after all sends (buffered), in sender order.  Recipients
    past their batch budget, or with a full batch, discard the pair (counted).
    """
    cfg = engine.cfg
    deliveries = []
    for peer in engine.peers:
        pair = peer.dataset[int(peer.rng.integers(len(peer.dataset)))]
        group = engine.groups[peer.shard_id]
        others = [p for p in group if p != peer.peer_id]
        if not others:
            raise RuntimeError(f"group {peer.shard_id} has a single peer; "
                               f"no valid recipient")
        recipient = others[int(peer.rng.integers(len(others)))]
        deliveries.append((peer.peer_id, recipient, pair))
        peer.sent += 1
    for sender, recipient, pair in deliveries:
        target = engine.peers[recipient]
        target.received += 1
        if engine.peers[sender].shard_id != target.shard_id:
            engine.cross_group_messages += 1
        if engine.message_log is not None:
            engine.message_log.append((engine.rounds, sender, recipient))
        if target.batches_done >= cfg.batch_budget:
            target.discarded_budget += 1
        elif len(target.batch) >= cfg.batch_size:
            target.discarded_capacity += 1
        else:
            target.batch.append(pair)
            target.batch_sources.append("gossip")
    engine.messages_sent += cfg.num_peers
    engine.rounds += 1
    return engine


def maybe_train(peer: Peer, cfg: SimConfig):
    """Train once the batch holds exactly batch_size pairs, then reseed."""
    if len(peer.batch) < cfg.batch_size:
        return None
    loss = train_batch(peer.model, peer.batch)
    peer.loss_trace.append(loss)
    peer.batch_self_counts.append(peer.batch_sources.count("self"))
    peer.batches_done += 1
    peer.batch = []
    peer.batch_sources = []
    if peer.batches_done < cfg.batch_budget:
        peer.seed_batch(cfg.self_seed_size)
    return loss


def run_simulation(engine: RoundEngine, cfg: Optional[SimConfig] = None,
                   progress=None, max_rounds: Optional[int] = None):
    """Alternate rounds and round-end training (ascending peer id) until every
    peer has trained batch_budget batches.  Finished peers keep relaying."""
    cfg = cfg or engine.cfg
    if max_rounds is None:
        # generous: expected fill rate is ~1 received pair per round
        max_rounds = 50 * cfg.batch_budget * cfg.batch_size
    while any(p.batches_done < cfg.batch_budget for p in engine.peers):
        gossip_round(engine)
        for peer in engine.peers:
            maybe_train(peer, cfg)
        if progress and engine.rounds % 100 == 0:
            done = sum(p.batches_done for p in engine.peers)
            progress(engine.rounds, done)
        if engine.rounds >= max_rounds:
            raise RuntimeError(f"simulation exceeded {max_rounds} rounds")
    return SimResult(engine=engine)


@dataclass
class SimResult:
    engine: RoundEngine

    @property
    def loss_traces(self) -> "dict[int, list[float]]":
        return {p.peer_id: list(p.loss_trace) for p in self.engine.peers}

    def models(self) -> "dict[int, object]":
        return {p.peer_id: p.model for p in self.engine.peers}

    def sampled_doc_ids(self, shard_id=None) -> set:
        """Union of personal-dataset docs; documents nobody sampled are
        dropped from the experiment's test universe."""
        out: set = set()
        for p in self.engine.peers:
            if shard_id is None or p.shard_id == shard_id:
                out |= p.doc_ids
        return out

    def stats(self) -> dict:
        e = self.engine
        return {
            "rounds": e.rounds,
            "messages_sent": e.messages_sent,
            "cross_group_messages": e.cross_group_messages,
            "peers": [{
                "peer_id": p.peer_id,
                "shard_id": p.shard_id,
                "dataset_docs": len(p.doc_ids),
                "dataset_pairs": len(p.dataset),
                "sent": p.sent,
                "received": p.received,
                "discarded_budget": p.discarded_budget,
                "discarded_capacity": p.discarded_capacity,
                "batches_done": p.batches_done,
                "batch_self_counts": p.batch_self_counts,
                "final_batch_size": len(p.batch),
            } for p in e.peers],
        }


def rolling_mean(trace, window: int):
    """Trailing mean: out[i] = mean(trace[max(0, i-window+1)..i]); the output
    has the same length as the input."""
    if window < 1:
        raise ValueError("window must be >= 1")
    x = np.asarray(trace, dtype=float)
    if x.size == 0:
        raise ValueError("empty trace")
    out = np.empty(x.size)
    head = min(window - 1, x.size)
    if head:
        out[:head] = np.cumsum(x[:head]) / np.arange(1, head + 1)
    if x.size >= window:
        sw = np.lib.stride_tricks.sliding_window_view(x, window)
        out[window - 1:] = sw.mean(axis=1)
    return out


def sample_model_pool(engine: RoundEngine, per_shard: int,
                      pool: str = "all_shards", shard_id: Optional[int] = None,
                      seed: int = 0):
    """Seeded sample of per_shard peers from each qualifying shard; returns
    [(peer_id, model)] for ensemble inference."""
    if pool == "all_shards":
        shard_ids = sorted(engine.groups)
    elif pool == "own_shard":
        if shard_id is None:
            raise ValueError("own_shard pool needs shard_id")
        shard_ids = [shard_id]
    else:
        raise ValueError(f"unknown pool {pool!r}")
    rng = rng_for(seed, "model_pool", pool, shard_id)
    picked = []
    for sid in shard_ids:
        group = engine.groups[sid]
        if per_shard > len(group):
            raise ValueError(f"per_shard={per_shard} exceeds group size "
                             f"{len(group)} of shard {sid}")
        idx = rng.choice(len(group), size=per_shard, replace=False)
        picked.extend((group[int(i)], engine.peers[group[int(i)]].model)
                      for i in idx)
    return picked


def save_sim_manifest(engine: RoundEngine, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    manifest = {
        "config": engine.cfg.to_dict(),
        "self_seed_size": engine.cfg.self_seed_size,
        "groups": {str(k): v for k, v in engine.groups.items()},
        "peer_doc_counts": {p.peer_id: len(p.doc_ids) for p in engine.peers},
    }
    path = os.path.join(out_dir, "sim_manifest.json")
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, sort_keys=True, indent=2)
    return path
