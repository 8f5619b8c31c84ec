"""Click-log corpus handling: ingestion, selection, splits, shards, magnet ids.

The corpus is content-oblivious: a document is nothing but an identifier
string plus the ordered list of user queries that clicked it.  Query order is
the order of first appearance in the ingested file and is frozen in the
manifest, because the seen-queries experiments rely on nested "first n"
subsets being stable across runs.
"""

import json
import hashlib
import logging
import os
import re
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Optional

import numpy as np

from .seeding import rng_for

log = logging.getLogger(__name__)

MAGNET_LEN = 40
MAGNET_ALPHABET = "0123456789abcdef"
_MAGNET_RE = re.compile(r"^[0-9a-f]{40}$")

# A run is considered corrupt, not merely noisy, past this malformed-row share.
MALFORMED_ROW_LIMIT = 0.01

_WS_RUN = re.compile(r"\s+")


class IngestError(RuntimeError):
    """Raised when an input file cannot be ingested."""


class QueryDocPair(NamedTuple):
    query: str
    docid: str


@dataclass
class SplitSpec:
    train_per_doc: int
    val_per_doc: int
    test_per_doc: int

    def __post_init__(self):
        if min(self.train_per_doc, self.val_per_doc, self.test_per_doc) < 0:
            raise ValueError("split counts must be >= 0")

    @property
    def total(self) -> int:
        return self.train_per_doc + self.val_per_doc + self.test_per_doc


@dataclass
class Corpus:
    """docid -> ordered, de-duplicated query list."""

    docs: "dict[str, list[str]]"
    id_mode: str = "orcas"  # "orcas" | "magnet"
    manifest: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.id_mode not in ("orcas", "magnet"):
            raise ValueError(f"unknown id_mode {self.id_mode!r}")

    @property
    def doc_ids(self) -> "list[str]":
        return list(self.docs)

    @property
    def num_docs(self) -> int:
        return len(self.docs)

    def pairs(self) -> "list[QueryDocPair]":
        return [QueryDocPair(q, d) for d, qs in self.docs.items() for q in qs]

    def id_alphabet(self) -> "list[str]":
        """Sorted distinct characters over all docids."""
        chars = set()
        for docid in self.docs:
            chars.update(docid)
        return sorted(chars)

    def max_docid_len(self) -> int:
        return max((len(d) for d in self.docs), default=0)


@dataclass
class Shard:
    """One disjoint partition of a corpus's documents, with all their pairs."""

    shard_id: int
    docs: "dict[str, list[str]]"

    @property
    def doc_ids(self) -> "set[str]":
        return set(self.docs)

    @property
    def num_docs(self) -> int:
        return len(self.docs)

    def pairs(self) -> "list[QueryDocPair]":
        return [QueryDocPair(q, d) for d, qs in self.docs.items() for q in qs]

    def as_corpus(self, id_mode="orcas") -> Corpus:
        return Corpus(dict(self.docs), id_mode=id_mode,
                      manifest={"source": f"shard:{self.shard_id}"})


def normalize_query(raw: str) -> str:
    """Trim, collapse whitespace runs, lowercase.  Identifiers are never touched."""
    return _WS_RUN.sub(" ", raw.strip()).lower()


def _parse_row(fields):
    """Accepts the 2-column reduced form (query, docid) and the 4-column raw
    click-log form (qid, query, docid, url).  Returns (query, docid) or None."""
    if len(fields) == 2:
        query, docid = fields
    elif len(fields) == 4:
        _, query, docid, _ = fields
    else:
        return None
    query = normalize_query(query)
    docid = docid.strip()
    if not query or not docid or any(c.isspace() for c in docid):
        return None
    return query, docid


def ingest_orcas(path, max_docs: Optional[int] = None,
                 min_queries_per_doc: int = 1) -> Corpus:
    """Stream a tab-separated click log into a Corpus.

    Duplicate (query, docid) rows collapse to the first occurrence; documents
    with fewer than ``min_queries_per_doc`` distinct queries are dropped at the
    end.  ``max_docs`` caps the number of distinct documents tracked (rows for
    already-known documents are still appended), which keeps memory bounded on
    very large inputs.  Malformed rows are skipped with a counter; the run
    fails if more than 1% of rows are malformed.
    """
    docs: dict = {}
    seen: dict = {}
    total = 0
    malformed = 0
    try:
        fh = open(path, "r", encoding="utf-8", newline="")
    except OSError as exc:
        raise IngestError(f"cannot read input file {path}: {exc}") from exc
    with fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\r\n")
            if not line:
                continue
            total += 1
            parsed = _parse_row(line.split("\t"))
            if parsed is None:
                malformed += 1
                if malformed <= 5:
                    log.warning("%s:%d: malformed row skipped", path, lineno)
                continue
            query, docid = parsed
            if docid not in docs:
                if max_docs is not None and len(docs) >= max_docs:
                    continue
                docs[docid] = []
                seen[docid] = set()
            if query not in seen[docid]:
                seen[docid].add(query)
                docs[docid].append(query)
    if total and malformed / total > MALFORMED_ROW_LIMIT:
        raise IngestError(
            f"{malformed} of {total} rows malformed in {path} "
            f"(limit {MALFORMED_ROW_LIMIT:.0%})")
    kept = {d: qs for d, qs in docs.items() if len(qs) >= min_queries_per_doc}
    manifest = {
        "source": str(path),
        "rows": total,
        "malformed_rows": malformed,
        "min_queries_per_doc": min_queries_per_doc,
        "max_docs": max_docs,
    }
    return Corpus(kept, id_mode="orcas", manifest=manifest)


def select_documents(corpus: Corpus, n_docs: int, min_queries: int,
                     seed: int) -> Corpus:
    """Seeded uniform sample of n_docs documents having >= min_queries queries;
    each kept document's query list is truncated to exactly min_queries."""
    qualifying = [d for d, qs in corpus.docs.items() if len(qs) >= min_queries]
    if len(qualifying) < n_docs:
        raise ValueError(
            f"need {n_docs} documents with >= {min_queries} queries, "
            f"only {len(qualifying)} available")
    rng = rng_for(seed, "select_documents")
    idx = rng.choice(len(qualifying), size=n_docs, replace=False)
    chosen = {qualifying[i] for i in idx}
    docs = {d: qs[:min_queries] for d, qs in corpus.docs.items() if d in chosen}
    manifest = dict(corpus.manifest)
    manifest.update({"selection_seed": seed, "n_docs": n_docs,
                     "min_queries": min_queries})
    return Corpus(docs, id_mode=corpus.id_mode, manifest=manifest)


def make_splits(corpus: Corpus, spec: SplitSpec):
    """Per document: first train_per_doc queries -> train, next val_per_doc ->
    val, next test_per_doc -> test.  Every document appears in every split."""
    train, val, test = [], [], []
    for docid, queries in corpus.docs.items():
        if len(queries) < spec.total:
            raise ValueError(
                f"document {docid} has {len(queries)} queries, "
                f"split needs {spec.total}")
        a = spec.train_per_doc
        b = a + spec.val_per_doc
        c = b + spec.test_per_doc
        train.extend(QueryDocPair(q, docid) for q in queries[:a])
        val.extend(QueryDocPair(q, docid) for q in queries[a:b])
        test.extend(QueryDocPair(q, docid) for q in queries[b:c])
    return train, val, test


def first_n_queries(train: "list[QueryDocPair]", n: int) -> "list[QueryDocPair]":
    """Per document, the first n training queries, preserving list order.
    Nested by construction: the result for n is a prefix-filter of n+1."""
    if n < 1:
        raise ValueError("n must be >= 1")
    counts: dict = {}
    out = []
    for pair in train:
        c = counts.get(pair.docid, 0)
        if c < n:
            out.append(pair)
        counts[pair.docid] = c + 1
    short = [d for d, c in counts.items() if c < n]
    if short:
        raise ValueError(
            f"{len(short)} documents have fewer than {n} training queries "
            f"(first: {short[0]})")
    return out


def partition_shards(corpus: Corpus, num_shards: int, seed: int) -> "list[Shard]":
    """Seeded uniform partition of documents into num_shards disjoint shards
    whose sizes differ by at most one."""
    if num_shards < 1:
        raise ValueError("num_shards must be >= 1")
    if num_shards > corpus.num_docs:
        raise ValueError(
            f"num_shards={num_shards} exceeds document count {corpus.num_docs}")
    doc_ids = corpus.doc_ids
    rng = rng_for(seed, "partition_shards")
    order = rng.permutation(len(doc_ids))
    base, extra = divmod(len(doc_ids), num_shards)
    shards = []
    pos = 0
    for sid in range(num_shards):
        size = base + (1 if sid < extra else 0)
        chosen = {doc_ids[i] for i in order[pos:pos + size]}
        pos += size
        docs = {d: qs for d, qs in corpus.docs.items() if d in chosen}
        shards.append(Shard(shard_id=sid, docs=docs))
    return shards


def sample_personal_dataset(shard: Shard, min_docs: int, max_docs: int,
                            seed: int):
    """Draw k ~ Uniform{min_docs..max_docs} documents from the shard and return
    (doc_ids, all their pairs).  Different peers may draw overlapping sets."""
    if min_docs > max_docs:
        raise ValueError(f"min_docs {min_docs} > max_docs {max_docs}")
    if max_docs > shard.num_docs:
        raise ValueError(
            f"max_docs {max_docs} exceeds shard size {shard.num_docs}")
    if min_docs < 1:
        raise ValueError("min_docs must be >= 1")
    rng = rng_for(seed, "personal_dataset")
    k = int(rng.integers(min_docs, max_docs + 1))
    doc_list = list(shard.docs)
    idx = rng.choice(len(doc_list), size=k, replace=False)
    chosen = {doc_list[i] for i in idx}
    pairs = [QueryDocPair(q, d) for d, qs in shard.docs.items()
             if d in chosen for q in qs]
    return chosen, pairs


def make_magnet_id(rng) -> str:
    return "".join(MAGNET_ALPHABET[i] for i in rng.integers(0, 16, MAGNET_LEN))


def is_magnet_id(value: str) -> bool:
    return bool(_MAGNET_RE.match(value))


def assign_magnet_links(corpus: Corpus, seed: int) -> Corpus:
    """Replace every docid with a fresh unique 40-char lowercase hex infohash.
    Query lists are unchanged; the old->new mapping lands in the manifest."""
    if corpus.id_mode != "orcas":
        raise ValueError(f"corpus already in id_mode {corpus.id_mode!r}")
    rng = rng_for(seed, "assign_magnet_links")
    mapping: dict = {}
    used: set = set()
    for docid in corpus.docs:
        for attempt in range(1000):
            magnet = make_magnet_id(rng)
            if magnet not in used:
                break
        else:
            raise RuntimeError("magnet id collision retry budget exhausted")
        used.add(magnet)
        mapping[docid] = magnet
    docs = {mapping[d]: list(qs) for d, qs in corpus.docs.items()}
    manifest = dict(corpus.manifest)
    manifest.update({"magnet_seed": seed, "magnet_mapping": mapping})
    return Corpus(docs, id_mode="magnet", manifest=manifest)


# --- persistence -----------------------------------------------------------

def _query_order_hash(queries) -> str:
    return hashlib.sha256("\n".join(queries).encode()).hexdigest()


def corpus_manifest_dict(corpus: Corpus) -> dict:
    """Deterministic manifest: doc list, per-doc query-order hashes, id_mode,
    provenance.  Dumped key-sorted so equal corpora give byte-equal files."""
    meta = {k: v for k, v in corpus.manifest.items() if k != "magnet_mapping"}
    return {
        "id_mode": corpus.id_mode,
        "num_docs": corpus.num_docs,
        "doc_ids": corpus.doc_ids,
        "query_order_hashes": {d: _query_order_hash(qs)
                               for d, qs in corpus.docs.items()},
        "meta": meta,
        "magnet_mapping_path": ("magnet_mapping.json"
                                if "magnet_mapping" in corpus.manifest else None),
    }


def save_corpus(corpus: Corpus, out_dir):
    """Write corpus.tsv (2-column), manifest.json and, in magnet mode, the
    old->new mapping file.  Returns the list of paths written."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    tsv_path = os.path.join(out_dir, "corpus.tsv")
    write_pairs_tsv(corpus.pairs(), tsv_path)
    written.append(tsv_path)
    if "magnet_mapping" in corpus.manifest:
        mpath = os.path.join(out_dir, "magnet_mapping.json")
        with open(mpath, "w", encoding="utf-8") as fh:
            json.dump(corpus.manifest["magnet_mapping"], fh, sort_keys=True,
                      indent=0)
        written.append(mpath)
    man_path = os.path.join(out_dir, "manifest.json")
    with open(man_path, "w", encoding="utf-8") as fh:
        json.dump(corpus_manifest_dict(corpus), fh, sort_keys=True, indent=2)
    written.append(man_path)
    return written


def load_corpus(out_dir) -> Corpus:
    man_path = os.path.join(out_dir, "manifest.json")
    with open(man_path, encoding="utf-8") as fh:
        man = json.load(fh)
    corpus = ingest_orcas(os.path.join(out_dir, "corpus.tsv"))
    corpus.id_mode = man["id_mode"]
    corpus.manifest = dict(man["meta"])
    # ingest follows file order, which save_corpus wrote in corpus order
    if man["doc_ids"] != corpus.doc_ids:
        raise IngestError(f"corpus in {out_dir} does not match its manifest")
    return corpus


def write_pairs_tsv(pairs: Iterable[QueryDocPair], path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for pair in pairs:
            fh.write(f"{pair.query}\t{pair.docid}\n")


def read_pairs_tsv(path) -> "list[QueryDocPair]":
    pairs = []
    with open(path, encoding="utf-8") as fh:
        for line in fh:
            line = line.rstrip("\r\n")
            if not line:
                continue
            query, docid = line.split("\t")
            pairs.append(QueryDocPair(query, docid))
    return pairs
