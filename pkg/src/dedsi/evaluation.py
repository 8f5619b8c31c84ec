"""Top-k accuracy measurement and the four experiment runners.

Each runner reproduces one experimental design at a configurable scale:
seen-queries sweep, sharded ensemble vs. personal vs. singular model,
decentralized gossip training, and docid-vs-magnet identifier comparison.
Accuracies are always exact hit/support ratios and every record carries the
seed; reports are emitted as metrics.csv / metrics.json plus plot-ready
long-format tables.
"""

import csv
import hashlib
import json
import os
from dataclasses import asdict, dataclass, field
from typing import Callable, Optional

from .beam import batched_greedy
from .corpus import (Corpus, Shard, SplitSpec, assign_magnet_links,
                     ingest_orcas, is_magnet_id, load_corpus, make_splits,
                     first_n_queries, partition_shards, select_documents)
from .ensemble import EnsembleRanker, EnsembleResult
from .gossip import SimConfig, init_network, run_simulation, sample_model_pool
from .model import GruRetriever
from .seeding import derive
from .synthetic import synthetic_corpus
from .training import TrainConfig, top1_accuracy, train_epochs
from .vocab import build_vocab

METRICS_COLUMNS = ["arm", "shard", "pool", "k", "accuracy", "support", "seed"]


@dataclass
class MetricsRecord:
    arm: str
    k: int
    accuracy: float
    support: int
    seed: int
    shard: Optional[int] = None
    pool: Optional[str] = None

    @classmethod
    def from_counts(cls, arm, hits, support, k, seed, shard=None, pool=None):
        if support <= 0:
            raise ValueError("support must be positive")
        return cls(arm=arm, k=k, accuracy=hits / support, support=support,
                   seed=seed, shard=shard, pool=pool)

    def row(self):
        return [self.arm,
                "" if self.shard is None else self.shard,
                "" if self.pool is None else self.pool,
                self.k, repr(self.accuracy), self.support, self.seed]


def topk_accuracy(ranker: Callable[[str], EnsembleResult], test, k: int,
                  *, arm: str = "ranker", seed: int = 0, shard=None,
                  pool=None) -> MetricsRecord:
    """Hit iff the gold docid is among the top-k distinct ranked docids."""
    if k < 1:
        raise ValueError("k must be >= 1")
    if not test:
        raise ValueError("empty test set")
    hits = 0
    for pair in test:
        if pair.docid in ranker(pair.query).docids()[:k]:
            hits += 1
    return MetricsRecord.from_counts(arm, hits, len(test), k, seed,
                                     shard=shard, pool=pool)


def ranker_hits(ranker, pairs, ks):
    """One ranker pass per query, hit counts for every k in ks."""
    hits = {k: 0 for k in ks}
    for pair in pairs:
        docids = ranker(pair.query).docids()
        for k in ks:
            if pair.docid in docids[:k]:
                hits[k] += 1
    return hits


def greedy_hits(model, pairs):
    max_len = model.vocab.max_docid_len
    decoded = batched_greedy(model, [p.query for p in pairs], max_len)
    return sum(1 for text, pair in zip(decoded, pairs) if text == pair.docid)


# --- experiment specification -----------------------------------------------

@dataclass
class ExperimentSpec:
    experiment: str
    seed: int = 0
    # corpus
    corpus_source: str = "synthetic"      # synthetic | tsv | dir
    corpus_path: Optional[str] = None
    n_docs: int = 60
    queries_per_doc: int = 60
    lexicon_size: int = 400
    words_per_doc: int = 8
    # splits
    split: "tuple[int, int, int]" = (20, 20, 20)
    # model / training
    model_width: int = 128
    model_lr: float = 5e-3
    batch_size: int = 32
    max_epochs: int = 150
    early_stop_window: int = 20
    early_stop_delta: float = 0.01
    # ensembles
    num_shards: int = 3
    beam_width: int = 5
    k_list: "list[int]" = field(default_factory=lambda: [1, 2, 3, 4, 5])
    # content-oblivious sweep
    n_list: "list[int]" = field(default_factory=lambda: [1, 2, 4, 8])
    # decentralized
    num_peers: int = 6
    batch_budget: int = 300
    peer_min_docs: int = 4
    peer_max_docs: int = 8
    per_shard: int = 2

    # "fit" is the plain single-training mode of the train command
    EXPERIMENTS = ("content_oblivious", "ensemble10", "decentralized",
                   "magnet_compare", "fit")

    def __post_init__(self):
        if self.experiment not in self.EXPERIMENTS:
            raise ValueError(f"unknown experiment {self.experiment!r}; "
                             f"expected one of {self.EXPERIMENTS}")
        self.split = tuple(self.split)
        if sum(self.split) > self.queries_per_doc:
            raise ValueError(
                f"split {self.split} needs {sum(self.split)} queries/doc, "
                f"spec provides {self.queries_per_doc}")

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentSpec":
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown spec fields: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["split"] = list(self.split)
        return d

    def spec_hash(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]

    def train_config(self, role) -> TrainConfig:
        return TrainConfig(batch_size=self.batch_size,
                           max_epochs=self.max_epochs,
                           early_stop_window=self.early_stop_window,
                           early_stop_delta=self.early_stop_delta,
                           seed=derive(self.seed, "train", role))

    def new_model(self, vocab, role) -> GruRetriever:
        return GruRetriever(vocab, width=self.model_width,
                            seed=derive(self.seed, "model", role),
                            lr=self.model_lr)


def build_corpus(spec: ExperimentSpec) -> Corpus:
    if spec.corpus_source == "synthetic":
        return synthetic_corpus(spec.n_docs, spec.queries_per_doc,
                                seed=derive(spec.seed, "corpus"),
                                lexicon_size=spec.lexicon_size,
                                words_per_doc=spec.words_per_doc)
    if spec.corpus_source == "tsv":
        raw = ingest_orcas(spec.corpus_path,
                           min_queries_per_doc=spec.queries_per_doc)
        return select_documents(raw, spec.n_docs, spec.queries_per_doc,
                                seed=derive(spec.seed, "corpus"))
    if spec.corpus_source == "dir":
        raw = load_corpus(spec.corpus_path)
        return select_documents(raw, spec.n_docs, spec.queries_per_doc,
                                seed=derive(spec.seed, "corpus"))
    raise ValueError(f"unknown corpus_source {spec.corpus_source!r}")


def _fit(spec, train, val, role, vocab):
    model = spec.new_model(vocab, role)
    ckpt = train_epochs(model, train, val, spec.train_config(role))
    return ckpt.restore(), ckpt


def _filter_by_docs(pairs, doc_ids):
    return [p for p in pairs if p.docid in doc_ids]


# --- runners -----------------------------------------------------------------

def run_content_oblivious(spec: ExperimentSpec):
    """Seen-queries sweep: fresh model per n, trained on the first n queries
    of each document, evaluated on unseen test queries (top-1)."""
    corpus = build_corpus(spec)
    train, val, test = make_splits(corpus, SplitSpec(*spec.split))
    records, curve = [], []
    for n in spec.n_list:
        sub = first_n_queries(train, n)
        vocab = build_vocab(corpus, train_pairs=sub)
        model, ckpt = _fit(spec, sub, val, f"n{n}", vocab)
        hits = greedy_hits(model, test)
        records.append(MetricsRecord.from_counts(
            f"n={n}", hits, len(test), k=1, seed=spec.seed))
        curve.append({"n_seen": n, "accuracy": hits / len(test),
                      "support": len(test), "best_epoch": ckpt.epoch,
                      "val_accuracy": ckpt.val_accuracy})
    return records, {"seen_queries_curve": curve}


def run_ensemble10(spec: ExperimentSpec):
    """Shard ensemble vs. per-shard personal models vs. one singular model."""
    corpus = build_corpus(spec)
    shards = partition_shards(corpus, spec.num_shards,
                              seed=derive(spec.seed, "shards"))
    train, val, test = make_splits(corpus, SplitSpec(*spec.split))
    vocab = build_vocab(corpus, train_pairs=train)
    k_max = max(spec.k_list)
    width = max(spec.beam_width, k_max)
    max_len = vocab.max_docid_len

    shard_models = {}
    for shard in shards:
        tr = _filter_by_docs(train, shard.doc_ids)
        vl = _filter_by_docs(val, shard.doc_ids)
        model, _ = _fit(spec, tr, vl, f"shard{shard.shard_id}", vocab)
        shard_models[shard.shard_id] = model
    singular, _ = _fit(spec, train, val, "singular", vocab)

    ensemble = EnsembleRanker(
        [((sid, -1), m) for sid, m in sorted(shard_models.items())],
        beam_width=width, max_len=max_len, k=k_max, mode="max")

    records, summary = [], []
    pooled_hits = {k: 0 for k in spec.k_list}
    pooled_support = 0
    per_shard_acc = {k: {"ensemble": [], "personal": []} for k in spec.k_list}
    for shard in shards:
        test_s = _filter_by_docs(test, shard.doc_ids)
        pooled_support += len(test_s)
        ens_hits = ranker_hits(ensemble, test_s, spec.k_list)
        personal = EnsembleRanker(
            [((shard.shard_id, -1), shard_models[shard.shard_id])],
            beam_width=width, max_len=max_len, k=k_max, mode="max")
        per_hits = ranker_hits(personal, test_s, spec.k_list)
        for k in spec.k_list:
            records.append(MetricsRecord.from_counts(
                "ensemble", ens_hits[k], len(test_s), k, spec.seed,
                shard=shard.shard_id))
            records.append(MetricsRecord.from_counts(
                "personal", per_hits[k], len(test_s), k, spec.seed,
                shard=shard.shard_id))
            pooled_hits[k] += ens_hits[k]
            per_shard_acc[k]["ensemble"].append(ens_hits[k] / len(test_s))
            per_shard_acc[k]["personal"].append(per_hits[k] / len(test_s))

    # the singular and pooled-ensemble arms see the identical test pair set
    pooled_test = [p for shard in shards
                   for p in _filter_by_docs(test, shard.doc_ids)]
    assert set(pooled_test) == set(test)
    sing_ranker = EnsembleRanker([((-1, -1), singular)], beam_width=width,
                                 max_len=max_len, k=k_max, mode="max")
    sing_hits = ranker_hits(sing_ranker, test, spec.k_list)
    for k in spec.k_list:
        records.append(MetricsRecord.from_counts(
            "ensemble", pooled_hits[k], pooled_support, k, spec.seed))
        records.append(MetricsRecord.from_counts(
            "singular", sing_hits[k], len(test), k, spec.seed))
        for arm in ("ensemble", "personal"):
            accs = per_shard_acc[k][arm]
            mean = sum(accs) / len(accs)
            var = (sum((a - mean) ** 2 for a in accs) / (len(accs) - 1)
                   if len(accs) > 1 else 0.0)
            summary.append({"arm": arm, "k": k, "mean_accuracy": mean,
                            "stdev_accuracy": var ** 0.5,
                            "num_shards": len(accs)})
    return records, {"ensemble_summary": summary}


def prepare_simulation(spec: ExperimentSpec):
    """Corpus -> shards restricted to training queries -> initialized peer
    network.  Peers gossip only training pairs; test queries stay held out.
    Returns (engine, context dict with corpus/splits/shards/vocab)."""
    corpus = build_corpus(spec)
    shards = partition_shards(corpus, spec.num_shards,
                              seed=derive(spec.seed, "shards"))
    train, val, test = make_splits(corpus, SplitSpec(*spec.split))
    vocab = build_vocab(corpus, train_pairs=train)
    train_docs = {}
    for p in train:
        train_docs.setdefault(p.docid, []).append(p.query)
    trimmed = [Shard(s.shard_id, {d: train_docs[d] for d in s.docs})
               for s in shards]
    cfg = SimConfig(num_peers=spec.num_peers, num_shards=spec.num_shards,
                    batch_size=spec.batch_size,
                    batch_budget=spec.batch_budget,
                    min_docs=spec.peer_min_docs, max_docs=spec.peer_max_docs,
                    seed=derive(spec.seed, "sim"),
                    model_width=spec.model_width, model_lr=spec.model_lr)
    engine = init_network(cfg, trimmed, vocab=vocab)
    context = {"corpus": corpus, "shards": shards, "vocab": vocab,
               "train": train, "val": val, "test": test}
    return engine, context


def run_decentralized(spec: ExperimentSpec):
    """Gossip-train a peer network, then evaluate summed ensembles drawn from
    all shards vs. the query's own shard, plus every peer individually."""
    engine, context = prepare_simulation(spec)
    shards = context["shards"]
    test = context["test"]
    vocab = context["vocab"]
    result = run_simulation(engine)

    ks = sorted({1, max(spec.k_list)})
    width = max(spec.beam_width, max(ks))
    max_len = vocab.max_docid_len
    records, peer_rows = [], []
    for shard in shards:
        usable = result.sampled_doc_ids(shard.shard_id)
        test_s = [p for p in _filter_by_docs(test, shard.doc_ids)
                  if p.docid in usable]
        if not test_s:
            continue
        for pool in ("all_shards", "own_shard"):
            picked = sample_model_pool(engine, spec.per_shard, pool=pool,
                                       shard_id=shard.shard_id,
                                       seed=derive(spec.seed, "pool"))
            ranker = EnsembleRanker(
                [((engine.peers[pid].shard_id, pid), m) for pid, m in picked],
                beam_width=width, max_len=max_len, k=max(ks), mode="sum")
            hits = ranker_hits(ranker, test_s, ks)
            for k in ks:
                records.append(MetricsRecord.from_counts(
                    "decentralized", hits[k], len(test_s), k, spec.seed,
                    shard=shard.shard_id, pool=pool))
        for pid in engine.groups[shard.shard_id]:
            solo = EnsembleRanker(
                [((shard.shard_id, pid), engine.peers[pid].model)],
                beam_width=width, max_len=max_len, k=max(ks), mode="sum")
            hits = ranker_hits(solo, test_s, ks)
            for k in ks:
                peer_rows.append({"shard": shard.shard_id, "peer_id": pid,
                                  "k": k, "accuracy": hits[k] / len(test_s),
                                  "support": len(test_s)})
    extras = {"peer_accuracies": peer_rows,
              "sim_stats": result.stats() | {"loss_traces": result.loss_traces}}
    return records, extras


def run_magnet_compare(spec: ExperimentSpec):
    """Identical pipeline twice: original docids vs. 40-hex magnet ids, with
    shared seeds and the same document sample."""
    base = build_corpus(spec)
    records, curve = [], []
    for mode in ("docid", "magnet"):
        corpus = (base if mode == "docid"
                  else assign_magnet_links(base, seed=derive(spec.seed,
                                                             "magnet")))
        if mode == "magnet":
            bad = [d for d in corpus.docs if not is_magnet_id(d)]
            if bad:
                raise RuntimeError(f"invalid magnet ids generated: {bad[:3]}")
        train, val, test = make_splits(corpus, SplitSpec(*spec.split))
        vocab = build_vocab(corpus, train_pairs=train)
        model, _ = _fit(spec, train, val, "magnet_compare", vocab)
        ks = sorted({1, max(spec.k_list)})
        ranker = EnsembleRanker([((0, -1), model)],
                                beam_width=max(spec.beam_width, max(ks)),
                                max_len=vocab.max_docid_len, k=max(ks),
                                mode="max")
        hits = ranker_hits(ranker, test, ks)
        for k in ks:
            records.append(MetricsRecord.from_counts(
                mode, hits[k], len(test), k, spec.seed))
            curve.append({"id_mode": mode, "n_docs": corpus.num_docs, "k": k,
                          "accuracy": hits[k] / len(test),
                          "support": len(test)})
    return records, {"magnet_compare_curve": curve}


RUNNERS = {
    "content_oblivious": run_content_oblivious,
    "ensemble10": run_ensemble10,
    "decentralized": run_decentralized,
    "magnet_compare": run_magnet_compare,
}


def run_experiment(spec: ExperimentSpec):
    if spec.experiment not in RUNNERS:
        raise ValueError(f"no runner for experiment {spec.experiment!r}")
    return RUNNERS[spec.experiment](spec)


# --- reporting ---------------------------------------------------------------

def _record_sort_key(r: MetricsRecord):
    return (r.arm, -1 if r.shard is None else r.shard, r.pool or "", r.k)


def emit_report(records, out_dir, extras=None, spec_hash="", seed=0):
    """metrics.csv + metrics.json, plus one long-format CSV per extra table.
    Ordering is deterministic; every output embeds the spec hash and seed."""
    os.makedirs(out_dir, exist_ok=True)
    written = []
    records = sorted(records, key=_record_sort_key)

    csv_path = os.path.join(out_dir, "metrics.csv")
    with open(csv_path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(METRICS_COLUMNS)
        for r in records:
            w.writerow(r.row())
    written.append(csv_path)

    json_path = os.path.join(out_dir, "metrics.json")
    with open(json_path, "w", encoding="utf-8") as fh:
        json.dump({"spec_hash": spec_hash, "seed": seed,
                   "records": [asdict(r) for r in records]},
                  fh, sort_keys=True, indent=2)
    written.append(json_path)

    for name, rows in (extras or {}).items():
        if not rows:
            continue
        if isinstance(rows, dict):
            path = os.path.join(out_dir, f"{name}.json")
            with open(path, "w", encoding="utf-8") as fh:
                json.dump(rows, fh, sort_keys=True, indent=2)
            written.append(path)
            continue
        path = os.path.join(out_dir, f"{name}.csv")
        cols = list(rows[0])
        with open(path, "w", encoding="utf-8", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for row in rows:
                w.writerow({c: _cell(row.get(c)) for c in cols})
        written.append(path)
    return written


def _cell(value):
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, (dict, list)):
        return json.dumps(value, sort_keys=True)
    return value


def read_metrics_csv(path):
    """Parse metrics.csv back into MetricsRecord rows (round-trip exact)."""
    out = []
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames != METRICS_COLUMNS:
            raise ValueError(f"unexpected columns {reader.fieldnames} "
                             f"in {path}")
        for row in reader:
            out.append(MetricsRecord(
                arm=row["arm"],
                shard=None if row["shard"] == "" else int(row["shard"]),
                pool=None if row["pool"] == "" else row["pool"],
                k=int(row["k"]),
                accuracy=float(row["accuracy"]),
                support=int(row["support"]),
                seed=int(row["seed"])))
    return out
