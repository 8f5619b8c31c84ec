"""Fusing per-model beam candidates into one ranked answer.

Raw beam scores from independently trained models live on incomparable
scales; a per-model softmax rescales each candidate list into probabilities
summing to one, after which lists can be pooled.  Two merge rules are
provided: keep-the-maximum across shard models, and sum-of-probabilities
across models that may share a shard (agreement amplifies).  Ties break
lexicographically by identifier so results are deterministic.
"""

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .beam import BeamCandidate, beam_search


class NormalizedCandidate(NamedTuple):
    docid_text: str
    prob: float
    source: tuple


class RankedDoc(NamedTuple):
    docid_text: str
    score: float
    source: tuple


@dataclass
class ModelResult:
    source: tuple                       # (shard_id, peer_id)
    candidates: "list[BeamCandidate]"

    def __post_init__(self):
        scores = [c.score for c in self.candidates]
        if any(a < b for a, b in zip(scores, scores[1:])):
            raise ValueError("candidates must be sorted by score, "
                             "non-increasing")


@dataclass
class EnsembleResult:
    ranked: "list[RankedDoc]"
    k: int
    query: Optional[str] = None

    def docids(self) -> "list[str]":
        return [r.docid_text for r in self.ranked]

    def to_json_dict(self) -> dict:
        return {
            "query": self.query,
            "k": self.k,
            "ranked": [{"docid": r.docid_text, "score": r.score,
                        "source": list(r.source)} for r in self.ranked],
        }


def softmax_normalize(result: ModelResult) -> "list[NormalizedCandidate]":
    """Per-model softmax of raw beam scores, numerically stable via
    max-subtraction.  Order (and ordering ties) are preserved."""
    if not result.candidates:
        raise ValueError("cannot normalize an empty candidate list")
    scores = np.array([c.score for c in result.candidates])
    e = np.exp(scores - scores.max())
    probs = e / e.sum()
    return [NormalizedCandidate(c.docid_text, float(p), result.source)
            for c, p in zip(result.candidates, probs)]


def _ranked(best: dict, k: int, query) -> EnsembleResult:
    order = sorted(best.items(), key=lambda item: (-item[1][0], item[0]))
    ranked = [RankedDoc(docid, score, source)
              for docid, (score, source) in order[:k]]
    return EnsembleResult(ranked=ranked, k=k, query=query)


def merge_across_shards(results, k: int, query=None) -> EnsembleResult:
    """Pool all models' normalized candidates, deduplicate by identifier
    keeping the maximum probability, and return the top k."""
    if not results:
        raise ValueError("no model results to merge")
    if k < 1:
        raise ValueError("k must be >= 1")
    best: dict = {}
    for result in results:
        for cand in softmax_normalize(result):
            cur = best.get(cand.docid_text)
            if cur is None or cand.prob > cur[0]:
                best[cand.docid_text] = (cand.prob, cand.source)
    return _ranked(best, k, query)


def merge_summed(results, k: int, query=None) -> EnsembleResult:
    """Sum each identifier's post-softmax probability over all models
    (absent = 0), then pick the top k.  Selection happens only after the
    sum, so agreement between models outranks a single confident model."""
    if not results:
        raise ValueError("no model results to merge")
    if k < 1:
        raise ValueError("k must be >= 1")
    totals: dict = {}
    top_contrib: dict = {}
    for result in results:
        for cand in softmax_normalize(result):
            totals[cand.docid_text] = totals.get(cand.docid_text, 0.0) \
                + cand.prob
            cur = top_contrib.get(cand.docid_text)
            if cur is None or cand.prob > cur[0]:
                top_contrib[cand.docid_text] = (cand.prob, cand.source)
    best = {d: (total, top_contrib[d][1]) for d, total in totals.items()}
    return _ranked(best, k, query)


@dataclass
class EnsembleRanker:
    """Callable query -> EnsembleResult over a pool of models.

    Each model answers with its ``beam_width`` best candidates; models whose
    beam returns nothing (possible on untrained models with tiny length
    bounds) simply contribute no votes.
    """

    models: "list[tuple[tuple, object]]"   # [(source, model), ...]
    beam_width: int
    max_len: int
    k: int
    mode: str = "max"                      # "max" | "sum"

    def __post_init__(self):
        if self.mode not in ("max", "sum"):
            raise ValueError(f"unknown merge mode {self.mode!r}")

    def __call__(self, query: str) -> EnsembleResult:
        results = []
        for source, model in self.models:
            cands = beam_search(model, query, self.beam_width, self.max_len)
            if cands:
                results.append(ModelResult(source=source, candidates=cands))
        if not results:
            return EnsembleResult(ranked=[], k=self.k, query=query)
        merge = merge_across_shards if self.mode == "max" else merge_summed
        return merge(results, self.k, query=query)
