"""Synthetic click-log generator for desk-scale runs and tests.

Each document gets a small pool of topic words drawn from a shared lexicon;
queries are shuffled subsets of that pool.  Queries of one document therefore
share vocabulary with each other (so a retriever can generalize to held-out
queries) while documents collide only through lexicon reuse, mimicking the
query noise of a real click log at toy size.
"""

import string

from .corpus import Corpus
from .seeding import rng_for


def _word(rng) -> str:
    n = int(rng.integers(3, 9))
    return "".join(string.ascii_lowercase[i] for i in rng.integers(0, 26, n))


def synthetic_corpus(n_docs: int, queries_per_doc: int, seed: int,
                     lexicon_size: int = 400, words_per_doc: int = 8,
                     query_words=(2, 5)) -> Corpus:
    if words_per_doc > lexicon_size:
        raise ValueError("words_per_doc exceeds lexicon_size")
    lo, hi = query_words
    if not (1 <= lo <= hi <= words_per_doc):
        raise ValueError("query_words must satisfy 1 <= lo <= hi <= words_per_doc")
    rng = rng_for(seed, "synthetic_corpus")

    lexicon: list = []
    seen_words: set = set()
    while len(lexicon) < lexicon_size:
        w = _word(rng)
        if w not in seen_words:
            seen_words.add(w)
            lexicon.append(w)

    docs: dict = {}
    while len(docs) < n_docs:
        docid = "D" + "".join(str(d) for d in rng.integers(0, 10, 7))
        if docid in docs:
            continue
        pool = [lexicon[i] for i in rng.choice(lexicon_size, words_per_doc,
                                               replace=False)]
        queries: list = []
        taken: set = set()
        attempts = 0
        while len(queries) < queries_per_doc:
            attempts += 1
            if attempts > 200 * queries_per_doc:
                raise RuntimeError(
                    "cannot generate enough distinct queries; "
                    "increase words_per_doc or query_words range")
            k = int(rng.integers(lo, hi + 1))
            words = [pool[i] for i in rng.choice(words_per_doc, k, replace=False)]
            q = " ".join(words)
            if q not in taken:
                taken.add(q)
                queries.append(q)
        docs[docid] = queries

    manifest = {
        "source": "synthetic",
        "seed": seed,
        "n_docs": n_docs,
        "queries_per_doc": queries_per_doc,
        "lexicon_size": lexicon_size,
        "words_per_doc": words_per_doc,
        "query_words": list(query_words),
    }
    return Corpus(docs, id_mode="orcas", manifest=manifest)
