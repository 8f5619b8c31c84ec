"""Beam search over identifier tokens.

Candidates are scored by the cumulative log-probability of the emitted
sequence including its EOS step, with no length normalization (identifiers
within one corpus share a length, so it would be a no-op).  EOS competes with
character expansions in the top-w selection, which makes beam_width=1
identical to greedy decoding; with a width at least the number of possible
expansions the search degenerates to exact exhaustive ranking.  The empty
string is never a candidate, and nothing constrains candidates to real
docids: hallucinated identifiers are returned as-is and simply never match.
"""

from typing import NamedTuple

import numpy as np

NEG_INF = -np.inf


class BeamCandidate(NamedTuple):
    docid_text: str
    score: float


def _masked(logprobs, emitted_len, max_len, eos):
    lp = np.array(logprobs, copy=True)
    if emitted_len == 0:
        lp[:, eos] = NEG_INF          # candidates must be non-empty
    if emitted_len >= max_len:
        lp[:, :eos] = NEG_INF         # length bound: only EOS may follow
    return lp


def beam_search(model, query: str, beam_width: int, max_len: int):
    """Top beam_width identifier candidates for one query, scores
    non-increasing, ties broken by identifier text."""
    if beam_width < 1:
        raise ValueError("beam_width must be >= 1")
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    eos = model.eos_index
    chars = model.id_tokens
    state = model.begin_batch([query])
    tokens = np.array([model.bos_index], dtype=np.intp)
    scores = np.zeros(1)
    seqs = [[]]
    finished = []
    for pos in range(max_len + 1):
        state, logprobs = model.step(state, tokens)
        expansions = scores[:, None] + _masked(logprobs, pos, max_len, eos)
        flat = expansions.reshape(-1)
        # stable sort on the flat index keeps ties deterministic
        order = np.argsort(-flat, kind="stable")[:beam_width]
        keep_rows, keep_toks, keep_scores = [], [], []
        for idx in order:
            b, tok = divmod(int(idx), expansions.shape[1])
            sc = float(flat[idx])
            if sc == NEG_INF:
                continue
            if tok == eos:
                finished.append(
                    BeamCandidate("".join(chars[i] for i in seqs[b]), sc))
            else:
                keep_rows.append(b)
                keep_toks.append(tok)
                keep_scores.append(sc)
        if not keep_rows:
            break
        state = model.select_rows(state, keep_rows)
        seqs = [seqs[b] + [tok] for b, tok in zip(keep_rows, keep_toks)]
        scores = np.array(keep_scores)
        tokens = np.array(keep_toks, dtype=np.intp)
    finished.sort(key=lambda c: (-c.score, c.docid_text))
    return finished[:beam_width]


def greedy_decode(model, query: str, max_len: int):
    """Argmax-at-every-step decode; returns (identifier text, score)."""
    eos = model.eos_index
    chars = model.id_tokens
    state = model.begin_batch([query])
    token = model.bos_index
    out = []
    score = 0.0
    for pos in range(max_len + 1):
        state, logprobs = model.step(state, np.array([token], dtype=np.intp))
        lp = _masked(logprobs, pos, max_len, eos)[0]
        token = int(np.argmax(lp))
        score += float(lp[token])
        if token == eos:
            break
        out.append(token)
    return "".join(chars[i] for i in out), score


def batched_greedy(model, queries, max_len: int):
    """Greedy decode many queries in one batched pass; returns texts."""
    if not queries:
        return []
    eos = model.eos_index
    chars = model.id_tokens
    state = model.begin_batch(list(queries))
    B = len(queries)
    tokens = np.full(B, model.bos_index, dtype=np.intp)
    done = np.zeros(B, dtype=bool)
    seqs = [[] for _ in range(B)]
    for pos in range(max_len + 1):
        state, logprobs = model.step(state, tokens)
        lp = _masked(logprobs, pos, max_len, eos)
        picks = lp.argmax(axis=1)
        for i in range(B):
            if done[i]:
                continue
            if picks[i] == eos:
                done[i] = True
            else:
                seqs[i].append(int(picks[i]))
        if done.all():
            break
        # finished rows keep stepping on a harmless token; output is frozen
        tokens = np.where(picks == eos, model.bos_index, picks).astype(np.intp)
    return ["".join(chars[i] for i in s) for s in seqs]
