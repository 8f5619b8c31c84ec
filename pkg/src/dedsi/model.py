"""Reference query-to-identifier model: a small GRU encoder-decoder.

The trainable retriever is an interface (see :class:`RetrieverModel`); this
module provides the desk-scale reference implementation, written directly on
numpy with hand-derived backprop so the fused inner loops can run on the
compiled kernel backend.  Architecture:

  * query words/characters -> embedding -> 2-layer GRU encoder
  * decoder layers start from the encoder's per-layer final hidden states
  * 2-layer GRU decoder; the top encoder state is also concatenated to the
    decoder input at every step, so long identifiers stay conditioned on the
    query
  * linear head over identifier characters + EOS

Training is teacher-forced mean per-token cross-entropy with Adam.  Inference
is deterministic given fixed parameters.
"""

import hashlib
from dataclasses import dataclass
from typing import Protocol, runtime_checkable

import numpy as np

from . import _kernels as K
from .seeding import rng_for
from .vocab import Q_PAD, Vocabulary


@runtime_checkable
class RetrieverModel(Protocol):
    """What training, beam search and the simulator need from a model.

    ``step`` consumes decoder-input token indices (``bos_index`` or character
    indices) and returns log-probabilities over the identifier characters
    followed by EOS at ``eos_index``; ``id_tokens`` maps character indices
    back to characters.
    """

    eos_index: int
    bos_index: int
    id_tokens: "list[str]"

    def train_step(self, batch) -> float: ...

    def begin_batch(self, queries): ...

    def step(self, state, prev_tokens): ...

    def select_rows(self, state, rows): ...


@dataclass
class DecodeState:
    h0: np.ndarray   # (B, d)
    h1: np.ndarray   # (B, d)
    ctx: np.ndarray  # (B, d)


class GruRetriever:
    """Reference implementation of the retriever interface."""

    def __init__(self, vocab: Vocabulary, width: int = 128, seed: int = 0,
                 lr: float = 5e-3, beta1: float = 0.9, beta2: float = 0.999,
                 eps: float = 1e-8):
        self.vocab = vocab
        self.width = width
        self.seed = seed
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.eos_index = vocab.eos_index
        self.bos_index = vocab.bos_index
        self.id_tokens = vocab.id_tokens
        self.params = self._init_params(rng_for(seed, "init"))
        self.adam_m = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_v = {k: np.zeros_like(v) for k, v in self.params.items()}
        self.adam_t = 0

    # --- parameters ---------------------------------------------------------

    def _init_params(self, rng):
        d = self.width
        s = 1.0 / np.sqrt(d)

        def mat(rows, cols, scale):
            return rng.uniform(-scale, scale, (rows, cols))

        p = {
            "emb_q": rng.normal(0.0, 0.1, (self.vocab.num_query_tokens, d)),
            "emb_id": rng.normal(0.0, 0.1, (self.vocab.num_id_input_tokens, d)),
            "out_W": mat(d, self.vocab.num_output_tokens, s),
            "out_b": np.zeros(self.vocab.num_output_tokens),
        }
        p["emb_q"][Q_PAD] = 0.0
        for name, in_dim in (("enc0", d), ("enc1", d), ("dec0", 2 * d),
                             ("dec1", d)):
            p[f"{name}_Wx"] = mat(in_dim, 3 * d, 1.0 / np.sqrt(in_dim))
            p[f"{name}_Wh"] = mat(d, 3 * d, s)
            p[f"{name}_bx"] = np.zeros(3 * d)
            p[f"{name}_bh"] = np.zeros(3 * d)
        return p

    def config(self) -> dict:
        return {"width": self.width, "seed": self.seed, "lr": self.lr,
                "beta1": self.beta1, "beta2": self.beta2, "eps": self.eps}

    @classmethod
    def from_config(cls, vocab, config) -> "GruRetriever":
        return cls(vocab, **config)

    def snapshot(self) -> dict:
        return {k: v.copy() for k, v in self.params.items()}

    def load_snapshot(self, params):
        for k in self.params:
            self.params[k][...] = params[k]

    def param_hash(self) -> str:
        h = hashlib.sha256()
        for k in sorted(self.params):
            h.update(k.encode())
            h.update(np.ascontiguousarray(self.params[k]).tobytes())
        return h.hexdigest()

    # --- encoding -----------------------------------------------------------

    def _encode_queries(self, queries):
        seqs = [self.vocab.encode_query(q) for q in queries]
        T = max(len(s) for s in seqs)
        Q = np.full((len(seqs), T), Q_PAD, dtype=np.intp)
        mask = np.zeros((len(seqs), T))
        for i, s in enumerate(seqs):
            Q[i, :len(s)] = s
            mask[i, :len(s)] = 1.0
        return Q, mask

    def _encode_docids(self, docids):
        v = self.vocab
        seqs = [v.encode_docid(d) for d in docids]
        T = max(len(s) for s in seqs) + 1  # room for EOS / BOS shift
        y_in = np.full((len(seqs), T), v.id_pad_index, dtype=np.intp)
        y_tgt = np.zeros((len(seqs), T), dtype=np.intp)
        w = np.zeros((len(seqs), T))
        for i, s in enumerate(seqs):
            y_in[i, 0] = v.bos_index
            y_in[i, 1:len(s) + 1] = s
            y_tgt[i, :len(s)] = s
            y_tgt[i, len(s)] = v.eos_index
            w[i, :len(s) + 1] = 1.0
        return y_in, y_tgt, w

    # --- forward/backward ---------------------------------------------------

    def _gru_layer_forward(self, name, x, mask=None, h0=None):
        """Run one GRU layer over x (B, T, in).  Returns (outputs, final h,
        cache).  With a mask, hidden states carry through padded steps."""
        p = self.params
        B, T, _ = x.shape
        d = self.width
        ax_all = x.reshape(B * T, -1) @ p[f"{name}_Wx"] + p[f"{name}_bx"]
        ax_all = ax_all.reshape(B, T, 3 * d)
        h = np.zeros((B, d)) if h0 is None else h0
        outs = np.empty((B, T, d))
        steps = []
        for t in range(T):
            ah = h @ p[f"{name}_Wh"] + p[f"{name}_bh"]
            h_new, r, z, n = K.gru_gates_forward(ax_all[:, t], ah, h)
            if mask is not None:
                m = mask[:, t:t + 1]
                h_new = m * h_new + (1.0 - m) * h
            steps.append((h, r, z, n, ah[:, 2 * d:]))
            h = h_new
            outs[:, t] = h
        return outs, h, {"x": x, "steps": steps, "mask": mask}

    def _gru_layer_backward(self, name, cache, d_outs, d_final, grads):
        """BPTT for one layer.  d_outs is (B, T, d) or None; d_final adds to
        the gradient of the last hidden state.  Returns (dx, dh0)."""
        p = self.params
        x, steps, mask = cache["x"], cache["steps"], cache["mask"]
        B, T, _ = x.shape
        d = self.width
        Wh = p[f"{name}_Wh"]
        dax_all = np.empty((B, T, 3 * d))
        dah_all = np.empty((B, T, 3 * d))
        h_prev_all = np.empty((B, T, d))
        carry = d_final.copy() if d_final is not None else np.zeros((B, d))
        for t in range(T - 1, -1, -1):
            dh = carry
            if d_outs is not None:
                dh = dh + d_outs[:, t]
            h_prev, r, z, n, ah_n = steps[t]
            if mask is not None:
                m = mask[:, t:t + 1]
                dh_carry = (1.0 - m) * dh
                dh = m * dh
            dax, dah, dh_direct = K.gru_gates_backward(dh, h_prev, r, z, n,
                                                       ah_n)
            dax_all[:, t] = dax
            dah_all[:, t] = dah
            h_prev_all[:, t] = h_prev
            carry = dh_direct + dah @ Wh.T
            if mask is not None:
                carry = carry + dh_carry
        dax_flat = dax_all.reshape(B * T, 3 * d)
        dah_flat = dah_all.reshape(B * T, 3 * d)
        grads[f"{name}_Wx"] += x.reshape(B * T, -1).T @ dax_flat
        grads[f"{name}_bx"] += dax_flat.sum(axis=0)
        grads[f"{name}_Wh"] += h_prev_all.reshape(B * T, d).T @ dah_flat
        grads[f"{name}_bh"] += dah_flat.sum(axis=0)
        dx = (dax_flat @ p[f"{name}_Wx"].T).reshape(B, T, -1)
        return dx, carry

    def _forward_backward(self, queries, docids):
        """Teacher-forced loss and full gradients for one batch."""
        p = self.params
        d = self.width
        Q, qmask = self._encode_queries(queries)
        y_in, y_tgt, w = self._encode_docids(docids)
        B, Tq = Q.shape
        Td = y_in.shape[1]

        xq = p["emb_q"][Q]
        enc0_out, enc0_h, enc0_cache = self._gru_layer_forward(
            "enc0", xq, mask=qmask)
        enc1_out, enc1_h, enc1_cache = self._gru_layer_forward(
            "enc1", enc0_out, mask=qmask)
        ctx = enc1_h

        e_id = p["emb_id"][y_in]
        u = np.concatenate(
            [e_id, np.broadcast_to(ctx[:, None, :], (B, Td, d))], axis=2)
        dec0_out, _, dec0_cache = self._gru_layer_forward("dec0", u, h0=enc0_h)
        dec1_out, _, dec1_cache = self._gru_layer_forward("dec1", dec0_out,
                                                          h0=enc1_h)

        logits = dec1_out.reshape(B * Td, d) @ p["out_W"] + p["out_b"]
        total = w.sum()
        weights = (w / total).reshape(B * Td)
        loss, dlogits = K.softmax_xent(logits, y_tgt.reshape(B * Td), weights)

        grads = {k: np.zeros_like(v) for k, v in p.items()}
        grads["out_W"] += dec1_out.reshape(B * Td, d).T @ dlogits
        grads["out_b"] += dlogits.sum(axis=0)
        d_dec1_out = (dlogits @ p["out_W"].T).reshape(B, Td, d)

        d_dec0_out, d_enc1_h = self._gru_layer_backward(
            "dec1", dec1_cache, d_dec1_out, None, grads)
        du, d_enc0_h = self._gru_layer_backward(
            "dec0", dec0_cache, d_dec0_out, None, grads)
        np.add.at(grads["emb_id"], y_in.reshape(-1),
                  du[:, :, :d].reshape(B * Td, d))
        d_ctx = du[:, :, d:].sum(axis=1)

        d_enc1_final = d_enc1_h + d_ctx
        d_enc0_seq, _ = self._gru_layer_backward(
            "enc1", enc1_cache, None, d_enc1_final, grads)
        dxq, _ = self._gru_layer_backward(
            "enc0", enc0_cache, d_enc0_seq, d_enc0_h, grads)
        np.add.at(grads["emb_q"], Q.reshape(-1), dxq.reshape(B * Tq, d))
        grads["emb_q"][Q_PAD] = 0.0
        return loss, grads

    def train_step(self, batch) -> float:
        """One Adam step on a batch of QueryDocPair; returns the pre-step loss."""
        if not batch:
            raise ValueError("empty batch")
        queries = [p.query for p in batch]
        docids = [p.docid for p in batch]
        loss, grads = self._forward_backward(queries, docids)
        self.adam_t += 1
        bc1 = 1.0 - self.beta1 ** self.adam_t
        bc2 = 1.0 - self.beta2 ** self.adam_t
        for k, g in grads.items():
            K.adam_update(self.params[k].reshape(-1), g.reshape(-1),
                          self.adam_m[k].reshape(-1),
                          self.adam_v[k].reshape(-1),
                          self.lr, self.beta1, self.beta2, self.eps, bc1, bc2)
        return loss

    # --- inference ----------------------------------------------------------

    def begin_batch(self, queries) -> DecodeState:
        """Encode queries; the returned state is positioned before BOS."""
        Q, qmask = self._encode_queries(queries)
        xq = self.params["emb_q"][Q]
        enc0_out, enc0_h, _ = self._gru_layer_forward("enc0", xq, mask=qmask)
        _, enc1_h, _ = self._gru_layer_forward("enc1", enc0_out, mask=qmask)
        return DecodeState(h0=enc0_h, h1=enc1_h, ctx=enc1_h.copy())

    def step(self, state: DecodeState, prev_tokens):
        """Advance one decode step.  prev_tokens are decoder-input indices
        (BOS or character indices); returns (new state, log-probs over the
        identifier characters + EOS)."""
        p = self.params
        e = p["emb_id"][np.asarray(prev_tokens, dtype=np.intp)]
        u = np.concatenate([e, state.ctx], axis=1)
        ax0 = u @ p["dec0_Wx"] + p["dec0_bx"]
        ah0 = state.h0 @ p["dec0_Wh"] + p["dec0_bh"]
        h0, _, _, _ = K.gru_gates_forward(ax0, ah0, state.h0)
        ax1 = h0 @ p["dec1_Wx"] + p["dec1_bx"]
        ah1 = state.h1 @ p["dec1_Wh"] + p["dec1_bh"]
        h1, _, _, _ = K.gru_gates_forward(ax1, ah1, state.h1)
        logits = h1 @ p["out_W"] + p["out_b"]
        return DecodeState(h0=h0, h1=h1, ctx=state.ctx), K.log_softmax(logits)

    def select_rows(self, state: DecodeState, rows) -> DecodeState:
        rows = np.asarray(rows, dtype=np.intp)
        return DecodeState(h0=state.h0[rows], h1=state.h1[rows],
                           ctx=state.ctx[rows])

    def next_token_logprobs(self, query: str, prefix: str = "") -> np.ndarray:
        """Log-probabilities of the next identifier token (characters + EOS)
        given the query and an identifier prefix."""
        state = self.begin_batch([query])
        tokens = [self.vocab.bos_index] + self.vocab.encode_docid(prefix)
        for tok in tokens:
            state, logprobs = self.step(state, [tok])
        return logprobs[0]
