"""Pure-numpy reference kernels.

Semantics here are the contract; the compiled extension in ``_fast.pyx`` must
match these within floating-point noise.  Gate layout along the last axis is
[reset | update | candidate], each of width H.
"""

import numpy as np


def _sigmoid(x):
    return 1.0 / (1.0 + np.exp(-x))


def gru_gates_forward(ax, ah, h_prev):
    """Fused GRU gate math given pre-computed affine terms.

    ax = x @ Wx + bx and ah = h_prev @ Wh + bh, both (B, 3H).
    Returns (h, r, z, n); r/z/n are cached for the backward pass.
    """
    H = h_prev.shape[1]
    r = _sigmoid(ax[:, :H] + ah[:, :H])
    z = _sigmoid(ax[:, H:2 * H] + ah[:, H:2 * H])
    n = np.tanh(ax[:, 2 * H:] + r * ah[:, 2 * H:])
    h = (1.0 - z) * n + z * h_prev
    return h, r, z, n


def gru_gates_backward(dh, h_prev, r, z, n, ah_n):
    """Backward of gru_gates_forward.

    Returns (dax, dah, dh_prev_direct); the caller adds the matmul parts
    (dax @ Wx.T etc.) and dh_prev_direct is only the through-gate term dh*z.
    """
    B, H = h_prev.shape
    dn = dh * (1.0 - z)
    dan = dn * (1.0 - n * n)
    dz = dh * (h_prev - n)
    daz = dz * z * (1.0 - z)
    dr = dan * ah_n
    dar = dr * r * (1.0 - r)
    dax = np.empty((B, 3 * H))
    dax[:, :H] = dar
    dax[:, H:2 * H] = daz
    dax[:, 2 * H:] = dan
    dah = np.empty((B, 3 * H))
    dah[:, :H] = dar
    dah[:, H:2 * H] = daz
    dah[:, 2 * H:] = dan * r
    dh_prev = dh * z
    return dax, dah, dh_prev


def softmax_xent(logits, targets, weights):
    """Weighted softmax cross-entropy over rows, fused with its gradient.

    loss = sum_i w_i * (logsumexp(l_i) - l_i[t_i]);  dlogits_i = w_i*(p_i - 1_t).
    Rows with weight 0 contribute nothing and get a zero gradient row.
    """
    B = logits.shape[0]
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    zsum = e.sum(axis=1, keepdims=True)
    p = e / zsum
    rows = np.arange(B)
    logp_t = logits[rows, targets] - m[:, 0] - np.log(zsum[:, 0])
    loss = float(-(weights * logp_t).sum())
    dlogits = p * weights[:, None]
    dlogits[rows, targets] -= weights
    return loss, dlogits


def log_softmax(logits):
    m = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - m)
    return logits - m - np.log(e.sum(axis=1, keepdims=True))


def adam_update(param, grad, m, v, lr, beta1, beta2, eps, bc1, bc2):
    """One fused in-place Adam step on flat arrays; bc1/bc2 are the bias
    corrections 1 - beta^t."""
    m *= beta1
    m += (1.0 - beta1) * grad
    v *= beta2
    v += (1.0 - beta2) * grad * grad
    param -= lr * (m / bc1) / (np.sqrt(v / bc2) + eps)
