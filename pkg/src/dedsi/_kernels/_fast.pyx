# Fused inner loops for the reference model.  Must match pyref.py semantics;
# tests compare both backends on random inputs.

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh

cnp.import_array()


cdef inline double _sig(double x) noexcept nogil:
    return 1.0 / (1.0 + exp(-x))


def gru_gates_forward(double[:, :] ax, double[:, :] ah, double[:, :] h_prev):
    cdef Py_ssize_t B = h_prev.shape[0]
    cdef Py_ssize_t H = h_prev.shape[1]
    cdef cnp.ndarray[double, ndim=2] h = np.empty((B, H))
    cdef cnp.ndarray[double, ndim=2] r = np.empty((B, H))
    cdef cnp.ndarray[double, ndim=2] z = np.empty((B, H))
    cdef cnp.ndarray[double, ndim=2] n = np.empty((B, H))
    cdef double[:, ::1] hv = h, rv = r, zv = z, nv = n
    cdef Py_ssize_t i, j
    cdef double rr, zz, nn
    with nogil:
        for i in range(B):
            for j in range(H):
                rr = _sig(ax[i, j] + ah[i, j])
                zz = _sig(ax[i, H + j] + ah[i, H + j])
                nn = tanh(ax[i, 2 * H + j] + rr * ah[i, 2 * H + j])
                rv[i, j] = rr
                zv[i, j] = zz
                nv[i, j] = nn
                hv[i, j] = (1.0 - zz) * nn + zz * h_prev[i, j]
    return h, r, z, n


def gru_gates_backward(double[:, :] dh, double[:, :] h_prev, double[:, :] r,
                       double[:, :] z, double[:, :] n, double[:, :] ah_n):
    cdef Py_ssize_t B = h_prev.shape[0]
    cdef Py_ssize_t H = h_prev.shape[1]
    cdef cnp.ndarray[double, ndim=2] dax = np.empty((B, 3 * H))
    cdef cnp.ndarray[double, ndim=2] dah = np.empty((B, 3 * H))
    cdef cnp.ndarray[double, ndim=2] dhp = np.empty((B, H))
    cdef double[:, ::1] daxv = dax, dahv = dah, dhpv = dhp
    cdef Py_ssize_t i, j
    cdef double g, dn, dan, dz, daz, dr, dar
    with nogil:
        for i in range(B):
            for j in range(H):
                g = dh[i, j]
                dn = g * (1.0 - z[i, j])
                dan = dn * (1.0 - n[i, j] * n[i, j])
                dz = g * (h_prev[i, j] - n[i, j])
                daz = dz * z[i, j] * (1.0 - z[i, j])
                dr = dan * ah_n[i, j]
                dar = dr * r[i, j] * (1.0 - r[i, j])
                daxv[i, j] = dar
                daxv[i, H + j] = daz
                daxv[i, 2 * H + j] = dan
                dahv[i, j] = dar
                dahv[i, H + j] = daz
                dahv[i, 2 * H + j] = dan * r[i, j]
                dhpv[i, j] = g * z[i, j]
    return dax, dah, dhp


def softmax_xent(double[:, :] logits, cnp.intp_t[:] targets,
                 double[:] weights):
    cdef Py_ssize_t B = logits.shape[0]
    cdef Py_ssize_t V = logits.shape[1]
    cdef cnp.ndarray[double, ndim=2] dlogits = np.zeros((B, V))
    cdef double[:, ::1] dv = dlogits
    cdef Py_ssize_t i, j, t
    cdef double m, s, w, loss = 0.0
    with nogil:
        for i in range(B):
            w = weights[i]
            if w == 0.0:
                continue
            t = targets[i]
            m = logits[i, 0]
            for j in range(1, V):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(V):
                s += exp(logits[i, j] - m)
            loss += w * (log(s) + m - logits[i, t])
            for j in range(V):
                dv[i, j] = w * exp(logits[i, j] - m) / s
            dv[i, t] -= w
    return loss, dlogits


def log_softmax(double[:, :] logits):
    cdef Py_ssize_t B = logits.shape[0]
    cdef Py_ssize_t V = logits.shape[1]
    cdef cnp.ndarray[double, ndim=2] out = np.empty((B, V))
    cdef double[:, ::1] ov = out
    cdef Py_ssize_t i, j
    cdef double m, s, lse
    with nogil:
        for i in range(B):
            m = logits[i, 0]
            for j in range(1, V):
                if logits[i, j] > m:
                    m = logits[i, j]
            s = 0.0
            for j in range(V):
                s += exp(logits[i, j] - m)
            lse = m + log(s)
            for j in range(V):
                ov[i, j] = logits[i, j] - lse
    return out


def adam_update(double[::1] param, double[::1] grad, double[::1] m,
                double[::1] v, double lr, double beta1, double beta2,
                double eps, double bc1, double bc2):
    cdef Py_ssize_t N = param.shape[0]
    cdef Py_ssize_t i
    cdef double g
    with nogil:
        for i in range(N):
            g = grad[i]
            m[i] = beta1 * m[i] + (1.0 - beta1) * g
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g
            param[i] -= lr * (m[i] / bc1) / (sqrt(v[i] / bc2) + eps)
