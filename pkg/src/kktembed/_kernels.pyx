# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled batched forward/backward passes for bias-free MLPs.

Loops run sample by sample; for the desk-scale networks used here this
avoids the per-call overhead of many small numpy operations.
"""
import numpy as np
cimport numpy as cnp

cnp.import_array()


cdef inline double _act(double z, double a) nogil:
    return z if z > 0.0 else a * z


def forward_batch(const double[::1] theta, const long long[::1] widths,
                  const double[::1] neg_slopes, const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t nl = widths.shape[0] - 1
    cdef Py_ssize_t maxw = 0, l, i, j, s, off
    for l in range(widths.shape[0]):
        if widths[l] > maxw:
            maxw = widths[l]
    cdef double[::1] a = np.empty(maxw)
    cdef double[::1] b = np.empty(maxw)
    cdef double[::1] tmp
    cdef double acc
    out = np.empty(n)
    cdef double[::1] out_v = out
    for s in range(n):
        for j in range(widths[0]):
            a[j] = X[s, j]
        off = 0
        for l in range(nl):
            for i in range(widths[l + 1]):
                acc = 0.0
                for j in range(widths[l]):
                    acc += theta[off + i * widths[l] + j] * a[j]
                b[i] = _act(acc, neg_slopes[l]) if l < nl - 1 else acc
            off += widths[l + 1] * widths[l]
            tmp = a
            a = b
            b = tmp
        out_v[s] = a[0]
    return out


def forward_backward_batch(const double[::1] theta, const long long[::1] widths,
                           const double[::1] neg_slopes, const double[::1] at_zero,
                           const double[:, ::1] X):
    cdef Py_ssize_t n = X.shape[0]
    cdef Py_ssize_t nl = widths.shape[0] - 1
    cdef Py_ssize_t m = 0, units = 0, l, i, j, s, off
    cdef Py_ssize_t maxw = 0
    for l in range(nl):
        m += widths[l + 1] * widths[l]
    for l in range(nl + 1):
        units += widths[l]
        if widths[l] > maxw:
            maxw = widths[l]

    # unit offsets per layer into the stacked activation buffers
    cdef Py_ssize_t[::1] uoff = np.empty(nl + 2, dtype=np.intp)
    cdef Py_ssize_t[::1] poff = np.empty(nl + 1, dtype=np.intp)
    uoff[0] = 0
    for l in range(nl + 1):
        uoff[l + 1] = uoff[l] + widths[l]
    poff[0] = 0
    for l in range(nl):
        poff[l + 1] = poff[l] + widths[l + 1] * widths[l]

    cdef double[::1] z = np.empty(units)     # preactivations (layer 0 unused)
    cdef double[::1] h = np.empty(units)     # activations, layer 0 = input
    cdef double[::1] delta = np.empty(maxw)
    cdef double[::1] nxt = np.empty(maxw)
    cdef double[::1] tmp
    cdef double acc, d, zz

    out = np.empty(n)
    G = np.empty((n, m))
    kinks = np.zeros(n, dtype=np.int64)
    cdef double[::1] out_v = out
    cdef double[:, ::1] G_v = G
    cdef long long[::1] k_v = kinks

    for s in range(n):
        for j in range(widths[0]):
            h[j] = X[s, j]
        for l in range(nl):
            off = poff[l]
            for i in range(widths[l + 1]):
                acc = 0.0
                for j in range(widths[l]):
                    acc += theta[off + i * widths[l] + j] * h[uoff[l] + j]
                z[uoff[l + 1] + i] = acc
                h[uoff[l + 1] + i] = _act(acc, neg_slopes[l]) if l < nl - 1 else acc
        out_v[s] = h[uoff[nl]]

        delta[0] = 1.0
        l = nl - 1
        while True:
            off = poff[l]
            for i in range(widths[l + 1]):
                for j in range(widths[l]):
                    G_v[s, off + i * widths[l] + j] = delta[i] * h[uoff[l] + j]
            if l == 0:
                break
            for j in range(widths[l]):
                acc = 0.0
                for i in range(widths[l + 1]):
                    acc += theta[off + i * widths[l] + j] * delta[i]
                zz = z[uoff[l] + j]
                if zz > 0.0:
                    d = 1.0
                elif zz < 0.0:
                    d = neg_slopes[l - 1]
                else:
                    d = at_zero[l - 1]
                    k_v[s] += 1
                nxt[j] = d * acc
            tmp = delta
            delta = nxt
            nxt = tmp
            l -= 1
    return out, G, kinks
