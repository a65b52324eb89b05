"""Pure-numpy batched kernels; same contract as the compiled ``_kernels``."""
import numpy as np


def _layers(theta, widths):
    out, offset = [], 0
    for l in range(1, len(widths)):
        r, c = int(widths[l]), int(widths[l - 1])
        out.append(theta[offset : offset + r * c].reshape(r, c))
        offset += r * c
    return out


def forward_batch(theta, widths, neg_slopes, X):
    h = X
    weights = _layers(theta, widths)
    for l, W in enumerate(weights):
        z = h @ W.T
        h = np.where(z > 0, z, neg_slopes[l] * z) if l < len(weights) - 1 else z
    return h[:, 0].copy()


def forward_backward_batch(theta, widths, neg_slopes, at_zero, X):
    weights = _layers(theta, widths)
    n = X.shape[0]
    pre, post = [], [X]
    h = X
    for l, W in enumerate(weights):
        z = h @ W.T
        pre.append(z)
        h = np.where(z > 0, z, neg_slopes[l] * z) if l < len(weights) - 1 else z
        post.append(h)
    out = h[:, 0].copy()

    kinks = np.zeros(n, dtype=np.int64)
    blocks = [None] * len(weights)
    delta = np.ones((n, 1))
    for l in range(len(weights) - 1, -1, -1):
        blocks[l] = (delta[:, :, None] * post[l][:, None, :]).reshape(n, -1)
        if l == 0:
            break
        e = delta @ weights[l]
        z = pre[l - 1]
        zero = z == 0
        d = np.where(z > 0, 1.0, neg_slopes[l - 1])
        d[zero] = at_zero[l - 1]
        kinks += zero.sum(axis=1)
        delta = d * e
    return out, np.concatenate(blocks, axis=1), kinks
