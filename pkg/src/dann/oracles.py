"""Slow, obviously-correct reference implementations.

These exist to check the fast paths: plain Python loops for the kernels and
central finite differences for gradients. None of them share code with
:mod:`dann.kernels`.
"""
import numpy as np


def matmul_loops(a, b):
    m, k = a.shape
    k2, n = b.shape
    assert k == k2
    out = np.zeros((m, n))
    for i in range(m):
        for j in range(n):
            s = 0.0
            for t in range(k):
                s += a[i, t] * b[t, j]
            out[i, j] = s
    return out


def conv2d_loops(x, kernels, bias):
    c_in, h, w = x.shape
    c_out, _, kh, kw = kernels.shape
    out = np.zeros((c_out, h - kh + 1, w - kw + 1))
    for o in range(c_out):
        for i in range(h - kh + 1):
            for j in range(w - kw + 1):
                s = bias[o]
                for c in range(c_in):
                    for u in range(kh):
                        for v in range(kw):
                            s += x[c, i + u, j + v] * kernels[o, c, u, v]
                out[o, i, j] = s
    return out


def maxpool2d_loops(x, window=(2, 2), stride=None):
    kh, kw = window
    sh, sw = stride or window
    c, h, w = x.shape
    ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
    out = np.zeros((c, ho, wo))
    arg = np.zeros((c, ho, wo, 2), dtype=np.int64)
    for ch in range(c):
        for i in range(ho):
            for j in range(wo):
                best, pos = None, None
                for u in range(kh):
                    for v in range(kw):
                        val = x[ch, i * sh + u, j * sw + v]
                        if best is None or val > best:
                            best, pos = val, (i * sh + u, j * sw + v)
                out[ch, i, j] = best
                arg[ch, i, j] = pos
    return out, arg


def numerical_gradient(f, x, eps=1e-6):
    """Central differences of scalar ``f`` with respect to every entry of ``x``.

    ``x`` is perturbed in place and restored.
    """
    grad = np.zeros_like(x, dtype=np.float64)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        fp = f()
        flat[i] = orig - eps
        fm = f()
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * eps)
    return grad


def relative_error(analytic, numeric):
    """Largest absolute discrepancy scaled by the largest magnitude in either array.

    Scaling per array rather than per entry keeps near-zero entries (where the
    finite-difference rounding floor dominates) from reporting huge ratios.
    """
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    if analytic.size == 0:
        return 0.0
    scale = max(np.max(np.abs(analytic)), np.max(np.abs(numeric)), 1e-300)
    return float(np.max(np.abs(analytic - numeric)) / scale)
