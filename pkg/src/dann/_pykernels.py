"""Pure numpy implementation of the hot kernels.

Every function here has a twin in ``_ckernels.pyx`` with the same signature.
Both build the same im2col matrix and hand it to the same BLAS call, and the
scatter-add loops visit contributions in the same order, so the two backends
return bit-identical arrays.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

NAME = "numpy"


def im2col(x, kh, kw):
    """(B, C, H, W) -> (B*H'*W', C*kh*kw), rows ordered (b, i, j)."""
    b, c, h, w = x.shape
    ho, wo = h - kh + 1, w - kw + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))  # B, C, H', W', kh, kw
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(b * ho * wo, c * kh * kw)


def col2im(cols, shape, kh, kw):
    """Adjoint of :func:`im2col`: scatter-add columns back into a (B, C, H, W) array."""
    b, c, h, w = shape
    ho, wo = h - kh + 1, w - kw + 1
    cols = cols.reshape(b, ho, wo, c, kh, kw)
    out = np.zeros(shape, dtype=np.float64)
    # descending (u, v) reproduces the C loop's accumulation order per element
    for u in range(kh - 1, -1, -1):
        for v in range(kw - 1, -1, -1):
            out[:, :, u:u + ho, v:v + wo] += cols[:, :, :, :, u, v].transpose(0, 3, 1, 2)
    return out


def conv2d_forward(x, kernels, bias):
    b = x.shape[0]
    o, c, kh, kw = kernels.shape
    ho, wo = x.shape[2] - kh + 1, x.shape[3] - kw + 1
    cols = im2col(x, kh, kw)
    out = cols @ kernels.reshape(o, c * kh * kw).T
    out += bias
    return np.ascontiguousarray(out.reshape(b, ho, wo, o).transpose(0, 3, 1, 2))


def conv2d_backward(x, kernels, grad):
    """Return (grad_input, grad_kernels, grad_bias) for a valid stride-1 correlation."""
    o, c, kh, kw = kernels.shape
    cols = im2col(x, kh, kw)
    gm = np.ascontiguousarray(grad.transpose(0, 2, 3, 1)).reshape(-1, o)
    grad_k = (gm.T @ cols).reshape(kernels.shape)
    grad_b = gm.sum(axis=0)
    dcols = gm @ kernels.reshape(o, c * kh * kw)
    grad_x = col2im(dcols, x.shape, kh, kw)
    return grad_x, grad_k, grad_b


def maxpool_forward(x, kh, kw, sh, sw):
    """Return (out, argmax) where argmax holds the flat in-plane index h*W + w of each winner."""
    b, c, h, w = x.shape
    ho, wo = (h - kh) // sh + 1, (w - kw) // sw + 1
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::sh, ::sw]
    win = win.reshape(b, c, ho, wo, kh * kw)
    local = win.argmax(axis=-1)  # first occurrence on ties
    out = np.take_along_axis(win, local[..., None], axis=-1)[..., 0]
    du, dv = np.divmod(local, kw)
    rows = np.arange(ho)[:, None] * sh + du
    cols = np.arange(wo)[None, :] * sw + dv
    return np.ascontiguousarray(out), (rows * w + cols).astype(np.int64)


def maxpool_backward(grad, argmax, input_shape):
    b, c, h, w = input_shape
    out = np.zeros((b * c, h * w), dtype=np.float64)
    flat_idx = argmax.reshape(b * c, -1)
    flat_grad = grad.reshape(b * c, -1)
    rows = np.repeat(np.arange(b * c), flat_idx.shape[1])
    np.add.at(out, (rows, flat_idx.ravel()), flat_grad.ravel())
    return out.reshape(input_shape)
