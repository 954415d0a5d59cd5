"""Dense tensor values and the numerical kernels every layer needs.

Tensors are plain C-contiguous ``float64`` numpy arrays. The functions here
validate shapes and dispatch to :mod:`dann.kernels`; the brute-force
references they are tested against live in :mod:`dann.oracles`.
"""
from __future__ import annotations

import numpy as np

from . import kernels

Tensor = np.ndarray


class ShapeError(ValueError):
    """Raised when operand extents do not fit an operation."""


def as_tensor(values) -> Tensor:
    """Copy ``values`` into a contiguous float64 array."""
    return np.ascontiguousarray(np.array(values, dtype=np.float64))


def check_finite(t: Tensor, what: str = "tensor") -> None:
    if not np.all(np.isfinite(t)):
        raise FloatingPointError(f"{what} contains NaN or Inf")


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _batched(x: Tensor, what: str):
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"{what}: expected (c, h, w) or (batch, c, h, w), got {x.shape}")


def conv2d(x: Tensor, kernels_: Tensor, bias: Tensor) -> Tensor:
    """Valid (unpadded) stride-1 cross-correlation.

    ``out[o, i, j] = bias[o] + sum_{c,u,v} x[c, i+u, j+v] * kernels[o, c, u, v]``.
    Accepts a single ``(c, h, w)`` image or a ``(batch, c, h, w)`` stack.
    """
    xb, single = _batched(x, "conv2d")
    k = np.ascontiguousarray(kernels_, dtype=np.float64)
    bias = np.ascontiguousarray(bias, dtype=np.float64)
    if k.ndim != 4 or k.shape[1] != xb.shape[1]:
        raise ShapeError(f"conv2d: kernels {k.shape} do not match input {xb.shape[1:]}")
    if bias.shape != (k.shape[0],):
        raise ShapeError(f"conv2d: bias {bias.shape} does not match {k.shape[0]} output channels")
    if k.shape[2] > xb.shape[2] or k.shape[3] > xb.shape[3]:
        raise ShapeError(f"conv2d: kernel {k.shape[2:]} larger than input {xb.shape[2:]}")
    out = kernels.conv2d_forward(xb, k, bias)
    return out[0] if single else out


def conv2d_backward(x: Tensor, kernels_: Tensor, grad: Tensor):
    """Gradients ``(d_input, d_kernels, d_bias)`` of :func:`conv2d` for upstream ``grad``."""
    xb, single = _batched(x, "conv2d_backward")
    gb, _ = _batched(grad, "conv2d_backward")
    k = np.ascontiguousarray(kernels_, dtype=np.float64)
    expected = (xb.shape[0], k.shape[0], xb.shape[2] - k.shape[2] + 1, xb.shape[3] - k.shape[3] + 1)
    if gb.shape != expected:
        raise ShapeError(f"conv2d_backward: upstream {gb.shape}, expected {expected}")
    dx, dk, db = kernels.conv2d_backward(xb, k, gb)
    return (dx[0] if single else dx), dk, db


def _pool_geometry(shape, window, stride):
    kh, kw = window
    sh, sw = stride
    h, w = shape[-2:]
    if kh < 1 or kw < 1 or sh < 1 or sw < 1:
        raise ShapeError(f"maxpool2d: window {window} and stride {stride} must be positive")
    if kh > h or kw > w or (h - kh) % sh or (w - kw) % sw:
        raise ShapeError(
            f"maxpool2d: input {h}x{w} is not tiled by window {kh}x{kw} at stride {sh}x{sw}")
    return kh, kw, sh, sw


def maxpool2d(x: Tensor, window=(2, 2), stride=None):
    """Window maximum; returns ``(out, argmax)``.

    ``argmax`` has shape ``out.shape + (2,)`` and holds the (row, col) of each
    winner in input coordinates. Ties resolve to the first position in
    row-major order.
    """
    stride = tuple(window) if stride is None else tuple(stride)
    xb, single = _batched(x, "maxpool2d")
    kh, kw, sh, sw = _pool_geometry(xb.shape, tuple(window), stride)
    out, flat = kernels.maxpool_forward(xb, kh, kw, sh, sw)
    rc = np.stack(np.divmod(flat, xb.shape[3]), axis=-1)
    if single:
        return out[0], rc[0]
    return out, rc


def maxpool2d_backward(grad: Tensor, argmax, input_shape) -> Tensor:
    """Route ``grad`` back to the winning input positions recorded by :func:`maxpool2d`."""
    input_shape = tuple(input_shape)
    gb, single = _batched(grad, "maxpool2d_backward")
    rc = np.asarray(argmax, dtype=np.int64)
    if single:
        rc = rc[None]
        input_shape = (1,) + input_shape
    if rc.shape != gb.shape + (2,):
        raise ShapeError(f"maxpool2d_backward: argmax {rc.shape} does not match upstream {gb.shape}")
    flat = rc[..., 0] * input_shape[3] + rc[..., 1]
    out = kernels.maxpool_backward(gb, np.ascontiguousarray(flat), input_shape)
    return out[0] if single else out


class Rng:
    """Seeded random stream: numpy's PCG64 bit generator behind a small interface.

    PCG64 is a 128-bit-state permuted congruential generator whose integer
    output is identical on every platform. Floats are produced by numpy's
    ``Generator`` (53 random bits scaled into [0, 1)). One instance belongs to
    one consumer; use :meth:`spawn` to hand independent streams to others.
    """

    def __init__(self, seed: int):
        seed = int(seed)
        if not 0 <= seed < 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = seed
        self._seq = np.random.SeedSequence(seed)
        self._gen = np.random.Generator(np.random.PCG64(self._seq))

    @classmethod
    def _from_sequence(cls, seq):
        rng = cls.__new__(cls)
        rng.seed = None
        rng._seq = seq
        rng._gen = np.random.Generator(np.random.PCG64(seq))
        return rng

    def spawn(self, n: int):
        return [Rng._from_sequence(s) for s in self._seq.spawn(n)]

    def integers(self, low, high=None, size=None):
        return self._gen.integers(low, high, size=size, dtype=np.int64)

    def uniform(self, low=0.0, high=1.0, size=None):
        return self._gen.uniform(low, high, size)

    def normal(self, loc=0.0, scale=1.0, size=None):
        return self._gen.normal(loc, scale, size)

    def permutation(self, n: int):
        return self._gen.permutation(n)

    def random(self, size=None):
        return self._gen.random(size)

    def state(self):
        return self._gen.bit_generator.state
