"""Layers with explicit forward and backward passes.

Every layer works on a leading batch axis. ``forward`` caches what
``backward`` needs; ``backward(grad)`` returns ``(grad_input, param_grads)``
and leaves the cache intact, so the same forward state can be backpropagated
through more than once (the single-head oracles rely on this).
"""
from __future__ import annotations

import numpy as np

from .tensor import Rng, ShapeError, conv2d, conv2d_backward
from . import kernels


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self._cache = None

    def forward(self, x, training=False):
        raise NotImplementedError

    def backward(self, grad):
        raise NotImplementedError

    def _cached(self):
        if self._cache is None:
            raise RuntimeError(f"{self.kind}: backward called before forward")
        return self._cache

    def output_shape(self, input_shape):
        """Per-sample output extents for per-sample ``input_shape``."""
        return tuple(input_shape)

    def __repr__(self):
        return f"{type(self).__name__}()"


def glorot_uniform(rng: Rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return np.ascontiguousarray(rng.uniform(-limit, limit, size=shape))


class Dense(Layer):
    """``y = x @ W + b`` with ``W`` of shape (in, out); column ``j`` is unit ``j``'s incoming weights."""

    kind = "dense"

    def __init__(self, n_in: int, n_out: int, rng: Rng):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params["W"] = glorot_uniform(rng, (n_in, n_out), n_in, n_out)
        self.params["b"] = np.zeros(n_out)

    def forward(self, x, training=False):
        if x.ndim != 2 or x.shape[1] != self.n_in:
            raise ShapeError(f"dense({self.n_in}->{self.n_out}): got input {x.shape}")
        self._cache = x
        return x @ self.params["W"] + self.params["b"]

    def backward(self, grad):
        x = self._cached()
        return grad @ self.params["W"].T, {"W": x.T @ grad, "b": grad.sum(axis=0)}

    def output_shape(self, input_shape):
        if tuple(input_shape) != (self.n_in,):
            raise ShapeError(f"dense({self.n_in}->{self.n_out}): got input extents {input_shape}")
        return (self.n_out,)

    def __repr__(self):
        return f"Dense({self.n_in}, {self.n_out})"


class Conv2D(Layer):
    kind = "conv"

    def __init__(self, c_in: int, c_out: int, kernel: int, rng: Rng):
        super().__init__()
        self.c_in, self.c_out, self.kernel = c_in, c_out, kernel
        k = kernel * kernel
        self.params["K"] = glorot_uniform(rng, (c_out, c_in, kernel, kernel), c_in * k, c_out * k)
        self.params["b"] = np.zeros(c_out)

    def forward(self, x, training=False):
        if x.ndim != 4 or x.shape[1] != self.c_in:
            raise ShapeError(f"conv({self.c_in}->{self.c_out}, {self.kernel}x{self.kernel}): "
                             f"got input {x.shape}")
        x = np.ascontiguousarray(x)
        self._cache = x
        return conv2d(x, self.params["K"], self.params["b"])

    def backward(self, grad):
        x = self._cached()
        dx, dk, db = conv2d_backward(x, self.params["K"], grad)
        return dx, {"K": dk, "b": db}

    def output_shape(self, input_shape):
        c, h, w = input_shape
        if c != self.c_in or h < self.kernel or w < self.kernel:
            raise ShapeError(f"conv({self.c_in}->{self.c_out}, {self.kernel}x{self.kernel}): "
                             f"got input extents {input_shape}")
        return (self.c_out, h - self.kernel + 1, w - self.kernel + 1)

    def __repr__(self):
        return f"Conv2D({self.c_in}, {self.c_out}, {self.kernel})"


class MaxPool2D(Layer):
    kind = "maxpool"

    def __init__(self, window: int = 2, stride: int | None = None):
        super().__init__()
        self.window = window
        self.stride = stride or window

    def forward(self, x, training=False):
        if x.ndim != 4:
            raise ShapeError(f"maxpool: expected (batch, c, h, w), got {x.shape}")
        self.output_shape(x.shape[1:])
        x = np.ascontiguousarray(x)
        out, idx = kernels.maxpool_forward(x, self.window, self.window, self.stride, self.stride)
        self._cache = (x.shape, idx)
        return out

    def backward(self, grad):
        shape, idx = self._cached()
        return kernels.maxpool_backward(np.ascontiguousarray(grad), idx, shape), {}

    def output_shape(self, input_shape):
        c, h, w = input_shape
        k, s = self.window, self.stride
        if k > h or k > w or (h - k) % s or (w - k) % s:
            raise ShapeError(f"maxpool({k}, stride {s}): input {h}x{w} not tiled")
        return (c, (h - k) // s + 1, (w - k) // s + 1)

    def __repr__(self):
        return f"MaxPool2D({self.window}, {self.stride})"


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, training=False):
        mask = x > 0
        self._cache = mask
        return np.where(mask, x, 0.0)

    def backward(self, grad):
        return np.where(self._cached(), grad, 0.0), {}

    def __repr__(self):
        return "ReLU()"


class Softmax(Layer):
    """Row-wise softmax over the last axis."""

    kind = "softmax"

    def forward(self, x, training=False):
        z = x - x.max(axis=-1, keepdims=True)
        e = np.exp(z)
        s = e / e.sum(axis=-1, keepdims=True)
        self._cache = s
        return s

    def backward(self, grad):
        s = self._cached()
        return s * (grad - (grad * s).sum(axis=-1, keepdims=True)), {}


class Dropout(Layer):
    """Inverted dropout: at train time keep each unit with probability ``keep`` and scale by ``1/keep``.

    Set ``freeze = True`` to reuse the previous mask on the next forward
    (finite-difference checks need a fixed mask).
    """

    kind = "dropout"

    def __init__(self, keep: float, rng: Rng):
        super().__init__()
        if not 0.0 < keep <= 1.0:
            raise ValueError(f"dropout keep probability must be in (0, 1], got {keep}")
        self.keep = keep
        self.rng = rng
        self.freeze = False
        self._mask = None
        self._identity = None

    def forward(self, x, training=False):
        if not training or self.keep == 1.0:
            self._cache = None
            self._identity = True
            return x
        self._identity = False
        if not (self.freeze and self._mask is not None and self._mask.shape == x.shape):
            self._mask = (self.rng.random(x.shape) < self.keep) / self.keep
        self._cache = self._mask
        return x * self._mask

    def backward(self, grad):
        if self._identity is None:
            raise RuntimeError("dropout: backward called before forward")
        if self._identity:
            return grad, {}
        return grad * self._cache, {}

    def __repr__(self):
        return f"Dropout({self.keep})"


def grl_forward(x, lam=1.0):
    """Identity: the gradient reversal layer leaves activations untouched."""
    return x


def grl_backward(upstream, lam, expected_shape=None):
    """Multiply the incoming gradient by ``-lam``."""
    upstream = np.asarray(upstream, dtype=np.float64)
    if expected_shape is not None and tuple(upstream.shape) != tuple(expected_shape):
        raise ShapeError(f"grl: upstream {upstream.shape} does not match forward input {tuple(expected_shape)}")
    return -lam * upstream


class GradientReversal(Layer):
    """Identity on the way forward, ``-lam`` times the gradient on the way back.

    ``lam`` is a meta-parameter set by the training schedule; the layer has no
    trainable parameters.
    """

    kind = "grl"

    def __init__(self, lam: float = 1.0):
        super().__init__()
        self.lam = lam

    def forward(self, x, training=False):
        self._cache = x.shape
        return grl_forward(x, self.lam)

    def backward(self, grad):
        return grl_backward(grad, self.lam, self._cached()), {}

    def __repr__(self):
        return f"GradientReversal(lam={self.lam})"


class Flatten(Layer):
    kind = "flatten"

    def forward(self, x, training=False):
        self._cache = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        return grad.reshape(self._cached()), {}

    def output_shape(self, input_shape):
        return (int(np.prod(input_shape)),)

    def __repr__(self):
        return "Flatten()"


class Sequential:
    """A chain of layers; parameter names are ``"<index>.<name>"``."""

    def __init__(self, layers):
        self.layers = list(layers)

    def forward(self, x, training=False):
        for i, layer in enumerate(self.layers):
            try:
                x = layer.forward(x, training)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer!r}): {exc}") from None
        return x

    def backward(self, grad):
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            grad, pg = self.layers[i].backward(grad)
            for name, g in pg.items():
                grads[f"{i}.{name}"] = g
        return grad, grads

    def parameters(self):
        return {f"{i}.{name}": p for i, layer in enumerate(self.layers)
                for name, p in layer.params.items()}

    def output_shape(self, input_shape):
        shape = tuple(input_shape)
        for i, layer in enumerate(self.layers):
            try:
                shape = layer.output_shape(shape)
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer!r}): {exc}") from None
        return shape

    def __len__(self):
        return len(self.layers)

    def __repr__(self):
        return "Sequential(" + ", ".join(map(repr, self.layers)) + ")"
