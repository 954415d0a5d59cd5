"""The three-headed network: feature extractor, label predictor, domain classifier.

The domain classifier reads the features through a gradient reversal layer,
so a single backward pass produces ``dL_y/dθ_f - λ dL_d/dθ_f`` for the
extractor while each head still gets the gradient of its own loss.
"""
from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .layers import (Conv2D, Dense, Dropout, Flatten, GradientReversal, MaxPool2D,
                     ReLU, Sequential, Softmax)
from .tensor import Rng, ShapeError

PARTITIONS = ("f", "y", "d")

LARGE_DOMAIN_HEAD = ("dense:1024", "relu", "dense:1024", "relu", "dense:2")


@dataclass(frozen=True)
class ArchitecturePreset:
    """Layer specs per head. Tokens: ``conv<k>:<channels>``, ``pool<k>``,
    ``dense:<units>``, ``relu``, ``flatten``, ``softmax``; ``L`` stands for the
    number of classes."""

    name: str
    extractor: tuple
    label: tuple
    domain: tuple


PRESETS = {
    "mnist-lenet": ArchitecturePreset(
        "mnist-lenet",
        extractor=("conv5:32", "relu", "pool2", "conv5:48", "relu", "pool2", "flatten"),
        label=("dense:100", "relu", "dense:100", "relu", "dense:L"),
        domain=("dense:100", "relu", "dense:2"),
    ),
    "mlp-toy": ArchitecturePreset(
        "mlp-toy",
        extractor=("dense:16", "relu"),
        label=("dense:8", "relu", "dense:L"),
        domain=("dense:8", "relu", "dense:2"),
    ),
}


def build_layers(spec, input_shape, num_classes, rng: Rng, dropout_keep=None):
    """Instantiate a layer spec. With ``dropout_keep`` a dropout layer follows
    every ReLU that is not the last layer."""
    layers = []
    shape = tuple(input_shape)
    spec = list(spec)
    for pos, token in enumerate(spec):
        if token == "relu":
            layer = ReLU()
        elif token == "flatten":
            layer = Flatten()
        elif token == "softmax":
            layer = Softmax()
        elif token.startswith("pool"):
            layer = MaxPool2D(int(token[4:] or 2))
        elif token.startswith("conv"):
            k, _, ch = token[4:].partition(":")
            if len(shape) != 3:
                raise ShapeError(f"{token}: needs (c, h, w) input, got {shape}")
            layer = Conv2D(shape[0], int(ch), int(k), rng)
        elif token.startswith("dense:"):
            units = token.split(":", 1)[1]
            n_out = num_classes if units == "L" else int(units)
            if len(shape) != 1:
                raise ShapeError(f"{token}: needs flat input, got {shape}")
            layer = Dense(shape[0], n_out, rng)
        else:
            raise ValueError(f"unknown layer token {token!r}")
        shape = layer.output_shape(shape)
        layers.append(layer)
        if token == "relu" and dropout_keep is not None and pos < len(spec) - 1:
            layers.append(Dropout(dropout_keep, rng.spawn(1)[0]))
    return Sequential(layers), shape


@dataclass
class Gradients:
    f: dict = field(default_factory=dict)
    y: dict = field(default_factory=dict)
    d: dict = field(default_factory=dict)

    def partitions(self):
        return {"f": self.f, "y": self.y, "d": self.d}


class Network:
    """Feature extractor G_f feeding a label head G_y and, through a GRL, a domain head G_d."""

    def __init__(self, feature_extractor: Sequential, label_predictor: Sequential,
                 domain_classifier: Sequential, lam: float = 0.0, meta=None):
        self.feature_extractor = feature_extractor
        self.label_predictor = label_predictor
        self.domain_classifier = domain_classifier
        self.grl = GradientReversal(lam)
        self.meta = dict(meta or {})
        self._features = None
        self._check_partitions()

    def _check_partitions(self):
        seen = set()
        for part in self.partitions().values():
            for p in part.values():
                if id(p) in seen:
                    raise ValueError("a parameter tensor is shared between partitions")
                seen.add(id(p))

    @property
    def lam(self):
        return self.grl.lam

    @lam.setter
    def lam(self, value):
        if value < 0:
            raise ValueError(f"lambda must be >= 0, got {value}")
        self.grl.lam = float(value)

    def partitions(self):
        return {"f": self.feature_extractor.parameters(),
                "y": self.label_predictor.parameters(),
                "d": self.domain_classifier.parameters()}

    def heads(self):
        return {"f": self.feature_extractor, "y": self.label_predictor, "d": self.domain_classifier}

    def forward_all(self, x, training=True):
        """Return ``(label_logits, domain_logits, features)`` for a batch."""
        x = np.asarray(x, dtype=np.float64)
        try:
            features = self.feature_extractor.forward(x, training)
        except ShapeError as exc:
            raise ShapeError(f"feature extractor: {exc}") from None
        try:
            label_logits = self.label_predictor.forward(features, training)
        except ShapeError as exc:
            raise ShapeError(f"label predictor: {exc}") from None
        try:
            domain_logits = self.domain_classifier.forward(self.grl.forward(features), training)
        except ShapeError as exc:
            raise ShapeError(f"domain classifier: {exc}") from None
        self._features = features
        return label_logits, domain_logits, features

    def backward_all(self, label_grad, domain_grad, *, domain_feature_grad=None):
        """Backpropagate loss gradients w.r.t. both heads' logits.

        Either gradient may be ``None`` to skip that head. The domain gradient
        reaches the extractor through the GRL (scaled by ``-lam``). Passing
        ``domain_feature_grad`` instead routes that gradient back through the
        domain head for the extractor, without reversal, while ``domain_grad``
        still drives the domain head's own parameters (the dual-loss scheme).
        """
        if self._features is None:
            raise RuntimeError("backward_all called before forward_all")
        grads = Gradients()
        g_feat = np.zeros_like(self._features)
        if label_grad is not None:
            g_feat, grads.y = self.label_predictor.backward(label_grad)
        if domain_grad is not None:
            g_dom, grads.d = self.domain_classifier.backward(domain_grad)
            if domain_feature_grad is None:
                g_feat = g_feat + self.grl.backward(g_dom)[0]
        if domain_feature_grad is not None:
            g_adv, _ = self.domain_classifier.backward(domain_feature_grad)
            g_feat = g_feat + g_adv
        _, grads.f = self.feature_extractor.backward(g_feat)
        return grads

    def _batched(self, fn, x, batch_size):
        outs = [fn(x[i:i + batch_size]) for i in range(0, len(x), batch_size)]
        return np.concatenate(outs, axis=0) if outs else np.zeros((0,))

    def features(self, x, batch_size=512):
        """Inference-mode G_f(x)."""
        x = np.asarray(x, dtype=np.float64)
        return self._batched(lambda b: self.feature_extractor.forward(b, False), x, batch_size)

    def label_logits(self, x, batch_size=512):
        """Inference-mode G_y(G_f(x))."""
        x = np.asarray(x, dtype=np.float64)
        return self._batched(
            lambda b: self.label_predictor.forward(self.feature_extractor.forward(b, False), False),
            x, batch_size)

    def domain_logits(self, x, batch_size=512):
        x = np.asarray(x, dtype=np.float64)
        return self._batched(
            lambda b: self.domain_classifier.forward(self.feature_extractor.forward(b, False), False),
            x, batch_size)

    def predict(self, x, batch_size=512):
        return self.label_logits(x, batch_size).argmax(axis=1)

    def predict_proba(self, x, batch_size=512):
        return Softmax().forward(self.label_logits(x, batch_size))

    def load_partitions(self, parts):
        """Copy tensors from ``{"f": {...}, "y": {...}, "d": {...}}`` into this network."""
        own = self.partitions()
        for key in PARTITIONS:
            src = parts.get(key, {})
            if set(src) != set(own[key]):
                raise ValueError(f"partition {key}: tensor names {sorted(src)} != {sorted(own[key])}")
            for name, value in src.items():
                if own[key][name].shape != value.shape:
                    raise ValueError(f"{key}/{name}: shape {value.shape} != {own[key][name].shape}")
                own[key][name][...] = value

    def copy(self):
        return copy.deepcopy(self)


def build_network(preset, input_shape, num_classes, seed=0, *, domain_head=None,
                  dropout_keep=None, lam=0.0):
    """Build a network from a preset name or :class:`ArchitecturePreset`.

    ``domain_head`` may be ``"large"`` for the x->1024->1024->2 classifier or a
    token tuple overriding the preset's domain head.
    """
    if isinstance(preset, str):
        if preset not in PRESETS:
            raise ValueError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
        preset = PRESETS[preset]
    if domain_head == "large":
        domain_spec = LARGE_DOMAIN_HEAD
    elif domain_head is not None:
        domain_spec = tuple(domain_head)
    else:
        domain_spec = preset.domain
    rng_f, rng_y, rng_d = Rng(seed).spawn(3)
    fe, feat_shape = build_layers(preset.extractor, input_shape, num_classes, rng_f, dropout_keep)
    if len(feat_shape) != 1:
        raise ShapeError(f"feature extractor must end flat, ends with {feat_shape}")
    lp, out_y = build_layers(preset.label, feat_shape, num_classes, rng_y, dropout_keep)
    dc, out_d = build_layers(domain_spec, feat_shape, num_classes, rng_d, dropout_keep)
    if out_d != (2,):
        raise ShapeError(f"domain head must end with 2 logits, ends with {out_d}")
    meta = {
        "preset": preset.name,
        "extractor": list(preset.extractor),
        "label": list(preset.label),
        "domain": list(domain_spec),
        "input_shape": list(input_shape),
        "num_classes": int(num_classes),
        "feature_dim": int(feat_shape[0]),
        "dropout_keep": dropout_keep,
        "seed": int(seed),
    }
    return Network(fe, lp, dc, lam=lam, meta=meta)


def network_from_meta(meta):
    preset = ArchitecturePreset(meta["preset"], tuple(meta["extractor"]), tuple(meta["label"]),
                                tuple(meta["domain"]))
    net = build_network(preset, tuple(meta["input_shape"]), meta["num_classes"],
                        meta.get("seed", 0), domain_head=tuple(meta["domain"]),
                        dropout_keep=meta.get("dropout_keep"))
    if "input_scale" in meta:
        net.meta["input_scale"] = float(meta["input_scale"])
    return net
