"""SGD with momentum, the adaptation and learning-rate schedules, max-norm, and
the per-batch update rules (GRL and dual-loss)."""
from __future__ import annotations

import math
from dataclasses import dataclass, field, fields
from typing import Callable, NamedTuple, Optional

import numpy as np

from .batch import LabeledBatch
from .losses import domain_loss, masked_label_loss, swapped_domain_loss
from .network import Network

ADVERSARIAL_MODES = ("grl", "dual-loss")
DEFAULT_MAX_NORM = 4.0  # radius used when max-norm is switched on without a value


@dataclass
class TrainConfig:
    batch_size: int = 128
    momentum: float = 0.9
    mu0: float = 0.01
    alpha: float = 10.0
    beta: float = 0.75
    gamma: float = 10.0
    lambda_fixed: Optional[float] = None  # None: scheduled lambda_p
    max_norm: Optional[float] = None
    dropout_keep: Optional[float] = None
    seed: int = 0
    epochs: int = 1
    adversarial_mode: str = "grl"
    steps_per_epoch: Optional[int] = None  # None: floor(min(|S|, |T|) / (B/2))
    per_domain_mean: bool = False

    def __post_init__(self):
        if self.batch_size < 2 or self.batch_size % 2:
            raise ValueError(f"batch_size must be even and >= 2, got {self.batch_size}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0, 1), got {self.momentum}")
        if self.mu0 <= 0:
            raise ValueError(f"mu0 must be > 0, got {self.mu0}")
        if self.gamma <= 0:
            raise ValueError(f"gamma must be > 0, got {self.gamma}")
        if self.lambda_fixed is not None and self.lambda_fixed < 0:
            raise ValueError(f"fixed lambda must be >= 0, got {self.lambda_fixed}")
        if self.max_norm is not None and self.max_norm <= 0:
            raise ValueError(f"max_norm must be > 0, got {self.max_norm}")
        if self.adversarial_mode not in ADVERSARIAL_MODES:
            raise ValueError(f"adversarial_mode must be one of {ADVERSARIAL_MODES}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ValueError("steps_per_epoch must be >= 1")

    @property
    def lambda_mode(self):
        return "scheduled" if self.lambda_fixed is None else f"fixed({self.lambda_fixed})"

    @classmethod
    def field_names(cls):
        return [f.name for f in fields(cls)]


def _check_progress(p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"training progress must lie in [0, 1], got {p}")


def lambda_at(p, gamma=10.0):
    """Adaptation factor ``2 / (1 + exp(-gamma p)) - 1``, rising from 0 towards 1."""
    _check_progress(p)
    return 2.0 / (1.0 + math.exp(-gamma * p)) - 1.0


def learning_rate_at(p, mu0=0.01, alpha=10.0, beta=0.75):
    """Annealed learning rate ``mu0 / (1 + alpha p) ** beta``."""
    _check_progress(p)
    return mu0 / (1.0 + alpha * p) ** beta


def max_norm_project(weights, c):
    """Rescale each column (one unit's incoming weights) whose l2 norm exceeds ``c`` onto the ball."""
    if c <= 0:
        raise ValueError(f"max-norm radius must be > 0, got {c}")
    w = np.array(weights, dtype=np.float64)
    norms = np.sqrt((w * w).sum(axis=0))
    over = norms > c
    w[:, over] *= c / norms[over]
    return w


def apply_max_norm(net: Network, c):
    for head in net.heads().values():
        for layer in head.layers:
            if layer.kind == "dense":
                layer.params["W"][...] = max_norm_project(layer.params["W"], c)


def flatten_partitions(parts):
    return {f"{key}/{name}": t for key, tensors in parts.items() for name, t in tensors.items()}


@dataclass
class OptimizerState:
    """One velocity buffer per parameter tensor, keyed ``"<partition>/<name>"``."""

    velocity: dict = field(default_factory=dict)

    @classmethod
    def for_network(cls, net: Network):
        return cls({k: np.zeros_like(p) for k, p in flatten_partitions(net.partitions()).items()})


def sgd_step(params, grads, state: OptimizerState, mu, momentum):
    """Classical momentum, in place: ``v <- momentum v + g``; ``θ <- θ - mu v``.

    ``params`` and ``grads`` are flat name->array dicts. Parameters without a
    gradient this step are still moved by their velocity, with ``g = 0``.
    """
    for name, p in params.items():
        g = grads.get(name)
        if g is not None and g.shape != p.shape:
            raise ValueError(f"{name}: gradient {g.shape} does not match parameter {p.shape}")
        v = state.velocity.get(name)
        if v is None:
            v = state.velocity[name] = np.zeros_like(p)
        elif v.shape != p.shape:
            raise ValueError(f"{name}: velocity {v.shape} does not match parameter {p.shape}")
        v *= momentum
        if g is not None:
            v += g
        p -= mu * v
    return params, state


class StepReport(NamedTuple):
    loss_y: float
    loss_d: float
    objective: float


class LossPair(NamedTuple):
    """Domain-loss pair for the dual-loss scheme: ``plus`` trains θ_d, ``minus`` trains θ_f."""

    plus: Callable
    minus: Callable


SWAPPED_LABELS = LossPair(domain_loss, swapped_domain_loss)


def grl_loss_pair(lam):
    """The pair ``(L_d, -lam L_d)``, under which dual-loss updates coincide with the GRL."""
    def minus(logits, domains):
        loss, grad = domain_loss(logits, domains)
        return -lam * loss, -lam * grad
    return LossPair(domain_loss, minus)


def _finish_step(net, grads, state, mu, momentum, max_norm):
    sgd_step(flatten_partitions(net.partitions()), flatten_partitions(grads.partitions()),
             state, mu, momentum)
    if max_norm is not None:
        apply_max_norm(net, max_norm)


def dann_update(net: Network, batch: LabeledBatch, lam, mu, state: OptimizerState,
                momentum=0.0, max_norm=None) -> StepReport:
    """One composite SGD step on the GRL pseudo-objective.

    θ_f moves along ``-(dL_y/dθ_f - lam dL_d/dθ_f)``, θ_y along ``-dL_y/dθ_y`` and
    θ_d along ``-dL_d/dθ_d``, all through the same momentum rule.
    """
    net.lam = lam
    label_logits, domain_logits, _ = net.forward_all(batch.images, training=True)
    loss_y, g_y = masked_label_loss(label_logits, batch.class_labels)
    loss_d, g_d = domain_loss(domain_logits, batch.domain_labels)
    grads = net.backward_all(g_y, g_d)
    _finish_step(net, grads, state, mu, momentum, max_norm)
    return StepReport(loss_y, loss_d, loss_y - lam * loss_d)


def dual_loss_update(net: Network, batch: LabeledBatch, lam, mu, state: OptimizerState,
                     momentum=0.0, max_norm=None, loss_pair: LossPair = SWAPPED_LABELS) -> StepReport:
    """One step of the two-loss scheme: θ_d minimizes ``L_d+``, θ_f minimizes ``L_y + L_d-``.

    No gradient reversal is applied. ``lam`` only enters the reported objective
    (and the pair, if the caller built one with :func:`grl_loss_pair`).
    """
    label_logits, domain_logits, _ = net.forward_all(batch.images, training=True)
    loss_y, g_y = masked_label_loss(label_logits, batch.class_labels)
    loss_d, g_plus = loss_pair.plus(domain_logits, batch.domain_labels)
    _, g_minus = loss_pair.minus(domain_logits, batch.domain_labels)
    grads = net.backward_all(g_y, g_plus, domain_feature_grad=g_minus)
    _finish_step(net, grads, state, mu, momentum, max_norm)
    return StepReport(loss_y, loss_d, loss_y - lam * loss_d)


def label_only_update(net: Network, batch: LabeledBatch, mu, state: OptimizerState,
                      momentum=0.0, max_norm=None) -> StepReport:
    """Source-only baseline step: the domain head is neither run nor trained."""
    feats = net.feature_extractor.forward(batch.images, True)
    logits = net.label_predictor.forward(feats, True)
    loss_y, g_y = masked_label_loss(logits, batch.class_labels)
    g_feat, grads_y = net.label_predictor.backward(g_y)
    _, grads_f = net.feature_extractor.backward(g_feat)
    params = flatten_partitions({"f": net.feature_extractor.parameters(),
                                 "y": net.label_predictor.parameters()})
    sgd_step(params, flatten_partitions({"f": grads_f, "y": grads_y}), state, mu, momentum)
    if max_norm is not None:
        apply_max_norm(net, max_norm)
    return StepReport(loss_y, float("nan"), loss_y)
