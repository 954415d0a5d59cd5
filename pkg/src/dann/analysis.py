"""Adaptation metrics: gap coverage, the proxy H-delta-H distance, the
computable part of the target-error bound, and feature export."""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .datasets import DomainDataset
from .layers import Dense, ReLU, Sequential
from .losses import domain_loss
from .network import Network
from .optim import OptimizerState, sgd_step
from .tensor import Rng


@dataclass(frozen=True)
class GapReport:
    source_only_acc: float
    method_acc: float
    train_on_target_acc: float
    coverage: float

    def __str__(self):
        return f"{100 * self.coverage:.1f}%"


def gap_coverage(source_only, method, train_on_target) -> GapReport:
    """Share of the source-only -> train-on-target accuracy gap recovered by ``method``."""
    for name, v in (("source-only", source_only), ("method", method),
                    ("train-on-target", train_on_target)):
        if not 0.0 <= v <= 1.0:
            raise ValueError(f"{name} accuracy {v} outside [0, 1]")
    gap = train_on_target - source_only
    if gap <= 0:
        raise ValueError(f"degenerate gap: train-on-target {train_on_target} <= source-only {source_only}")
    return GapReport(source_only, method, train_on_target, (method - source_only) / gap)


@dataclass(frozen=True)
class DistanceEstimate:
    domain_classifier_accuracy: float
    proxy_distance: float

    @classmethod
    def from_accuracy(cls, acc):
        """``max(0, 2 (2 acc - 1))``: below-chance accuracy is estimation noise."""
        return cls(float(acc), max(0.0, 2.0 * (2.0 * float(acc) - 1.0)))


def _fresh_domain_head(dim, rng):
    return Sequential([Dense(dim, 100, rng), ReLU(), Dense(100, 2, rng)])


def proxy_hdh_distance(source_features, target_features, seed=0, steps=2000, batch_size=64,
                       mu=0.01, momentum=0.9) -> DistanceEstimate:
    """Estimate the H-delta-H distance between two equally sized feature sets.

    Each set is split 50/50; a fresh x->100->2 classifier is trained on the
    first halves and its balanced accuracy on the second halves gives the
    estimate. Features are standardized with the training-half statistics.
    """
    fs = np.asarray(source_features, dtype=np.float64)
    ft = np.asarray(target_features, dtype=np.float64)
    if len(fs) == 0 or len(ft) == 0:
        raise ValueError("proxy distance: empty held-out set")
    if len(fs) != len(ft):
        raise ValueError(f"proxy distance: unbalanced held-out sets ({len(fs)} vs {len(ft)})")
    if len(fs) < 4:
        raise ValueError("proxy distance: need at least 4 samples per domain")
    fs, ft = fs.reshape(len(fs), -1), ft.reshape(len(ft), -1)
    rng_split, rng_init, rng_batch = Rng(seed).spawn(3)
    ps, pt = rng_split.permutation(len(fs)), rng_split.permutation(len(ft))
    h = len(fs) // 2
    train_s, test_s = fs[ps[:h]], fs[ps[h:]]
    train_t, test_t = ft[pt[:h]], ft[pt[h:]]
    both = np.concatenate([train_s, train_t])
    center = both.mean(axis=0)
    scale = both.std(axis=0)
    scale[scale == 0] = 1.0

    def norm(x):
        return (x - center) / scale

    train_s, train_t, test_s, test_t = map(norm, (train_s, train_t, test_s, test_t))
    head = _fresh_domain_head(fs.shape[1], rng_init)
    state = OptimizerState()
    half = batch_size // 2
    labels = np.concatenate([np.zeros(half, dtype=np.int64), np.ones(half, dtype=np.int64)])
    for _ in range(steps):
        x = np.concatenate([train_s[rng_batch.integers(0, len(train_s), size=half)],
                            train_t[rng_batch.integers(0, len(train_t), size=half)]])
        _, g = domain_loss(head.forward(x, True), labels)
        _, grads = head.backward(g)
        sgd_step(head.parameters(), grads, state, mu, momentum)
    acc_s = float(np.mean(head.forward(test_s).argmax(axis=1) == 0))
    acc_t = float(np.mean(head.forward(test_t).argmax(axis=1) == 1))
    return DistanceEstimate.from_accuracy(0.5 * (acc_s + acc_t))


def network_proxy_distance(net: Network, source: DomainDataset, target: DomainDataset, seed=0,
                           **kwargs) -> DistanceEstimate:
    """:func:`proxy_hdh_distance` on the frozen G_f features of two held-out sets."""
    n = min(len(source), len(target))
    return proxy_hdh_distance(net.features(source.images[:n]), net.features(target.images[:n]),
                              seed=seed, **kwargs)


@dataclass(frozen=True)
class BoundReport:
    source_error: float
    proxy_distance: float
    value: float
    label: str = "bound minus C"

    def __str__(self):
        return f"{self.label}: {self.value:.4f} (source error {self.source_error:.4f} + " \
               f"0.5 x proxy distance {self.proxy_distance:.4f})"


def bound_report(source_error, distance: DistanceEstimate) -> BoundReport:
    """``source_error + distance / 2``; the hypothesis-class constant C is not observable."""
    if not 0.0 <= source_error <= 1.0:
        raise ValueError(f"source error {source_error} outside [0, 1]")
    return BoundReport(source_error, distance.proxy_distance,
                       source_error + 0.5 * distance.proxy_distance)


def adaptation_advisory(source_error, domain_classifier_error):
    """Plain-text reading of the two unsupervised health metrics (never acted on automatically)."""
    verdict = ("promising" if source_error < 0.1 and domain_classifier_error > 0.3 else
               "doubtful" if domain_classifier_error < 0.1 else "inconclusive")
    return (f"source error {source_error:.3f}, domain-classifier error {domain_classifier_error:.3f}: "
            f"adaptation looks {verdict} (low source error with high domain-classifier error "
            f"usually means successful adaptation)")


FEATURE_HEAD = ("split", "domain", "label")


def export_features(net: Network, splits, path) -> int:
    """Write G_f features as CSV: ``split,domain,label,f0..f{D-1}``.

    ``splits`` is a sequence of ``(name, DomainDataset)``; rows follow that
    order and, within a split, the original sample order. Unknown labels are
    -1. Returns the number of rows written.
    """
    rows = 0
    try:
        fh = open(path, "w", newline="")
    except OSError as exc:
        raise OSError(f"cannot write features to {path}: {exc}") from exc
    with fh:
        w = csv.writer(fh, lineterminator="\n")
        dim = None
        for name, ds in splits:
            feats = net.features(ds.images)
            if dim is None:
                dim = feats.shape[1]
                w.writerow(list(FEATURE_HEAD) + [f"f{i}" for i in range(dim)])
            domain = 0 if ds.role == "source" else 1
            labels = ds.labels if ds.labels is not None else np.full(len(ds), -1)
            for i in range(len(ds)):
                w.writerow([name, domain, int(labels[i])] + [repr(float(v)) for v in feats[i]])
                rows += 1
    return rows


def load_features(path):
    """Read an :func:`export_features` file; returns ``(splits, domains, labels, features)``."""
    with open(path, newline="") as fh:
        r = csv.reader(fh)
        header = next(r)
        if tuple(header[:3]) != FEATURE_HEAD:
            raise ValueError(f"{path}: not a feature file (header {header[:3]})")
        splits, domains, labels, feats = [], [], [], []
        for row in r:
            splits.append(row[0])
            domains.append(int(row[1]))
            labels.append(int(row[2]))
            feats.append([float(v) for v in row[3:]])
    return (np.array(splits), np.array(domains, dtype=np.int64), np.array(labels, dtype=np.int64),
            np.array(feats, dtype=np.float64).reshape(len(feats), len(header) - 3))
