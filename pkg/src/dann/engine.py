"""Batch composition and the training loops.

Every step draws a batch that is half source (labeled) and half target,
sets λ and μ from training progress ``p = step / total_steps``, and performs
one composite update of all three parameter partitions.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .batch import UNLABELED, LabeledBatch
from .checkpoint import save_checkpoint
from .datasets import DomainDataset
from .network import Network
from .optim import (OptimizerState, TrainConfig, dann_update, dual_loss_update, label_only_update,
                    lambda_at, learning_rate_at)
from .tensor import Rng

DIVERGENCE_LIMIT = 1e6
STEP_COLUMNS = ("step", "p", "lambda", "mu", "loss_y", "loss_d", "objective")
EPOCH_COLUMNS = ("epoch", "step", "source_error", "domain_accuracy", "target_accuracy")


class TrainingDiverged(RuntimeError):
    def __init__(self, step, losses):
        super().__init__(f"non-finite or exploding loss at step {step}: {losses}")
        self.step = step


@dataclass
class StepRecord:
    step: int
    p: float
    lam: float
    mu: float
    loss_y: float
    loss_d: float
    objective: float


@dataclass
class EpochRecord:
    epoch: int
    step: int
    source_error: float
    domain_accuracy: float
    target_accuracy: Optional[float] = None


@dataclass
class TrainReport:
    steps: list = field(default_factory=list)
    epochs: list = field(default_factory=list)

    def write_steps_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(STEP_COLUMNS)
        for r in self.steps:
            w.writerow([r.step, repr(r.p), repr(r.lam), repr(r.mu), repr(r.loss_y),
                        repr(r.loss_d), repr(r.objective)])

    def write_epochs_csv(self, fh):
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(EPOCH_COLUMNS)
        for r in self.epochs:
            w.writerow([r.epoch, r.step, repr(r.source_error), repr(r.domain_accuracy),
                        "" if r.target_accuracy is None else repr(r.target_accuracy)])

    def steps_csv(self) -> str:
        buf = io.StringIO()
        self.write_steps_csv(buf)
        return buf.getvalue()

    def epochs_csv(self) -> str:
        buf = io.StringIO()
        self.write_epochs_csv(buf)
        return buf.getvalue()

    def save(self, path):
        """Write the per-step CSV to ``path`` and the per-epoch CSV next to it."""
        with open(path, "w", newline="") as fh:
            self.write_steps_csv(fh)
        with open(epochs_path(path), "w", newline="") as fh:
            self.write_epochs_csv(fh)


def epochs_path(path):
    path = str(path)
    stem = path[:-4] if path.endswith(".csv") else path
    return f"{stem}.epochs.csv"


# ---------------------------------------------------------------- batches


def compose_batch(source: DomainDataset, target: DomainDataset, cfg: TrainConfig, rng: Rng) -> LabeledBatch:
    """B/2 labeled source samples and B/2 unlabeled target samples, drawn uniformly
    with replacement and shuffled together."""
    if len(source) == 0 or len(target) == 0:
        raise ValueError("compose_batch: source and target must be non-empty")
    if source.labels is None:
        raise ValueError("compose_batch: source samples need class labels")
    half = cfg.batch_size // 2
    si = rng.integers(0, len(source), size=half)
    ti = rng.integers(0, len(target), size=half)
    batch = LabeledBatch.concat(LabeledBatch.source(source.images[si], source.labels[si]),
                                LabeledBatch.target(target.images[ti]))
    return _shuffled(batch, rng)


def _shuffled(batch, rng):
    perm = rng.permutation(len(batch))
    return LabeledBatch(batch.images[perm], batch.class_labels[perm], batch.domain_labels[perm])


def semi_split(n_labeled, n_unlabeled, half):
    """How many of the ``half`` target slots go to labeled target samples."""
    if n_labeled == 0:
        return 0
    if n_unlabeled == 0:
        return half
    share = round(half * n_labeled / (n_labeled + n_unlabeled))
    return int(min(max(share, 1), half // 2))


def compose_semi_batch(source, labeled_target, unlabeled_target, cfg: TrainConfig, rng: Rng) -> LabeledBatch:
    """Like :func:`compose_batch`, but part of the target half carries class labels.

    The labeled share is proportional to availability, capped at half of
    the target half. Labeled target samples keep domain label 1.
    """
    if labeled_target is None or len(labeled_target) == 0:
        return compose_batch(source, unlabeled_target, cfg, rng)
    if labeled_target.labels is None:
        raise ValueError("labeled target set carries no class labels")
    half = cfg.batch_size // 2
    n_unl = 0 if unlabeled_target is None else len(unlabeled_target)
    n_lab = semi_split(len(labeled_target), n_unl, half)
    si = rng.integers(0, len(source), size=half)
    li = rng.integers(0, len(labeled_target), size=n_lab)
    parts = [LabeledBatch.source(source.images[si], source.labels[si]),
             LabeledBatch.target(labeled_target.images[li], labeled_target.labels[li])]
    if half - n_lab:
        ui = rng.integers(0, n_unl, size=half - n_lab)
        parts.append(LabeledBatch.target(unlabeled_target.images[ui]))
    return _shuffled(LabeledBatch.concat(*parts), rng)


def steps_per_epoch(n_source, n_target, cfg: TrainConfig) -> int:
    if cfg.steps_per_epoch is not None:
        return cfg.steps_per_epoch
    spe = min(n_source, n_target) // (cfg.batch_size // 2)
    if spe < 1:
        raise ValueError(f"datasets of {n_source} and {n_target} samples cannot fill one "
                         f"half-batch of {cfg.batch_size // 2}")
    return spe


# ---------------------------------------------------------------- evaluation


def evaluate(net: Network, dataset: DomainDataset, batch_size=512) -> float:
    """Fraction of samples whose argmax label prediction is correct."""
    if dataset.labels is None:
        raise ValueError("evaluate: dataset carries no class labels")
    if len(dataset) == 0:
        raise ValueError("evaluate: empty dataset")
    return float(np.mean(net.predict(dataset.images, batch_size) == dataset.labels))


def domain_accuracy(net: Network, source_x, target_x, batch_size=512) -> float:
    """Balanced accuracy of the network's own domain head (source = 0, target = 1)."""
    if len(source_x) == 0 or len(target_x) == 0:
        raise ValueError("domain_accuracy: empty evaluation set")
    ps = net.domain_logits(source_x, batch_size).argmax(axis=1)
    pt = net.domain_logits(target_x, batch_size).argmax(axis=1)
    return 0.5 * (float(np.mean(ps == 0)) + float(np.mean(pt == 1)))


# ---------------------------------------------------------------- loops


def _schedule(cfg: TrainConfig, p):
    lam = lambda_at(p, cfg.gamma) if cfg.lambda_fixed is None else float(cfg.lambda_fixed)
    return lam, learning_rate_at(p, cfg.mu0, cfg.alpha, cfg.beta)


def _run(net, draw, update, n_source, n_target, cfg, *, source_eval, target_eval,
         domain_eval, checkpoint_path, checkpoint_every, step_stream, check_domain_loss=True):
    report = TrainReport()
    spe = steps_per_epoch(n_source, n_target, cfg) if cfg.epochs else 0
    total = cfg.epochs * spe
    rng = Rng(cfg.seed)
    state = OptimizerState.for_network(net)
    writer = None
    if step_stream is not None:
        writer = csv.writer(step_stream, lineterminator="\n")
        writer.writerow(STEP_COLUMNS)
    step = 0
    for epoch in range(cfg.epochs):
        for _ in range(spe):
            p = step / total
            lam, mu = _schedule(cfg, p)
            batch = draw(rng)
            r = update(net, batch, lam, mu, state)
            watched = (r.loss_y, r.loss_d) if check_domain_loss else (r.loss_y,)
            if not all(math.isfinite(v) and abs(v) <= DIVERGENCE_LIMIT for v in watched):
                raise TrainingDiverged(step, r)
            rec = StepRecord(step, p, lam, mu, r.loss_y, r.loss_d, r.objective)
            report.steps.append(rec)
            if writer is not None:
                writer.writerow([rec.step, repr(rec.p), repr(rec.lam), repr(rec.mu),
                                 repr(rec.loss_y), repr(rec.loss_d), repr(rec.objective)])
            step += 1
            if checkpoint_path and checkpoint_every and step % checkpoint_every == 0:
                save_checkpoint(net, checkpoint_path)
        report.epochs.append(EpochRecord(
            epoch=epoch,
            step=step,
            source_error=1.0 - evaluate(net, source_eval),
            domain_accuracy=domain_accuracy(net, *domain_eval),
            target_accuracy=(evaluate(net, target_eval)
                             if target_eval is not None and target_eval.labels is not None else None),
        ))
    if checkpoint_path:
        save_checkpoint(net, checkpoint_path)
    return net, report


def _eval_sets(source, target, source_val, target_eval, eval_samples):
    source_eval = source_val if source_val is not None else source
    if target_eval is None and target.labels is not None:
        target_eval = target
    n = min(eval_samples, len(source_eval), len(target))
    domain_eval = (source_eval.images[:n], target.images[:n])
    return source_eval, target_eval, domain_eval


def _update_fn(cfg: TrainConfig):
    if cfg.adversarial_mode == "dual-loss":
        return lambda net, b, lam, mu, st: dual_loss_update(net, b, lam, mu, st, cfg.momentum, cfg.max_norm)
    return lambda net, b, lam, mu, st: dann_update(net, b, lam, mu, st, cfg.momentum, cfg.max_norm)


def train(net: Network, source: DomainDataset, target: DomainDataset, cfg: TrainConfig, *,
          source_val=None, target_eval=None, eval_samples=1000, checkpoint_path=None,
          checkpoint_every=None, step_stream=None):
    """Domain-adversarial training; returns ``(net, report)``.

    ``target`` class labels, if present, are used for per-epoch reporting
    only. Raises :class:`TrainingDiverged` on a non-finite or exploding loss.
    """
    source_eval, target_eval, domain_eval = _eval_sets(source, target, source_val, target_eval,
                                                       eval_samples)
    return _run(net, lambda rng: compose_batch(source, target, cfg, rng), _update_fn(cfg),
                len(source), len(target), cfg, source_eval=source_eval, target_eval=target_eval,
                domain_eval=domain_eval, checkpoint_path=checkpoint_path,
                checkpoint_every=checkpoint_every, step_stream=step_stream)


def train_source_only(net: Network, source: DomainDataset, target: DomainDataset, cfg: TrainConfig,
                      **kwargs):
    """Baseline without the domain branch; batches are drawn exactly as in :func:`train`
    so paired runs see the same source samples."""
    source_eval, target_eval, domain_eval = _eval_sets(
        source, target, kwargs.pop("source_val", None), kwargs.pop("target_eval", None),
        kwargs.pop("eval_samples", 1000))
    update = lambda net, b, lam, mu, st: label_only_update(net, b, mu, st, cfg.momentum, cfg.max_norm)
    return _run(net, lambda rng: compose_batch(source, target, cfg, rng), update,
                len(source), len(target), cfg, source_eval=source_eval, target_eval=target_eval,
                domain_eval=domain_eval, check_domain_loss=False,
                checkpoint_path=kwargs.pop("checkpoint_path", None),
                checkpoint_every=kwargs.pop("checkpoint_every", None),
                step_stream=kwargs.pop("step_stream", None))


def train_semi_supervised(net: Network, source: DomainDataset, labeled_target: Optional[DomainDataset],
                          unlabeled_target: DomainDataset, cfg: TrainConfig, **kwargs):
    """Domain-adversarial training where some target samples also feed the label loss.

    With an empty ``labeled_target`` this is exactly :func:`train`.
    """
    if labeled_target is None or len(labeled_target) == 0:
        return train(net, source, unlabeled_target, cfg, **kwargs)
    if labeled_target.labels is None:
        raise ValueError("labeled target set carries no class labels")
    n_unl = 0 if unlabeled_target is None else len(unlabeled_target)
    source_eval, target_eval, domain_eval = _eval_sets(
        source, unlabeled_target if n_unl else labeled_target, kwargs.pop("source_val", None),
        kwargs.pop("target_eval", None), kwargs.pop("eval_samples", 1000))
    n_target = len(labeled_target) + n_unl
    return _run(net, lambda rng: compose_semi_batch(source, labeled_target, unlabeled_target, cfg, rng),
                _update_fn(cfg), len(source), n_target, cfg, source_eval=source_eval,
                target_eval=target_eval, domain_eval=domain_eval,
                checkpoint_path=kwargs.pop("checkpoint_path", None),
                checkpoint_every=kwargs.pop("checkpoint_every", None),
                step_stream=kwargs.pop("step_stream", None))
