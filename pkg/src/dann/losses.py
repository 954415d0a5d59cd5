"""Label and domain losses, the saddle-point functional and its GRL pseudo-objective.

Batch losses are means; their gradients are w.r.t. the logits. ``objective``
follows the functional literally (sums over samples).
"""
from __future__ import annotations

import numpy as np

from .batch import LabeledBatch


def _log_softmax(logits):
    z = logits - logits.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def label_loss_terms(logits, labels):
    """Per-sample multinomial logistic loss ``-log softmax(logits)[label]``."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"label loss: logits {logits.shape} vs labels {labels.shape}")
    if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[1]):
        bad = labels[(labels < 0) | (labels >= logits.shape[1])][0]
        raise ValueError(f"label {bad} outside [0, {logits.shape[1]})")
    return -_log_softmax(logits)[np.arange(len(labels)), labels]


def label_loss(logits, labels):
    """Mean softmax cross-entropy and its gradient ``(softmax - onehot) / B``."""
    terms = label_loss_terms(logits, labels)
    b = len(terms)
    lsm = _log_softmax(np.asarray(logits, dtype=np.float64))
    grad = np.exp(lsm)
    grad[np.arange(b), labels] -= 1.0
    grad /= b
    return float(terms.mean()), grad


def masked_label_loss(logits, class_labels):
    """Label loss over the rows whose label is not -1; other rows get zero gradient."""
    class_labels = np.asarray(class_labels, dtype=np.int64)
    mask = class_labels >= 0
    grad = np.zeros_like(logits, dtype=np.float64)
    if not mask.any():
        return 0.0, grad
    loss, g = label_loss(logits[mask], class_labels[mask])
    grad[mask] = g
    return loss, grad


def _softplus(z):
    return np.maximum(z, 0.0) + np.log1p(np.exp(-np.abs(z)))


def _sigmoid(z):
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _check_domains(logits, domains):
    logits = np.asarray(logits, dtype=np.float64)
    domains = np.asarray(domains, dtype=np.int64)
    if logits.ndim != 2 or logits.shape[1] != 2 or domains.shape != (logits.shape[0],):
        raise ValueError(f"domain loss: logits {logits.shape} vs domains {domains.shape}")
    if domains.size and not np.isin(domains, (0, 1)).all():
        raise ValueError("domain labels must be 0 or 1")
    return logits, domains


def domain_loss_terms(logits, domains):
    """Per-sample binomial cross-entropy with ``q = sigmoid(logit_1 - logit_0)``.

    ``-[d log q + (1 - d) log(1 - q)] = softplus(z) - d z`` for ``z = logit_1 - logit_0``.
    """
    logits, domains = _check_domains(logits, domains)
    z = logits[:, 1] - logits[:, 0]
    return _softplus(z) - domains * z


def domain_loss(logits, domains):
    logits, domains = _check_domains(logits, domains)
    terms = domain_loss_terms(logits, domains)
    z = logits[:, 1] - logits[:, 0]
    dz = (_sigmoid(z) - domains) / len(domains)
    grad = np.stack([-dz, dz], axis=1)
    return float(terms.mean()), grad


def swapped_domain_loss(logits, domains):
    """Adversarial loss ``L_d-(q, d) = L_d+(q, 1 - d)``: cross-entropy against flipped domain labels."""
    return domain_loss(logits, 1 - np.asarray(domains, dtype=np.int64))


def objective_from_terms(label_terms, domain_terms, lam):
    """``sum L_y - lam * sum L_d``."""
    return float(np.sum(label_terms) - lam * np.sum(domain_terms))


def _batch_terms(net, batch: LabeledBatch, through_grl=True):
    if through_grl:
        ly, ld, _ = net.forward_all(batch.images, training=False)
    else:
        feats = net.feature_extractor.forward(batch.images, False)
        ly = net.label_predictor.forward(feats, False)
        ld = net.domain_classifier.forward(feats, False)
    labeled = batch.labeled
    return (label_loss_terms(ly[labeled], batch.class_labels[labeled]),
            domain_loss_terms(ld, batch.domain_labels))


def objective(net, source: LabeledBatch, target: LabeledBatch, lam):
    """The saddle-point functional ``E = sum_{labeled} L_y - lam * sum_{all} L_d``.

    Evaluated without the GRL: heads read G_f(x) directly.
    """
    if not source.labeled.all():
        raise ValueError("every source sample needs a class label")
    batch = LabeledBatch.concat(source, target)
    ly, ld = _batch_terms(net, batch, through_grl=False)
    return objective_from_terms(ly, ld, lam)


def pseudo_objective_terms(net, batch: LabeledBatch):
    """Forward value of the GRL pseudo-objective, returned as ``(sum L_y, sum L_d)``.

    SGD on ``sum L_y + sum L_d(G_d(R_lam(G_f(x))))`` realizes the saddle-point updates;
    its forward value is ``sum L_y + sum L_d`` because R_lam is the identity.
    """
    ly, ld = _batch_terms(net, batch, through_grl=True)
    return float(np.sum(ly)), float(np.sum(ld))
