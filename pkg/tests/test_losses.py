import math

import numpy as np
import pytest

from dann.batch import LabeledBatch
from dann.losses import (domain_loss, domain_loss_terms, label_loss, masked_label_loss, objective,
                         objective_from_terms, pseudo_objective_terms, swapped_domain_loss)
from dann.network import build_network
from dann.oracles import numerical_gradient, relative_error


class TestLabelLoss:
    def test_uniform_logits(self):
        loss, _ = label_loss(np.zeros((4, 10)), np.arange(4))
        assert loss == pytest.approx(math.log(10), abs=1e-12)

    def test_saturated_correct(self):
        logits = np.zeros((2, 3))
        logits[[0, 1], [2, 0]] = 1000.0
        loss, grad = label_loss(logits, np.array([2, 0]))
        assert loss == pytest.approx(0.0, abs=1e-12)
        assert np.all(np.isfinite(grad))

    def test_gradient_formula(self):
        logits = np.array([[1.0, 2.0, 0.5]])
        _, grad = label_loss(logits, np.array([1]))
        p = np.exp(logits) / np.exp(logits).sum()
        np.testing.assert_allclose(grad, p - np.array([[0, 1, 0]]), atol=1e-15)

    def test_out_of_range_label(self):
        with pytest.raises(ValueError, match="label 3"):
            label_loss(np.zeros((2, 3)), np.array([0, 3]))

    def test_masked_rows_get_no_gradient(self):
        logits = np.random.default_rng(0).normal(size=(4, 3))
        loss, grad = masked_label_loss(logits, np.array([0, -1, 2, -1]))
        ref, _ = label_loss(logits[[0, 2]], np.array([0, 2]))
        assert loss == ref
        np.testing.assert_array_equal(grad[[1, 3]], 0.0)


class TestDomainLoss:
    def test_chance(self):
        loss, _ = domain_loss(np.zeros((6, 2)), np.array([0, 1, 0, 1, 1, 0]))
        assert loss == pytest.approx(math.log(2), abs=1e-15)

    def test_confident_correct(self):
        logits = np.array([[50.0, -50.0], [-50.0, 50.0]])
        assert domain_loss(logits, np.array([0, 1]))[0] == pytest.approx(0.0, abs=1e-12)

    def test_matches_cross_entropy(self):
        logits = np.random.default_rng(1).normal(size=(5, 2))
        d = np.array([0, 1, 1, 0, 1])
        q = 1 / (1 + np.exp(-(logits[:, 1] - logits[:, 0])))
        ref = -(d * np.log(q) + (1 - d) * np.log(1 - q))
        np.testing.assert_allclose(domain_loss_terms(logits, d), ref, rtol=1e-13)

    def test_extreme_logits_stay_finite(self):
        terms = domain_loss_terms(np.array([[0.0, 800.0], [800.0, 0.0]]), np.array([0, 1]))
        np.testing.assert_allclose(terms, [800.0, 800.0])

    def test_swapped_is_involution(self):
        logits = np.random.default_rng(2).normal(size=(4, 2))
        d = np.array([0, 1, 1, 0])
        twice = swapped_domain_loss(logits, 1 - d)
        np.testing.assert_array_equal(twice[1], domain_loss(logits, d)[1])

    def test_swapped_equal_at_chance(self):
        d = np.array([0, 1])
        assert swapped_domain_loss(np.zeros((2, 2)), d)[0] == domain_loss(np.zeros((2, 2)), d)[0]

    def test_rejects_non_bits(self):
        with pytest.raises(ValueError):
            domain_loss(np.zeros((2, 2)), np.array([0, 2]))


@pytest.mark.parametrize("seed", range(20))
def test_loss_gradients_finite_differences(seed):
    rng = np.random.default_rng(seed)
    logits = rng.normal(scale=2.0, size=(5, 4))
    labels = rng.integers(0, 4, 5)
    _, g = label_loss(logits, labels)
    num = numerical_gradient(lambda: label_loss(logits, labels)[0], logits)
    assert relative_error(g, num) <= 1e-8
    dl = rng.normal(scale=2.0, size=(5, 2))
    d = rng.integers(0, 2, 5)
    _, gd = domain_loss(dl, d)
    numd = numerical_gradient(lambda: domain_loss(dl, d)[0], dl)
    assert relative_error(gd, numd) <= 1e-8


class TestObjective:
    def _batches(self, seed=0):
        rng = np.random.default_rng(seed)
        src = LabeledBatch.source(rng.normal(size=(4, 2)), rng.integers(0, 2, 4))
        tgt = LabeledBatch.target(rng.normal(size=(4, 2)))
        return src, tgt

    def test_arithmetic(self):
        assert objective_from_terms([0.7], [0.6, 0.8], 1.0) == pytest.approx(-0.7)

    def test_lambda_zero_is_label_sum(self):
        net = build_network("mlp-toy", (2,), 2, seed=1)
        src, tgt = self._batches()
        ly = net.label_logits(src.images)
        expected = float(np.sum(-np.log(np.exp(ly) / np.exp(ly).sum(1, keepdims=True))[np.arange(4), src.class_labels]))
        assert objective(net, src, tgt, 0.0) == pytest.approx(expected, rel=1e-12)

    def test_matches_pseudo_objective_with_lambda_folded(self):
        net = build_network("mlp-toy", (2,), 2, seed=2)
        src, tgt = self._batches(1)
        for lam in (0.0, 0.3, 1.0):
            net.lam = lam
            sy, sd = pseudo_objective_terms(net, LabeledBatch.concat(src, tgt))
            assert objective(net, src, tgt, lam) == pytest.approx(sy - lam * sd, rel=1e-13, abs=1e-13)

    def test_rejects_unlabeled_source(self):
        net = build_network("mlp-toy", (2,), 2)
        src, tgt = self._batches()
        with pytest.raises(ValueError, match="class label"):
            objective(net, LabeledBatch(src.images, np.full(4, -1), src.domain_labels), tgt, 1.0)
