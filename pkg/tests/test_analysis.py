import numpy as np
import pytest

from dann.analysis import (DistanceEstimate, adaptation_advisory, bound_report, export_features,
                           gap_coverage, load_features, network_proxy_distance, proxy_hdh_distance)
from dann.datasets import DomainDataset, make_shifted_toy
from dann.network import build_network


class TestGapCoverage:
    def test_table_arithmetic(self):
        r = gap_coverage(0.5749, 0.8149, 0.9891)
        assert r.coverage == pytest.approx(0.5794, abs=1e-4)
        assert str(r) == "57.9%"

    def test_endpoints(self):
        assert gap_coverage(0.4, 0.4, 0.9).coverage == 0.0
        assert gap_coverage(0.4, 0.9, 0.9).coverage == 1.0

    @pytest.mark.parametrize("bad", [(0.9, 0.95, 0.9), (0.9, 0.95, 0.5), (0.2, 1.2, 0.9), (-0.1, 0.5, 0.9)])
    def test_rejected(self, bad):
        with pytest.raises(ValueError):
            gap_coverage(*bad)

    @pytest.mark.parametrize("a,b", [(0.5, 0.1), (0.25, 0.5), (0.9, 0.05)])
    def test_affine_invariance(self, a, b):
        accs = (0.5749, 0.8149, 0.9891)
        base = gap_coverage(*accs).coverage
        assert gap_coverage(*(a * v + b for v in accs)).coverage == pytest.approx(base, rel=1e-12)


class TestDistance:
    @pytest.mark.parametrize("acc,dist", [(0.5, 0.0), (1.0, 2.0), (0.89, 1.56), (0.3, 0.0)])
    def test_from_accuracy(self, acc, dist):
        assert DistanceEstimate.from_accuracy(acc).proxy_distance == pytest.approx(dist, abs=1e-12)

    def test_self_distance_near_zero(self):
        s, _ = make_shifted_toy(2000, seed=0)
        x = s.images
        est = proxy_hdh_distance(x[:1000], x[1000:], seed=0)
        assert est.proxy_distance <= 0.2

    def test_shifted_domains_far_apart(self):
        s, t = make_shifted_toy(1000, seed=0)
        assert proxy_hdh_distance(s.images, t.images).proxy_distance > 1.8

    def test_deterministic(self):
        s, t = make_shifted_toy(200, seed=1)
        assert proxy_hdh_distance(s.images, t.images, seed=3, steps=200) == \
            proxy_hdh_distance(s.images, t.images, seed=3, steps=200)

    def test_feature_scale_does_not_matter(self):
        s, t = make_shifted_toy(400, seed=2)
        a = proxy_hdh_distance(s.images, t.images, steps=300)
        b = proxy_hdh_distance(s.images * 1000.0 + 7, t.images * 1000.0 + 7, steps=300)
        assert a.proxy_distance == pytest.approx(b.proxy_distance, abs=0.02)

    @pytest.mark.parametrize("ns,nt", [(0, 10), (10, 0), (10, 12), (2, 2)])
    def test_rejected(self, ns, nt):
        with pytest.raises(ValueError):
            proxy_hdh_distance(np.zeros((ns, 3)), np.zeros((nt, 3)))

    def test_network_features_truncated_to_balance(self):
        s, t = make_shifted_toy(300, seed=0)
        net = build_network("mlp-toy", (2,), 2)
        est = network_proxy_distance(net, s, t.subset(np.arange(200)), steps=100)
        assert 0.0 <= est.proxy_distance <= 2.0


class TestBound:
    @pytest.mark.parametrize("err,dist,value", [(0.05, 0.0, 0.05), (0.0, 2.0, 1.0), (0.1, 1.56, 0.88)])
    def test_examples(self, err, dist, value):
        r = bound_report(err, DistanceEstimate(0.5 + dist / 4, dist))
        assert r.value == pytest.approx(value, abs=1e-12)
        assert "bound minus C" in str(r)

    def test_rejects_bad_error(self):
        with pytest.raises(ValueError):
            bound_report(1.5, DistanceEstimate(0.5, 0.0))

    @pytest.mark.parametrize("err,dc_err,word", [(0.02, 0.45, "promising"), (0.02, 0.01, "doubtful"),
                                                 (0.3, 0.3, "inconclusive")])
    def test_advisory(self, err, dc_err, word):
        assert word in adaptation_advisory(err, dc_err)


class TestExport:
    def _setup(self):
        s, t = make_shifted_toy(30, seed=0)
        net = build_network("mlp-toy", (2,), 2, seed=5)
        t = DomainDataset(t.images[:20], None, role="target")
        return net, [("train", s), ("test", t)]

    def test_round_trip_exact(self, tmp_path):
        net, splits = self._setup()
        rows = export_features(net, splits, tmp_path / "f.csv")
        names, domains, labels, feats = load_features(tmp_path / "f.csv")
        assert rows == 50
        expected = np.concatenate([net.forward_all(ds.images, training=False)[2] for _, ds in splits])
        np.testing.assert_allclose(feats, expected, rtol=0, atol=1e-12)

    def test_layout_and_order(self, tmp_path):
        net, splits = self._setup()
        export_features(net, splits, tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        dim = net.features(splits[0][1].images).shape[1]
        assert lines[0].split(",") == ["split", "domain", "label"] + [f"f{i}" for i in range(dim)]
        assert all(len(line.split(",")) == dim + 3 for line in lines[1:])
        names, domains, labels, _ = load_features(tmp_path / "f.csv")
        assert names.tolist() == ["train"] * 30 + ["test"] * 20
        assert domains.tolist() == [0] * 30 + [1] * 20
        np.testing.assert_array_equal(labels[:30], splits[0][1].labels)
        assert np.all(labels[30:] == -1)

    def test_io_error_names_path(self, tmp_path):
        net, splits = self._setup()
        bad = tmp_path / "missing" / "f.csv"
        with pytest.raises(OSError, match="missing"):
            export_features(net, splits, bad)
