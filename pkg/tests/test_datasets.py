import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra import numpy as hnp

from dann.datasets import (IDENTITY_SHIFT, PIXEL_SCALE, BackgroundPool, DomainDataset, IdxFormatError,
                           ToyShift, blend_difference, decode_idx, default_input_scale, encode_idx,
                           load_background_directory,
                           load_dataset, load_idx, make_mnistm, make_shifted_toy, mean_subtract,
                           procedural_backgrounds, read_idx, save_dataset, write_idx)
from dann.tensor import Rng, ShapeError

IMAGES_2x2x2 = (struct.pack(">I", 0x803) + struct.pack(">III", 2, 2, 2)
                + bytes([0, 255, 17, 128, 1, 2, 3, 4]))
LABELS_2 = struct.pack(">I", 0x801) + struct.pack(">I", 2) + bytes([7, 3])


def _write(path, data):
    path.write_bytes(data)
    return path


def _least_squares_accuracies(source, target):
    x = np.c_[source.images, np.ones(len(source))]
    w = np.linalg.lstsq(x, 2.0 * source.labels - 1.0, rcond=None)[0]

    def acc(ds):
        return float(np.mean((np.c_[ds.images, np.ones(len(ds))] @ w > 0) == ds.labels))
    return acc(source), acc(target)


class TestIdx:
    def test_hand_built_fixture(self, tmp_path):
        ds = load_idx(_write(tmp_path / "i.idx", IMAGES_2x2x2), _write(tmp_path / "l.idx", LABELS_2))
        assert ds.images.shape == (2, 1, 2, 2)
        np.testing.assert_array_equal(ds.images[0, 0], [[0, 255], [17, 128]])
        np.testing.assert_array_equal(ds.images[1, 0], [[1, 2], [3, 4]])
        np.testing.assert_array_equal(ds.labels, [7, 3])

    def test_channel_replication(self, tmp_path):
        ds = load_idx(_write(tmp_path / "i.idx", IMAGES_2x2x2), channels=3)
        assert ds.images.shape == (2, 3, 2, 2)
        np.testing.assert_array_equal(ds.images[:, 0], ds.images[:, 2])

    def test_rewrite_is_byte_identical(self, tmp_path):
        for name, raw in (("i.idx", IMAGES_2x2x2), ("l.idx", LABELS_2)):
            src = _write(tmp_path / name, raw)
            out = tmp_path / f"copy-{name}"
            write_idx(out, read_idx(src))
            assert out.read_bytes() == raw

    def test_label_file_with_image_magic(self, tmp_path):
        img = _write(tmp_path / "i.idx", IMAGES_2x2x2)
        with pytest.raises(IdxFormatError, match="0x00000801.*byte 0"):
            load_idx(img, img)

    def test_count_mismatch(self, tmp_path):
        bad = struct.pack(">II", 0x801, 3) + bytes([1, 2, 3])
        with pytest.raises(IdxFormatError, match="3 labels"):
            load_idx(_write(tmp_path / "i.idx", IMAGES_2x2x2), _write(tmp_path / "l.idx", bad))

    def test_truncated_payload(self):
        with pytest.raises(IdxFormatError, match="byte 23"):
            decode_idx(IMAGES_2x2x2[:-1])

    def test_bad_magic(self):
        with pytest.raises(IdxFormatError, match="magic"):
            decode_idx(b"\x01\x00\x08\x01" + b"\x00" * 4)

    def test_double_payload_round_trip(self):
        arr = np.array([[0.5, -1.25], [3.0, 1e-300]])
        np.testing.assert_array_equal(decode_idx(encode_idx(arr)), arr)

    def test_gzip_deterministic(self, tmp_path):
        arr = np.arange(12, dtype=np.uint8).reshape(3, 4)
        write_idx(tmp_path / "a.idx.gz", arr)
        write_idx(tmp_path / "b.idx.gz", arr)
        assert (tmp_path / "a.idx.gz").read_bytes() == (tmp_path / "b.idx.gz").read_bytes()
        np.testing.assert_array_equal(read_idx(tmp_path / "a.idx.gz"), arr)

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.uint8, hnp.array_shapes(min_dims=1, max_dims=3, max_side=6)))
    def test_round_trip_property(self, arr):
        raw = encode_idx(arr)
        assert encode_idx(decode_idx(raw)) == raw

    def test_dataset_prefix_round_trip(self, tmp_path):
        ds = DomainDataset(np.arange(24.0).reshape(2, 3, 2, 2), np.array([1, 0]))
        save_dataset(ds, tmp_path / "d")
        back = load_dataset(str(tmp_path / "d"))
        np.testing.assert_array_equal(back.images, ds.images)
        np.testing.assert_array_equal(back.labels, ds.labels)

    def test_missing_prefix(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(str(tmp_path / "nothing"))


class TestBlend:
    def test_examples(self):
        assert blend_difference(np.array([255.0]), np.array([100.0]))[0] == 155
        np.testing.assert_array_equal(blend_difference(np.zeros(3), np.array([1.0, 2, 3])), [1, 2, 3])
        np.testing.assert_array_equal(blend_difference(np.full(2, 9.0), np.full(2, 9.0)), 0)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            blend_difference(np.zeros((3, 2, 2)), np.zeros((3, 2, 3)))

    @settings(max_examples=40, deadline=None)
    @given(hnp.arrays(np.float64, (3, 4, 4), elements=st.integers(0, 255).map(float)),
           hnp.arrays(np.float64, (3, 4, 4), elements=st.integers(0, 255).map(float)))
    def test_output_in_range(self, a, b):
        out = blend_difference(a, b)
        assert out.min() >= 0 and out.max() <= 255


def _digits(n=5, seed=0):
    rng = np.random.default_rng(seed)
    return DomainDataset(rng.integers(0, 256, size=(n, 1, 6, 6)).astype(float), rng.integers(0, 10, n))


class TestMnistm:
    def test_matches_loop_oracle(self):
        digits = _digits()
        pool = procedural_backgrounds(3, (6, 6), seed=1)
        out = make_mnistm(digits, pool, seed=2)
        picks = Rng(2).integers(0, 3, size=5)
        for n in range(5):
            for c in range(3):
                for i in range(6):
                    for j in range(6):
                        assert out.images[n, c, i, j] == abs(digits.images[n, 0, i, j] - pool.patches[picks[n], c, i, j])

    def test_black_background_identity(self):
        digits = _digits()
        out = make_mnistm(digits, BackgroundPool(np.zeros((1, 3, 6, 6))), seed=0)
        np.testing.assert_array_equal(out.images, np.repeat(digits.images, 3, axis=1))

    def test_white_background_negative(self):
        digits = _digits()
        out = make_mnistm(digits, BackgroundPool(np.full((1, 3, 6, 6), 255.0)), seed=0)
        np.testing.assert_array_equal(out.images, 255.0 - np.repeat(digits.images, 3, axis=1))

    def test_labels_and_count_preserved(self):
        digits = _digits(7)
        out = make_mnistm(digits, procedural_backgrounds(2, (6, 6)), seed=0)
        assert len(out) == 7 and out.role == "target"
        np.testing.assert_array_equal(out.labels, digits.labels)

    def test_same_seed_byte_identical(self, tmp_path):
        pool = procedural_backgrounds(4, (6, 6), seed=3)
        a = make_mnistm(_digits(), pool, seed=9)
        b = make_mnistm(_digits(), pool, seed=9)
        save_dataset(a, tmp_path / "a")
        save_dataset(b, tmp_path / "b")
        assert (tmp_path / "a-images.idx").read_bytes() == (tmp_path / "b-images.idx").read_bytes()

    def test_extent_mismatch(self):
        with pytest.raises(ShapeError):
            make_mnistm(_digits(), procedural_backgrounds(1, (5, 5)), seed=0)

    def test_empty_pool_rejected(self):
        with pytest.raises(ValueError):
            BackgroundPool(np.zeros((0, 3, 6, 6)))


class TestBackgrounds:
    def test_procedural_properties(self):
        pool = procedural_backgrounds(20, (28, 28), seed=0)
        assert len(pool) == 20 and pool.patches.shape[1:] == (3, 28, 28)
        assert np.all(pool.patches.std(axis=(2, 3)) > 10)
        lo = pool.patches.min(axis=(2, 3)).mean()
        hi = pool.patches.max(axis=(2, 3)).mean()
        assert lo <= 32 and hi >= 223
        np.testing.assert_array_equal(pool.patches, procedural_backgrounds(20, (28, 28), seed=0).patches)
        assert len(procedural_backgrounds(1)) == 1

    def test_directory_crops(self, tmp_path):
        from PIL import Image
        rgb = np.random.default_rng(0).integers(0, 256, size=(40, 50, 3)).astype(np.uint8)
        Image.fromarray(rgb).save(tmp_path / "photo.png")
        pool = load_background_directory(tmp_path, 5, (8, 8), seed=1)
        assert pool.patches.shape == (5, 3, 8, 8)
        patch = pool.patches[0].transpose(1, 2, 0)
        found = any(np.array_equal(rgb[i:i + 8, j:j + 8], patch) for i in range(33) for j in range(43))
        assert found

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ValueError, match="no images"):
            load_background_directory(tmp_path, 1)


class TestMeanSubtract:
    def test_identical_images_vanish(self):
        ds = DomainDataset(np.tile(np.arange(4.0).reshape(1, 1, 2, 2), (3, 1, 1, 1)))
        out, _ = mean_subtract(ds)
        np.testing.assert_array_equal(out.images, 0.0)

    def test_inverse_and_loop_oracle(self):
        ds = _digits(6)
        out, mean = mean_subtract(ds)
        ref = np.zeros(ds.sample_shape)
        for n in range(len(ds)):
            ref += ds.images[n]
        np.testing.assert_allclose(mean, ref / len(ds), atol=1e-12)
        np.testing.assert_allclose(out.images + mean, ds.images, atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            mean_subtract(_digits(), np.zeros((1, 5, 5)))

    def test_scaled(self):
        ds = _digits(4)
        out, mean = mean_subtract(ds, scale=PIXEL_SCALE)
        np.testing.assert_allclose(out.images, (ds.images - mean) / 255.0, rtol=1e-15)

    def test_default_scale_by_sample_rank(self):
        assert default_input_scale(_digits()) == PIXEL_SCALE
        assert default_input_scale(DomainDataset(np.zeros((3, 2)))) == 1.0


class TestToy:
    def test_default_shift_oracle(self):
        src_acc, tgt_acc = _least_squares_accuracies(*make_shifted_toy(2000, seed=0))
        assert src_acc >= 0.95 and tgt_acc <= 0.75

    def test_default_shift_oracle_five_seed_mean(self):
        accs = np.array([_least_squares_accuracies(*make_shifted_toy(2000, seed=s)) for s in range(5)])
        assert accs[:, 0].min() >= 0.95 and accs[:, 1].mean() <= 0.75

    def test_identity_shift_same_distribution(self):
        s, t = make_shifted_toy(4000, IDENTITY_SHIFT, seed=1)
        np.testing.assert_allclose(s.images.mean(0), t.images.mean(0), atol=0.1)
        np.testing.assert_allclose(np.cov(s.images.T), np.cov(t.images.T), atol=0.15)

    def test_half_turn_of_symmetric_mixture(self):
        s, t = make_shifted_toy(4000, ToyShift(rotation_deg=180.0, translation=(0.0, 0.0)), seed=2)
        sa, ta = _least_squares_accuracies(s, t)
        # the mixture maps onto itself but the classes swap sides
        assert sa >= 0.95 and ta <= 0.05
        np.testing.assert_allclose(np.sort(np.abs(s.images[:, 0]))[::400], np.sort(np.abs(t.images[:, 0]))[::400], atol=0.2)

    def test_balanced_and_deterministic(self):
        s, t = make_shifted_toy(100, seed=3)
        assert np.bincount(s.labels).tolist() == [50, 50] and np.bincount(t.labels).tolist() == [50, 50]
        s2, t2 = make_shifted_toy(100, seed=3)
        np.testing.assert_array_equal(s.images, s2.images)
        np.testing.assert_array_equal(t.images, t2.images)

    def test_across_bisector(self):
        shift = ToyShift.across_bisector(35.0, 6.0)
        np.testing.assert_allclose(shift.translation, ToyShift().translation, atol=1e-4)

    def test_rejections(self):
        with pytest.raises(ValueError):
            make_shifted_toy(10)
        with pytest.raises(ValueError, match="degenerate"):
            make_shifted_toy(100, ToyShift(scale=0.0))
