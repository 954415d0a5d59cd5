import struct

import numpy as np
import pytest

from dann.checkpoint import (MAGIC, CheckpointFormatError, decode_partitions, encode_partitions,
                             load_model, read_checkpoint, save_checkpoint, save_model)
from dann.network import build_network


def _net(seed=0):
    return build_network("mlp-toy", (2,), 3, seed=seed)


class TestContainer:
    def test_byte_exact_round_trip(self, tmp_path):
        net = _net(1)
        path = tmp_path / "m.ckpt"
        save_checkpoint(net, path)
        raw = path.read_bytes()
        assert encode_partitions(decode_partitions(raw)) == raw

    def test_header_layout(self):
        raw = encode_partitions({"f": {"w": np.array([[1.5, -2.0]])}, "y": {}, "d": {}})
        assert raw[:7] == MAGIC and raw[7] == 1
        count, nlen = struct.unpack("<IH", raw[8:14])
        assert (count, nlen) == (1, 1) and raw[14:15] == b"w"
        ndim, d0, d1 = struct.unpack("<BII", raw[15:24])
        assert (ndim, d0, d1) == (2, 1, 2)
        np.testing.assert_array_equal(np.frombuffer(raw[24:40], "<f8"), [1.5, -2.0])
        assert struct.unpack("<II", raw[40:48]) == (0, 0)

    def test_values_restored(self, tmp_path):
        a, b = _net(1), _net(2)
        save_checkpoint(a, tmp_path / "a")
        b.load_partitions(read_checkpoint(tmp_path / "a"))
        x = np.random.default_rng(0).normal(size=(5, 2))
        np.testing.assert_array_equal(a.label_logits(x), b.label_logits(x))

    def test_bad_magic(self):
        with pytest.raises(CheckpointFormatError, match="magic"):
            decode_partitions(b"NOTANET\x01")

    def test_truncated(self):
        raw = encode_partitions(_net().partitions())
        with pytest.raises(CheckpointFormatError, match="truncated"):
            decode_partitions(raw[:-3])

    def test_trailing_bytes(self):
        raw = encode_partitions(_net().partitions())
        with pytest.raises(CheckpointFormatError, match="trailing"):
            decode_partitions(raw + b"\x00")

    def test_mismatched_architecture(self, tmp_path):
        save_checkpoint(_net(), tmp_path / "a")
        other = build_network("mlp-toy", (2,), 5)
        with pytest.raises(ValueError):
            other.load_partitions(read_checkpoint(tmp_path / "a"))


class TestModel:
    def test_sidecar_round_trip(self, tmp_path):
        net = _net(4)
        mean = np.array([0.25, -1.0])
        save_model(net, tmp_path / "m.ckpt", mean=mean)
        loaded, m = load_model(tmp_path / "m.ckpt")
        np.testing.assert_array_equal(m, mean)
        x = np.ones((3, 2))
        np.testing.assert_array_equal(loaded.label_logits(x), net.label_logits(x))

    def test_missing_sidecar(self, tmp_path):
        save_checkpoint(_net(), tmp_path / "bare")
        with pytest.raises(CheckpointFormatError, match="sidecar"):
            load_model(tmp_path / "bare")
