"""Binary checkpoint container.

Layout (all integers little-endian)::

    magic    7 bytes   b"GRLNET1"
    version  u8        1
    then for each partition in order θ_f, θ_y, θ_d:
        count    u32
        count x tensor:
            name_len  u16, name  utf-8 bytes
            ndim      u8,  dims  ndim x u32
            payload   prod(dims) x float64 (little-endian, row-major)

Only trainable tensors are stored. :func:`save_model` also writes a JSON
sidecar (``<path>.json``) with the architecture and the preprocessing mean
so a checkpoint can be evaluated on its own.
"""
from __future__ import annotations

import json
import struct

import numpy as np

from .network import PARTITIONS, Network, network_from_meta

MAGIC = b"GRLNET1"
VERSION = 1


class CheckpointFormatError(ValueError):
    pass


def encode_partitions(parts) -> bytes:
    out = [MAGIC, struct.pack("<B", VERSION)]
    for key in PARTITIONS:
        tensors = parts.get(key, {})
        out.append(struct.pack("<I", len(tensors)))
        for name, value in tensors.items():
            raw = name.encode("utf-8")
            arr = np.ascontiguousarray(value, dtype="<f8")
            out.append(struct.pack("<H", len(raw)))
            out.append(raw)
            out.append(struct.pack("<B", arr.ndim))
            out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
            out.append(arr.tobytes())
    return b"".join(out)


def decode_partitions(data: bytes):
    view = memoryview(data)
    pos = 0

    def take(n, what):
        nonlocal pos
        if pos + n > len(view):
            raise CheckpointFormatError(f"truncated checkpoint: {what} at byte {pos}")
        chunk = view[pos:pos + n]
        pos += n
        return chunk

    if bytes(take(len(MAGIC), "magic")) != MAGIC:
        raise CheckpointFormatError("not a GRLNET1 checkpoint (bad magic at byte 0)")
    (version,) = struct.unpack("<B", take(1, "version"))
    if version != VERSION:
        raise CheckpointFormatError(f"unsupported checkpoint version {version}")
    parts = {}
    for key in PARTITIONS:
        (count,) = struct.unpack("<I", take(4, f"{key} count"))
        tensors = {}
        for _ in range(count):
            (nlen,) = struct.unpack("<H", take(2, "name length"))
            name = bytes(take(nlen, "name")).decode("utf-8")
            (ndim,) = struct.unpack("<B", take(1, "ndim"))
            shape = struct.unpack(f"<{ndim}I", take(4 * ndim, "shape"))
            size = int(np.prod(shape, dtype=np.int64))
            payload = take(8 * size, f"payload of {name}")
            tensors[name] = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(shape)
        parts[key] = tensors
    if pos != len(view):
        raise CheckpointFormatError(f"{len(view) - pos} trailing bytes after byte {pos}")
    return parts


def save_checkpoint(net: Network, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_partitions(net.partitions()))


def read_checkpoint(path):
    with open(path, "rb") as fh:
        return decode_partitions(fh.read())


def load_checkpoint(path, net: Network) -> Network:
    net.load_partitions(read_checkpoint(path))
    return net


def save_model(net: Network, path, mean=None) -> None:
    """Write the checkpoint plus ``<path>.json`` with architecture and preprocessing mean."""
    save_checkpoint(net, path)
    meta = dict(net.meta)
    if mean is not None:
        meta["mean_shape"] = list(np.shape(mean))
        meta["mean"] = np.asarray(mean, dtype=np.float64).ravel().tolist()
    with open(f"{path}.json", "w") as fh:
        json.dump(meta, fh)


def load_model(path):
    """Rebuild a network saved by :func:`save_model`; returns ``(net, mean or None)``."""
    try:
        with open(f"{path}.json") as fh:
            meta = json.load(fh)
    except FileNotFoundError:
        raise CheckpointFormatError(f"missing architecture sidecar {path}.json") from None
    net = network_from_meta(meta)
    load_checkpoint(path, net)
    mean = None
    if meta.get("mean") is not None:
        mean = np.asarray(meta["mean"], dtype=np.float64).reshape(meta["mean_shape"])
    return net, mean
