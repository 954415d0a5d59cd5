"""Dataset ingestion and synthesis.

* IDX files (the MNIST container), read and written byte-exactly.
* MNIST-M style targets: each digit blended over a background patch by
  per-pixel absolute difference.
* Background pools from a directory of photos or from a procedural
  value-noise generator.
* Mean-image preprocessing.
* A two-class 2-D Gaussian toy pair whose target domain is a rotated and
  translated copy of the source, for fast experiments.
"""
from __future__ import annotations

import gzip
import math
import os
import struct
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .tensor import Rng, ShapeError

IDX_TYPES = {
    0x08: np.dtype("u1"),
    0x09: np.dtype("i1"),
    0x0B: np.dtype(">i2"),
    0x0C: np.dtype(">i4"),
    0x0D: np.dtype(">f4"),
    0x0E: np.dtype(">f8"),
}
IDX_CODES = {dt.newbyteorder("=") if dt.itemsize > 1 else dt: code for code, dt in IDX_TYPES.items()}
IMAGES_MAGIC = 0x00000803
LABELS_MAGIC = 0x00000801


class IdxFormatError(ValueError):
    """Malformed IDX data; the message names the byte offset."""


@dataclass
class DomainDataset:
    """Samples from one domain.

    ``images`` is ``(N, c, h, w)`` for image data (raw values in [0, 255]
    before preprocessing) or ``(N, d)`` for vector data.
    """

    images: np.ndarray
    labels: Optional[np.ndarray] = None
    role: str = "source"
    mean_image: Optional[np.ndarray] = None
    provenance: str = ""

    def __post_init__(self):
        self.images = np.ascontiguousarray(self.images, dtype=np.float64)
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if self.labels.shape != (len(self.images),):
                raise ValueError(f"{len(self.images)} samples but labels of shape {self.labels.shape}")
        if self.role not in ("source", "target"):
            raise ValueError(f"role must be 'source' or 'target', got {self.role!r}")

    def __len__(self):
        return len(self.images)

    @property
    def sample_shape(self):
        return self.images.shape[1:]

    @property
    def num_classes(self):
        return int(self.labels.max()) + 1 if self.labels is not None and len(self.labels) else 0

    def subset(self, indices):
        indices = np.asarray(indices, dtype=np.int64)
        return replace(self, images=self.images[indices],
                       labels=None if self.labels is None else self.labels[indices])

    def split(self, n_first, seed):
        """Random disjoint split into ``(first n_first samples, rest)``."""
        perm = Rng(seed).permutation(len(self))
        return self.subset(np.sort(perm[:n_first])), self.subset(np.sort(perm[n_first:]))


# ---------------------------------------------------------------- IDX


def _gz(path):
    return str(path).endswith(".gz")


def decode_idx(data: bytes) -> np.ndarray:
    if len(data) < 4:
        raise IdxFormatError(f"truncated IDX header: {len(data)} bytes, need 4 at byte 0")
    zero, code, ndim = struct.unpack(">HBB", data[:4])
    if zero != 0 or code not in IDX_TYPES:
        raise IdxFormatError(f"bad IDX magic 0x{struct.unpack('>I', data[:4])[0]:08x} at byte 0")
    header = 4 + 4 * ndim
    if len(data) < header:
        raise IdxFormatError(f"truncated IDX dimensions at byte {len(data)}, need {header}")
    dims = struct.unpack(f">{ndim}I", data[4:header])
    dt = IDX_TYPES[code]
    need = header + int(np.prod(dims, dtype=np.int64)) * dt.itemsize
    if len(data) < need:
        raise IdxFormatError(f"truncated IDX payload: file ends at byte {len(data)}, expected {need}")
    if len(data) > need:
        raise IdxFormatError(f"{len(data) - need} trailing bytes after byte {need}")
    arr = np.frombuffer(data, dtype=dt, offset=header).reshape(dims)
    return arr.astype(dt.newbyteorder("="))


def encode_idx(array) -> bytes:
    arr = np.asarray(array)
    native = arr.dtype.newbyteorder("=") if arr.dtype.itemsize > 1 else arr.dtype
    if native not in IDX_CODES:
        raise IdxFormatError(f"dtype {arr.dtype} has no IDX type code")
    code = IDX_CODES[native]
    if arr.ndim > 255:
        raise IdxFormatError("IDX supports at most 255 dimensions")
    head = struct.pack(">HBB", 0, code, arr.ndim) + struct.pack(f">{arr.ndim}I", *arr.shape)
    return head + np.ascontiguousarray(arr, dtype=IDX_TYPES[code]).tobytes()


def read_idx(path) -> np.ndarray:
    with open(path, "rb") as fh:
        raw = fh.read()
    return decode_idx(gzip.decompress(raw) if _gz(path) else raw)


def write_idx(path, array) -> None:
    data = encode_idx(array)
    with open(path, "wb") as fh:
        # no name and a fixed mtime in the gzip header keep output byte-deterministic
        fh.write(gzip.compress(data, mtime=0) if _gz(path) else data)


def _read_magic(path):
    with open(path, "rb") as fh:
        head = gzip.decompress(fh.read())[:4] if _gz(path) else fh.read(4)
    return struct.unpack(">I", head)[0] if len(head) == 4 else None


def load_idx(images_path, labels_path=None, channels=None, role="source") -> DomainDataset:
    """Load an IDX image file (and optional label file) as a dataset.

    Rank-3 ``(N, h, w)`` images become ``(N, 1, h, w)``; ``channels=3``
    replicates a single channel. Rank-2 files are vector data ``(N, d)`` and
    rank-4 files are already ``(N, c, h, w)``.
    """
    images = read_idx(images_path)
    if images.ndim == 3:
        images = images[:, None]
    elif images.ndim not in (2, 4):
        raise IdxFormatError(f"{images_path}: images must be rank 2, 3 or 4, got rank {images.ndim} "
                             "(dimension count at byte 3)")
    if channels is not None and images.ndim == 4 and images.shape[1] != channels:
        if images.shape[1] != 1:
            raise ShapeError(f"cannot turn {images.shape[1]} channels into {channels}")
        images = np.repeat(images, channels, axis=1)
    labels = None
    if labels_path is not None:
        magic = _read_magic(labels_path)
        if magic != LABELS_MAGIC:
            shown = "none" if magic is None else f"0x{magic:08x}"
            raise IdxFormatError(f"{labels_path}: label files need magic 0x{LABELS_MAGIC:08x}, "
                                 f"found {shown} at byte 0")
        labels = read_idx(labels_path)
        if len(labels) != len(images):
            raise IdxFormatError(f"{labels_path}: {len(labels)} labels (count at byte 4) but "
                                 f"{len(images)} images in {images_path}")
    return DomainDataset(images, labels, role=role, provenance=f"idx:{os.fspath(images_path)}")


def _payload_array(images):
    if np.all(images == np.round(images)) and images.min(initial=0) >= 0 and images.max(initial=0) <= 255:
        return images.astype(np.uint8)
    return images.astype(np.float64)


def save_dataset(ds: DomainDataset, prefix) -> tuple:
    """Write ``<prefix>-images.idx`` (and ``<prefix>-labels.idx`` when labeled).

    Integer images in [0, 255] are stored as unsigned bytes, anything else as
    doubles. Single-channel images are stored as rank-3 files.
    """
    images = ds.images
    if images.ndim == 4 and images.shape[1] == 1:
        images = images[:, 0]
    img_path = f"{prefix}-images.idx"
    write_idx(img_path, _payload_array(images))
    lab_path = None
    if ds.labels is not None:
        lab_path = f"{prefix}-labels.idx"
        write_idx(lab_path, ds.labels.astype(np.uint8))
    return img_path, lab_path


def load_dataset(spec: str, role="source", channels=None) -> DomainDataset:
    """Load ``IMAGES,LABELS``, ``IMAGES`` or a prefix written by :func:`save_dataset`."""
    if "," in spec:
        img, lab = spec.split(",", 1)
        return load_idx(img, lab or None, channels=channels, role=role)
    if os.path.exists(spec):
        return load_idx(spec, None, channels=channels, role=role)
    img, lab = f"{spec}-images.idx", f"{spec}-labels.idx"
    if not os.path.exists(img):
        raise FileNotFoundError(f"no dataset at {spec!r} (looked for {img})")
    return load_idx(img, lab if os.path.exists(lab) else None, channels=channels, role=role)


# ---------------------------------------------------------------- MNIST-M


@dataclass
class BackgroundPool:
    patches: np.ndarray  # (M, 3, h, w) in [0, 255]
    provenance: str = "procedural"

    def __post_init__(self):
        self.patches = np.ascontiguousarray(self.patches, dtype=np.float64)
        if self.patches.ndim != 4 or len(self.patches) < 1:
            raise ValueError(f"background pool needs (M>=1, c, h, w) patches, got {self.patches.shape}")

    def __len__(self):
        return len(self.patches)


def blend_difference(digit, background):
    """Per-pixel, per-channel ``|digit - background|``."""
    digit = np.asarray(digit, dtype=np.float64)
    background = np.asarray(background, dtype=np.float64)
    if digit.shape != background.shape:
        raise ShapeError(f"blend: digit {digit.shape} vs background {background.shape}")
    return np.abs(digit - background)


def make_mnistm(digits: DomainDataset, pool: BackgroundPool, seed) -> DomainDataset:
    """Blend every digit over a patch drawn uniformly (with replacement) from ``pool``."""
    if pool is None or len(pool) == 0:
        raise ValueError("background pool is empty")
    images = digits.images
    if images.ndim != 4:
        raise ShapeError(f"digits must be (N, c, h, w), got {images.shape}")
    if images.shape[1] == 1:
        images = np.repeat(images, pool.patches.shape[1], axis=1)
    if images.shape[1:] != pool.patches.shape[1:]:
        raise ShapeError(f"digit extents {images.shape[1:]} vs patch extents {pool.patches.shape[1:]}")
    picks = Rng(seed).integers(0, len(pool), size=len(images))
    out = blend_difference(images, pool.patches[picks])
    labels = None if digits.labels is None else digits.labels.copy()
    return DomainDataset(out, labels, role="target",
                         provenance=f"mnistm(seed={seed}, backgrounds={pool.provenance})")


def _value_noise(rng: Rng, h, w):
    g = int(rng.integers(2, 6))
    lattice = rng.uniform(0.0, 1.0, size=(g, g))
    ys = np.linspace(0, g - 1, h)
    xs = np.linspace(0, g - 1, w)
    y0 = np.minimum(ys.astype(int), g - 2)
    x0 = np.minimum(xs.astype(int), g - 2)
    ty = (ys - y0)[:, None]
    tx = (xs - x0)[None, :]
    a = lattice[y0][:, x0]
    b = lattice[y0][:, x0 + 1]
    c = lattice[y0 + 1][:, x0]
    d = lattice[y0 + 1][:, x0 + 1]
    return (a * (1 - tx) + b * tx) * (1 - ty) + (c * (1 - tx) + d * tx) * ty


def procedural_backgrounds(count, extents=(28, 28), seed=0, channels=3) -> BackgroundPool:
    """Smooth colored noise patches.

    Per patch and channel: bilinear value noise on a random 2..5 lattice plus a
    random linear ramp, min-max stretched to ``[lo, hi]`` with
    ``lo ~ U(0, 32)`` and ``hi ~ U(223, 255)``, then rounded to integers.
    """
    if count < 1:
        raise ValueError(f"count must be >= 1, got {count}")
    h, w = extents
    rng = Rng(seed)
    yy, xx = np.meshgrid(np.linspace(-1, 1, h), np.linspace(-1, 1, w), indexing="ij")
    patches = np.empty((count, channels, h, w))
    for m in range(count):
        for ch in range(channels):
            field_ = _value_noise(rng, h, w)
            gx, gy = rng.uniform(-1.0, 1.0, size=2)
            field_ = field_ + 0.5 * (gx * xx + gy * yy)
            lo = rng.uniform(0.0, 32.0)
            hi = rng.uniform(223.0, 255.0)
            span = field_.max() - field_.min()
            field_ = (field_ - field_.min()) / span if span > 0 else np.zeros_like(field_)
            patches[m, ch] = np.round(lo + field_ * (hi - lo))
    return BackgroundPool(patches, provenance=f"procedural(seed={seed})")


IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp", ".gif", ".tif", ".tiff", ".ppm")


def load_background_directory(directory, count, extents=(28, 28), seed=0) -> BackgroundPool:
    """Random ``extents``-sized RGB crops from the photos in ``directory``."""
    from PIL import Image

    names = sorted(n for n in os.listdir(directory) if n.lower().endswith(IMAGE_SUFFIXES))
    if not names:
        raise ValueError(f"no images found in {directory}")
    photos = []
    for name in names:
        with Image.open(os.path.join(directory, name)) as im:
            arr = np.asarray(im.convert("RGB"), dtype=np.float64)
        if arr.shape[0] >= extents[0] and arr.shape[1] >= extents[1]:
            photos.append(arr)
    if not photos:
        raise ValueError(f"no image in {directory} is at least {extents[0]}x{extents[1]}")
    rng = Rng(seed)
    h, w = extents
    patches = np.empty((count, 3, h, w))
    for m in range(count):
        photo = photos[int(rng.integers(0, len(photos)))]
        top = int(rng.integers(0, photo.shape[0] - h + 1))
        left = int(rng.integers(0, photo.shape[1] - w + 1))
        patches[m] = photo[top:top + h, left:left + w].transpose(2, 0, 1)
    return BackgroundPool(patches, provenance=f"directory:{directory}")


# ---------------------------------------------------------------- preprocessing


PIXEL_SCALE = 1.0 / 255.0


def default_input_scale(dataset: DomainDataset):
    """``1/255`` for image samples (raw pixels in [0, 255]), 1 for plain feature vectors."""
    return PIXEL_SCALE if dataset.images.ndim == 4 else 1.0


def mean_subtract(dataset: DomainDataset, mean=None, scale=1.0):
    """Map images to ``(x - mean) * scale``, ``mean`` defaulting to the dataset's own
    per-pixel mean; returns ``(dataset, mean_used)``."""
    if mean is None:
        mean = dataset.images.mean(axis=0)
    mean = np.asarray(mean, dtype=np.float64)
    if mean.shape != dataset.sample_shape:
        raise ShapeError(f"mean {mean.shape} vs samples {dataset.sample_shape}")
    images = dataset.images - mean
    if scale != 1.0:
        images = images * scale
    return replace(dataset, images=images, mean_image=mean), mean


# ---------------------------------------------------------------- toy domains


@dataclass(frozen=True)
class ToyShift:
    """Target = rotate the source distribution by ``rotation_deg`` about the
    origin, scale by ``scale``, then translate by ``translation``."""

    rotation_deg: float = 35.0
    # 6.0 along the normal of the rotation bisector, (-sin 17.5deg, cos 17.5deg)
    translation: tuple = (-1.8042, 5.7223)
    scale: float = 1.0
    separation: float = 2.0  # class means at (+-separation, 0)
    std: float = 1.0

    @classmethod
    def across_bisector(cls, rotation_deg, distance, **kwargs):
        """Shift whose translation is ``distance`` along the normal of the rotation bisector."""
        h = math.radians(rotation_deg) / 2.0
        return cls(rotation_deg=rotation_deg,
                   translation=(-distance * math.sin(h), distance * math.cos(h)), **kwargs)

    def matrix(self):
        t = math.radians(self.rotation_deg)
        return self.scale * np.array([[math.cos(t), -math.sin(t)], [math.sin(t), math.cos(t)]])


IDENTITY_SHIFT = ToyShift(rotation_deg=0.0, translation=(0.0, 0.0))


def _toy_draw(n, shift: ToyShift, rng: Rng):
    n0 = n // 2
    labels = np.concatenate([np.zeros(n0, dtype=np.int64), np.ones(n - n0, dtype=np.int64)])
    centers = np.where(labels[:, None] == 1, 1.0, -1.0) * np.array([shift.separation, 0.0])
    x = centers + shift.std * rng.normal(size=(n, 2))
    perm = rng.permutation(n)
    return x[perm], labels[perm]


def make_shifted_toy(n=2000, shift: ToyShift = ToyShift(), seed=0):
    """Balanced two-class Gaussian source and its rigidly shifted target, ``n`` samples each."""
    if n < 20:
        raise ValueError(f"n must be >= 20, got {n}")
    values = (shift.rotation_deg, shift.scale, shift.separation, shift.std, *shift.translation)
    if not all(np.isfinite(values)):
        raise ValueError("shift parameters must be finite")
    if shift.scale == 0 or shift.separation == 0 or shift.std <= 0:
        raise ValueError("degenerate shift: the two classes would coincide")
    rng_s, rng_t = Rng(seed).spawn(2)
    xs, ys = _toy_draw(n, shift, rng_s)
    xt, yt = _toy_draw(n, shift, rng_t)
    xt = xt @ shift.matrix().T + np.asarray(shift.translation, dtype=np.float64)
    tag = f"toy(seed={seed}, {shift})"
    return (DomainDataset(xs, ys, role="source", provenance=tag),
            DomainDataset(xt, yt, role="target", provenance=tag))
