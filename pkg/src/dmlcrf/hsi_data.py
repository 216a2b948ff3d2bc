"""Hyperspectral cubes, label maps and training samples.

Cube files use a small binary layout::

    b"HSIC1" | u32 height | u32 width | u32 bands | float32[height*width*bands]

with every number little-endian and values in band-interleaved-by-pixel
order (the band index varies fastest). Label maps are binary PGM (``P5``,
maxval 255) with 0 meaning unlabeled.
"""

from __future__ import annotations

import logging
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from .errors import DataError, FormatError, InsufficientDataError, LengthError, ShapeError

log = logging.getLogger(__name__)

CUBE_MAGIC = b"HSIC1"
_CUBE_HEADER = struct.Struct("<5sIII")
NORM_EPS = 1e-12


@dataclass
class HsiCube:
    """A height x width x bands volume of finite reals."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values)
        if values.ndim != 3 or min(values.shape) < 1:
            raise ShapeError(f"cube must be a non-empty 3-d array, got shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise DataError("cube contains non-finite values")
        self.values = values

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]

    @property
    def bands(self) -> int:
        return self.values.shape[2]

    @property
    def shape(self):
        return self.values.shape

    def pixels(self) -> np.ndarray:
        """Spectra as a (height*width, bands) view in row-major pixel order."""
        return self.values.reshape(-1, self.bands)


@dataclass
class LabelMap:
    labels: np.ndarray

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 2:
            raise ShapeError(f"label map must be 2-d, got shape {labels.shape}")
        if labels.size and (labels.min() < 0 or labels.max() > 255):
            raise DataError("labels must lie in 0..255")
        self.labels = labels.astype(np.int64, copy=False)

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    @property
    def shape(self):
        return self.labels.shape

    @property
    def num_classes(self) -> int:
        return int(self.labels.max()) if self.labels.size else 0

    def labeled_indices(self) -> np.ndarray:
        return np.flatnonzero(self.labels.ravel())


@dataclass
class SampleSet:
    """Labeled spectra. ``labels`` holds class ids in ``1..class_count``."""

    spectra: np.ndarray
    labels: np.ndarray
    class_count: int

    def __post_init__(self):
        self.spectra = np.asarray(self.spectra, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.spectra.ndim != 2 or self.labels.shape != (self.spectra.shape[0],):
            raise ShapeError("spectra must be (n, dimension) with one label per row")
        if self.labels.size and (self.labels.min() < 1 or self.labels.max() > self.class_count):
            raise DataError(f"class ids must lie in 1..{self.class_count}")

    @property
    def dimension(self) -> int:
        return self.spectra.shape[1]

    def __len__(self):
        return self.spectra.shape[0]

    @classmethod
    def from_pixels(cls, cube: HsiCube, labels: LabelMap, indices, class_count=None):
        if cube.shape[:2] != labels.shape:
            raise ShapeError(f"cube {cube.shape[:2]} and labels {labels.shape} differ in size")
        indices = np.asarray(indices, dtype=np.int64)
        y = labels.labels.ravel()[indices]
        if np.any(y == 0):
            raise DataError("sample indices include unlabeled pixels")
        return cls(cube.pixels()[indices], y, class_count or labels.num_classes)


@dataclass
class AugmentConfig:
    """Virtual sample settings; ``virtual_per_class=None`` matches the real count per class."""

    virtual_per_class: Optional[int] = None
    mix_low: float = 0.0
    mix_high: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.mix_low <= self.mix_high <= 1.0:
            raise ValueError("need 0 <= mix_low <= mix_high <= 1")


# -- file formats ------------------------------------------------------------


def write_cube(cube: HsiCube, path) -> None:
    values = np.ascontiguousarray(cube.values, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(_CUBE_HEADER.pack(CUBE_MAGIC, cube.height, cube.width, cube.bands))
        fh.write(values.tobytes())


def load_cube(path) -> HsiCube:
    data = Path(path).read_bytes()
    if len(data) < _CUBE_HEADER.size or not data.startswith(CUBE_MAGIC):
        raise FormatError(f"{path}: not an HSIC1 cube")
    _, h, w, b = _CUBE_HEADER.unpack_from(data)
    expected = h * w * b * 4
    payload = len(data) - _CUBE_HEADER.size
    if payload != expected:
        raise LengthError(f"{path}: header announces {h}x{w}x{b} ({expected} bytes), payload has {payload}")
    values = np.frombuffer(data, dtype="<f4", offset=_CUBE_HEADER.size).reshape(h, w, b).astype(np.float32)
    if not np.all(np.isfinite(values)):
        raise DataError(f"{path}: cube contains non-finite values")
    return HsiCube(values)


def write_labels(labels: LabelMap, path) -> None:
    arr = labels.labels
    if arr.size and arr.max() > 255:
        raise DataError("PGM label maps hold at most 255 classes")
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (labels.width, labels.height))
        fh.write(arr.astype(np.uint8).tobytes())


def _pgm_tokens(data: bytes, count: int):
    """Read ``count`` whitespace-separated header tokens, skipping ``#`` comments."""
    tokens, pos = [], 0
    while len(tokens) < count:
        while pos < len(data) and data[pos : pos + 1].isspace():
            pos += 1
        if data[pos : pos + 1] == b"#":
            while pos < len(data) and data[pos : pos + 1] not in (b"\n", b"\r"):
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos : pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    # exactly one whitespace byte separates the header from the raster
    return tokens, pos + 1


def load_labels(path) -> LabelMap:
    data = Path(path).read_bytes()
    if not data.startswith(b"P5"):
        raise FormatError(f"{path}: not a binary PGM (P5)")
    try:
        (magic, w, h, maxval), pos = _pgm_tokens(data, 4)
        w, h, maxval = int(w), int(h), int(maxval)
    except ValueError as exc:
        raise FormatError(f"{path}: malformed PGM header") from exc
    if maxval != 255:
        raise FormatError(f"{path}: expected maxval 255, got {maxval}")
    raster = data[pos:]
    if len(raster) != w * h:
        raise LengthError(f"{path}: expected {w * h} label bytes, got {len(raster)}")
    return LabelMap(np.frombuffer(raster, dtype=np.uint8).reshape(h, w))


# -- preprocessing -----------------------------------------------------------


def normalize(cube: HsiCube, mask=None) -> HsiCube:
    """Scale every band to zero mean and unit population variance.

    Statistics come from all pixels, or from the pixels selected by the flat
    boolean/index ``mask`` when given. Constant bands become all-zero.
    """
    x = cube.pixels().astype(np.float64)
    ref = x if mask is None else x[np.asarray(mask)]
    mean = ref.mean(axis=0)
    var = ref.var(axis=0)
    flat = var <= NORM_EPS
    scale = np.where(flat, 0.0, 1.0 / np.sqrt(np.where(flat, 1.0, var)))
    out = (x - mean) * scale
    return HsiCube(out.reshape(cube.shape))


def split_train_test(labels: LabelMap, per_class: int, seed: int):
    """Pick ``per_class`` random training pixels from every class.

    Returns sorted flat pixel indices ``(train, test)``; test holds every other
    labeled pixel.
    """
    flat = labels.labels.ravel()
    rng = np.random.default_rng(seed)
    train = []
    for cls in np.unique(flat[flat > 0]):
        members = np.flatnonzero(flat == cls)
        if members.size < per_class:
            raise InsufficientDataError(
                f"class {cls} has {members.size} labeled pixels, {per_class} requested"
            )
        train.append(rng.permutation(members)[:per_class])
    train = np.sort(np.concatenate(train)) if train else np.empty(0, dtype=np.int64)
    labeled = np.flatnonzero(flat)
    test = np.setdiff1d(labeled, train, assume_unique=True)
    return train, test


def compact_labels(labels: LabelMap):
    """Renumber the classes present to ``1..C``. Returns the map and the original ids."""
    present = np.unique(labels.labels[labels.labels > 0])
    lut = np.zeros(256, dtype=np.int64)
    lut[present] = np.arange(1, present.size + 1)
    return LabelMap(lut[labels.labels]), present


def generate_virtual_samples(samples: SampleSet, cfg: AugmentConfig) -> SampleSet:
    """Append convex mixtures ``q*x1 + (1-q)*x2`` of distinct same-class spectra."""
    rng = np.random.default_rng(cfg.seed)
    new_x, new_y = [samples.spectra], [samples.labels]
    for cls in range(1, samples.class_count + 1):
        members = np.flatnonzero(samples.labels == cls)
        n_virtual = members.size if cfg.virtual_per_class is None else cfg.virtual_per_class
        if n_virtual == 0:
            continue
        if members.size < 2:
            raise InsufficientDataError(f"class {cls} needs at least 2 samples for mixing, has {members.size}")
        first = rng.integers(members.size, size=n_virtual)
        # offset in 1..n-1 keeps the partner distinct from the first pick
        second = (first + rng.integers(1, members.size, size=n_virtual)) % members.size
        q = rng.uniform(cfg.mix_low, cfg.mix_high, size=(n_virtual, 1))
        x1 = samples.spectra[members[first]]
        x2 = samples.spectra[members[second]]
        new_x.append(q * x1 + (1.0 - q) * x2)
        new_y.append(np.full(n_virtual, cls, dtype=np.int64))
    return SampleSet(np.concatenate(new_x), np.concatenate(new_y), samples.class_count)


# -- synthetic scenes --------------------------------------------------------


def _cuts(length, parts, rng):
    base = np.linspace(0, length, parts + 1)
    jitter = rng.uniform(-0.25, 0.25, size=parts - 1) * (length / parts)
    inner = np.clip(np.round(base[1:-1] + jitter), 1, length - 1).astype(int)
    return np.concatenate([[0], np.sort(inner), [length]])


def synth_scene(height=64, width=64, bands=16, classes=5, noise_level=1.0, seed=0):
    """Blocky label map plus class-mean spectra with Gaussian noise.

    The image is cut into a jittered grid of rectangles, colored so that
    neighboring rectangles differ in class. Class means are
    standard normal vectors, rescaled when needed so that every pair sits at
    least ``4 * noise_level`` apart.
    """
    if classes < 2:
        raise ValueError("need at least two classes")
    if noise_level < 0:
        raise ValueError("noise_level must be >= 0")
    rng = np.random.default_rng(seed)

    parts = int(np.ceil(np.sqrt(3 * classes)))
    parts_r, parts_c = min(parts, height), min(parts, width)
    rows, cols = _cuts(height, parts_r, rng), _cuts(width, parts_c, rng)
    # (2r + c) mod C gives the four cells around every grid vertex distinct
    # classes once C >= 4, so no rectangle corner faces a same-class diagonal.
    perm = rng.permutation(classes)
    label_map = np.zeros((height, width), dtype=np.int64)
    for r in range(parts_r):
        for c in range(parts_c):
            cls = perm[(2 * r + c) % classes]
            label_map[rows[r] : rows[r + 1], cols[c] : cols[c + 1]] = cls + 1

    means = rng.standard_normal((classes, bands))
    gaps = np.linalg.norm(means[:, None, :] - means[None, :, :], axis=-1)
    min_gap = gaps[np.triu_indices(classes, 1)].min()
    if min_gap < 4.0 * noise_level:
        means *= 4.0 * noise_level / min_gap
    noise = rng.standard_normal((height, width, bands)) * noise_level
    values = means[label_map - 1] + noise
    return HsiCube(values.astype(np.float32)), LabelMap(label_map)
