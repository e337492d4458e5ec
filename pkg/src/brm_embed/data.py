"""Datasets, augmentation, class-balanced batch sampling and file formats.

File formats
------------
Raster (``.skb``): ``b"SKB1"``, little-endian ``u32 n, h, w, C``, then
``n*h*w`` pixel bytes (row-major, image after image), then ``n`` label bytes.
Requires ``C <= 256`` and ``h == w``.

Feature (``.csv``): UTF-8, header ``label,f0,...,f{D-1}``, then one row per
sample: integer label followed by ``D`` reals.

Pixel convention: 255 is white background, 0 is ink.
"""
from __future__ import annotations

import math
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    InsufficientClassSamples,
    InvalidConfig,
    LabelOutOfRange,
    MalformedFile,
    NotSquare,
    TruncatedFile,
)
from .numeric import l2_normalize

RASTER_MAGIC = b"SKB1"
BACKGROUND = 255


@dataclass
class FeatureDataset:
    vectors: np.ndarray
    labels: np.ndarray
    num_classes: int = 0

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2 or self.labels.shape != (self.vectors.shape[0],):
            raise InvalidConfig("vectors and labels do not align")
        if not np.all(np.isfinite(self.vectors)):
            raise InvalidConfig("non-finite feature value")
        if not self.num_classes:
            self.num_classes = int(self.labels.max()) + 1 if self.labels.size else 0
        _check_labels(self.labels, self.num_classes)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]


@dataclass
class RasterDataset:
    images: np.ndarray
    labels: np.ndarray
    num_classes: int
    class_names: list | None = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.uint8)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.images.ndim != 3 or self.images.shape[0] < 1:
            raise InvalidConfig("images must be an (n, h, w) array with n >= 1")
        if self.images.shape[1] != self.images.shape[2]:
            raise NotSquare(f"rasters must be square, got {self.images.shape[1:]}")
        if self.labels.shape != (self.images.shape[0],):
            raise InvalidConfig("one label per image required")
        _check_labels(self.labels, self.num_classes)

    def __len__(self):
        return self.labels.shape[0]

    @property
    def side(self) -> int:
        return self.images.shape[1]


def _check_labels(labels, num_classes):
    if labels.size and (labels.min() < 0 or labels.max() >= num_classes):
        raise LabelOutOfRange(f"labels must lie in [0, {num_classes})")


@dataclass(frozen=True)
class AugmentConfig:
    rotation_max_deg: float = 10.0
    hflip_prob: float = 0.5
    translate_frac: float = 0.05
    shear_deg: float = 5.0
    jitter: int = 8
    enabled: bool = True

    def __post_init__(self):
        if not 0.0 <= self.hflip_prob <= 1.0:
            raise InvalidConfig("hflip_prob must lie in [0, 1]")
        if not 0 <= self.jitter <= 255:
            raise InvalidConfig("jitter must lie in [0, 255]")
        if min(self.rotation_max_deg, self.translate_frac, self.shear_deg) < 0:
            raise InvalidConfig("augmentation ranges must be non-negative")

    @classmethod
    def off(cls) -> "AugmentConfig":
        return cls(0.0, 0.0, 0.0, 0.0, 0, enabled=False)


# -- generation ---------------------------------------------------------------

def gen_synthetic(rng: np.random.Generator, classes: int, per_class: int, dim: int,
                  sigma: float) -> FeatureDataset:
    """Gaussian clusters around class means drawn uniformly on the unit sphere."""
    if classes < 2 or per_class < 2 or dim < 1 or sigma < 0:
        raise InvalidConfig("need classes >= 2, per_class >= 2, dim >= 1, sigma >= 0")
    means = l2_normalize(rng.standard_normal((classes, dim)))
    labels = np.repeat(np.arange(classes), per_class)
    noise = rng.standard_normal((classes * per_class, dim)) * sigma
    return FeatureDataset(means[labels] + noise, labels, classes)


def _draw_segment(img, p0, p1):
    steps = int(2 * max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))) + 2
    t = np.linspace(0.0, 1.0, steps)
    rows = np.rint(p0[0] + t * (p1[0] - p0[0])).astype(int)
    cols = np.rint(p0[1] + t * (p1[1] - p0[1])).astype(int)
    ok = (rows >= 0) & (rows < img.shape[0]) & (cols >= 0) & (cols < img.shape[1])
    img[rows[ok], cols[ok]] = 0


def gen_synthetic_rasters(rng: np.random.Generator, classes: int, per_class: int,
                          side: int = 16, strokes: int = 3,
                          cfg: AugmentConfig | None = None) -> RasterDataset:
    """Line-drawing rasters: one random stroke prototype per class, augmented per sample."""
    if classes < 2 or per_class < 2 or side < 4 or classes > 256:
        raise InvalidConfig("need 2 <= classes <= 256, per_class >= 2, side >= 4")
    cfg = cfg or AugmentConfig(rotation_max_deg=8.0, hflip_prob=0.0, jitter=4)
    protos = []
    for _ in range(classes):
        img = np.full((side, side), BACKGROUND, dtype=np.uint8)
        pts = rng.uniform(1, side - 2, size=(strokes + 1, 2))
        for a, b in zip(pts[:-1], pts[1:]):
            _draw_segment(img, a, b)
        protos.append(img)
    labels = np.repeat(np.arange(classes), per_class)
    images = np.stack([augment(protos[c], cfg, rng) for c in labels])
    return RasterDataset(images, labels, classes)


# -- augmentation -------------------------------------------------------------

def augment(image, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    """Random affine, rotation, horizontal flip and pixel jitter, in that order.

    Geometric steps resample with nearest neighbour; pixels mapped from outside
    the frame become background.
    """
    img = np.asarray(image, dtype=np.uint8)
    if img.ndim != 2 or img.shape[0] != img.shape[1]:
        raise NotSquare(f"expected a square raster, got shape {img.shape}")
    if not cfg.enabled:
        return img.copy()
    side = img.shape[0]

    # forward map p' = Rot @ (Shear @ (p - c) + t) + c, with p = (x, y)
    shear = np.eye(2)
    shift = np.zeros(2)
    rot = np.eye(2)
    if cfg.translate_frac > 0:
        shift = rng.uniform(-cfg.translate_frac, cfg.translate_frac, size=2) * side
    if cfg.shear_deg > 0:
        shear[0, 1] = math.tan(math.radians(rng.uniform(-cfg.shear_deg, cfg.shear_deg)))
    if cfg.rotation_max_deg > 0:
        theta = math.radians(rng.uniform(-cfg.rotation_max_deg, cfg.rotation_max_deg))
        rot = np.array([[math.cos(theta), -math.sin(theta)],
                        [math.sin(theta), math.cos(theta)]])
    out = img
    if shift.any() or shear[0, 1] != 0 or not np.array_equal(rot, np.eye(2)):
        out = _warp(img, rot @ shear, rot @ shift)

    if cfg.hflip_prob > 0 and rng.random() < cfg.hflip_prob:
        out = out[:, ::-1]
    if cfg.jitter > 0:
        noise = rng.integers(-cfg.jitter, cfg.jitter + 1, size=out.shape)
        out = np.clip(out.astype(np.int64) + noise, 0, 255)
    return np.ascontiguousarray(out, dtype=np.uint8)


def _warp(img, linear, offset):
    side = img.shape[0]
    c = (side - 1) / 2.0
    ys, xs = np.mgrid[0:side, 0:side].astype(np.float64)
    dst = np.stack([xs.ravel() - c - offset[0], ys.ravel() - c - offset[1]])
    src = np.linalg.solve(linear, dst) + c
    sx = np.rint(src[0]).astype(np.int64)
    sy = np.rint(src[1]).astype(np.int64)
    inside = (sx >= 0) & (sx < side) & (sy >= 0) & (sy < side)
    out = np.full(side * side, BACKGROUND, dtype=np.uint8)
    out[inside] = img[sy[inside], sx[inside]]
    return out.reshape(side, side)


def center_crop(images: np.ndarray, fraction: float = 0.875) -> np.ndarray:
    """Central square crop keeping ``round(fraction * side)`` pixels per side."""
    side = images.shape[-1]
    keep = max(1, int(round(fraction * side)))
    start = (side - keep) // 2
    return images[..., start:start + keep, start:start + keep]


def rasters_to_vectors(images: np.ndarray, crop_fraction: float = 0.875) -> np.ndarray:
    """Crop, flatten and scale to ``[0, 1]`` for the dense encoder."""
    cropped = center_crop(np.asarray(images), crop_fraction)
    return cropped.reshape(cropped.shape[0], -1).astype(np.float64) / 255.0


# -- batch sampling -------------------------------------------------------------

class BatchSampler:
    """P classes x Q samples per batch, drawn without replacement inside a class."""

    def __init__(self, labels, classes_per_batch: int, samples_per_class: int,
                 require_negatives: bool = True):
        labels = np.asarray(labels)
        self.P = int(classes_per_batch)
        self.Q = int(samples_per_class)
        if self.P < 1 or self.Q < 1:
            raise InvalidConfig("P and Q must be positive")
        if require_negatives and self.P < 2:
            raise InsufficientClassSamples("P >= 2 classes needed to form negative pairs")
        classes = np.unique(labels)
        self.by_class = {int(c): np.flatnonzero(labels == c) for c in classes}
        self.eligible = np.array([c for c in classes if len(self.by_class[int(c)]) >= self.Q])
        if len(self.eligible) < self.P:
            raise InsufficientClassSamples(
                f"only {len(self.eligible)} classes have >= {self.Q} samples, need {self.P}")

    @property
    def batch_size(self) -> int:
        return self.P * self.Q

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        chosen = rng.choice(self.eligible, size=self.P, replace=False)
        return np.concatenate([
            rng.choice(self.by_class[int(c)], size=self.Q, replace=False) for c in chosen
        ])


def sample_batch(labels, rng, batch_size: int, classes_per_batch: int,
                 samples_per_class: int) -> np.ndarray:
    if classes_per_batch * samples_per_class != batch_size:
        raise InvalidConfig("batch_size must equal P * Q")
    return BatchSampler(labels, classes_per_batch, samples_per_class).sample(rng)


def split_indices(labels, val_fraction: float, rng: np.random.Generator):
    """Stratified train/validation split; every class keeps at least one training sample."""
    labels = np.asarray(labels)
    if not 0.0 <= val_fraction < 1.0:
        raise InvalidConfig("val_fraction must lie in [0, 1)")
    train, val = [], []
    for c in np.unique(labels):
        idx = rng.permutation(np.flatnonzero(labels == c))
        k = min(int(round(val_fraction * len(idx))), len(idx) - 1)
        val.append(idx[:k])
        train.append(idx[k:])
    return np.sort(np.concatenate(train)), np.sort(np.concatenate(val))


# -- file formats ---------------------------------------------------------------

def raster_dumps(ds: RasterDataset) -> bytes:
    if ds.num_classes > 256:
        raise InvalidConfig("raster format stores labels as bytes (C <= 256)")
    n, h, w = ds.images.shape
    return (RASTER_MAGIC + struct.pack("<4I", n, h, w, ds.num_classes)
            + ds.images.tobytes() + ds.labels.astype(np.uint8).tobytes())


def raster_loads(data: bytes) -> RasterDataset:
    if data[:4] != RASTER_MAGIC:
        raise BadMagic("not an SKB1 raster file")
    if len(data) < 20:
        raise TruncatedFile("raster header truncated")
    n, h, w, c = struct.unpack("<4I", data[4:20])
    expected = 20 + n * h * w + n
    if len(data) < expected:
        raise TruncatedFile(f"raster file has {len(data)} bytes, expected {expected}")
    if len(data) > expected:
        raise MalformedFile("trailing bytes after raster payload")
    if h != w:
        raise NotSquare(f"rasters must be square, got {h}x{w}")
    images = np.frombuffer(data, dtype=np.uint8, count=n * h * w, offset=20).reshape(n, h, w)
    labels = np.frombuffer(data, dtype=np.uint8, count=n, offset=20 + n * h * w)
    if labels.size and labels.max() >= c:
        raise LabelOutOfRange(f"label {labels.max()} >= class count {c}")
    return RasterDataset(images.copy(), labels.astype(np.int64), c)


def feature_dumps(ds: FeatureDataset) -> str:
    header = "label," + ",".join(f"f{k}" for k in range(ds.dim))
    lines = [header]
    for label, row in zip(ds.labels.tolist(), ds.vectors.tolist()):
        lines.append(str(label) + "," + ",".join(map(repr, row)))
    return "\n".join(lines) + "\n"


def feature_loads(text: str, num_classes: int | None = None) -> FeatureDataset:
    lines = text.splitlines()
    if not lines or not lines[0].startswith("label"):
        raise BadMagic("feature file must start with a 'label,f0,...' header")
    cols = lines[0].split(",")
    dim = len(cols) - 1
    if dim < 1 or cols != ["label"] + [f"f{k}" for k in range(dim)]:
        raise BadMagic(f"malformed header {lines[0]!r}")
    labels, rows = [], []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        parts = line.split(",")
        if len(parts) != dim + 1:
            raise TruncatedFile(f"line {lineno}: expected {dim + 1} fields, got {len(parts)}")
        try:
            labels.append(int(parts[0]))
            rows.append([float(p) for p in parts[1:]])
        except ValueError as exc:
            raise MalformedFile(f"line {lineno}: {exc}") from None
    if not rows:
        raise TruncatedFile("feature file has no samples")
    labels = np.asarray(labels, dtype=np.int64)
    vectors = np.asarray(rows, dtype=np.float64)
    if not np.all(np.isfinite(vectors)):
        raise MalformedFile("non-finite feature value")
    if labels.min() < 0 or (num_classes is not None and labels.max() >= num_classes):
        raise LabelOutOfRange("label outside [0, C)")
    return FeatureDataset(vectors, labels, num_classes or int(labels.max()) + 1)


def save_dataset(path, ds) -> None:
    path = Path(path)
    if isinstance(ds, RasterDataset):
        path.write_bytes(raster_dumps(ds))
    else:
        path.write_text(feature_dumps(ds), encoding="utf-8")


def load_dataset(path):
    """Load by content: SKB1 magic selects the raster format, anything else is CSV."""
    data = Path(path).read_bytes()
    if data[:4] == RASTER_MAGIC:
        return raster_loads(data)
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError:
        raise BadMagic("neither an SKB1 raster file nor UTF-8 CSV") from None
    return feature_loads(text)
