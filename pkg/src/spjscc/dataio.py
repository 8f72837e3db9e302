"""Dataset ingestion: CIFAR-10 binary batches plus a synthetic shapes set.

The shapes generator keeps every test offline: 10 classes = five geometries
(circle, square, triangle, cross, ring) times two fill styles (solid,
outline), drawn in a random bright color over per-pixel background noise.
The generator also returns the foreground pixel mask of each image, which
downstream checks use as ground truth for "where the object is".
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterator, NamedTuple, Sequence

import numpy as np

CIFAR_RECORD_BYTES = 3073  # 1 label byte + 3 * 32 * 32 pixel bytes
SHAPE_KINDS = ("circle", "square", "triangle", "cross", "ring")
FILL_STYLES = ("solid", "outline")
_CACHE_MAGIC = "spjscc-dataset v1"


class DataError(ValueError):
    """Malformed dataset file or invalid dataset contents."""


@dataclass
class LabeledImageDataset:
    images: np.ndarray  # (count, 3, H, W) float32 in [0, 1]
    labels: np.ndarray  # (count,) int64 in [0, class_count)
    class_count: int
    split: str  # "train" or "test"
    dataset_id: str = ""
    foreground: np.ndarray | None = None  # (count, H, W) bool, synthetic only

    def __post_init__(self):
        if self.images.ndim != 4 or self.images.shape[1] != 3:
            raise DataError(f"images must be (count, 3, H, W), got {self.images.shape}")
        if len(self.images) == 0:
            raise DataError("dataset is empty")
        if len(self.labels) != len(self.images):
            raise DataError(f"{len(self.labels)} labels for {len(self.images)} images")
        if self.labels.min() < 0 or self.labels.max() >= self.class_count:
            raise DataError(f"label outside [0, {self.class_count})")
        lo, hi = float(self.images.min()), float(self.images.max())
        if lo < 0.0 or hi > 1.0:
            raise DataError(f"pixel values outside [0, 1]: range [{lo}, {hi}]")

    def __len__(self):
        return len(self.images)

    @property
    def height(self):
        return self.images.shape[2]

    @property
    def width(self):
        return self.images.shape[3]


class ImageBatch(NamedTuple):
    indices: np.ndarray
    images: np.ndarray
    labels: np.ndarray


# ---------------------------------------------------------------------------
# CIFAR-10 binary batches
# ---------------------------------------------------------------------------


def load_cifar10(paths: Sequence[str | Path], split: str = "train") -> LabeledImageDataset:
    """Read CIFAR-10 binary batch files (3073-byte records, RGB plane-major).

    Pixels are scaled by 1/255 into [0, 1]; record order is preserved.
    Truncated files and label bytes > 9 are rejected with their byte offset.
    """
    images, labels = [], []
    for path in paths:
        blob = Path(path).read_bytes()
        if len(blob) == 0 or len(blob) % CIFAR_RECORD_BYTES != 0:
            full = len(blob) // CIFAR_RECORD_BYTES
            raise DataError(
                f"{path}: truncated at byte {full * CIFAR_RECORD_BYTES} "
                f"(file length {len(blob)} is not a multiple of {CIFAR_RECORD_BYTES})"
            )
        raw = np.frombuffer(blob, dtype=np.uint8).reshape(-1, CIFAR_RECORD_BYTES)
        bad = np.nonzero(raw[:, 0] > 9)[0]
        if bad.size:
            off = int(bad[0]) * CIFAR_RECORD_BYTES
            raise DataError(f"{path}: label byte {raw[bad[0], 0]} > 9 at byte offset {off}")
        labels.append(raw[:, 0].astype(np.int64))
        planes = raw[:, 1:].reshape(-1, 3, 32, 32)  # red, green, blue plane-major
        images.append(planes.astype(np.float32) / 255.0)
    return LabeledImageDataset(
        images=np.concatenate(images),
        labels=np.concatenate(labels),
        class_count=10,
        split=split,
        dataset_id=f"cifar10-{split}-{sum(len(x) for x in labels)}",
    )


# ---------------------------------------------------------------------------
# synthetic shapes
# ---------------------------------------------------------------------------


def _erode(mask: np.ndarray) -> np.ndarray:
    """3x3 binary erosion (logical AND over the 8-neighborhood)."""
    padded = np.pad(mask, 1, constant_values=False)
    out = mask.copy()
    for dy in (-1, 0, 1):
        for dx in (-1, 0, 1):
            out &= padded[1 + dy : 1 + dy + mask.shape[0], 1 + dx : 1 + dx + mask.shape[1]]
    return out


def _shape_region(kind: str, h: int, w: int, cy: float, cx: float, r: float) -> np.ndarray:
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    dy, dx = yy - cy, xx - cx
    if kind == "circle":
        return dy * dy + dx * dx <= r * r
    if kind == "square":
        return np.maximum(np.abs(dy), np.abs(dx)) <= 0.9 * r
    if kind == "triangle":
        top = cy - r
        halfwidth = (yy - top) / 2.0
        return (yy >= top) & (yy <= cy + r) & (np.abs(dx) <= halfwidth)
    if kind == "cross":
        t = 0.35 * r
        inside = (np.abs(dy) <= r) & (np.abs(dx) <= r)
        return inside & ((np.abs(dy) <= t) | (np.abs(dx) <= t))
    if kind == "ring":
        d2 = dy * dy + dx * dx
        return (d2 <= r * r) & (d2 >= (0.55 * r) ** 2)
    raise ValueError(f"unknown shape kind {kind!r}")


def generate_shapes(seed: int, count: int, height: int, width: int, split: str = "train") -> LabeledImageDataset:
    """Deterministic labeled shapes over noise backgrounds.

    Class c = 2 * shape_kind + fill_style. Labels cycle 0..9 so per-class
    counts differ by at most one. Same seed reproduces the dataset bitwise.
    """
    n_classes = len(SHAPE_KINDS) * len(FILL_STYLES)
    if height < 16 or width < 16:
        raise DataError(f"need height, width >= 16, got {height}x{width}")
    if count < n_classes:
        raise DataError(f"need count >= {n_classes}, got {count}")
    rng = np.random.default_rng(np.random.PCG64(seed))
    images = np.empty((count, 3, height, width), dtype=np.float32)
    labels = np.empty(count, dtype=np.int64)
    foreground = np.empty((count, height, width), dtype=bool)
    for i in range(count):
        label = i % n_classes
        kind = SHAPE_KINDS[label // 2]
        style = FILL_STYLES[label % 2]
        base = rng.uniform(0.05, 0.30, size=3)
        noise = rng.uniform(-0.08, 0.08, size=(3, height, width))
        img = np.clip(base[:, None, None] + noise, 0.0, 1.0)
        cy = height / 2 + rng.uniform(-height / 8, height / 8)
        cx = width / 2 + rng.uniform(-width / 8, width / 8)
        r = rng.uniform(0.30, 0.45) * min(height, width) / 2
        region = _shape_region(kind, height, width, cy, cx, r)
        if style == "outline":
            region = region & ~_erode(_erode(region))
        color = rng.uniform(0.60, 1.00, size=3)
        jitter = rng.uniform(-0.05, 0.05, size=(3, height, width))
        fg = np.clip(color[:, None, None] + jitter, 0.0, 1.0)
        img = np.where(region[None, :, :], fg, img)
        images[i] = img.astype(np.float32)
        labels[i] = label
        foreground[i] = region
    return LabeledImageDataset(
        images=images,
        labels=labels,
        class_count=n_classes,
        split=split,
        dataset_id=f"shapes-{seed}-{count}-{height}x{width}",
        foreground=foreground,
    )


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------


def batch_iter(dataset: LabeledImageDataset, batch_size: int, shuffle_seed: int | None = None) -> Iterator[ImageBatch]:
    """Yield batches covering every index once; final partial batch included.

    With a shuffle seed the permutation is a deterministic function of the
    seed; without one, dataset order is kept.
    """
    if batch_size < 1:
        raise ValueError(f"batch_size must be >= 1, got {batch_size}")
    n = len(dataset)
    order = np.arange(n)
    if shuffle_seed is not None:
        order = np.random.default_rng(np.random.PCG64(shuffle_seed)).permutation(n)
    for start in range(0, n, batch_size):
        idx = order[start : start + batch_size]
        yield ImageBatch(idx, dataset.images[idx], dataset.labels[idx])


# ---------------------------------------------------------------------------
# cache format: manifest line + raw little-endian payload
# ---------------------------------------------------------------------------


def save_cache(dataset: LabeledImageDataset, path: str | Path) -> None:
    """manifest line, then int32-LE labels, float32-LE pixels, uint8 masks."""
    has_fg = dataset.foreground is not None
    manifest = (
        f"{_CACHE_MAGIC} count={len(dataset)} classes={dataset.class_count} "
        f"height={dataset.height} width={dataset.width} split={dataset.split} "
        f"id={dataset.dataset_id} masks={int(has_fg)}\n"
    )
    with open(path, "wb") as fh:
        fh.write(manifest.encode("ascii"))
        fh.write(dataset.labels.astype("<i4").tobytes())
        fh.write(dataset.images.astype("<f4").tobytes())
        if has_fg:
            fh.write(dataset.foreground.astype(np.uint8).tobytes())


def load_cache(path: str | Path) -> LabeledImageDataset:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if not header.startswith(_CACHE_MAGIC):
            raise DataError(f"{path}: bad cache header {header[:40]!r}")
        fields = dict(kv.split("=", 1) for kv in header[len(_CACHE_MAGIC):].split())
        count = int(fields["count"])
        h, w = int(fields["height"]), int(fields["width"])
        payload = fh.read()
    label_bytes = count * 4
    pixel_bytes = count * 3 * h * w * 4
    mask_bytes = count * h * w if fields["masks"] == "1" else 0
    expect = label_bytes + pixel_bytes + mask_bytes
    if len(payload) != expect:
        raise DataError(f"{path}: payload is {len(payload)} bytes, expected {expect}")
    labels = np.frombuffer(payload[:label_bytes], dtype="<i4").astype(np.int64)
    images = np.frombuffer(payload[label_bytes : label_bytes + pixel_bytes], dtype="<f4")
    images = images.reshape(count, 3, h, w).copy()
    foreground = None
    if mask_bytes:
        foreground = (
            np.frombuffer(payload[label_bytes + pixel_bytes :], dtype=np.uint8)
            .reshape(count, h, w)
            .astype(bool)
        )
    return LabeledImageDataset(
        images=images,
        labels=labels,
        class_count=int(fields["classes"]),
        split=fields["split"],
        dataset_id=fields["id"],
        foreground=foreground,
    )
