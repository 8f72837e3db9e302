"""Per-pixel semantic weights from classifier input gradients.

For each training image: take the gradient of every class logit with respect
to the pixels, average the per-class maps, rectify, and normalize to unit L2
norm. The maps are computed once against the clean images with the frozen
classifier and cached to disk keyed by the classifier's parameter hash.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .classifier import ClassifierModel, perceive_with_tape
from .dataio import LabeledImageDataset
from .numcore import ShapeError

_CACHE_MAGIC = "spjscc-weights v1"
ZERO_GRAD_EPS = 1e-12


class WeightCacheMismatch(ValueError):
    """Cache file does not match the requesting classifier/dataset."""


@dataclass
class SemanticWeightMap:
    weights: np.ndarray  # (3, H, W), nonnegative, unit L2 norm
    image_index: int
    classifier_hash: str
    uniform_fallback: bool = False


@dataclass
class WeightCache:
    maps: np.ndarray  # (count, 3, H, W) float32
    fallback: np.ndarray  # (count,) bool
    dataset_id: str
    classifier_hash: str

    def __len__(self):
        return len(self.maps)


def class_gradient(model: ClassifierModel, image: np.ndarray, c: int, dtype=np.float32) -> np.ndarray:
    """Gradient of logit c w.r.t. every pixel of one image."""
    if not 0 <= c < model.class_count:
        raise ValueError(f"class index {c} outside [0, {model.class_count})")
    tape, x, logits = perceive_with_tape(model, image, dtype=dtype)
    seed = np.zeros(logits.shape, dtype=dtype)
    seed[:, c] = 1.0
    (grad,) = tape.backward(logits, seed=seed, wrt=(x,))
    return grad[0] if np.asarray(image).ndim == 3 else grad


def batch_class_gradients(model: ClassifierModel, images: np.ndarray, dtype=np.float32) -> np.ndarray:
    """All C per-class input gradients for a batch: (C, N, 3, H, W).

    One forward pass, then one backward per class; rows are independent, so
    each image's slice equals its single-image class_gradient.
    """
    tape, x, logits = perceive_with_tape(model, images, dtype=dtype)
    out = np.empty((model.class_count,) + x.shape, dtype=dtype)
    for c in range(model.class_count):
        seed = np.zeros(logits.shape, dtype=dtype)
        seed[:, c] = 1.0
        (grad,) = tape.backward(logits, seed=seed, wrt=(x,))
        out[c] = grad
    return out


def average_gradients(per_class_maps) -> np.ndarray:
    """Elementwise mean of the per-class gradient maps."""
    maps = [np.asarray(m) for m in per_class_maps]
    if not maps:
        raise ValueError("need at least one gradient map")
    shape = maps[0].shape
    for m in maps[1:]:
        if m.shape != shape:
            raise ShapeError(f"gradient map shapes differ: {shape} vs {m.shape}")
    return np.mean(np.stack(maps), axis=0)


def normalize_weights(w: np.ndarray) -> tuple[np.ndarray, bool]:
    """Rectify and scale to unit L2 norm: |w| / ||w||.

    Degenerate all-zero gradients fall back to the uniform unit-norm map
    (every entry 1/sqrt(n)); the second return flags that case.
    """
    w = np.asarray(w)
    if not np.isfinite(w).all():
        raise ValueError("non-finite entries in gradient map")
    mag = np.abs(w.astype(np.float64))
    norm = float(np.sqrt((mag * mag).sum()))
    if norm < ZERO_GRAD_EPS:
        uniform = np.full(w.shape, 1.0 / np.sqrt(w.size), dtype=np.float32)
        return uniform, True
    return (mag / norm).astype(np.float32), False


def compute_weight_maps(model: ClassifierModel, images: np.ndarray, batch: int = 64) -> tuple[np.ndarray, np.ndarray]:
    """Weight map per image: per-class gradients -> mean -> rectified unit norm."""
    n = len(images)
    maps = np.empty((n,) + images.shape[1:], dtype=np.float32)
    fallback = np.zeros(n, dtype=bool)
    for start in range(0, n, batch):
        chunk = images[start : start + batch]
        per_class = batch_class_gradients(model, chunk)  # (C, n, 3, H, W)
        for j in range(len(chunk)):
            w = average_gradients(per_class[:, j])
            maps[start + j], fallback[start + j] = normalize_weights(w)
    return maps, fallback


def extract_weight_cache(
    model: ClassifierModel, dataset: LabeledImageDataset, path: str | Path, batch: int = 64
) -> WeightCache:
    """Compute (or reuse) the weight cache for every image in `dataset`.

    A cache file whose classifier hash and dataset id match is loaded as is;
    anything else is recomputed and rewritten. Writing twice with the same
    frozen classifier produces identical bytes.
    """
    path = Path(path)
    chash = model.theta_hash()
    if path.exists():
        try:
            return load_weight_cache(path, expected_classifier_hash=chash, expected_dataset_id=dataset.dataset_id)
        except WeightCacheMismatch:
            pass  # stale cache: recompute below
    maps, fallback = compute_weight_maps(model, dataset.images, batch=batch)
    cache = WeightCache(maps=maps, fallback=fallback, dataset_id=dataset.dataset_id, classifier_hash=chash)
    save_weight_cache(cache, path)
    return cache


def save_weight_cache(cache: WeightCache, path: str | Path) -> None:
    c, ch, h, w = cache.maps.shape
    manifest = (
        f"{_CACHE_MAGIC} dataset={cache.dataset_id} classifier={cache.classifier_hash} "
        f"count={c} shape={ch},{h},{w}\n"
    )
    with open(path, "wb") as fh:
        fh.write(manifest.encode("ascii"))
        fh.write(cache.fallback.astype(np.uint8).tobytes())
        fh.write(cache.maps.astype("<f4").tobytes())


def load_weight_cache(
    path: str | Path, expected_classifier_hash: str | None = None, expected_dataset_id: str | None = None
) -> WeightCache:
    with open(path, "rb") as fh:
        header = fh.readline().decode("ascii").strip()
        if not header.startswith(_CACHE_MAGIC):
            raise WeightCacheMismatch(f"{path}: bad magic {header[:40]!r}")
        fields = dict(kv.split("=", 1) for kv in header[len(_CACHE_MAGIC):].split())
        if expected_classifier_hash is not None and fields["classifier"] != expected_classifier_hash:
            raise WeightCacheMismatch(
                f"{path}: cache was built for classifier {fields['classifier'][:12]}..., "
                f"current is {expected_classifier_hash[:12]}..."
            )
        if expected_dataset_id is not None and fields["dataset"] != expected_dataset_id:
            raise WeightCacheMismatch(f"{path}: cache dataset {fields['dataset']!r} != {expected_dataset_id!r}")
        count = int(fields["count"])
        shape = tuple(int(v) for v in fields["shape"].split(","))
        flags = np.frombuffer(fh.read(count), dtype=np.uint8).astype(bool)
        maps = np.frombuffer(fh.read(), dtype="<f4")
    if maps.size != count * int(np.prod(shape)):
        raise WeightCacheMismatch(f"{path}: payload holds {maps.size} floats, expected {count}x{shape}")
    return WeightCache(
        maps=maps.reshape((count,) + shape).copy(),
        fallback=flags,
        dataset_id=fields["dataset"],
        classifier_hash=fields["classifier"],
    )
