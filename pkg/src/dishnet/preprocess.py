"""MNIST ingestion and image pre-processing for the 196-input network.

Raw 28x28 images are average-pooled to 14x14, then thresholded to binary
vectors of length 196. "Foreground" bits (the digit strokes, high intensity
in the raw encoding) map to 1. The adaptive pre-processing (Adpp) path tunes
the binarization threshold so the dataset hits a target mean foreground
count (nin_b) instead of using the fixed default threshold of 100.
"""

from __future__ import annotations

import gzip
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

IDX_MAGIC_IMAGES = 0x00000803
IDX_MAGIC_LABELS = 0x00000801

DEFAULT_BINARIZE_THRESHOLD = 100.0


class IdxParseError(ValueError):
    """Malformed IDX file; message carries the byte offset of the problem."""


@dataclass
class RawDataset:
    """28x28 grayscale images (uint8) with integer labels."""

    images: np.ndarray  # (n, 28, 28) uint8
    labels: np.ndarray  # (n,) uint8

    def __post_init__(self):
        if len(self.images) != len(self.labels):
            raise IdxParseError(
                f"image/label count mismatch: {len(self.images)} images, "
                f"{len(self.labels)} labels"
            )

    def __len__(self):
        return len(self.images)

    def subset(self, n: int) -> "RawDataset":
        """First n images in file order."""
        return RawDataset(self.images[:n], self.labels[:n])


@dataclass
class BinaryDataset:
    """Binarized length-196 vectors with labels."""

    vectors: np.ndarray  # (n, 196) uint8 in {0,1}
    labels: np.ndarray   # (n,)

    def __len__(self):
        return len(self.vectors)

    @property
    def mean_nin_b(self) -> float:
        """Mean foreground-pixel count per image."""
        return float(self.vectors.sum(axis=1).mean())


@dataclass
class PoolSpec:
    """Filter-and-pool compression followed by binarization.

    Output side length must satisfy (in_size - filter + 2*padding) % stride == 0;
    the result is (in_size - filter + 2*padding)/stride + 1 pixels per side.
    """

    filter_size: int = 2
    stride: int = 2
    padding: int = 0
    binarize_threshold: float = DEFAULT_BINARIZE_THRESHOLD

    def out_size(self, in_size: int) -> int:
        span = in_size - self.filter_size + 2 * self.padding
        if span % self.stride != 0:
            raise ValueError(
                f"pool spec {self.filter_size}/{self.stride}/{self.padding} does not "
                f"tile a {in_size}x{in_size} image evenly"
            )
        return span // self.stride + 1


def _open_maybe_gzip(path):
    path = Path(path)
    if path.suffix == ".gz":
        return gzip.open(path, "rb")
    return open(path, "rb")


def _read_exact(f, count: int, offset: int, what: str) -> bytes:
    data = f.read(count)
    if len(data) != count:
        raise IdxParseError(
            f"truncated IDX file while reading {what}: wanted {count} bytes at "
            f"offset {offset}, got {len(data)}"
        )
    return data


def load_idx_images(path) -> np.ndarray:
    """Parse an IDX3 image file (optionally .gz) into (n, rows, cols) uint8."""
    with _open_maybe_gzip(path) as f:
        header = _read_exact(f, 16, 0, "image header")
        magic, count, rows, cols = struct.unpack(">IIII", header)
        if magic != IDX_MAGIC_IMAGES:
            raise IdxParseError(
                f"bad magic 0x{magic:08x} at offset 0 (expected 0x{IDX_MAGIC_IMAGES:08x} "
                f"for an IDX image file)"
            )
        body = _read_exact(f, count * rows * cols, 16, f"{count} images of {rows}x{cols}")
    return np.frombuffer(body, dtype=np.uint8).reshape(count, rows, cols)


def load_idx_labels(path) -> np.ndarray:
    """Parse an IDX1 label file (optionally .gz) into (n,) uint8."""
    with _open_maybe_gzip(path) as f:
        header = _read_exact(f, 8, 0, "label header")
        magic, count = struct.unpack(">II", header)
        if magic != IDX_MAGIC_LABELS:
            raise IdxParseError(
                f"bad magic 0x{magic:08x} at offset 0 (expected 0x{IDX_MAGIC_LABELS:08x} "
                f"for an IDX label file)"
            )
        body = _read_exact(f, count, 8, f"{count} labels")
    return np.frombuffer(body, dtype=np.uint8)


def load_idx(images_path, labels_path) -> RawDataset:
    """Load an MNIST-format image/label file pair, validating counts match."""
    images = load_idx_images(images_path)
    labels = load_idx_labels(labels_path)
    if len(images) != len(labels):
        raise IdxParseError(
            f"image/label count mismatch: {images_path} has {len(images)}, "
            f"{labels_path} has {len(labels)}"
        )
    return RawDataset(images, labels)


def write_idx_images(path, images: np.ndarray):
    """Serialize (n, rows, cols) uint8 back to IDX3 (round-trip of load_idx_images)."""
    images = np.ascontiguousarray(images, dtype=np.uint8)
    n, rows, cols = images.shape
    with open(path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_MAGIC_IMAGES, n, rows, cols))
        f.write(images.tobytes())


def write_idx_labels(path, labels: np.ndarray):
    labels = np.ascontiguousarray(labels, dtype=np.uint8)
    with open(path, "wb") as f:
        f.write(struct.pack(">II", IDX_MAGIC_LABELS, len(labels)))
        f.write(labels.tobytes())


def avg_pool(image: np.ndarray, spec: PoolSpec) -> np.ndarray:
    """Average-pool one 2D image; padding pixels count as 0 in the mean."""
    image = np.asarray(image, dtype=np.float64)
    size = image.shape[0]
    out = spec.out_size(size)
    if spec.padding:
        image = np.pad(image, spec.padding, mode="constant")
    k, s = spec.filter_size, spec.stride
    # stride-tricked window view; windows fit exactly by the out_size check
    view = np.lib.stride_tricks.sliding_window_view(image, (k, k))[::s, ::s]
    pooled = view.mean(axis=(2, 3))
    assert pooled.shape == (out, out)
    return pooled


def avg_pool_batch(images: np.ndarray, spec: PoolSpec) -> np.ndarray:
    """Pool (n, h, w) images to (n, out, out)."""
    images = np.asarray(images, dtype=np.float64)
    if spec.padding:
        images = np.pad(images, ((0, 0), (spec.padding, spec.padding),
                                 (spec.padding, spec.padding)), mode="constant")
    k, s = spec.filter_size, spec.stride
    view = np.lib.stride_tricks.sliding_window_view(images, (k, k), axis=(1, 2))
    return view[:, ::s, ::s].mean(axis=(3, 4))


def binarize(image: np.ndarray, threshold: float) -> np.ndarray:
    """Flatten row-major and map pixel > threshold (strict) to 1."""
    return (np.asarray(image).reshape(-1) > threshold).astype(np.uint8)


def binarize_batch(pooled: np.ndarray, threshold: float) -> np.ndarray:
    n = pooled.shape[0]
    return (pooled.reshape(n, -1) > threshold).astype(np.uint8)


def mean_ninb_per_threshold(pooled: np.ndarray, thresholds=None) -> np.ndarray:
    """mean_nin_b of the batch for every candidate threshold (default 0..255)."""
    if thresholds is None:
        thresholds = np.arange(256)
    thresholds = np.asarray(thresholds, dtype=np.float64)
    flat = pooled.reshape(len(pooled), -1)
    # count pixels strictly above each threshold via a sorted scan
    vals = np.sort(flat.reshape(-1))
    above = len(vals) - np.searchsorted(vals, thresholds, side="right")
    return above / len(pooled)


def threshold_for_target_ninb(pooled: np.ndarray, target_ninb: float) -> int:
    """Integer threshold in 0..255 whose mean_nin_b is closest to the target.

    Ties break toward the higher threshold.
    """
    means = mean_ninb_per_threshold(pooled)
    err = np.abs(means - target_ninb)
    best = len(err) - 1 - int(np.argmin(err[::-1]))
    return int(best)


def prepare(raw: RawDataset, spec: PoolSpec) -> BinaryDataset:
    """Full pipeline: pool, then binarize at spec.binarize_threshold."""
    pooled = avg_pool_batch(raw.images, spec)
    return BinaryDataset(binarize_batch(pooled, spec.binarize_threshold),
                         np.asarray(raw.labels).copy())


def prepare_for_ninb(raw: RawDataset, target_ninb: float,
                     spec: PoolSpec | None = None) -> tuple[BinaryDataset, int]:
    """Pool, pick the threshold hitting target_ninb, binarize. Returns (data, threshold)."""
    spec = spec or PoolSpec()
    pooled = avg_pool_batch(raw.images, spec)
    thr = threshold_for_target_ninb(pooled, target_ninb)
    return BinaryDataset(binarize_batch(pooled, thr), np.asarray(raw.labels).copy()), thr


def adpp_select_ninb(candidates, probe: RawDataset, train_probe, probe_epochs: int = 100,
                     spec: PoolSpec | None = None):
    """Pick the nin_b target that trains best on a small probe set.

    train_probe(data: BinaryDataset, epochs: int) must return
    (final_accuracy, final_nf_hidden); ties in accuracy go to the candidate
    whose nf_hidden is nearest 0.5.
    """
    candidates = list(candidates)
    if not candidates:
        raise ValueError("adpp_select_ninb needs at least one candidate nin_b")
    results = []
    for target in candidates:
        data, thr = prepare_for_ninb(probe, target, spec)
        acc, nf = train_probe(data, probe_epochs)
        results.append({"nin_b": target, "threshold": thr, "accuracy": acc,
                        "nf_hidden": nf})
    best = max(results, key=lambda r: (r["accuracy"], -abs(r["nf_hidden"] - 0.5)))
    return best["nin_b"], results
