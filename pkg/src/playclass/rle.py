"""Run-length codec for binary masks.

Convention: column-major (Fortran) scan order, alternating run counts starting
with the zero run, i.e. COCO-style uncompressed counts. Flat index of cell
(y, x) is ``x * H + y``; the counts always sum to ``H * W``.
"""
from __future__ import annotations

import numpy as np


class RleError(ValueError):
    pass


def encode_mask(mask: np.ndarray) -> list[int]:
    """Encode a binary (H, W) raster into column-major alternating counts."""
    flat = np.asarray(mask, dtype=bool).flatten(order="F")
    n = flat.size
    if n == 0:
        return []
    changes = np.flatnonzero(flat[1:] != flat[:-1]) + 1
    bounds = np.concatenate(([0], changes, [n]))
    counts = np.diff(bounds).tolist()
    if flat[0]:
        counts = [0] + counts
    return counts


def _run_bounds(counts: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Start (inclusive) and end (exclusive) flat indices of foreground runs."""
    ends = np.cumsum(counts)
    starts = ends - counts
    return starts[1::2], ends[1::2]


def validate_counts(counts, shape: tuple[int, int]) -> None:
    h, w = shape
    counts = np.asarray(counts, dtype=np.int64)
    if counts.size and counts.min() < 0:
        raise RleError("negative run count")
    total = int(counts.sum())
    if total != h * w:
        raise RleError(f"run counts sum to {total}, expected H*W = {h * w}")


def foreground_cells(counts, shape: tuple[int, int]) -> tuple[np.ndarray, np.ndarray]:
    """Decode to foreground cell coordinates (ys, xs), column-major cell order.

    Cost scales with the foreground size, not H*W.
    """
    h, w = shape
    counts = np.asarray(counts, dtype=np.int64)
    validate_counts(counts, shape)
    starts, ends = _run_bounds(counts)
    lens = ends - starts
    total = int(lens.sum())
    if total == 0:
        return np.empty(0, np.int64), np.empty(0, np.int64)
    # flat indices of all foreground cells: per-run arange, vectorised
    offs = np.repeat(np.cumsum(lens) - lens, lens)
    idx = np.arange(total, dtype=np.int64) - offs + np.repeat(starts, lens)
    return idx % h, idx // h


def decode_mask(counts, shape: tuple[int, int]) -> np.ndarray:
    """Decode to a full (H, W) boolean raster."""
    h, w = shape
    counts = np.asarray(counts, dtype=np.int64)
    validate_counts(counts, shape)
    flat = np.repeat(np.arange(len(counts), dtype=np.int64) % 2 == 1, counts)
    return flat.reshape((w, h)).T


def decode_crop(counts, shape: tuple[int, int]) -> tuple[np.ndarray, tuple[int, int]]:
    """Decode to the tight-bbox crop raster plus its (x0, y0) offset."""
    ys, xs = foreground_cells(counts, shape)
    if ys.size == 0:
        return np.zeros((0, 0), bool), (0, 0)
    y0, x0 = int(ys.min()), int(xs.min())
    crop = np.zeros((int(ys.max()) - y0 + 1, int(xs.max()) - x0 + 1), bool)
    crop[ys - y0, xs - x0] = True
    return crop, (x0, y0)


def tight_bbox(counts, shape: tuple[int, int]) -> tuple[int, int, int, int] | None:
    """Tight (x, y, w, h) of the foreground, computed from runs without decoding.

    Returns None for an empty mask.
    """
    h, w = shape
    counts = np.asarray(counts, dtype=np.int64)
    validate_counts(counts, shape)
    starts, ends = _run_bounds(counts)
    lens = ends - starts
    keep = lens > 0
    starts, ends = starts[keep], ends[keep]
    if starts.size == 0:
        return None
    last = ends - 1
    x_min = int((starts // h).min())
    x_max = int((last // h).max())
    # a run spanning a column boundary covers rows up to h-1 and down to 0
    spans = (starts // h) != (last // h)
    y_starts = np.where(spans, 0, starts % h)
    y_ends = np.where(spans, h - 1, last % h)
    y_min = int(y_starts.min())
    y_max = int(y_ends.max())
    return x_min, y_min, x_max - x_min + 1, y_max - y_min + 1


def area(counts) -> int:
    counts = np.asarray(counts, dtype=np.int64)
    return int(counts[1::2].sum())


def mask_iou_from_cells(a: tuple[np.ndarray, np.ndarray], sa: tuple[int, int],
                        b: tuple[np.ndarray, np.ndarray], sb: tuple[int, int]) -> float:
    """IoU of two masks given (ys, xs) cell coordinates; rasters may differ in size."""
    ia = a[1] * max(sa[0], sb[0]) + a[0]
    ib = b[1] * max(sa[0], sb[0]) + b[0]
    inter = np.intersect1d(ia, ib, assume_unique=True).size
    union = ia.size + ib.size - inter
    return inter / union if union else 0.0
