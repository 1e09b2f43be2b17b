"""Handcrafted per-frame mask features and their per-window summaries.

19 per-frame features (9 spatial, 5 temporal, 5 social) x 9 summary
statistics = the 171-dim window descriptor. Missing data is NaN, never zero:
a frame without a mask yields NaN features, a window column with fewer than
``MIN_VALID_FRAMES`` finite frames yields a NaN statistics block and the
window is flagged low-coverage (imputation with training medians happens in
the scaler, never here).

Positional arithmetic uses integer cross-differences of cell-coordinate sums
(dx = (sx_b*n_a - sx_a*n_b) / (n_a*n_b)), so translating every mask by whole
pixels leaves all 171 values bitwise identical.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from . import geometry
from .dataset_io import (FPS, N_FEATURES, VECTOR_DIM, LabelWindow, TrackedMask,
                         TrackGroups, ValidationError, WindowKey)

NEIGHBOR_RADIUS = 150.0  # px, roughly one body length at 704x576
MIN_VALID_FRAMES = 13    # 10% of a 125-frame window

_SPATIAL = slice(0, 9)
_TEMPORAL = slice(9, 14)
_SOCIAL = slice(14, 19)


@dataclass
class FrameAggregates:
    """Per-mask aggregates carried into temporal/social features.

    ``sum_x``/``sum_y`` stay integer so centroid differences can cancel
    translation exactly.
    """
    count: int
    sum_x: int
    sum_y: int
    bbox: tuple[int, int, int, int]
    orientation: float
    spatial: np.ndarray  # the 9 spatial features


def frame_spatial_features(rec: TrackedMask) -> np.ndarray:
    """area, perimeter, circularity, solidity, eccentricity, major_axis,
    minor_axis, extent, orientation — NaN for an empty mask."""
    ys, xs = rec.cells()
    return _spatial_from_cells(ys, xs)


def _spatial_from_cells(ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    if ys.size == 0:
        return np.full(9, np.nan)
    area = float(ys.size)
    y0, x0 = int(ys.min()), int(xs.min())
    h = int(ys.max()) - y0 + 1
    w = int(xs.max()) - x0 + 1
    crop = np.zeros((h, w), bool)
    crop[ys - y0, xs - x0] = True
    loops = geometry.outer_boundaries(crop)
    perimeter = geometry.boundary_perimeter(loops)
    circularity = 4.0 * math.pi * area / (perimeter * perimeter)
    hull = geometry.hull_area(np.vstack(loops))
    solidity = area / hull if hull > 0 else 1.0
    ecc, major, minor, theta = geometry.ellipse_params(ys, xs)
    extent = area / float(w * h)
    return np.array([area, perimeter, circularity, solidity, ecc,
                     major, minor, extent, theta])


def mask_aggregates(rec: TrackedMask) -> FrameAggregates | None:
    """Aggregates for one mask; None for an empty (degenerate) mask."""
    ys, xs = rec.cells()
    if ys.size == 0:
        return None
    spatial = _spatial_from_cells(ys, xs)
    return FrameAggregates(
        count=int(ys.size),
        sum_x=int(xs.sum()),
        sum_y=int(ys.sum()),
        bbox=rec.bbox,
        orientation=float(spatial[8]),
        spatial=spatial,
    )


def centroid_delta(a: FrameAggregates, b: FrameAggregates) -> tuple[float, float]:
    """Centroid displacement b - a via the integer cross-difference."""
    denom = a.count * b.count
    dx = (b.sum_x * a.count - a.sum_x * b.count) / denom
    dy = (b.sum_y * a.count - a.sum_y * b.count) / denom
    return dx, dy


def _angle_diff_halfpi(a: float, b: float) -> float:
    """Minimal difference between two axis orientations, in [0, pi/2]."""
    d = abs(a - b) % math.pi
    return min(d, math.pi - d)


def frame_temporal_features(series: dict[int, FrameAggregates], frame: int,
                            fps: int = FPS) -> np.ndarray:
    """speed, accel, turning_angle, orientation_rate, area_rate at ``frame``.

    Entries needing unavailable history are NaN; a zero displacement in either
    segment makes the turning angle 0 (stationary convention).
    """
    out = np.full(5, np.nan)
    cur = series.get(frame)
    prev = series.get(frame - 1)
    prev2 = series.get(frame - 2)
    if cur is None or prev is None:
        return out
    dx1, dy1 = centroid_delta(prev, cur)
    out[0] = math.hypot(dx1, dy1) * fps
    out[3] = _angle_diff_halfpi(cur.orientation, prev.orientation) * fps
    out[4] = (cur.count - prev.count) * fps
    if prev2 is not None:
        dx0, dy0 = centroid_delta(prev2, prev)
        out[1] = math.hypot(dx1 - dx0, dy1 - dy0) * fps * fps
        n0 = math.hypot(dx0, dy0)
        n1 = math.hypot(dx1, dy1)
        if n0 == 0.0 or n1 == 0.0:
            out[2] = 0.0
        else:
            c = (dx0 * dx1 + dy0 * dy1) / (n0 * n1)
            out[2] = math.acos(min(1.0, max(-1.0, c)))
    return out


def bbox_iou(a: tuple[int, int, int, int], b: tuple[int, int, int, int]) -> float:
    ax, ay, aw, ah = a
    bx, by, bw, bh = b
    ix = max(0, min(ax + aw, bx + bw) - max(ax, bx))
    iy = max(0, min(ay + ah, by + bh) - max(ay, by))
    inter = ix * iy
    union = aw * ah + bw * bh - inter
    return inter / union if union else 0.0


def _min_pair_dist(frame_aggs: dict[int, FrameAggregates], focal: int) -> float | None:
    me = frame_aggs.get(focal)
    if me is None:
        return None
    best = None
    for tid, other in frame_aggs.items():
        if tid == focal:
            continue
        d = math.hypot(*centroid_delta(me, other))
        if best is None or d < best:
            best = d
    return best


def frame_social_features(frame_aggs: dict[int, FrameAggregates], focal: int,
                          prev_aggs: dict[int, FrameAggregates] | None,
                          fps: int = FPS,
                          neighbor_radius: float = NEIGHBOR_RADIUS) -> np.ndarray:
    """min_pair_dist, mean_pair_dist, approach_speed, neighbors_within_r,
    nn_bbox_iou for the focal bird; all NaN when no other bird is present."""
    out = np.full(5, np.nan)
    me = frame_aggs.get(focal)
    if me is None:
        return out
    dists: list[tuple[float, int]] = []
    for tid in sorted(frame_aggs):
        if tid == focal:
            continue
        other = frame_aggs[tid]
        dists.append((math.hypot(*centroid_delta(me, other)), tid))
    if not dists:
        return out
    ds = [d for d, _ in dists]
    out[0] = min(ds)
    out[1] = sum(ds) / len(ds)
    out[3] = float(sum(d <= neighbor_radius for d in ds))
    nn_tid = min(dists)[1]  # ties break to the smallest track id
    out[4] = bbox_iou(me.bbox, frame_aggs[nn_tid].bbox)
    if prev_aggs is not None:
        prev_min = _min_pair_dist(prev_aggs, focal)
        if prev_min is not None:
            out[2] = -(out[0] - prev_min) * fps  # positive when closing
    return out


# --- window summary -----------------------------------------------------------

def _nine_stats(values: np.ndarray) -> np.ndarray:
    """mean, sd, skew, excess kurtosis, min, p25, median, p75, max.

    Moment statistics are population-style (ddof 0); a (numerically) constant
    series gets skew = kurt = 0 by convention. Percentiles interpolate
    linearly between order statistics with inclusive endpoints.
    """
    mean = float(np.mean(values))
    centered = values - mean
    m2 = float(np.mean(centered ** 2))
    sd = math.sqrt(m2)
    if sd <= 1e-12 * max(1.0, abs(mean)):
        skew = kurt = 0.0
    else:
        m3 = float(np.mean(centered ** 3))
        m4 = float(np.mean(centered ** 4))
        skew = m3 / m2 ** 1.5
        kurt = m4 / (m2 * m2) - 3.0
    q25, q50, q75 = np.percentile(values, [25, 50, 75])
    return np.array([mean, sd, skew, kurt,
                     float(values.min()), float(q25), float(q50), float(q75),
                     float(values.max())])


def summarize_window(series: np.ndarray, min_valid: int = MIN_VALID_FRAMES
                     ) -> tuple[np.ndarray, bool]:
    """Summarize a (frames, 19) per-frame series into the 171-vector.

    Statistics run over the finite frames of each feature; a feature with
    fewer than ``min_valid`` finite frames leaves its 9-slot block NaN and
    flags the window low-coverage.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim != 2 or series.shape[1] != N_FEATURES:
        raise ValidationError(f"expected (frames, {N_FEATURES}) series, got {series.shape}")
    vec = np.full(VECTOR_DIM, np.nan)
    flagged = False
    for j in range(N_FEATURES):
        col = series[:, j]
        valid = col[np.isfinite(col)]
        if valid.size < min_valid:
            flagged = True
            continue
        vec[j * 9:(j + 1) * 9] = _nine_stats(valid)
    return vec, flagged


def compute_window_features(groups: TrackGroups, labels: Sequence[LabelWindow], *,
                            fps: int = FPS,
                            neighbor_radius: float = NEIGHBOR_RADIUS,
                            min_valid: int = MIN_VALID_FRAMES
                            ) -> tuple[list[WindowKey], np.ndarray, np.ndarray]:
    """Feature vectors for every label window, joining tracks on bird id.

    Track ids must already be canonical bird ids (post correction). Returns
    (keys, (n, 171) matrix, low-coverage flags) in canonical window order.
    """
    # per video: frame -> {track_id -> aggregates}, and per track frame series
    by_video_frames: dict[str, dict[int, dict[int, FrameAggregates]]] = {}
    by_video_series: dict[str, dict[int, dict[int, FrameAggregates]]] = {}
    needed = {w.video_id for w in labels}
    for (video_id, track_id), records in groups.items():
        if video_id not in needed:
            continue
        frames = by_video_frames.setdefault(video_id, {})
        series = by_video_series.setdefault(video_id, {}).setdefault(track_id, {})
        for rec in records:
            agg = mask_aggregates(rec)
            if agg is None:
                continue
            frames.setdefault(rec.frame, {})[track_id] = agg
            series[rec.frame] = agg

    keys: list[WindowKey] = []
    rows: list[np.ndarray] = []
    flags: list[bool] = []
    for w in sorted(labels, key=lambda w: (w.video_id, w.bird_id, w.start_frame)):
        frames = by_video_frames.get(w.video_id, {})
        series = by_video_series.get(w.video_id, {}).get(w.bird_id, {})
        mat = np.full((w.end_frame - w.start_frame, N_FEATURES), np.nan)
        for i, f in enumerate(range(w.start_frame, w.end_frame)):
            agg = series.get(f)
            if agg is not None:
                mat[i, _SPATIAL] = agg.spatial
            mat[i, _TEMPORAL] = frame_temporal_features(series, f, fps)
            mat[i, _SOCIAL] = frame_social_features(
                frames.get(f, {}), w.bird_id, frames.get(f - 1), fps, neighbor_radius)
        vec, flagged = summarize_window(mat, min_valid)
        keys.append(w.key)
        rows.append(vec)
        flags.append(flagged)
    matrix = np.vstack(rows) if rows else np.empty((0, VECTOR_DIM))
    return keys, matrix, np.array(flags, dtype=bool)


# --- standardization ------------------------------------------------------------

class FeatureScaler:
    """Median imputation + per-dimension z-scoring, fitted on training folds only.

    Zero-variance dimensions pass through unscaled; NaNs are imputed with the
    training median before centering.
    """

    def __init__(self) -> None:
        self.median_: np.ndarray | None = None
        self.mean_: np.ndarray | None = None
        self.sd_: np.ndarray | None = None

    def fit(self, train: np.ndarray) -> "FeatureScaler":
        train = np.asarray(train, dtype=float)
        with np.errstate(all="ignore"):
            med = np.nanmedian(train, axis=0)
        med = np.where(np.isfinite(med), med, 0.0)
        filled = np.where(np.isfinite(train), train, med)
        self.median_ = med
        self.mean_ = filled.mean(axis=0)
        self.sd_ = filled.std(axis=0)
        return self

    def transform(self, x: np.ndarray) -> np.ndarray:
        if self.mean_ is None:
            raise ValidationError("scaler not fitted")
        x = np.asarray(x, dtype=float)
        filled = np.where(np.isfinite(x), x, self.median_)
        scaled = np.where(self.sd_ > 0, (filled - self.mean_) / np.where(self.sd_ > 0, self.sd_, 1.0),
                          filled)
        return scaled

    def fit_transform(self, train: np.ndarray) -> np.ndarray:
        return self.fit(train).transform(train)
