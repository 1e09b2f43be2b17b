"""Tracking-quality metrics on sparse verified keyframes: HOTA and IDF1.

Hungarian matching is the shared core (also used for cross-chunk identity
matching). Association statistics are computed only over annotated frames,
matching evaluation against sparse keyframes rather than dense ground truth.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment

from . import rle
from .dataset_io import TrackGroups, ValidationError
from .mask_features import bbox_iou

ALPHA_GRID = tuple(k * 0.05 for k in range(1, 20))
IDF1_MATCH_THRESHOLD = 0.5

_NEG = float("-inf")


def _solve_values(cost: np.ndarray, maximize: bool) -> list[tuple[int, int]]:
    """One optimal assignment via scipy; under maximize, dummy padding lets
    rows/cols stay unassigned so negative or forbidden pairs are dropped."""
    n, m = cost.shape
    if n == 0 or m == 0:
        return []
    if not maximize:
        rows, cols = linear_sum_assignment(cost)
        return sorted(zip(rows.tolist(), cols.tolist()))
    big = -1e30
    padded = np.full((n + m, m + n), 0.0)
    padded[:n, :m] = np.where(np.isneginf(cost), big, cost)
    padded[:n, m:] = big
    padded[n:, :m] = big
    padded[np.arange(n), m + np.arange(n)] = 0.0
    padded[n + np.arange(m), np.arange(m)] = 0.0
    rows, cols = linear_sum_assignment(padded, maximize=True)
    out = [(r, c) for r, c in zip(rows.tolist(), cols.tolist())
           if r < n and c < m and not np.isneginf(cost[r, c])]
    return sorted(out)


def hungarian(cost, maximize: bool = False) -> tuple[list[tuple[int, int]], float]:
    """Optimal assignment as a partial injection, plus its total.

    Minimizing assigns min(n, m) pairs; maximizing assigns the subset of
    pairs with the largest total, treating -inf entries as forbidden. Among
    equal-total optima the lexicographically smallest pair list wins (rows
    ascending, smaller column first, assigned before unassigned). Totals are
    compared with math.fsum so grouping order cannot break tie detection.
    """
    cost = np.asarray(cost, dtype=float)
    if cost.ndim != 2:
        raise ValidationError("cost must be a 2-D matrix")
    n, m = cost.shape
    if np.isnan(cost).any() or np.isposinf(cost).any():
        raise ValidationError("cost entries must be finite (-inf allowed under maximize)")
    if not maximize and np.isneginf(cost).any():
        raise ValidationError("-inf entries are only allowed when maximizing")

    base = _solve_values(cost, maximize)
    target = math.fsum(cost[r, c] for r, c in base)
    k_target = len(base) if maximize else min(n, m)

    fixed: list[tuple[int, int]] = []
    fixed_vals: list[float] = []
    free_cols = list(range(m))
    for r in range(n):
        rest_rows = list(range(r + 1, n))
        chosen = None
        for c in free_cols:
            if maximize and np.isneginf(cost[r, c]):
                continue
            sub_cols = [cc for cc in free_cols if cc != c]
            sub = _solve_values(cost[np.ix_(rest_rows, sub_cols)], maximize)
            if len(fixed) + 1 + len(sub) != k_target:
                continue
            total = math.fsum(fixed_vals + [cost[r, c]]
                              + [cost[rest_rows[i], sub_cols[j]] for i, j in sub])
            if total == target:
                chosen = c
                break
        if chosen is not None:
            fixed.append((r, chosen))
            fixed_vals.append(float(cost[r, chosen]))
            free_cols.remove(chosen)
        else:
            # row stays unassigned; verify the target stays reachable
            sub = _solve_values(cost[np.ix_(rest_rows, free_cols)], maximize)
            total = math.fsum(fixed_vals + [cost[rest_rows[i], free_cols[j]] for i, j in sub])
            if len(fixed) + len(sub) != k_target or total != target:
                return base, target  # numerically pathological ties: keep the raw optimum
    return fixed, target


# --- similarity ---------------------------------------------------------------

@dataclass
class FrameObject:
    obj_id: int
    bbox: tuple[int, int, int, int]
    cells: tuple[np.ndarray, np.ndarray] | None  # (ys, xs) or None for box-only
    shape: tuple[int, int] | None


def similarity(a: FrameObject, b: FrameObject) -> float:
    """Mask IoU when both masks are present, else bbox IoU."""
    if a.cells is not None and b.cells is not None:
        return rle.mask_iou_from_cells(a.cells, a.shape, b.cells, b.shape)
    return bbox_iou(a.bbox, b.bbox)


def pairwise_similarity(gt: list[FrameObject], pred: list[FrameObject]) -> np.ndarray:
    sim = np.zeros((len(gt), len(pred)))
    for i, g in enumerate(gt):
        for j, p in enumerate(pred):
            sim[i, j] = similarity(g, p)
    return sim


def _frame_objects(groups: TrackGroups, video_id: str, use_masks: bool
                   ) -> dict[int, list[FrameObject]]:
    frames: dict[int, list[FrameObject]] = {}
    for (vid, tid), records in groups.items():
        if vid != video_id:
            continue
        for rec in records:
            cells = rec.cells() if use_masks else None
            shape = rec.shape if use_masks else None
            frames.setdefault(rec.frame, []).append(FrameObject(tid, rec.bbox, cells, shape))
    for objs in frames.values():
        objs.sort(key=lambda o: o.obj_id)
        ids = [o.obj_id for o in objs]
        if len(set(ids)) != len(ids):
            raise ValidationError(f"duplicate object ids in {video_id}: {ids}")
    return frames


# --- HOTA / IDF1 ---------------------------------------------------------------

@dataclass
class VideoTrackScores:
    video_id: str
    hota: float
    idf1: float
    det_a: dict[float, float]
    ass_a: dict[float, float]
    hota_alpha: dict[float, float]


@dataclass
class HotaReport:
    per_video: list[VideoTrackScores]
    hota_mean: float
    hota_sd: float
    idf1_mean: float
    idf1_sd: float
    similarity_used: str
    method: str = "tracks"
    warnings: list[str] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "similarity": self.similarity_used,
            "hota": {"mean": self.hota_mean, "sd": self.hota_sd},
            "idf1": {"mean": self.idf1_mean, "sd": self.idf1_sd},
            "per_video": [
                {
                    "video_id": v.video_id,
                    "hota": v.hota,
                    "idf1": v.idf1,
                    "det_a": {f"{a:.2f}": v.det_a[a] for a in sorted(v.det_a)},
                    "ass_a": {f"{a:.2f}": v.ass_a[a] for a in sorted(v.ass_a)},
                    "hota_alpha": {f"{a:.2f}": v.hota_alpha[a] for a in sorted(v.hota_alpha)},
                }
                for v in self.per_video
            ],
            "warnings": self.warnings,
        }


def _match_frames(gt_frames, pred_frames):
    """Per annotated frame: Hungarian matching on similarity, keeping sims."""
    matches = []
    for f in sorted(gt_frames):
        gt = gt_frames[f]
        pred = pred_frames.get(f, [])
        sim = pairwise_similarity(gt, pred)
        pairs, _ = hungarian(sim, maximize=True)
        matches.append((f, gt, pred,
                        [(gt[i].obj_id, pred[j].obj_id, sim[i, j]) for i, j in pairs]))
    return matches


def hota_on_video(gt_frames, pred_frames, alphas=ALPHA_GRID):
    """DetA/AssA/HOTA per alpha plus their mean over the alpha grid.

    Matches come from a single per-frame Hungarian pass on raw similarity;
    a pair counts at level alpha when its similarity is >= alpha.
    """
    matches = _match_frames(gt_frames, pred_frames)
    n_gt: dict[int, int] = {}
    n_pred: dict[int, int] = {}
    for f in sorted(gt_frames):
        for o in gt_frames[f]:
            n_gt[o.obj_id] = n_gt.get(o.obj_id, 0) + 1
        for o in pred_frames.get(f, []):
            n_pred[o.obj_id] = n_pred.get(o.obj_id, 0) + 1
    total_gt = sum(n_gt.values())
    total_pred = sum(n_pred.values())

    det_a, ass_a, hota_a = {}, {}, {}
    for alpha in alphas:
        pair_counts: dict[tuple[int, int], int] = {}
        tp = 0
        for _, _, _, pairs in matches:
            for g, p, s in pairs:
                if s >= alpha:
                    tp += 1
                    pair_counts[(g, p)] = pair_counts.get((g, p), 0) + 1
        fn = total_gt - tp
        fp = total_pred - tp
        det = tp / (tp + fn + fp) if (tp + fn + fp) else 0.0
        if tp:
            acc = math.fsum(c * (c / (n_gt[g] + n_pred[p] - c))
                            for (g, p), c in pair_counts.items())
            ass = acc / tp
        else:
            ass = 0.0
        det_a[alpha] = det
        ass_a[alpha] = ass
        hota_a[alpha] = math.sqrt(det * ass)
    hota = math.fsum(hota_a[a] for a in alphas) / len(alphas)
    return hota, det_a, ass_a, hota_a


def idf1_on_video(gt_frames, pred_frames, threshold: float = IDF1_MATCH_THRESHOLD) -> float:
    """Identity F1 under optimal global trajectory matching.

    A gt/pred pair can co-count on a frame when their similarity is >=
    threshold; Hungarian matching on co-count totals maximizes IDTP.
    """
    gt_ids = sorted({o.obj_id for objs in gt_frames.values() for o in objs})
    pred_ids = sorted({o.obj_id for f in gt_frames for o in pred_frames.get(f, [])})
    overlap = np.zeros((len(gt_ids), len(pred_ids)))
    gi = {g: i for i, g in enumerate(gt_ids)}
    pi = {p: i for i, p in enumerate(pred_ids)}
    len_gt = 0
    len_pred = 0
    for f in sorted(gt_frames):
        gt = gt_frames[f]
        pred = pred_frames.get(f, [])
        len_gt += len(gt)
        len_pred += len(pred)
        sim = pairwise_similarity(gt, pred)
        for i, g in enumerate(gt):
            for j, p in enumerate(pred):
                if sim[i, j] >= threshold:
                    overlap[gi[g.obj_id], pi[p.obj_id]] += 1
    if len_gt + len_pred == 0:
        return 0.0
    _, idtp = hungarian(overlap, maximize=True) if overlap.size else ([], 0.0)
    return 2.0 * idtp / (len_gt + len_pred)


def evaluate_tracking(gt: TrackGroups, pred: TrackGroups, *, use_masks: bool = True,
                      alphas=ALPHA_GRID, method: str = "tracks") -> HotaReport:
    """HOTA and IDF1 per video over the gt's annotated frames, aggregated as
    unweighted mean +- sample SD across videos."""
    videos = sorted({vid for vid, _ in gt})
    scores: list[VideoTrackScores] = []
    warnings: list[str] = []
    for video_id in videos:
        gt_frames = _frame_objects({k: v for k, v in gt.items() if k[0] == video_id},
                                   video_id, use_masks)
        if not gt_frames:
            warnings.append(f"video {video_id} has no annotated frames; excluded")
            continue
        pred_frames = _frame_objects({k: v for k, v in pred.items() if k[0] == video_id},
                                     video_id, use_masks)
        hota, det_a, ass_a, hota_a = hota_on_video(gt_frames, pred_frames, alphas)
        idf1 = idf1_on_video(gt_frames, pred_frames)
        scores.append(VideoTrackScores(video_id, hota, idf1, det_a, ass_a, hota_a))
    if not scores:
        raise ValidationError("no video with annotated keyframes")

    def agg(vals: list[float]) -> tuple[float, float]:
        mean = math.fsum(vals) / len(vals)
        if len(vals) < 2:
            return mean, 0.0
        var = math.fsum((v - mean) ** 2 for v in vals) / (len(vals) - 1)
        return mean, math.sqrt(var)

    hota_mean, hota_sd = agg([s.hota for s in scores])
    idf1_mean, idf1_sd = agg([s.idf1 for s in scores])
    return HotaReport(scores, hota_mean, hota_sd, idf1_mean, idf1_sd,
                      "mask" if use_masks else "bbox", method, warnings)
