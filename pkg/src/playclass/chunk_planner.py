"""Chunk planning and cross-chunk identity bookkeeping for long-video tracking.

The tracker itself is external: this module picks the grounding frame and the
chunk boundaries from cheap per-frame detections, extracts interior point
prompts from final chunk masks, proposes identity matches across boundaries,
and applies human corrections back onto the tracks. Everything is file-in,
file-out so the manual review loop can interleave.
"""
from __future__ import annotations

import dataclasses
import json
import math
import shutil
from bisect import bisect_right
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import geometry
from .dataset_io import (Correction, FormatError, TrackedMask, TrackGroups,
                         ValidationError, dump_json, write_atomic, _check_id)
from .track_metrics import hungarian
from . import rle

CHUNK_LEN = 1500          # 60 s at 25 fps
BOUNDARY_DELTA = 125      # +-5 s search radius around each nominal boundary
GROUNDING_WINDOW = 125    # first 5 s
GROUNDING_D_REF = 100.0   # px at which separation stops helping the score
TAU_MATCH = 0.3           # mask IoU below which an identity transfer is flagged
EXPECTED_BIRDS = 3


@dataclass(frozen=True)
class Detection:
    bbox: tuple[int, int, int, int]
    confidence: float

    @property
    def centroid(self) -> tuple[float, float]:
        x, y, w, h = self.bbox
        return x + w / 2.0, y + h / 2.0


@dataclass
class FrameSeparationScore:
    frame: int
    min_pair_dist: float
    min_confidence: float
    n_detected: int
    score: float


@dataclass
class ChunkPlan:
    video_id: str
    grounding_frame: int
    boundaries: list[int]
    chunk_len_nominal: int = CHUNK_LEN
    prompts: list[dict] = field(default_factory=list)  # {boundary, track_id, x, y}
    boundary_warnings: list[int] = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "video_id": self.video_id,
            "grounding_frame": self.grounding_frame,
            "boundaries": self.boundaries,
            "chunk_len_nominal": self.chunk_len_nominal,
            "prompts": self.prompts,
            "boundary_warnings": self.boundary_warnings,
        }


@dataclass
class BoundaryMatch:
    boundary_frame: int
    assignment: list[tuple[int, int, float]]  # (prev_track_id, next_track_id, iou)
    flags: list[int]                          # next track ids without a trusted match


# --- detections file ----------------------------------------------------------

def load_detections(path) -> dict[str, dict[int, list[Detection]]]:
    """Detections TSV: ``video_id<TAB>frame<TAB>x y w h<TAB>conf`` per line."""
    out: dict[str, dict[int, list[Detection]]] = {}
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 4:
                raise FormatError(f"{path}:{i}: expected 4 tab-separated fields")
            vid, frame_s, bbox_s, conf_s = parts
            _check_id(vid, "video_id", f"{path}:{i}")
            try:
                frame = int(frame_s)
                x, y, w, h = (int(v) for v in bbox_s.split())
                conf = float(conf_s)
            except ValueError as e:
                raise FormatError(f"{path}:{i}: {e}") from e
            out.setdefault(vid, {}).setdefault(frame, []).append(Detection((x, y, w, h), conf))
    return out


def _min_pairwise_dist(dets: list[Detection]) -> float:
    if len(dets) < 2:
        return math.inf
    best = math.inf
    pts = [d.centroid for d in dets]
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            d = math.hypot(pts[i][0] - pts[j][0], pts[i][1] - pts[j][1])
            best = min(best, d)
    return best


# --- grounding and boundaries ---------------------------------------------------

def separation_scores(dets_by_frame: dict[int, list[Detection]],
                      frames, d_ref: float = GROUNDING_D_REF) -> list[FrameSeparationScore]:
    out = []
    for f in frames:
        dets = dets_by_frame.get(f, [])
        if not dets:
            continue
        min_dist = _min_pairwise_dist(dets)
        min_conf = min(d.confidence for d in dets)
        score = min_conf * min(min_dist / d_ref, 1.0)
        out.append(FrameSeparationScore(f, min_dist, min_conf, len(dets), score))
    return out


def score_grounding(dets_by_frame: dict[int, list[Detection]], *,
                    expected_count: int = EXPECTED_BIRDS,
                    window: int = GROUNDING_WINDOW,
                    d_ref: float = GROUNDING_D_REF) -> int:
    """Best initialisation frame among the first ``window`` frames.

    Score = min confidence x saturating separation; only frames seeing the
    full expected bird count compete (falling back to the maximal count seen);
    ties break to the earliest frame.
    """
    scores = separation_scores(dets_by_frame, range(window), d_ref)
    if not scores:
        raise ValidationError("no groundable frame: zero detections in every frame")
    full = [s for s in scores if s.n_detected == expected_count]
    if not full:
        max_count = max(s.n_detected for s in scores)
        full = [s for s in scores if s.n_detected == max_count]
    best = max(full, key=lambda s: (s.score, -s.frame))
    return best.frame


def plan_boundaries(dets_by_frame: dict[int, list[Detection]], video_id: str,
                    frame_count: int, *, chunk_len: int = CHUNK_LEN,
                    delta: int = BOUNDARY_DELTA,
                    grounding_frame: int = 0) -> ChunkPlan:
    """Boundaries near each nominal multiple of ``chunk_len``, placed at the
    in-window frame with maximal inter-bird separation.

    Frames seeing fewer than two detections cannot win; if no frame in the
    window qualifies, the boundary stays at its nominal position and the plan
    records a warning. Ties break to the frame closest to nominal, then
    earliest.
    """
    if delta * 2 >= chunk_len:
        raise ValidationError("boundary search radius must be below half the chunk length")
    boundaries: list[int] = []
    warnings: list[int] = []
    n_chunks = math.ceil(frame_count / chunk_len)
    for k in range(1, n_chunks):
        nominal = k * chunk_len
        lo = max(0, nominal - delta)
        hi = min(frame_count - 1, nominal + delta)
        best_frame, best_key = None, None
        for f in range(lo, hi + 1):
            dets = dets_by_frame.get(f, [])
            if len(dets) < 2:
                continue
            key = (-_min_pairwise_dist(dets), abs(f - nominal), f)
            if best_key is None or key < best_key:
                best_key, best_frame = key, f
        if best_frame is None:
            best_frame = nominal
            warnings.append(nominal)
        boundaries.append(best_frame)
    return ChunkPlan(video_id, grounding_frame, boundaries,
                     chunk_len_nominal=chunk_len, boundary_warnings=warnings)


# --- point prompts ---------------------------------------------------------------

def extract_point_prompts(masks: list[TrackedMask]) -> tuple[list[tuple[int, tuple[int, int]]], list[int]]:
    """Interior (pole-of-inaccessibility) point per mask, in frame coordinates.

    Returns (prompts, lost_track_ids); a track whose mask is empty at the
    boundary is reported lost instead of prompted.
    """
    prompts: list[tuple[int, tuple[int, int]]] = []
    lost: list[int] = []
    for rec in sorted(masks, key=lambda r: r.track_id):
        crop, (x0, y0) = rec.crop()
        if crop.size == 0:
            lost.append(rec.track_id)
            continue
        y, x = geometry.pole_of_inaccessibility(crop)
        prompts.append((rec.track_id, (x + x0, y + y0)))
    return prompts, lost


# --- identity matching ------------------------------------------------------------

def match_identities(prev_masks: list[TrackedMask], next_masks: list[TrackedMask],
                     boundary_frame: int, tau: float = TAU_MATCH) -> BoundaryMatch:
    """Hungarian matching of boundary masks by IoU; weak pairs are flagged.

    A next-chunk track ends up in ``flags`` when its best assignment falls
    below ``tau`` or when it has no assignment at all.
    """
    prev_masks = sorted(prev_masks, key=lambda r: r.track_id)
    next_masks = sorted(next_masks, key=lambda r: r.track_id)
    iou = np.zeros((len(prev_masks), len(next_masks)))
    prev_cells = [(r.cells(), r.shape) for r in prev_masks]
    next_cells = [(r.cells(), r.shape) for r in next_masks]
    for i, (ca, sa) in enumerate(prev_cells):
        for j, (cb, sb) in enumerate(next_cells):
            iou[i, j] = rle.mask_iou_from_cells(ca, sa, cb, sb)
    pairs, _ = hungarian(iou, maximize=True) if iou.size else ([], 0.0)
    assignment = []
    matched_next = set()
    for i, j in pairs:
        v = float(iou[i, j])
        if v >= tau:
            assignment.append((prev_masks[i].track_id, next_masks[j].track_id, v))
            matched_next.add(next_masks[j].track_id)
    flags = [r.track_id for r in next_masks if r.track_id not in matched_next]
    return BoundaryMatch(boundary_frame, assignment, flags)


# --- plan / review / corrections io -----------------------------------------------

def write_plan(plan: ChunkPlan, path) -> None:
    write_atomic(path, dump_json(plan.to_dict()))


def load_plan(path) -> ChunkPlan:
    data = json.loads(Path(path).read_text())
    try:
        return ChunkPlan(
            video_id=data["video_id"],
            grounding_frame=int(data["grounding_frame"]),
            boundaries=[int(b) for b in data["boundaries"]],
            chunk_len_nominal=int(data.get("chunk_len_nominal", CHUNK_LEN)),
            prompts=list(data.get("prompts", [])),
            boundary_warnings=[int(b) for b in data.get("boundary_warnings", [])],
        )
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: bad plan file: {e}") from e


REVIEW_MANIFEST_VERSION = 1


def export_review_bundle(video_id: str, matches: list[BoundaryMatch], out_dir,
                         crops_dir=None, tau: float = TAU_MATCH) -> Path:
    """Write ``review/manifest.json`` (+ copied crops) for the review UI.

    Crop files are looked up in ``crops_dir`` as
    ``b{boundary}_t{track}_{prev|next}.png``; a missing file marks the
    proposal ``crop_missing`` and the UI renders a placeholder.
    """
    out_dir = Path(out_dir)
    review = out_dir / "review"
    (review / "crops").mkdir(parents=True, exist_ok=True)
    crops_dir = Path(crops_dir) if crops_dir is not None else None

    def crop_entry(boundary: int, track_id, side: str):
        if track_id is None:
            return None, False
        name = f"b{boundary}_t{track_id}_{side}.png"
        if crops_dir is not None and (crops_dir / name).exists():
            shutil.copyfile(crops_dir / name, review / "crops" / name)
            return f"crops/{name}", False
        return None, True

    boundaries = []
    for m in sorted(matches, key=lambda m: m.boundary_frame):
        proposals = []
        for prev_id, next_id, iou in m.assignment:
            cp, miss_p = crop_entry(m.boundary_frame, prev_id, "prev")
            cn, miss_n = crop_entry(m.boundary_frame, next_id, "next")
            proposals.append({
                "prev_track_id": prev_id,
                "next_track_id": next_id,
                "iou": iou,
                "flag": False,
                "crop_prev": cp,
                "crop_next": cn,
                "crop_missing": miss_p or miss_n,
            })
        for next_id in m.flags:
            cn, miss_n = crop_entry(m.boundary_frame, next_id, "next")
            proposals.append({
                "prev_track_id": None,
                "next_track_id": next_id,
                "iou": 0.0,
                "flag": True,
                "crop_prev": None,
                "crop_next": cn,
                "crop_missing": miss_n,
            })
        proposals.sort(key=lambda p: p["next_track_id"])
        boundaries.append({"boundary_frame": m.boundary_frame, "proposals": proposals})
    manifest = {
        "version": REVIEW_MANIFEST_VERSION,
        "video_id": video_id,
        "tau_match": tau,
        "boundaries": boundaries,
    }
    write_atomic(review / "manifest.json", dump_json(manifest))
    return review / "manifest.json"


def default_corrections(manifest: dict) -> tuple[str, list[Correction]]:
    """All-confirmed corrections for a review manifest (the no-edit round trip)."""
    try:
        video_id = manifest["video_id"]
        corrections = [Correction(int(b["boundary_frame"]), {}, {})
                       for b in manifest["boundaries"]]
    except (KeyError, TypeError) as e:
        raise FormatError(f"bad review manifest: {e}") from e
    return video_id, corrections


# --- applying corrections -----------------------------------------------------------

def apply_corrections(groups: TrackGroups, video_id: str, corrections: list[Correction],
                      plan: ChunkPlan | None = None) -> TrackGroups:
    """Relabel track ids from each corrected boundary onward.

    Edits at a boundary key on the id in effect there (earlier boundaries'
    remaps already applied) and stay in effect afterwards, so remaps compose
    across boundaries. ``spurious`` drops the track from the boundary on;
    ``merged`` is rejected (re-segmentation is out of scope); ``lost`` is a
    bookkeeping mark. Implicit merges (an edit colliding with an existing id
    present in the same interval) are rejected like explicit conflicts.
    """
    recs = [r for (vid, _), rs in groups.items() if vid == video_id for r in rs]
    others = {k: v for k, v in groups.items() if k[0] != video_id}
    corrections = sorted(corrections, key=lambda c: c.boundary_frame)
    if plan is not None:
        legal = set(plan.boundaries) | {0, plan.grounding_frame}
        for c in corrections:
            if c.boundary_frame not in legal:
                raise ValidationError(f"correction boundary {c.boundary_frame} not in plan "
                                      f"boundaries {sorted(legal)}")

    last_frame: dict[int, int] = {}
    for r in recs:
        last_frame[r.track_id] = max(last_frame.get(r.track_id, -1), r.frame)

    current: dict[int, int] = {t: t for t in last_frame}
    snapshots: list[tuple[int, dict[int, int]]] = [(-1, dict(current))]
    drop_from: dict[int, int] = {}

    for c in corrections:
        b = c.boundary_frame
        present = {current[t] for t, lf in last_frame.items()
                   if lf >= b and not (t in drop_from and drop_from[t] <= b)}
        for tid, bird in sorted(c.edits.items()):
            if tid not in present:
                raise ValidationError(f"edit at boundary {b} references track {tid}, "
                                      f"not present from that boundary on")
        seen_birds: dict[int, int] = {}
        for tid, bird in c.edits.items():
            if bird in seen_birds and seen_birds[bird] != tid:
                raise ValidationError(f"conflicting edits at boundary {b}: two tracks -> bird {bird}")
            seen_birds[bird] = tid
        for tid, kind in c.anomalies.items():
            if tid not in present:
                raise ValidationError(f"anomaly at boundary {b} references track {tid}, "
                                      f"not present from that boundary on")
            if kind == "merged":
                raise ValidationError(f"merged track {tid} at boundary {b}: splitting merged "
                                      f"masks is not supported, re-run the tracker chunk")
        # compose this boundary's partial map onto the running map
        for raw in current:
            cur = current[raw]
            if cur in c.edits:
                current[raw] = c.edits[cur]
            if cur in c.anomalies and c.anomalies[cur] == "spurious":
                drop_from[raw] = min(drop_from.get(raw, b), b)
        # implicit-merge guard: ids must stay unique among co-present tracks
        alive = [raw for raw, lf in last_frame.items()
                 if lf >= b and not (raw in drop_from and drop_from[raw] <= b)]
        ids = [current[raw] for raw in alive]
        if len(set(ids)) != len(ids):
            dup = sorted({i for i in ids if ids.count(i) > 1})
            raise ValidationError(f"corrections at boundary {b} leave duplicate ids {dup}")
        snapshots.append((b, dict(current)))

    bounds = [b for b, _ in snapshots]
    out: TrackGroups = dict(others)
    for r in recs:
        snap = snapshots[bisect_right(bounds, r.frame) - 1][1]
        raw = r.track_id
        if raw in drop_from and r.frame >= drop_from[raw]:
            continue
        new_id = snap.get(raw, raw)
        rec = dataclasses.replace(r, track_id=new_id)
        out.setdefault((video_id, new_id), []).append(rec)
    for key in out:
        out[key].sort(key=lambda r: r.frame)
    return out
