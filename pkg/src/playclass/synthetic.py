"""Deterministic synthetic fixtures: scripted bird kinematics at full video scale.

Each 125-frame window of each bird runs one of three movement regimes that
mirror the class structure of the real task:

* other      — stationary jitter around an anchor
* object     — a straight run at constant speed ("Object running")
* locomotor  — fast erratic movement with frequent direction changes and a
               pulsing body size ("Frolicking")

Masks are filled discs encoded straight to column-major RLE (one run per
column), so generating a 15-minute video is cheap. Everything derives from
the seed.
"""
from __future__ import annotations

import math

import numpy as np

from .dataset_io import (BEHAVIOUR_CATEGORY, BirdInfo, DatasetManifest, LabelWindow,
                         TrackedMask, VideoInfo, WINDOW_FRAMES)

FRAME_SHAPE = (576, 704)  # H, W
REGIME_BEHAVIOUR = {
    "other": "none",
    "object": "Object running",
    "locomotor": "Frolicking",
}


def disc_record(video_id: str, frame: int, track_id: int, cx: int, cy: int,
                radius: int, shape=FRAME_SHAPE, confidence: float = 0.95) -> TrackedMask:
    """A filled-disc mask encoded directly to RLE runs (one run per column)."""
    h, w = shape
    counts = []
    pos = 0
    x0 = y0 = None
    x1 = y1 = -1
    for x in range(max(0, cx - radius), min(w, cx + radius + 1)):
        k = int(math.isqrt(radius * radius - (x - cx) * (x - cx)))
        top = max(0, cy - k)
        bot = min(h - 1, cy + k)
        if bot < top:
            continue
        start = x * h + top
        counts.append(start - pos)
        counts.append(bot - top + 1)
        pos = start + (bot - top + 1)
        if x0 is None:
            x0 = x
        x1 = x
        y0 = top if y0 is None else min(y0, top)
        y1 = max(y1, bot)
    counts.append(h * w - pos)
    bbox = (x0, y0, x1 - x0 + 1, y1 - y0 + 1)
    return TrackedMask(video_id, frame, track_id, bbox, shape, counts, confidence)


def _clip_pos(x: float, y: float, margin: float, shape=FRAME_SHAPE) -> tuple[float, float]:
    h, w = shape
    return min(max(x, margin), w - 1 - margin), min(max(y, margin), h - 1 - margin)


def generate_video(video_id: str, cage_id: int, *, day: int = 28, n_windows: int = 180,
                   n_birds: int = 3, seed: int = 0, radius: int = 10,
                   class_probs=(0.6, 0.25, 0.15), shape=FRAME_SHAPE
                   ) -> tuple[list[TrackedMask], list[LabelWindow], VideoInfo]:
    """One scripted video: per-bird per-window regimes, discs at 25 fps."""
    rng = np.random.default_rng([seed, cage_id, day])
    h, w = shape
    margin = radius + 6
    frame_count = n_windows * WINDOW_FRAMES
    anchors = [((i + 1) * w / (n_birds + 1), h / 2.0) for i in range(n_birds)]

    records: list[TrackedMask] = []
    labels: list[LabelWindow] = []
    for b in range(n_birds):
        bird_id = cage_id * 10 + b + 1
        x, y = anchors[b]
        vx = vy = 0.0
        r = radius
        for win in range(n_windows):
            regime = ("other", "object", "locomotor")[rng.choice(3, p=class_probs)]
            start = win * WINDOW_FRAMES
            behaviour = REGIME_BEHAVIOUR[regime]
            labels.append(LabelWindow(video_id, bird_id, start, start + WINDOW_FRAMES,
                                      behaviour, BEHAVIOUR_CATEGORY[behaviour]))
            if regime == "object":
                theta = rng.uniform(0, 2 * math.pi)
                speed = rng.uniform(6.0, 9.0)
                vx, vy = speed * math.cos(theta), speed * math.sin(theta)
            for f in range(start, start + WINDOW_FRAMES):
                if regime == "other":
                    ax, ay = anchors[b]
                    x += rng.normal(0.0, 0.15) + 0.02 * (ax - x)
                    y += rng.normal(0.0, 0.15) + 0.02 * (ay - y)
                    r = radius
                elif regime == "object":
                    x += vx
                    y += vy
                    if not margin <= x <= w - 1 - margin:
                        vx = -vx
                    if not margin <= y <= h - 1 - margin:
                        vy = -vy
                    r = radius
                else:
                    if f == start or f % 6 == 0:
                        theta = rng.uniform(0, 2 * math.pi)
                        speed = rng.uniform(8.0, 13.0)
                        vx, vy = speed * math.cos(theta), speed * math.sin(theta)
                    x += vx
                    y += vy
                    if not margin <= x <= w - 1 - margin:
                        vx = -vx
                    if not margin <= y <= h - 1 - margin:
                        vy = -vy
                    if f % 5 == 0:
                        r = radius + int(rng.integers(-2, 3))
                x, y = _clip_pos(x, y, margin, shape)
                records.append(disc_record(video_id, f, bird_id, int(round(x)),
                                           int(round(y)), r, shape))
    video = VideoInfo(video_id, 25, frame_count, cage_id, day)
    return records, labels, video


def generate_dataset(*, n_cages: int = 5, videos_per_cage: int = 1, n_windows: int = 60,
                     n_birds: int = 3, seed: int = 0, radius: int = 10
                     ) -> tuple[list[TrackedMask], list[LabelWindow], DatasetManifest]:
    """A leave-one-cage-out-ready dataset: one cage per fold, scripted videos."""
    all_records: list[TrackedMask] = []
    all_labels: list[LabelWindow] = []
    videos: list[VideoInfo] = []
    birds: set[tuple[int, int]] = set()
    for cage in range(1, n_cages + 1):
        for v in range(videos_per_cage):
            day = 28 + (v % 2)
            vid = f"vid_c{cage}_d{day}_{v}"
            records, labels, info = generate_video(
                vid, cage, day=day, n_windows=n_windows, n_birds=n_birds,
                seed=seed + v, radius=radius)
            all_records.extend(records)
            all_labels.extend(labels)
            videos.append(info)
            birds.update((w.bird_id, cage) for w in labels)
    manifest = DatasetManifest(videos, [BirdInfo(b, c) for b, c in sorted(birds)])
    return all_records, all_labels, manifest


def detections_from_tracks(records: list[TrackedMask], *, jitter: float = 0.0,
                           seed: int = 0) -> list[tuple[str, int, tuple[int, int, int, int], float]]:
    """Detection rows (video_id, frame, bbox, conf) derived from track bboxes."""
    rng = np.random.default_rng(seed)
    out = []
    for r in sorted(records, key=lambda r: (r.video_id, r.frame, r.track_id)):
        x, y, bw, bh = r.bbox
        if jitter:
            x += int(rng.integers(-jitter, jitter + 1))
            y += int(rng.integers(-jitter, jitter + 1))
        out.append((r.video_id, r.frame, (x, y, bw, bh), r.confidence))
    return out


def write_detections(rows, path) -> None:
    from .dataset_io import write_atomic

    lines = []
    for vid, frame, (x, y, w, h), conf in rows:
        lines.append(f"{vid}\t{frame}\t{x} {y} {w} {h}\t{repr(float(conf))}")
    write_atomic(path, "\n".join(lines) + "\n")
