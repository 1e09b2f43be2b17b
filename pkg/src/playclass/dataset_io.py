"""On-disk formats and domain records.

Formats (all plain text or raw little-endian binary, no container deps):

* tracks:      one mask per line,
               ``video_id<TAB>frame<TAB>track_id<TAB>x y w h<TAB>conf<TAB>H W<TAB>counts``
               with comma-separated column-major RLE counts (zero run first).
* labels:      CSV ``video_id,bird_id,start_frame,end_frame,behaviour``.
* embeddings:  a bundle directory with ``index.tsv`` (window key, byte offset,
               F_w, D), ``tokens.bin`` (raw little-endian float32, row-major)
               and ``meta.json`` (backbone_id, k_in).
* manifest:    a directory with ``videos.csv`` and ``birds.csv``.
* features:    CSV ``window_key,f01_mean,...,f19_max,flag_low_coverage``.
* corrections: JSON, see ``load_corrections``.

Loaders are pure functions returning immutable-by-convention records in a
canonical order, so shuffled input files load to identical datasets and
write-then-load round-trips are byte-identical.
"""
from __future__ import annotations

import json
import math
import os
import re
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rle

FPS = 25
WINDOW_FRAMES = 125  # 5 s at 25 fps

_ID_RE = re.compile(r"^[A-Za-z0-9_.\-]+$")


class FormatError(ValueError):
    """Malformed on-disk data (parse-level)."""


class ValidationError(ValueError):
    """Well-formed data violating a record invariant."""


# --- behaviour scheme ------------------------------------------------------

CATEGORIES = ("other", "object", "locomotor")  # class order everywhere
SOCIAL = "social"

BEHAVIOUR_CATEGORY = {
    "none": "other",
    "Frolicking": "locomotor",
    "Wing flapping": "locomotor",
    "Running": "locomotor",
    "Spinning": "locomotor",
    "Spinning while wing flapping": "locomotor",
    "Worm pecking": "object",
    "Object running": "object",
    "Worm running": "object",
    "Object/worm chasing": "object",
    "Object/worm exchange": "object",
    "Sparring jumping, no contact": SOCIAL,
    "Sparring jumping, with contact": SOCIAL,
    "Sparring stand-off, no contact": SOCIAL,
    "Sparring stand-off, with contact": SOCIAL,
}

FINE_BEHAVIOURS = tuple(k for k in BEHAVIOUR_CATEGORY if k != "none")


# --- records ----------------------------------------------------------------

@dataclass(frozen=True)
class WindowKey:
    video_id: str
    bird_id: int
    start_frame: int

    def __str__(self) -> str:
        return f"{self.video_id}:{self.bird_id}:{self.start_frame}"

    @classmethod
    def parse(cls, s: str) -> "WindowKey":
        try:
            video_id, bird_id, start = s.split(":")
            return cls(video_id, int(bird_id), int(start))
        except ValueError as e:
            raise FormatError(f"bad window key {s!r}") from e


@dataclass
class TrackedMask:
    video_id: str
    frame: int
    track_id: int
    bbox: tuple[int, int, int, int]  # x, y, w, h in frame pixels
    shape: tuple[int, int]           # raster H, W
    counts: list[int]
    confidence: float

    def cells(self) -> tuple[np.ndarray, np.ndarray]:
        return rle.foreground_cells(self.counts, self.shape)

    def crop(self) -> tuple[np.ndarray, tuple[int, int]]:
        return rle.decode_crop(self.counts, self.shape)

    def decode(self) -> np.ndarray:
        return rle.decode_mask(self.counts, self.shape)

    @property
    def area(self) -> int:
        return rle.area(self.counts)


@dataclass(frozen=True)
class LabelWindow:
    video_id: str
    bird_id: int
    start_frame: int
    end_frame: int
    behaviour: str
    category: str

    @property
    def key(self) -> WindowKey:
        return WindowKey(self.video_id, self.bird_id, self.start_frame)

    @property
    def excluded_from_training(self) -> bool:
        # social play is kept on disk and in memory but never trains/evaluates
        return self.category == SOCIAL


@dataclass
class EmbeddingSequence:
    key: WindowKey
    tokens: np.ndarray  # (F_w, D) float32
    backbone_id: str
    k_in: int


@dataclass(frozen=True)
class VideoInfo:
    video_id: str
    fps: int
    frame_count: int
    cage_id: int
    day: int


@dataclass(frozen=True)
class BirdInfo:
    bird_id: int
    cage_id: int


@dataclass
class DatasetManifest:
    videos: list[VideoInfo]
    birds: list[BirdInfo]

    def cage_of_video(self, video_id: str) -> int:
        return self._video_cages[video_id]

    @property
    def _video_cages(self) -> dict[str, int]:
        return {v.video_id: v.cage_id for v in self.videos}

    @property
    def cages(self) -> list[int]:
        return sorted({v.cage_id for v in self.videos})

    def frame_count(self, video_id: str) -> int:
        for v in self.videos:
            if v.video_id == video_id:
                return v.frame_count
        raise KeyError(video_id)

    def validate_for_loco(self) -> None:
        cages = self.cages
        if len(cages) != 5:
            raise ValidationError(f"leave-one-cage-out needs exactly 5 cages, found {cages}")


@dataclass
class Correction:
    boundary_frame: int
    edits: dict[int, int]            # current track id -> new id
    anomalies: dict[int, str] = field(default_factory=dict)  # track id -> lost|merged|spurious


ANOMALY_KINDS = ("lost", "merged", "spurious")


# --- small io helpers -------------------------------------------------------

def write_atomic(path: str | Path, data: str | bytes) -> None:
    """Write via temp file + rename so concurrent readers never see partials."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    mode = "wb" if isinstance(data, bytes) else "w"
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, mode) as f:
            f.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _check_id(s: str, what: str, where: str) -> str:
    if not _ID_RE.match(s):
        raise FormatError(f"{where}: {what} {s!r} must match [A-Za-z0-9_.-]+")
    return s


def _fmt_float(x: float) -> str:
    return repr(float(x))


# --- tracks -----------------------------------------------------------------

def parse_track_line(line: str, where: str) -> TrackedMask:
    parts = line.rstrip("\n").split("\t")
    if len(parts) != 7:
        raise FormatError(f"{where}: expected 7 tab-separated fields, got {len(parts)}")
    vid, frame_s, tid_s, bbox_s, conf_s, shape_s, counts_s = parts
    _check_id(vid, "video_id", where)
    try:
        frame = int(frame_s)
        track_id = int(tid_s)
        x, y, w, h = (int(v) for v in bbox_s.split())
        conf = float(conf_s)
        rh, rw = (int(v) for v in shape_s.split())
        counts = [int(v) for v in counts_s.split(",")] if counts_s else []
    except ValueError as e:
        raise FormatError(f"{where}: {e}") from e
    return TrackedMask(vid, frame, track_id, (x, y, w, h), (rh, rw), counts, conf)


def validate_mask(rec: TrackedMask, where: str, frame_count: int | None = None) -> None:
    if rec.frame < 0:
        raise ValidationError(f"{where}: negative frame {rec.frame}")
    if frame_count is not None and rec.frame >= frame_count:
        raise ValidationError(f"{where}: frame {rec.frame} >= video frame count {frame_count}")
    if not 0.0 <= rec.confidence <= 1.0:
        raise ValidationError(f"{where}: confidence {rec.confidence} outside [0, 1]")
    try:
        tight = rle.tight_bbox(rec.counts, rec.shape)
    except rle.RleError as e:
        raise ValidationError(f"{where}: {e}") from e
    if tight is None:
        raise ValidationError(f"{where}: empty mask")
    if tuple(tight) != tuple(rec.bbox):
        raise ValidationError(f"{where}: bbox {rec.bbox} != tight box {tight} of the decoded mask")


TrackGroups = dict[tuple[str, int], list[TrackedMask]]


def load_tracks(path: str | Path, manifest: DatasetManifest | None = None) -> TrackGroups:
    """Load and validate a tracks file, grouped by (video_id, track_id).

    Groups and records come back in canonical (video_id, track_id, frame)
    order regardless of file order; duplicate (video, track, frame) triples
    are rejected.
    """
    records: list[TrackedMask] = []
    with open(path, encoding="utf-8") as f:
        for i, line in enumerate(f, start=1):
            if not line.strip():
                continue
            where = f"{path}:{i}"
            rec = parse_track_line(line, where)
            fc = None
            if manifest is not None:
                try:
                    fc = manifest.frame_count(rec.video_id)
                except KeyError:
                    raise ValidationError(f"{where}: video {rec.video_id!r} not in manifest")
            validate_mask(rec, where, fc)
            records.append(rec)
    records.sort(key=lambda r: (r.video_id, r.track_id, r.frame))
    groups: TrackGroups = {}
    prev = None
    for rec in records:
        key3 = (rec.video_id, rec.track_id, rec.frame)
        if key3 == prev:
            raise ValidationError(f"duplicate record for video={rec.video_id} "
                                  f"track={rec.track_id} frame={rec.frame}")
        prev = key3
        groups.setdefault((rec.video_id, rec.track_id), []).append(rec)
    return groups


def iter_tracks(groups: TrackGroups):
    for key in sorted(groups):
        yield from groups[key]


def format_track_line(rec: TrackedMask) -> str:
    x, y, w, h = rec.bbox
    rh, rw = rec.shape
    return "\t".join([
        rec.video_id,
        str(rec.frame),
        str(rec.track_id),
        f"{x} {y} {w} {h}",
        _fmt_float(rec.confidence),
        f"{rh} {rw}",
        ",".join(str(c) for c in rec.counts),
    ])


def write_tracks(records, path: str | Path) -> None:
    if isinstance(records, dict):
        records = list(iter_tracks(records))
    records = sorted(records, key=lambda r: (r.video_id, r.track_id, r.frame))
    write_atomic(path, "".join(format_track_line(r) + "\n" for r in records))


# --- labels -----------------------------------------------------------------

LABELS_HEADER = ["video_id", "bird_id", "start_frame", "end_frame", "behaviour"]


def load_labels(path: str | Path) -> list[LabelWindow]:
    import csv

    out: list[LabelWindow] = []
    with open(path, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != LABELS_HEADER:
            raise FormatError(f"{path}: expected header {','.join(LABELS_HEADER)}")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{path}:{i}"
            if len(row) != 5:
                raise FormatError(f"{where}: expected 5 columns, got {len(row)}")
            vid, bird_s, start_s, end_s, behaviour = row
            _check_id(vid, "video_id", where)
            try:
                bird, start, end = int(bird_s), int(start_s), int(end_s)
            except ValueError as e:
                raise FormatError(f"{where}: {e}") from e
            if behaviour not in BEHAVIOUR_CATEGORY:
                legal = ", ".join(sorted(FINE_BEHAVIOURS)) + ', "none"'
                raise ValidationError(f"{where}: unknown behaviour {behaviour!r}; legal names: {legal}")
            if end - start != WINDOW_FRAMES:
                raise ValidationError(f"{where}: window must span {WINDOW_FRAMES} frames, got {end - start}")
            if start % WINDOW_FRAMES != 0:
                raise ValidationError(f"{where}: start {start} not aligned to {WINDOW_FRAMES}-frame boundary")
            out.append(LabelWindow(vid, bird, start, end, behaviour, BEHAVIOUR_CATEGORY[behaviour]))
    out.sort(key=lambda w: (w.video_id, w.bird_id, w.start_frame))
    for a, b in zip(out, out[1:]):
        if (a.video_id, a.bird_id) == (b.video_id, b.bird_id) and b.start_frame < a.end_frame:
            raise ValidationError(f"{path}: overlapping windows for bird {a.bird_id} "
                                  f"in {a.video_id} at frame {b.start_frame}")
    return out


def write_labels(windows, path: str | Path) -> None:
    import csv
    import io

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LABELS_HEADER)
    for w in sorted(windows, key=lambda w: (w.video_id, w.bird_id, w.start_frame)):
        writer.writerow([w.video_id, w.bird_id, w.start_frame, w.end_frame, w.behaviour])
    write_atomic(path, buf.getvalue())


def category_histogram(windows) -> dict[str, int]:
    hist: dict[str, int] = {}
    for w in windows:
        hist[w.category] = hist.get(w.category, 0) + 1
    return hist


# --- embeddings -------------------------------------------------------------

def load_embeddings(path: str | Path) -> list[EmbeddingSequence]:
    """Load an embeddings bundle directory (index.tsv + tokens.bin + meta.json)."""
    path = Path(path)
    meta = json.loads((path / "meta.json").read_text())
    backbone_id = meta["backbone_id"]
    k_in = int(meta["k_in"])
    payload = (path / "tokens.bin").read_bytes()
    out: list[EmbeddingSequence] = []
    d_seen: int | None = None
    with open(path / "index.tsv", encoding="utf-8") as f:
        header = f.readline().rstrip("\n").split("\t")
        if header != ["video_id", "bird_id", "start_frame", "offset", "f_w", "d"]:
            raise FormatError(f"{path}/index.tsv: bad header")
        for i, line in enumerate(f, start=2):
            if not line.strip():
                continue
            where = f"{path}/index.tsv:{i}"
            try:
                vid, bird_s, start_s, off_s, fw_s, d_s = line.rstrip("\n").split("\t")
                bird, start = int(bird_s), int(start_s)
                offset, f_w, d = int(off_s), int(fw_s), int(d_s)
            except ValueError as e:
                raise FormatError(f"{where}: {e}") from e
            if f_w < 1 or d < 1:
                raise ValidationError(f"{where}: F_w and D must be >= 1")
            if d_seen is None:
                d_seen = d
            elif d != d_seen:
                raise ValidationError(f"{where}: D={d} differs from D={d_seen} earlier in the bundle")
            nbytes = f_w * d * 4
            if offset < 0 or offset + nbytes > len(payload):
                raise FormatError(f"{path}/tokens.bin: record at byte {offset} needs {nbytes} bytes "
                                  f"but payload ends at {len(payload)}")
            tokens = np.frombuffer(payload, dtype="<f4", count=f_w * d, offset=offset)
            tokens = tokens.reshape(f_w, d).copy()
            key = WindowKey(vid, bird, start)
            if not np.all(np.isfinite(tokens)):
                raise ValidationError(f"non-finite token value in window {key}")
            out.append(EmbeddingSequence(key, tokens, backbone_id, k_in))
    out.sort(key=lambda e: (e.key.video_id, e.key.bird_id, e.key.start_frame))
    return out


def write_embeddings(sequences, path: str | Path, backbone_id: str, k_in: int) -> None:
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    sequences = sorted(sequences, key=lambda e: (e.key.video_id, e.key.bird_id, e.key.start_frame))
    blobs = []
    lines = ["\t".join(["video_id", "bird_id", "start_frame", "offset", "f_w", "d"])]
    offset = 0
    for seq in sequences:
        tokens = np.ascontiguousarray(seq.tokens, dtype="<f4")
        f_w, d = tokens.shape
        lines.append("\t".join([seq.key.video_id, str(seq.key.bird_id), str(seq.key.start_frame),
                                str(offset), str(f_w), str(d)]))
        blobs.append(tokens.tobytes())
        offset += len(blobs[-1])
    write_atomic(path / "tokens.bin", b"".join(blobs))
    write_atomic(path / "index.tsv", "\n".join(lines) + "\n")
    write_atomic(path / "meta.json", dump_json({"backbone_id": backbone_id, "k_in": k_in}))


def match_windows(embeddings: list[EmbeddingSequence], labels: list[LabelWindow]):
    """Join embeddings against labels; returns (pairs, orphan_keys).

    Orphans (embeddings with no label) are reported, not fatal.
    """
    by_key = {w.key: w for w in labels}
    pairs, orphans = [], []
    for seq in embeddings:
        w = by_key.get(seq.key)
        if w is None:
            orphans.append(seq.key)
        else:
            pairs.append((seq, w))
    return pairs, orphans


# --- manifest ----------------------------------------------------------------

def load_manifest(path: str | Path) -> DatasetManifest:
    import csv

    path = Path(path)
    videos: list[VideoInfo] = []
    birds: list[BirdInfo] = []
    vfile, bfile = path / "videos.csv", path / "birds.csv"
    with open(vfile, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["video_id", "fps", "frame_count", "cage_id", "day"]:
            raise FormatError(f"{vfile}: bad header")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            where = f"{vfile}:{i}"
            try:
                vid, fps, fc, cage, day = row[0], int(row[1]), int(row[2]), int(row[3]), int(row[4])
            except (ValueError, IndexError) as e:
                raise FormatError(f"{where}: {e}") from e
            _check_id(vid, "video_id", where)
            if cage < 1:
                raise ValidationError(f"{where}: cage_id must be >= 1")
            videos.append(VideoInfo(vid, fps, fc, cage, day))
    with open(bfile, newline="", encoding="utf-8") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if header != ["bird_id", "cage_id"]:
            raise FormatError(f"{bfile}: bad header")
        for i, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                birds.append(BirdInfo(int(row[0]), int(row[1])))
            except (ValueError, IndexError) as e:
                raise FormatError(f"{bfile}:{i}: {e}") from e
    seen = set()
    for v in videos:
        if v.video_id in seen:
            raise ValidationError(f"{vfile}: duplicate video_id {v.video_id!r}")
        seen.add(v.video_id)
    videos.sort(key=lambda v: v.video_id)
    birds.sort(key=lambda b: b.bird_id)
    return DatasetManifest(videos, birds)


def write_manifest(manifest: DatasetManifest, path: str | Path) -> None:
    import csv
    import io

    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["video_id", "fps", "frame_count", "cage_id", "day"])
    for v in sorted(manifest.videos, key=lambda v: v.video_id):
        w.writerow([v.video_id, v.fps, v.frame_count, v.cage_id, v.day])
    write_atomic(path / "videos.csv", buf.getvalue())
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["bird_id", "cage_id"])
    for b in sorted(manifest.birds, key=lambda b: b.bird_id):
        w.writerow([b.bird_id, b.cage_id])
    write_atomic(path / "birds.csv", buf.getvalue())


# --- window features ---------------------------------------------------------

FEATURE_NAMES = (
    "area", "perimeter", "circularity", "solidity", "eccentricity",
    "major_axis", "minor_axis", "extent", "orientation",
    "speed", "accel", "turning_angle", "orientation_rate", "area_rate",
    "min_pair_dist", "mean_pair_dist", "approach_speed", "neighbors_within_r", "nn_bbox_iou",
)
STAT_NAMES = ("mean", "sd", "skew", "kurt", "min", "p25", "median", "p75", "max")
N_FEATURES = len(FEATURE_NAMES)   # 19
N_STATS = len(STAT_NAMES)         # 9
VECTOR_DIM = N_FEATURES * N_STATS  # 171

FEATURE_COLUMNS = tuple(
    f"f{fi + 1:02d}_{stat}" for fi in range(N_FEATURES) for stat in STAT_NAMES
)


def write_features(keys, matrix: np.ndarray, flags, path: str | Path) -> None:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.shape[1] != VECTOR_DIM:
        raise ValidationError(f"feature matrix must have {VECTOR_DIM} columns")
    order = sorted(range(len(keys)), key=lambda i: (keys[i].video_id, keys[i].bird_id, keys[i].start_frame))
    lines = ["window_key," + ",".join(FEATURE_COLUMNS) + ",flag_low_coverage"]
    for i in order:
        vals = ",".join(_fmt_float(v) for v in matrix[i])
        lines.append(f"{keys[i]},{vals},{int(flags[i])}")
    write_atomic(path, "\n".join(lines) + "\n")


def load_features(path: str | Path):
    keys: list[WindowKey] = []
    rows: list[np.ndarray] = []
    flags: list[bool] = []
    with open(path, encoding="utf-8") as f:
        header = f.readline().rstrip("\n")
        expected = "window_key," + ",".join(FEATURE_COLUMNS) + ",flag_low_coverage"
        if header != expected:
            raise FormatError(f"{path}: unexpected header")
        for i, line in enumerate(f, start=2):
            if not line.strip():
                continue
            parts = line.rstrip("\n").split(",")
            if len(parts) != VECTOR_DIM + 2:
                raise FormatError(f"{path}:{i}: expected {VECTOR_DIM + 2} columns, got {len(parts)}")
            keys.append(WindowKey.parse(parts[0]))
            rows.append(np.array([float(v) for v in parts[1:-1]]))
            flags.append(bool(int(parts[-1])))
    matrix = np.vstack(rows) if rows else np.empty((0, VECTOR_DIM))
    return keys, matrix, np.array(flags, dtype=bool)


# --- corrections --------------------------------------------------------------

def load_corrections(path: str | Path) -> tuple[str, list[Correction]]:
    """Corrections JSON:

    ``{"video_id": ..., "corrections": [{"boundary_frame": int,
    "edits": [{"track_id": int, "bird_id": int}],
    "anomalies": [{"track_id": int, "kind": "lost"|"merged"|"spurious"}]}]}``
    """
    data = json.loads(Path(path).read_text())
    try:
        video_id = data["video_id"]
        items = data["corrections"]
    except (KeyError, TypeError) as e:
        raise FormatError(f"{path}: missing field {e}") from e
    out: list[Correction] = []
    for c in items:
        try:
            boundary = int(c["boundary_frame"])
            edits = {int(e["track_id"]): int(e["bird_id"]) for e in c.get("edits", [])}
            anomalies = {}
            for a in c.get("anomalies", []):
                kind = a["kind"]
                if kind not in ANOMALY_KINDS:
                    raise ValidationError(f"{path}: unknown anomaly kind {kind!r}")
                anomalies[int(a["track_id"])] = kind
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ValidationError):
                raise
            raise FormatError(f"{path}: bad correction entry: {e}") from e
        if len({e["track_id"] for e in c.get("edits", [])}) != len(c.get("edits", [])):
            raise ValidationError(f"{path}: duplicate track_id in edits at boundary {boundary}")
        out.append(Correction(boundary, edits, anomalies))
    out.sort(key=lambda c: c.boundary_frame)
    return video_id, out


def write_corrections(video_id: str, corrections: list[Correction], path: str | Path) -> None:
    payload = {
        "video_id": video_id,
        "corrections": [
            {
                "boundary_frame": c.boundary_frame,
                "edits": [{"track_id": t, "bird_id": b} for t, b in sorted(c.edits.items())],
                "anomalies": [{"track_id": t, "kind": k} for t, k in sorted(c.anomalies.items())],
            }
            for c in sorted(corrections, key=lambda c: c.boundary_frame)
        ],
    }
    write_atomic(path, dump_json(payload))
