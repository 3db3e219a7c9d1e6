"""Trajectory ingestion, episode extraction, dataset files and splitting."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import kernels
from .errors import InputError, LabelingError, SchemaError, SplitError
from .features import (
    DEFAULT_FEATURES, FEATURE_HASH, FEATURE_NAMES, FEATURE_UNITS, FRAME_DT, N_FEATURES, TTLC_CAP,
    Crossing, FeatureConfig, LaneGeometry, VehicleState, label_episode, scene_from_slots,
)

log = logging.getLogger(__name__)

DATASET_VERSION = 1
NGSIM_COLUMNS = {
    "vehicle_id": "Vehicle_ID",
    "frame_id": "Frame_ID",
    "x": "Local_X",
    "y": "Local_Y",
    "v": "v_Vel",
    "lane": "Lane_ID",
}
WINDOW = int(round(TTLC_CAP / FRAME_DT))  # 40 frames


@dataclass(frozen=True, slots=True)
class TrajectoryRecord:
    vehicle_id: int
    frame_id: int
    x: float
    y: float
    v: float
    lane: int


@dataclass
class IngestReport:
    rows: int = 0
    skipped: int = 0
    duplicates: int = 0


def ingest_csv(path, column_map: Optional[dict] = None, delimiter: str = ","):
    """Read NGSIM-style rows into records sorted by (vehicle, frame).

    Returns ``(records, report)``; unparseable rows are skipped and counted.
    """
    names = dict(NGSIM_COLUMNS)
    if column_map:
        unknown = set(column_map) - set(names)
        if unknown:
            raise SchemaError(f"unknown logical columns in mapping: {sorted(unknown)}")
        names.update(column_map)
    report = IngestReport()
    seen = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh, delimiter=delimiter)
        header = next(reader, None)
        if header is None:
            raise SchemaError(f"{path}: empty file, no header")
        header = [h.strip() for h in header]
        missing = [col for col in names.values() if col not in header]
        if missing:
            raise SchemaError(f"{path}: missing column(s) {missing}")
        idx = {key: header.index(col) for key, col in names.items()}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            report.rows += 1
            try:
                rec = TrajectoryRecord(
                    int(float(row[idx["vehicle_id"]])), int(float(row[idx["frame_id"]])),
                    float(row[idx["x"]]), float(row[idx["y"]]), float(row[idx["v"]]),
                    int(float(row[idx["lane"]])),
                )
                if not all(np.isfinite((rec.x, rec.y, rec.v))):
                    raise ValueError("non-finite value")
            except (ValueError, IndexError) as exc:
                report.skipped += 1
                log.warning("%s:%d skipped (%s)", path, lineno, exc)
                continue
            key = (rec.vehicle_id, rec.frame_id)
            if key in seen:
                report.duplicates += 1
                continue
            seen[key] = rec
    if report.skipped or report.duplicates:
        log.warning("%s: %d malformed and %d duplicate rows skipped", path, report.skipped, report.duplicates)
    return [seen[k] for k in sorted(seen)], report


def write_trajectories(records, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(NGSIM_COLUMNS.values())
        for r in records:
            writer.writerow([r.vehicle_id, r.frame_id, repr(float(r.x)), repr(float(r.y)),
                             repr(float(r.v)), r.lane])


# ---------------------------------------------------------------------------
# datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Labelled frames; one row per (episode, frame)."""

    features: np.ndarray  # (n, 25)
    area: np.ndarray  # 1..5
    y_s: np.ndarray  # ft
    y_t: np.ndarray  # s
    episode: np.ndarray
    frame: np.ndarray
    vehicle: np.ndarray
    episodes: list = field(default_factory=list)  # per-episode dicts, see extract_episodes
    info: dict = field(default_factory=dict)
    normalization: Optional[dict] = None

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64).reshape(-1, N_FEATURES)
        n = self.features.shape[0]
        self.area = np.asarray(self.area, dtype=np.int64)
        self.y_s = np.asarray(self.y_s, dtype=np.float64)
        self.y_t = np.asarray(self.y_t, dtype=np.float64)
        self.episode = np.asarray(self.episode, dtype=np.int64)
        self.frame = np.asarray(self.frame, dtype=np.int64)
        self.vehicle = np.asarray(self.vehicle, dtype=np.int64)
        for name in ("area", "y_s", "y_t", "episode", "frame", "vehicle"):
            if getattr(self, name).shape != (n,):
                raise SchemaError(f"dataset column {name!r} does not have {n} rows")

    def __len__(self):
        return self.features.shape[0]

    @property
    def targets(self) -> np.ndarray:
        return np.column_stack([self.y_s, self.y_t])

    @property
    def episode_ids(self) -> np.ndarray:
        return np.unique(self.episode)

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        keep = set(np.unique(self.episode[rows]).tolist())
        return Dataset(
            self.features[rows], self.area[rows], self.y_s[rows], self.y_t[rows],
            self.episode[rows], self.frame[rows], self.vehicle[rows],
            [e for e in self.episodes if e["episode_id"] in keep], dict(self.info), self.normalization,
        )

    def composition(self) -> dict:
        areas, counts = np.unique(self.area, return_counts=True)
        return {
            "samples": len(self),
            "episodes": int(self.episode_ids.size),
            "samples_per_area": {str(int(a)): int(c) for a, c in zip(areas, counts)},
        }

    # -- files ---------------------------------------------------------------

    def save(self, prefix):
        """Write ``<prefix>.features.csv`` and ``<prefix>.meta.json``."""
        prefix = Path(prefix)
        prefix.parent.mkdir(parents=True, exist_ok=True)
        with open(f"{prefix}.features.csv", "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["episode_id", "vehicle_id", "frame_id", *FEATURE_NAMES, "area", "y_s", "y_t"])
            for i in range(len(self)):
                writer.writerow([
                    int(self.episode[i]), int(self.vehicle[i]), int(self.frame[i]),
                    *(repr(float(v)) for v in self.features[i]),
                    int(self.area[i]), repr(float(self.y_s[i])), repr(float(self.y_t[i])),
                ])
        meta = {
            "format_version": DATASET_VERSION,
            "feature_names": list(FEATURE_NAMES),
            "feature_units": list(FEATURE_UNITS),
            "feature_hash": FEATURE_HASH,
            "composition": self.composition(),
            "normalization": self.normalization,
            "info": self.info,
            "episodes": self.episodes,
        }
        with open(f"{prefix}.meta.json", "w") as fh:
            json.dump(meta, fh, indent=2)
            fh.write("\n")

    @classmethod
    def load(cls, prefix) -> "Dataset":
        prefix = str(prefix)
        for suffix in (".features.csv", ".meta.json"):
            if prefix.endswith(suffix):
                prefix = prefix[: -len(suffix)]
        try:
            with open(f"{prefix}.meta.json") as fh:
                meta = json.load(fh)
        except FileNotFoundError as exc:
            raise InputError(f"no dataset at {prefix!r} ({exc.filename} missing)") from None
        if meta.get("format_version") != DATASET_VERSION:
            raise SchemaError(f"unsupported dataset format {meta.get('format_version')!r}")
        if tuple(meta.get("feature_names", ())) != FEATURE_NAMES or meta.get("feature_hash") != FEATURE_HASH:
            raise SchemaError("dataset feature ordering differs from this version's")
        with open(f"{prefix}.features.csv", newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if header[3:3 + N_FEATURES] != list(FEATURE_NAMES):
                raise SchemaError("feature columns in CSV header do not match the declared ordering")
            rows = list(reader)
        table = np.array(rows, dtype=object).reshape(-1, len(header))
        return cls(
            features=table[:, 3:3 + N_FEATURES].astype(np.float64),
            area=table[:, -3].astype(np.int64),
            y_s=table[:, -2].astype(np.float64),
            y_t=table[:, -1].astype(np.float64),
            episode=table[:, 0].astype(np.int64),
            vehicle=table[:, 1].astype(np.int64),
            frame=table[:, 2].astype(np.int64),
            episodes=meta.get("episodes", []),
            info=meta.get("info", {}),
            normalization=meta.get("normalization"),
        )


def split(dataset: Dataset, train_fraction: float = 0.8, seed: int = 0):
    """Episode-level split: every frame of an episode lands on the same side."""
    if not 0.0 < train_fraction < 1.0:
        raise SplitError("train fraction must lie strictly between 0 and 1")
    ids = dataset.episode_ids
    if ids.size < 2:
        raise SplitError(f"need at least two episodes to split, have {ids.size}")
    n_train = min(max(int(round(train_fraction * ids.size)), 1), ids.size - 1)
    order = np.random.default_rng(seed).permutation(ids.size)
    train_ids = ids[np.sort(order[:n_train])]
    in_train = np.isin(dataset.episode, train_ids)
    return dataset.subset(np.flatnonzero(in_train)), dataset.subset(np.flatnonzero(~in_train))


# ---------------------------------------------------------------------------
# episode extraction
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExtractConfig:
    geometry: LaneGeometry = LaneGeometry()
    features: FeatureConfig = DEFAULT_FEATURES
    confirm_frames: int = 3  # lateral crossing must fall within this many frames of the lane-id change
    keep_min_frames: int = 80  # 8 s of stable lane
    settle_frames: int = 20  # ignored after a previous crossing before a lane-keep run starts
    keep_ratio: float = 2.0  # lane-keep samples <= ratio * lane-change samples
    seed: int = 0


class _FrameIndex:
    """Per-frame arrays for neighbour lookup."""

    def __init__(self, rec):
        order = np.lexsort((rec["vid"], rec["frame"]))
        self.vid = rec["vid"][order]
        self.frame = rec["frame"][order]
        self.x = rec["x"][order]
        self.y = rec["y"][order]
        self.v = rec["v"][order]
        self.lane = rec["lane"][order]
        frames, start = np.unique(self.frame, return_index=True)
        stop = np.append(start[1:], self.frame.size)
        self.bounds = {int(f): (int(a), int(b)) for f, a, b in zip(frames, start, stop)}

    def state(self, i, lane=None) -> VehicleState:
        return VehicleState(int(self.vid[i]), float(self.x[i]), float(self.y[i]), float(self.v[i]),
                            int(self.lane[i]) if lane is None else int(lane))

    def scene(self, vehicle_id, frame_id, geometry, config: FeatureConfig, lane=None):
        a, b = self.bounds[frame_id]
        pred = a + int(np.searchsorted(self.vid[a:b], vehicle_id))
        lanes = self.lane[a:b]
        if lane is not None:
            lanes = lanes.copy()
            lanes[pred - a] = lane
        slots = kernels.select_neighbors(self.x[a:b], self.y[a:b], lanes, pred - a, config.existence_radius)
        neighbours = [self.state(a + j) if j >= 0 else None for j in slots]
        return scene_from_slots(self.state(pred, lane), neighbours, geometry, frame_id * FRAME_DT)


def _records_to_arrays(records):
    n = len(records)
    rec = {
        "vid": np.fromiter((r.vehicle_id for r in records), np.int64, n),
        "frame": np.fromiter((r.frame_id for r in records), np.int64, n),
        "x": np.fromiter((r.x for r in records), np.float64, n),
        "y": np.fromiter((r.y for r in records), np.float64, n),
        "v": np.fromiter((r.v for r in records), np.float64, n),
        "lane": np.fromiter((r.lane for r in records), np.int64, n),
    }
    return rec


def detect_crossings(frames, lanes, x, geometry: LaneGeometry, confirm_frames=3):
    """Confirmed lane-mark crossings of one contiguous track.

    Returns ``[(index, origin_lane, direction)]`` where ``index`` is the first
    frame whose centre lies past the mark.
    """
    out = []
    for i in np.flatnonzero(np.diff(lanes)) + 1:
        old, new = int(lanes[i - 1]), int(lanes[i])
        if abs(new - old) != 1:
            continue
        mark = geometry.boundary(min(old, new))
        lo, hi = max(1, i - confirm_frames), min(len(x) - 1, i + confirm_frames)
        hit = None
        for j in range(lo, hi + 1):
            if new > old and x[j - 1] < mark <= x[j]:
                hit = j
                break
            if new < old and x[j - 1] >= mark > x[j]:
                hit = j
                break
        if hit is not None and (not out or hit > out[-1][0]):
            out.append((hit, old, "right" if new > old else "left"))
    return out


def extract_episodes(records, config: ExtractConfig = ExtractConfig()) -> Dataset:
    """Lane-change windows (up to 40 frames before each crossing) and lane-keep windows."""
    if not records:
        raise InputError("no trajectory records")
    rec = _records_to_arrays(records)
    index = _FrameIndex(rec)
    geometry = config.geometry
    order = np.lexsort((rec["frame"], rec["vid"]))
    vids, starts = np.unique(rec["vid"][order], return_index=True)
    stops = np.append(starts[1:], order.size)

    changes, keeps = [], []
    skipped_short = 0
    for vid, a, b in zip(vids, starts, stops):
        rows = order[a:b]
        if rows.size < 2:
            skipped_short += 1
            continue
        frames = rec["frame"][rows]
        breaks = np.flatnonzero(np.diff(frames) != 1) + 1
        for seg in np.split(np.arange(rows.size), breaks):
            seg_frames = frames[seg]
            lanes = rec["lane"][rows[seg]]
            crossings = detect_crossings(seg_frames, lanes, rec["x"][rows[seg]], geometry, config.confirm_frames)
            prev = 0
            for c, origin, direction in crossings:
                lo = max(prev, c - WINDOW)
                if c > lo:
                    changes.append((int(vid), seg_frames[lo:c], int(seg_frames[c]), origin, direction))
                prev = c
            # stable runs between crossings
            run_edges = [0] + [c for c, _, _ in crossings] + [len(seg)]
            for k in range(len(run_edges) - 1):
                start = run_edges[k] + (config.settle_frames if k > 0 else 0)
                stop = run_edges[k + 1] - (WINDOW if k < len(run_edges) - 2 else 0)
                if stop - start < config.keep_min_frames:
                    continue
                mid = (start + stop) // 2
                window = slice(mid - WINDOW // 2, mid - WINDOW // 2 + WINDOW)
                if np.all(lanes[window] == lanes[window][0]):
                    keeps.append((int(vid), seg_frames[window]))

    n_change = sum(len(c[1]) for c in changes)
    if n_change and len(keeps) * WINDOW > config.keep_ratio * n_change:
        rng = np.random.default_rng(config.seed)
        budget = int(config.keep_ratio * n_change) // WINDOW
        chosen = np.sort(rng.permutation(len(keeps))[:budget])
        keeps = [keeps[i] for i in chosen]

    # (vehicle, first frame) ordering fixes episode ids
    episodes = [("change", c[0], c[1], c) for c in changes] + [("keep", k[0], k[1], None) for k in keeps]
    episodes.sort(key=lambda e: (e[1], int(e[2][0])))

    cols = {k: [] for k in ("features", "area", "y_s", "y_t", "episode", "frame", "vehicle")}
    meta = []
    unlabeled = 0
    fcfg = config.features
    for kind, vid, frames, change in episodes:
        scenes = [index.scene(vid, int(f), geometry, fcfg) for f in frames]
        crossing = None
        if kind == "change":
            _, _, cross_frame, origin, direction = change
            cross_scene = index.scene(vid, cross_frame, geometry, fcfg, lane=origin)
            crossing = Crossing(cross_frame * FRAME_DT, direction, cross_scene)
        try:
            labelled = label_episode(scenes, crossing, fcfg)
        except LabelingError as exc:
            unlabeled += 1
            log.warning("vehicle %d: %s", vid, exc)
            continue
        eid = len(meta)
        for (vec, label), f in zip(labelled, frames):
            cols["features"].append(vec)
            cols["area"].append(label.area)
            cols["y_s"].append(label.y_s)
            cols["y_t"].append(label.y_t)
            cols["episode"].append(eid)
            cols["frame"].append(int(f))
            cols["vehicle"].append(vid)
        meta.append({
            "episode_id": eid,
            "vehicle_id": vid,
            "kind": kind,
            "first_frame": int(frames[0]),
            "crossing_frame": crossing and int(change[2]),
            "direction": crossing and crossing.direction,
            "area": labelled[0][1].area,
            "y_s": labelled[0][1].y_s,
        })

    n = len(cols["area"])
    info = {
        "lane_change_episodes": sum(m["kind"] == "change" for m in meta),
        "lane_keep_episodes": sum(m["kind"] == "keep" for m in meta),
        "skipped_unlabeled": unlabeled,
        "skipped_short_vehicles": skipped_short,
    }
    log.info("extracted %d samples: %s", n, info)
    return Dataset(
        np.array(cols["features"]).reshape(n, N_FEATURES), cols["area"], cols["y_s"], cols["y_t"],
        cols["episode"], cols["frame"], cols["vehicle"], meta, info,
    )
