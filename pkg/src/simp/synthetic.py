"""Seeded multi-lane highway scenes at 10 Hz with scripted lane changes.

Each scene is an independent stretch of road in its own frame range. Background
vehicles follow IDM with noisy acceleration and stay in lane. In lane-change
scenes one extra vehicle accelerates toward a chosen gap in an adjacent lane and
moves across along a quintic lateral profile; the gap, the crossing frame and
the insertion distance are recorded as ground truth.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import TrajectoryRecord
from .features import FRAME_DT, LaneGeometry

VEHICLE_LENGTH = 15.0  # ft


@dataclass(frozen=True)
class SynthConfig:
    n_scenes: int = 500
    n_lanes: int = 4
    lane_width: float = 12.0
    speed_range: tuple = (45.0, 70.0)  # base flow speed, ft/s
    lane_speed_spread: float = 4.0  # std of per-lane speed offsets, ft/s
    vehicles_per_lane: tuple = (4, 8)
    road_span: float = 350.0  # vehicles placed within +-span ft of the scene origin
    lane_change_prob: float = 0.5
    faster_target: tuple = (4.0, 10.0)  # target lane speed advantage in lane-change scenes, ft/s
    min_accept_gap: float = 60.0  # smallest gap a driver accepts, ft
    insert_fraction: tuple = (0.15, 0.4)  # insertion point as a fraction of the accepted gap
    max_accel: float = 3.0  # ft/s^2
    maneuver_duration: tuple = (3.0, 5.0)  # s
    prep_lead: tuple = (5.5, 6.5)  # drift toward the target lane starts this long before crossing, s
    prep_rate: tuple = (0.4, 0.6)  # ft/s
    prep_max: float = 3.0  # ft, must stay below half a lane
    crossing_frame: tuple = (50, 80)  # frame of the crossing within a scene
    scene_frames: int = 130
    tail_frames: int = 20  # lane-change vehicle leaves the record this long after crossing
    lateral_noise: float = 0.3  # ft
    accel_noise: float = 0.5  # ft/s^2
    seed: int = 0

    def __post_init__(self):
        for name in ("speed_range", "vehicles_per_lane", "faster_target", "insert_fraction",
                     "maneuver_duration", "crossing_frame", "prep_lead", "prep_rate"):
            lo, hi = getattr(self, name)
            if not lo < hi:
                raise ValueError(f"{name} must be an increasing pair, got {(lo, hi)}")
        if not 0.0 <= self.lane_change_prob <= 1.0:
            raise ValueError("lane_change_prob must lie in [0, 1]")
        if not 0.0 <= self.prep_max < self.lane_width / 2.0:
            raise ValueError("prep_max must lie in [0, lane_width / 2)")
        if self.n_lanes < 2:
            raise ValueError("need at least two lanes")
        if self.crossing_frame[0] < 40 or self.crossing_frame[1] + self.tail_frames > self.scene_frames:
            raise ValueError("crossing frames must leave 40 frames before and the tail after")

    @property
    def geometry(self) -> LaneGeometry:
        return LaneGeometry(self.n_lanes, self.lane_width)


@dataclass
class SynthCorpus:
    records: list
    truth: list = field(default_factory=list)
    config: SynthConfig = field(default_factory=SynthConfig)

    def truth_json(self) -> str:
        doc = {"config": asdict(self.config), "lane_changes": self.truth}
        return json.dumps(doc, indent=2) + "\n"


def _idm_accel(v, v_des, gap, dv, a_max=3.0, b=5.0, s0=7.0, headway=1.2):
    s_star = s0 + max(0.0, v * headway + v * dv / (2.0 * math.sqrt(a_max * b)))
    return a_max * (1.0 - (v / v_des) ** 4 - (s_star / max(gap, 0.5)) ** 2)


def _simulate_lane(rng, y0, v_des, n_frames, accel_noise):
    """IDM platoon; ``y0`` sorted front to back. Returns (y, v) of shape (n_frames, n)."""
    n = y0.size
    y = np.empty((n_frames, n))
    v = np.empty((n_frames, n))
    y[0], v[0] = y0, v_des
    noise = np.zeros(n)
    decay = math.exp(-FRAME_DT / 2.0)
    for t in range(1, n_frames):
        noise = decay * noise + math.sqrt(1.0 - decay**2) * accel_noise * rng.standard_normal(n)
        acc = np.empty(n)
        for i in range(n):
            if i == 0:
                acc[i] = _idm_accel(v[t - 1, i], v_des[i], 1e9, 0.0)
            else:
                gap = y[t - 1, i - 1] - y[t - 1, i] - VEHICLE_LENGTH
                acc[i] = _idm_accel(v[t - 1, i], v_des[i], gap, v[t - 1, i] - v[t - 1, i - 1])
        acc = np.maximum(acc + noise, -15.0)
        v[t] = np.maximum(v[t - 1] + acc * FRAME_DT, 0.0)
        y[t] = y[t - 1] + v[t] * FRAME_DT
    return y, v


def _lateral_noise(rng, shape, sigma):
    """Ornstein-Uhlenbeck wander around the lane centre, stationary std ``sigma``."""
    decay = math.exp(-FRAME_DT / 2.0)
    out = np.empty(shape)
    out[0] = sigma * rng.standard_normal(shape[1:])
    for t in range(1, shape[0]):
        out[t] = decay * out[t - 1] + math.sqrt(1.0 - decay**2) * sigma * rng.standard_normal(shape[1:])
    return out


def _quintic(tau):
    tau = np.clip(tau, 0.0, 1.0)
    return tau**3 * (10.0 - 15.0 * tau + 6.0 * tau**2)


class _Scene:
    def __init__(self, cfg: SynthConfig, rng, lane_change: bool):
        self.cfg = cfg
        self.rng = rng
        geo = cfg.geometry
        n_frames = cfg.scene_frames
        base = rng.uniform(*cfg.speed_range)
        lane_speed = base + cfg.lane_speed_spread * rng.standard_normal(cfg.n_lanes)
        self.ego_lane = int(rng.integers(1, cfg.n_lanes + 1))
        self.direction = None
        if lane_change:
            sides = [d for d, ok in (("left", self.ego_lane > 1), ("right", self.ego_lane < cfg.n_lanes)) if ok]
            self.direction = sides[int(rng.integers(len(sides)))]
            target = self.ego_lane + (-1 if self.direction == "left" else 1)
            lane_speed[target - 1] = lane_speed[self.ego_lane - 1] + rng.uniform(*cfg.faster_target)
        self.lanes = []  # per lane: (y, v, x)
        for lane in range(1, cfg.n_lanes + 1):
            n = int(rng.integers(cfg.vehicles_per_lane[0], cfg.vehicles_per_lane[1] + 1))
            y0 = np.sort(rng.uniform(-cfg.road_span, cfg.road_span, n))[::-1]
            if lane_change and lane == self.ego_lane:
                y0 = y0[np.abs(y0) > 40.0]
            for i in range(1, y0.size):
                y0[i] = min(y0[i], y0[i - 1] - 30.0)
            v_des = lane_speed[lane - 1] + 1.5 * rng.standard_normal(y0.size)
            y, v = _simulate_lane(rng, y0, np.maximum(v_des, 20.0), n_frames, cfg.accel_noise)
            x = geo.center(lane) + _lateral_noise(rng, y.shape, cfg.lateral_noise)
            self.lanes.append((y, v, x))
        self.ego = None
        if lane_change:
            self.ego = self._plan_change(lane_speed)

    def _plan_change(self, lane_speed):
        cfg, rng, geo = self.cfg, self.rng, self.cfg.geometry
        target = self.ego_lane + (-1 if self.direction == "left" else 1)
        k = int(rng.integers(cfg.crossing_frame[0], cfg.crossing_frame[1] + 1))
        tk = k * FRAME_DT
        v0 = lane_speed[self.ego_lane - 1] + rng.uniform(0.0, 3.0)
        ty, _, _ = self.lanes[target - 1]
        pos = ty[k]
        options = []
        for r in range(pos.size):
            ahead_gap = pos[r - 1] - pos[r] if r > 0 else 200.0
            behind_gap = pos[r] - pos[r + 1] if r + 1 < pos.size else 200.0
            for front, gap in ((True, ahead_gap), (False, behind_gap)):
                if gap < cfg.min_accept_gap:
                    continue
                delta = max(rng.uniform(*cfg.insert_fraction) * gap, 20.0)
                goal = pos[r] + (delta if front else -delta)
                accel = 2.0 * (goal - v0 * tk) / tk**2
                if abs(accel) <= cfg.max_accel:
                    options.append((r, front, delta, accel))
        if not options:
            return None
        r, front, delta, accel = options[int(rng.integers(len(options)))]
        t = np.arange(cfg.scene_frames) * FRAME_DT
        tc = np.minimum(t, tk)
        y = v0 * tc + 0.5 * accel * tc**2 + (v0 + accel * tk) * (t - tc)
        v = v0 + accel * tc
        duration = rng.uniform(*cfg.maneuver_duration)
        t_cross = tk - 0.5 * FRAME_DT  # crossing strictly between frames k-1 and k
        shift = _quintic((t - (t_cross - duration / 2.0)) / duration)
        # slow drift before the manoeuvre; it fades out by the crossing so the crossing time is unchanged
        t_prep = t_cross - rng.uniform(*cfg.prep_lead)
        drift = np.minimum(rng.uniform(*cfg.prep_rate) * np.maximum(t - t_prep, 0.0), cfg.prep_max)
        drift *= np.maximum(1.0 - 2.0 * shift, 0.0)
        sign = -1.0 if self.direction == "left" else 1.0
        wander = _lateral_noise(rng, (t.size, 1), cfg.lateral_noise)[:, 0] * (1.0 - np.minimum(shift * 4.0, 1.0))
        x = geo.center(self.ego_lane) + sign * (geo.lane_width * shift + drift) + wander
        area = (1 if front else 2) if self.direction == "left" else (3 if front else 4)
        return {"y": y, "v": v, "x": x, "frame": k, "area": area, "target_lane": target,
                "ref_index": r, "y_s": abs(y[k] - pos[r])}

    def feasible(self) -> bool:
        """No same-lane pair closer than a car length while the ego is on the road."""
        if self.ego is None:
            return False
        geo = self.cfg.geometry
        stop = self.ego["frame"] + self.cfg.tail_frames
        ego_lane = np.array([geo.lane_of(x) for x in self.ego["x"][:stop]])
        for t in range(stop):
            y, _, _ = self.lanes[ego_lane[t] - 1]
            if np.min(np.abs(y[t] - self.ego["y"][t])) < VEHICLE_LENGTH + 5.0:
                return False
        return True


def generate_synthetic(config: SynthConfig = SynthConfig()) -> SynthCorpus:
    """Trajectory records plus per-lane-change ground truth for ``config.n_scenes`` scenes."""
    rng = np.random.default_rng(config.seed)
    geo = config.geometry
    records, truth = [], []
    next_id = 1
    stride = config.scene_frames + 20
    for s in range(config.n_scenes):
        lane_change = rng.random() < config.lane_change_prob
        scene = None
        for _ in range(50):
            scene = _Scene(config, rng, lane_change)
            if not lane_change or scene.feasible():
                break
        else:
            scene = _Scene(config, rng, False)
            lane_change = False
        offset = s * stride
        ref_id = None
        for lane_idx, (y, v, x) in enumerate(scene.lanes):
            for i in range(y.shape[1]):
                vid = next_id
                next_id += 1
                if lane_change and lane_idx + 1 == scene.ego["target_lane"] and i == scene.ego["ref_index"]:
                    ref_id = vid
                for t in range(config.scene_frames):
                    records.append(TrajectoryRecord(vid, offset + t, float(x[t, i]), float(y[t, i]),
                                                    float(v[t, i]), lane_idx + 1))
        if lane_change:
            ego = scene.ego
            vid = next_id
            next_id += 1
            for t in range(ego["frame"] + config.tail_frames):
                records.append(TrajectoryRecord(vid, offset + t, float(ego["x"][t]), float(ego["y"][t]),
                                                float(ego["v"][t]), geo.lane_of(ego["x"][t])))
            truth.append({
                "vehicle_id": vid,
                "crossing_frame": offset + ego["frame"],
                "direction": scene.direction,
                "area": ego["area"],
                "y_s": float(ego["y_s"]),
                "reference_id": ref_id,
            })
    records.sort(key=lambda r: (r.vehicle_id, r.frame_id))
    return SynthCorpus(records, truth, config)
