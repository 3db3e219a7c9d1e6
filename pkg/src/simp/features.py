"""Scene construction, the 25 input features and ground-truth labels.

Coordinates follow NGSIM: ``x`` is lateral (feet, growing to the right, lane 1
leftmost), ``y`` longitudinal (feet, driving direction). Areas::

    1 left-front gap   2 left-rear gap   3 right-front gap   4 right-rear gap
    5 own-lane front gap (lane keeping)
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import kernels
from .errors import InputError, LabelingError

TTLC_CAP = 4.0
FRAME_DT = 0.1
LANE_KEEP_AREA = 5

FEATURE_NAMES = (
    "v_pred", "d_clc_pred",
    "v_ref_left", "v_ref_front", "v_ref_right",
    "dy_ref_left", "dy_ref_front", "dy_ref_right",
    "dx_ref_left", "dx_ref_right",
    "theta_ref_left", "theta_ref_right",
    "ittc_front_pred",
    "v_left_front", "v_left_rear", "v_right_front", "v_right_rear",
    "dy_left_front", "dy_left_rear", "dy_right_front", "dy_right_rear",
    "ittc_left_front_ref", "ittc_left_rear_ref", "ittc_right_front_ref", "ittc_right_rear_ref",
)
FEATURE_UNITS = (
    ("ft/s", "ft") + ("ft/s",) * 3 + ("ft",) * 5 + ("rad",) * 2 + ("1/s",)
    + ("ft/s",) * 4 + ("ft",) * 4 + ("1/s",) * 4
)
N_FEATURES = len(FEATURE_NAMES)
FEATURE_HASH = hashlib.sha256(",".join(FEATURE_NAMES).encode()).hexdigest()

INTENTIONS = ("LCL", "LCR", "LK")


@dataclass(frozen=True)
class FeatureConfig:
    existence_radius: float = 250.0  # longitudinal, ft
    missing_distance: float = 300.0  # imputed |dy| of an absent vehicle, ft
    phantom_offset: float = 5.0  # spacing of phantom vehicles on a missing lane, ft
    min_gap: float = 1.0  # ft
    ittc_limit: float = 2.0  # 1/s


DEFAULT_FEATURES = FeatureConfig()


@dataclass(frozen=True)
class VehicleState:
    id: int
    x: float
    y: float
    v: float
    lane: int


@dataclass(frozen=True)
class LaneGeometry:
    n_lanes: int = 5
    lane_width: float = 12.0
    origin: float = 0.0  # x of the left edge of lane 1

    def center(self, lane: int) -> float:
        return self.origin + (lane - 0.5) * self.lane_width

    def boundary(self, left_lane: int) -> float:
        """x of the mark between ``left_lane`` and ``left_lane + 1``."""
        return self.origin + left_lane * self.lane_width

    def lane_of(self, x: float) -> int:
        return int(min(max(math.floor((x - self.origin) / self.lane_width) + 1, 1), self.n_lanes))

    def has_lane(self, lane: int) -> bool:
        return 1 <= lane <= self.n_lanes


@dataclass(frozen=True)
class SceneFrame:
    timestamp: float
    pred: VehicleState
    lane_center: float
    lane_width: float
    has_left: bool
    has_right: bool
    left_front: Optional[VehicleState] = None  # car1
    left_ref: Optional[VehicleState] = None  # car2
    left_rear: Optional[VehicleState] = None  # car3
    front_ref: Optional[VehicleState] = None  # car4
    right_front: Optional[VehicleState] = None  # car5
    right_ref: Optional[VehicleState] = None  # car6
    right_rear: Optional[VehicleState] = None  # car7

    SLOTS = ("left_front", "left_ref", "left_rear", "front_ref", "right_front", "right_ref", "right_rear")


@dataclass(frozen=True)
class Label:
    area: int
    y_s: float
    y_t: float

    def __post_init__(self):
        if self.area not in (1, 2, 3, 4, 5):
            raise LabelingError(f"area {self.area} outside 1..5")
        if not -1e-9 <= self.y_t <= TTLC_CAP + 1e-9:
            raise LabelingError(f"TTLC {self.y_t} outside [0, {TTLC_CAP}]")


def build_scene(vehicles: Sequence[VehicleState], pred_id, geometry: LaneGeometry,
                timestamp: float = 0.0, config: FeatureConfig = DEFAULT_FEATURES) -> SceneFrame:
    """Fill the seven surrounding-vehicle slots around vehicle ``pred_id``."""
    vehicles = list(vehicles)
    index = next((i for i, v in enumerate(vehicles) if v.id == pred_id), None)
    if index is None:
        raise InputError(f"predicted vehicle {pred_id!r} not in scene")
    x = np.array([v.x for v in vehicles], dtype=np.float64)
    y = np.array([v.y for v in vehicles], dtype=np.float64)
    lane = np.array([v.lane for v in vehicles], dtype=np.int64)
    slots = kernels.select_neighbors(x, y, lane, index, config.existence_radius)
    return scene_from_slots(vehicles[index], [vehicles[j] if j >= 0 else None for j in slots],
                            geometry, timestamp)


def scene_from_slots(pred: VehicleState, slot_vehicles, geometry: LaneGeometry, timestamp: float) -> SceneFrame:
    return SceneFrame(
        timestamp, pred, geometry.center(pred.lane), geometry.lane_width,
        geometry.has_lane(pred.lane - 1), geometry.has_lane(pred.lane + 1),
        **dict(zip(SceneFrame.SLOTS, slot_vehicles)),
    )


def inverse_ttc(follower_v, leader_v, gap, config: FeatureConfig = DEFAULT_FEATURES) -> float:
    """(follower speed - leader speed) / gap; positive when closing."""
    if abs(gap) < config.min_gap:
        gap = math.copysign(config.min_gap, gap) if gap != 0 else config.min_gap
    value = (follower_v - leader_v) / gap
    return min(max(value, -config.ittc_limit), config.ittc_limit)


def _side(scene: SceneFrame, side: str, config: FeatureConfig):
    """(v, dy, dx) for reference, front and rear vehicle of one side, imputed as needed."""
    pred = scene.pred
    sign = -1.0 if side == "left" else 1.0
    ref, front, rear = (getattr(scene, f"{side}_{slot}") for slot in ("ref", "front", "rear"))
    if not (scene.has_left if side == "left" else scene.has_right):
        off = config.phantom_offset
        dx = sign * scene.lane_width
        return (pred.v, 0.0, dx), (pred.v, off, dx), (pred.v, -off, dx)
    lateral = scene.lane_center + sign * scene.lane_width - pred.x
    far = config.missing_distance

    def pack(veh, default_dy):
        if veh is None:
            return pred.v, default_dy, lateral
        return veh.v, veh.y - pred.y, veh.x - pred.x

    return pack(ref, far), pack(front, far), pack(rear, -far)


def extract_features(scene: SceneFrame, config: FeatureConfig = DEFAULT_FEATURES) -> np.ndarray:
    """The 25 features in ``FEATURE_NAMES`` order."""
    pred = scene.pred
    left_ref, left_front, left_rear = _side(scene, "left", config)
    right_ref, right_front, right_rear = _side(scene, "right", config)
    if scene.front_ref is None:
        front = (pred.v, config.missing_distance)
    else:
        front = (scene.front_ref.v, scene.front_ref.y - pred.y)

    def theta(ref):
        _, dy, dx = ref
        return math.atan2(-dx, dy)

    def ittc_other(other, ref, ahead):
        if ahead:
            return inverse_ttc(ref[0], other[0], other[1] - ref[1], config)
        return inverse_ttc(other[0], ref[0], ref[1] - other[1], config)

    others = (left_front, left_rear, right_front, right_rear)
    refs = (left_ref, left_ref, right_ref, right_ref)
    ahead = (True, False, True, False)
    vec = [
        pred.v, pred.x - scene.lane_center,
        left_ref[0], front[0], right_ref[0],
        left_ref[1], front[1], right_ref[1],
        left_ref[2], right_ref[2],
        theta(left_ref), theta(right_ref),
        inverse_ttc(pred.v, front[0], front[1], config),
        *(o[0] for o in others),
        *(o[1] for o in others),
        *(ittc_other(o, r, a) for o, r, a in zip(others, refs, ahead)),
    ]
    out = np.array(vec, dtype=np.float64)
    if not np.all(np.isfinite(out)):
        raise InputError(f"non-finite feature for vehicle {pred.id}")
    return out


def insertion_label(crossing_scene: SceneFrame, direction: str) -> tuple:
    """(area, y_s) from the scene at the crossing instant, built on the origin lane."""
    if direction not in ("left", "right"):
        raise LabelingError(f"direction must be 'left' or 'right', got {direction!r}")
    ref = crossing_scene.left_ref if direction == "left" else crossing_scene.right_ref
    if ref is None:
        raise LabelingError(f"no {direction} reference vehicle at crossing of vehicle {crossing_scene.pred.id}")
    ahead = crossing_scene.pred.y >= ref.y
    area = (1 if ahead else 2) if direction == "left" else (3 if ahead else 4)
    return area, abs(crossing_scene.pred.y - ref.y)


@dataclass(frozen=True)
class Crossing:
    """A lane-mark crossing: its time, direction and the scene at that instant.

    ``scene`` must be built with the predicted vehicle still assigned to its
    origin lane so the target lane is the left or right side.
    """

    time: float
    direction: str
    scene: SceneFrame


def label_episode(frames: Sequence[SceneFrame], crossing: Optional[Crossing] = None,
                  config: FeatureConfig = DEFAULT_FEATURES):
    """Features and labels for one predicted vehicle's time-ordered frames.

    With a crossing, frames from ``TTLC_CAP`` seconds before up to the crossing
    are labelled with the entered area and TTLC = crossing time - frame time.
    Without one, every frame is lane keeping (area 5, TTLC 4 s) with ``y_s`` the
    gap to the front reference at the last frame.
    """
    frames = list(frames)
    if crossing is None:
        if not frames:
            return []
        last = frames[-1]
        y_s = config.missing_distance if last.front_ref is None else abs(last.front_ref.y - last.pred.y)
        label = Label(LANE_KEEP_AREA, y_s, TTLC_CAP)
        return [(extract_features(f, config), label) for f in frames]
    area, y_s = insertion_label(crossing.scene, crossing.direction)
    out = []
    for f in frames:
        ttlc = round(crossing.time - f.timestamp, 9)
        if 0.0 <= ttlc <= TTLC_CAP:
            out.append((extract_features(f, config), Label(area, y_s, ttlc)))
    return out


def merge_intentions(area: int) -> str:
    """Coarse intention of an area: LCL, LCR or LK."""
    if area in (1, 2):
        return "LCL"
    if area in (3, 4):
        return "LCR"
    if area == 5:
        return "LK"
    raise InputError(f"area {area!r} outside 1..5")


def coarse_class(areas) -> np.ndarray:
    """Vectorized :func:`merge_intentions` as class indices 0=LCL, 1=LCR, 2=LK."""
    areas = np.asarray(areas)
    if areas.size and (areas.min() < 1 or areas.max() > 5):
        raise InputError("area numbers must lie in 1..5")
    return np.array([0, 0, 0, 1, 1, 2])[areas]


def on_lane(state: VehicleState, lane: int) -> VehicleState:
    return replace(state, lane=lane)
