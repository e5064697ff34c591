"""Quantified Laban Effort (Weight, Time, Flow) and Shape components.

Axis convention: z is up, y is sagittal (forward), x is lateral.  Efforts are
computed for the whole body and for each marker group; Shape components are
whole-body except Directional, which is per hand.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Sequence

import numba
import numpy as np
from scipy.spatial import ConvexHull, QhullError

from affectmotion.dataset import ROLES, MarkerSet, Movement
from affectmotion.filters import FilterParams, filtered_derivative

PART_NAMES = {
    "All": ROLES,
    "Torso": ("torso",),
    "Head": ("head",),
    "RHand": ("right_hand",),
    "LHand": ("left_hand",),
    "RFoot": ("right_foot",),
    "LFoot": ("left_foot",),
}

EFFORT_COMPONENTS = tuple(
    f"{effort}{part}" for effort in ("Weight", "Time", "Flow") for part in PART_NAMES
)
SHAPE_COMPONENTS = (
    "ShapeZ",
    "ShapeSag",
    "ShapeHor",
    "ShapeFlow",
    "ShapeDirRHand",
    "ShapeDirLHand",
)
COMPONENTS = EFFORT_COMPONENTS + SHAPE_COMPONENTS

CURVATURE_FLOOR = 1e-9
DEFAULT_FILTER = FilterParams.lowpass(8.0)


class DegenerateTrajectory(ValueError):
    pass


class FeatureError(ValueError):
    pass


@dataclass(frozen=True)
class LMAVector:
    values: Mapping[str, float]

    def __post_init__(self):
        missing = [c for c in COMPONENTS if c not in self.values]
        if missing:
            raise ValueError(f"missing LMA components: {missing}")
        vals = {c: float(self.values[c]) for c in COMPONENTS}
        bad = [c for c, v in vals.items() if not np.isfinite(v)]
        if bad:
            raise ValueError(f"non-finite LMA components: {bad}")
        object.__setattr__(self, "values", vals)

    def __getitem__(self, name: str) -> float:
        return self.values[name]

    def as_array(self, components: Sequence[str] = COMPONENTS) -> np.ndarray:
        return np.array([self.values[c] for c in components])


def _part_indices(marker_set: MarkerSet, parts: Iterable[str]):
    parts = list(parts)
    if not parts:
        raise ValueError("parts must be non-empty")
    idx, mass = [], []
    for role in parts:
        idx.extend(marker_set.indices(role))
        mass.extend(marker_set.masses(role))
    return np.array(idx), np.array(mass)


def _velocities(movement, idx, filt, units_per_frame):
    T = movement.n_frames
    flat = movement.frames[:, idx, :].reshape(T, -1)
    v = filtered_derivative(flat, movement.frame_rate, filt, units_per_frame)
    return v.reshape(T - 1, len(idx), 3)


def _accelerations(movement, idx, filt, units_per_frame):
    v = _velocities(movement, idx, filt, units_per_frame)
    a = filtered_derivative(
        v.reshape(v.shape[0], -1), movement.frame_rate, filt, units_per_frame
    )
    return a.reshape(a.shape[0], len(idx), 3)


def weight_effort(
    movement: Movement,
    marker_set: MarkerSet,
    parts: Iterable[str],
    filter_params: FilterParams | None = None,
    units_per_frame: bool = True,
) -> float:
    """Peak over time of the summed kinetic energy ``sum(alpha * |v|^2)``."""
    filt = DEFAULT_FILTER if filter_params is None else filter_params
    idx, mass = _part_indices(marker_set, parts)
    v = _velocities(movement, idx, filt, units_per_frame)
    energy = (np.sum(v**2, axis=2) * mass).sum(axis=1)
    return float(energy.max())


def time_effort(
    movement: Movement,
    marker_set: MarkerSet,
    parts: Iterable[str],
    filter_params: FilterParams | None = None,
    units_per_frame: bool = True,
) -> float:
    """Peak over time of the mass-weighted sum of acceleration magnitudes."""
    if movement.n_frames < 3:
        raise ValueError("Time Effort needs at least 3 frames")
    filt = DEFAULT_FILTER if filter_params is None else filter_params
    idx, mass = _part_indices(marker_set, parts)
    a = _accelerations(movement, idx, filt, units_per_frame)
    weighted = (np.linalg.norm(a, axis=2) * mass).sum(axis=1)
    return float(weighted.max())


def flow_effort(
    movement: Movement,
    marker_set: MarkerSet,
    parts: Iterable[str],
    filter_params: FilterParams | None = None,
    units_per_frame: bool = True,
) -> float:
    """Jerk magnitude aggregated over time and markers.

    The acceleration difference between consecutive samples is a 3-vector;
    its Euclidean norm is used so the value is rotation invariant.
    """
    if movement.n_frames < 4:
        raise ValueError("Flow Effort needs at least 4 frames")
    filt = DEFAULT_FILTER if filter_params is None else filter_params
    idx, _ = _part_indices(marker_set, parts)
    a = _accelerations(movement, idx, filt, units_per_frame)
    jerk = filtered_derivative(
        a.reshape(a.shape[0], -1), movement.frame_rate, filt, units_per_frame
    ).reshape(a.shape[0] - 1, len(idx), 3)
    return float(np.linalg.norm(jerk, axis=2).sum())


@numba.njit(cache=True)
def _hull_area(pts):
    """Monotone-chain hull area of an n x 2 array (sorted in place)."""
    n = pts.shape[0]
    # insertion sort by (x, y); n is the marker count, so this is cheap
    for i in range(1, n):
        x, y = pts[i, 0], pts[i, 1]
        j = i - 1
        while j >= 0 and (pts[j, 0] > x or (pts[j, 0] == x and pts[j, 1] > y)):
            pts[j + 1, 0] = pts[j, 0]
            pts[j + 1, 1] = pts[j, 1]
            j -= 1
        pts[j + 1, 0] = x
        pts[j + 1, 1] = y
    hull = np.empty((2 * n, 2))
    k = 0
    for rev in range(2):
        start = k
        for ii in range(n):
            i = n - 1 - ii if rev else ii
            while k >= start + 2 and (
                (hull[k - 1, 0] - hull[k - 2, 0]) * (pts[i, 1] - hull[k - 2, 1])
                - (hull[k - 1, 1] - hull[k - 2, 1]) * (pts[i, 0] - hull[k - 2, 0])
            ) <= 0:
                k -= 1
            hull[k, 0] = pts[i, 0]
            hull[k, 1] = pts[i, 1]
            k += 1
        k -= 1  # last point of each chain starts the other
    if k < 3:
        return 0.0
    area = 0.0
    for i in range(k):
        j = (i + 1) % k
        area += hull[i, 0] * hull[j, 1] - hull[j, 0] * hull[i, 1]
    return 0.5 * abs(area)


@numba.njit(cache=True)
def _max_hull_area(frames_xy):
    best = 0.0
    for t in range(frames_xy.shape[0]):
        a = _hull_area(frames_xy[t].copy())
        if a > best:
            best = a
    return best


def hull_area_2d(points: np.ndarray) -> float:
    """Area of the convex hull of 2-D points (monotone chain); 0 if degenerate."""
    pts = np.array(points, dtype=float).reshape(-1, 2)
    if len(pts) < 3:
        return 0.0
    return float(_hull_area(pts))


def shape_shaping(movement: Movement, marker_set: MarkerSet) -> tuple[float, float, float]:
    """(vertical, sagittal, horizontal) Shaping.

    Vertical and sagittal are the largest torso-centroid displacements from
    frame 0 along z and y; horizontal is the largest per-frame area of the
    convex hull of all markers projected on the x-y plane.
    """
    torso = movement.frames[:, marker_set.indices("torso"), :].mean(axis=1)
    disp = np.abs(torso - torso[0])
    shape_z = float(disp[:, 2].max())
    shape_sag = float(disp[:, 1].max())
    shape_hor = float(_max_hull_area(np.ascontiguousarray(movement.frames[:, :, :2])))
    return shape_z, shape_sag, shape_hor


def shape_flow(movement: Movement, marker_set: MarkerSet | None = None, hull: bool = False) -> float:
    """Largest per-frame body volume.

    By default the axis-aligned bounding box; ``hull=True`` uses the 3-D
    convex hull instead (0 for flat or degenerate frames).
    """
    if not hull:
        extent = movement.frames.max(axis=1) - movement.frames.min(axis=1)
        return float(np.prod(extent, axis=1).max())
    best = 0.0
    for f in movement.frames:
        try:
            best = max(best, ConvexHull(f).volume)
        except (QhullError, ValueError):
            continue
    return float(best)


def pca_top2(points: np.ndarray) -> np.ndarray:
    """Project 3-D points onto their two leading principal axes.

    Each axis is oriented so its largest-magnitude loading is positive.
    """
    pts = np.asarray(points, dtype=float)
    if pts.shape[0] < 3:
        raise ValueError("PCA needs at least 3 points")
    centred = pts - pts.mean(axis=0)
    cov = centred.T @ centred / pts.shape[0]
    evals, evecs = np.linalg.eigh(cov)
    if evals[-1] <= 1e-20 * max(1.0, float(np.mean(pts**2))):
        raise DegenerateTrajectory("degenerate trajectory")
    order = np.argsort(evals)[::-1][:2]
    axes = evecs[:, order]
    for j in range(2):
        k = np.argmax(np.abs(axes[:, j]))
        if axes[k, j] < 0:
            axes[:, j] = -axes[:, j]
    return centred @ axes


def shape_directional(
    hand_trajectory: np.ndarray,
    frame_rate: float,
    filter_params: FilterParams | None = None,
    units_per_frame: bool = True,
) -> float:
    """Mean unsigned curvature of a hand path in its principal plane.

    Velocity is averaged onto the acceleration samples so both refer to the
    same interior frames.  Samples whose speed term falls below the floor are
    dropped from both the sum and the count.
    """
    traj = np.asarray(hand_trajectory, dtype=float)
    if traj.shape[0] < 4:
        raise ValueError("Shape Directional needs at least 4 frames")
    filt = DEFAULT_FILTER if filter_params is None else filter_params
    xy = pca_top2(traj)
    vel = filtered_derivative(xy, frame_rate, filt, units_per_frame)
    acc = filtered_derivative(vel, frame_rate, filt, units_per_frame)
    v = 0.5 * (vel[:-1] + vel[1:])
    num = np.abs(acc[:, 1] * v[:, 0] - acc[:, 0] * v[:, 1])
    den = (v[:, 0] ** 2 + v[:, 1] ** 2) ** 1.5
    ok = den >= CURVATURE_FLOOR
    if not ok.any():
        raise DegenerateTrajectory("hand trajectory is stationary")
    return float(np.mean(num[ok] / den[ok]))


def lma_vector(
    movement: Movement,
    marker_set: MarkerSet,
    filter_params: FilterParams | None = None,
    units_per_frame: bool = True,
    hull_volume: bool = False,
) -> LMAVector:
    """All 27 Effort/Shape components of one movement.

    A stationary hand has no principal plane; its Directional component is 0.
    """
    filt = DEFAULT_FILTER if filter_params is None else filter_params
    vals: dict[str, float] = {}
    efforts = (("Weight", weight_effort), ("Time", time_effort), ("Flow", flow_effort))
    for effort, func in efforts:
        for part, roles in PART_NAMES.items():
            name = effort + part
            try:
                vals[name] = func(movement, marker_set, roles, filt, units_per_frame)
            except ValueError as exc:
                raise FeatureError(f"{movement.source_id}: {name}: {exc}") from exc
    z, sag, hor = shape_shaping(movement, marker_set)
    vals.update(ShapeZ=z, ShapeSag=sag, ShapeHor=hor)
    vals["ShapeFlow"] = shape_flow(movement, marker_set, hull=hull_volume)
    for name, role in (("ShapeDirRHand", "right_hand"), ("ShapeDirLHand", "left_hand")):
        hand = movement.frames[:, marker_set.indices(role), :].mean(axis=1)
        try:
            vals[name] = shape_directional(hand, movement.frame_rate, filt, units_per_frame)
        except DegenerateTrajectory:
            vals[name] = 0.0
        except ValueError as exc:
            raise FeatureError(f"{movement.source_id}: {name}: {exc}") from exc
    return LMAVector(vals)


def feature_matrix(
    movements: Sequence[Movement],
    marker_set: MarkerSet,
    filter_params: FilterParams | None = None,
    units_per_frame: bool = True,
) -> np.ndarray:
    """N x 27 matrix of LMA vectors in canonical component order."""
    return np.array(
        [
            lma_vector(mv, marker_set, filter_params, units_per_frame).as_array()
            for mv in movements
        ]
    ).reshape(len(movements), len(COMPONENTS))
