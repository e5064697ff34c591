"""Loading, validation and preprocessing of labelled motion-capture data.

A dataset is described by a JSON manifest that names the marker set, the
emotion labels and one trajectory CSV per movement.  Trajectory files hold one
row per frame: ``frame,<m1>_x,<m1>_y,<m1>_z,...`` in marker-set order.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

ROLES = ("torso", "head", "right_hand", "left_hand", "right_foot", "left_foot")


class ParseError(ValueError):
    """Malformed trajectory file."""


class LoadError(ValueError):
    """A manifest entry could not be loaded."""


class DegeneratePoseError(ValueError):
    """The scale-normalization markers coincide in the reference frame."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, dtype=float)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MarkerSet:
    markers: tuple[str, ...]
    groups: Mapping[str, tuple[str, ...]]
    mass_coefficients: Mapping[str, float] = field(default_factory=dict)
    scale_pair: tuple[str, str] = ("right_shoulder", "right_wrist")

    def __post_init__(self):
        object.__setattr__(self, "markers", tuple(self.markers))
        object.__setattr__(
            self, "groups", {r: tuple(ms) for r, ms in self.groups.items()}
        )
        object.__setattr__(self, "scale_pair", tuple(self.scale_pair))
        if len(set(self.markers)) != len(self.markers):
            raise ValueError("duplicate marker names")
        known = set(self.markers)
        for role in ROLES:
            if not self.groups.get(role):
                raise ValueError(f"marker group {role!r} missing or empty")
        for role, members in self.groups.items():
            if role not in ROLES:
                raise ValueError(f"unknown marker group {role!r}")
            for m in members:
                if m not in known:
                    raise ValueError(f"group {role!r} names unknown marker {m!r}")
        mass = {m: 1.0 for m in self.markers}
        for m, a in dict(self.mass_coefficients).items():
            if m not in known:
                raise ValueError(f"mass coefficient for unknown marker {m!r}")
            if not a > 0:
                raise ValueError(f"mass coefficient of {m!r} must be positive")
            mass[m] = float(a)
        object.__setattr__(self, "mass_coefficients", mass)
        if len(self.scale_pair) != 2:
            raise ValueError("scale_pair must name two markers")

    def index(self, name: str) -> int:
        return self.markers.index(name)

    def indices(self, role: str) -> list[int]:
        return [self.markers.index(m) for m in self.groups[role]]

    def masses(self, role: str) -> np.ndarray:
        return np.array([self.mass_coefficients[m] for m in self.groups[role]])

    def columns(self) -> list[str]:
        return ["frame"] + [f"{m}_{ax}" for m in self.markers for ax in "xyz"]


@dataclass(frozen=True)
class Movement:
    """A T x M x 3 marker trajectory sampled at ``frame_rate`` Hz.

    ``scale_factors`` lists every scale division applied so far, so the
    original units can be restored with :meth:`denormalized`.
    """

    frames: np.ndarray
    frame_rate: float
    source_id: str
    label: str | None = None
    subject_id: str | None = None
    scale_factors: tuple[float, ...] = ()

    def __post_init__(self):
        frames = _frozen(self.frames)
        if frames.ndim != 3 or frames.shape[2] != 3:
            raise ValueError(f"frames must be T x M x 3, got {frames.shape}")
        if frames.shape[0] < 2:
            raise ValueError("a movement needs at least 2 frames")
        if not np.all(np.isfinite(frames)):
            raise ValueError("non-finite coordinate in movement")
        if not self.frame_rate > 0:
            raise ValueError("frame_rate must be positive")
        object.__setattr__(self, "frames", frames)
        object.__setattr__(self, "frame_rate", float(self.frame_rate))
        object.__setattr__(self, "scale_factors", tuple(self.scale_factors))

    @property
    def n_frames(self) -> int:
        return self.frames.shape[0]

    @property
    def n_markers(self) -> int:
        return self.frames.shape[1]

    def flat(self) -> np.ndarray:
        """Observation matrix T x 3M (marker-major, xyz-minor)."""
        return self.frames.reshape(self.n_frames, -1)

    def with_frames(self, frames: np.ndarray, **changes) -> "Movement":
        return replace(self, frames=frames, **changes)

    def denormalized(self) -> "Movement":
        scale = math.prod(self.scale_factors) if self.scale_factors else 1.0
        return replace(self, frames=self.frames * scale, scale_factors=())


@dataclass(frozen=True)
class LabeledDataset:
    marker_set: MarkerSet
    movements: tuple[Movement, ...]
    label_set: tuple[str, ...]

    def __post_init__(self):
        object.__setattr__(self, "movements", tuple(self.movements))
        object.__setattr__(self, "label_set", tuple(self.label_set))
        if len(set(self.label_set)) != len(self.label_set):
            raise ValueError("label_set has duplicates")
        seen = set()
        for mv in self.movements:
            if mv.n_markers != len(self.marker_set.markers):
                raise ValueError(f"{mv.source_id}: marker count mismatch")
            if mv.label is not None:
                if mv.label not in self.label_set:
                    raise ValueError(f"{mv.source_id}: unknown label {mv.label!r}")
                seen.add(mv.label)
        missing = [lab for lab in self.label_set if lab not in seen]
        if missing:
            raise ValueError(f"no movements for labels {missing}")

    def __len__(self) -> int:
        return len(self.movements)

    @property
    def labels(self) -> list[str | None]:
        return [mv.label for mv in self.movements]

    def subset(self, indices: Sequence[int]) -> "LabeledDataset":
        return LabeledDataset(
            self.marker_set, [self.movements[i] for i in indices], self.label_set
        )

    def find(self, source_id: str) -> int:
        for i, mv in enumerate(self.movements):
            if mv.source_id == source_id:
                return i
        raise KeyError(source_id)


# ---------------------------------------------------------------------------
# trajectory files


def parse_trajectory_file(
    data: bytes | str,
    marker_set: MarkerSet,
    frame_rate: float,
    source_id: str = "<memory>",
    label: str | None = None,
    subject_id: str | None = None,
) -> Movement:
    """Parse a trajectory CSV into a :class:`Movement`.

    The frame rate is not stored in the file; it comes from the manifest.
    Errors name the 1-based line number of the offending row.
    """
    text = data.decode("utf-8") if isinstance(data, bytes) else data
    n_cols = 1 + 3 * len(marker_set.markers)
    rows = []
    reader = csv.reader(io.StringIO(text))
    for lineno, row in enumerate(reader, start=1):
        if not row or all(not c.strip() for c in row):
            continue
        if lineno == 1 and row[0].strip() == "frame":
            if len(row) != n_cols:
                raise ParseError(
                    f"line 1: marker-count mismatch: header has {len(row)} "
                    f"columns, expected {n_cols}"
                )
            continue
        if len(row) != n_cols:
            raise ParseError(
                f"line {lineno}: marker-count mismatch: {len(row)} columns, "
                f"expected {n_cols}"
            )
        try:
            values = [float(c) for c in row[1:]]
        except ValueError:
            raise ParseError(f"line {lineno}: malformed number") from None
        if not all(math.isfinite(v) for v in values):
            raise ParseError(f"line {lineno}: non-finite value")
        rows.append(values)
    if len(rows) < 2:
        raise ParseError(f"{source_id}: need at least 2 frames, got {len(rows)}")
    frames = np.array(rows).reshape(len(rows), -1, 3)
    return Movement(frames, frame_rate, source_id, label, subject_id)


def format_trajectory(movement: Movement, marker_set: MarkerSet) -> str:
    """Serialize to the trajectory CSV format (floats written with ``repr``)."""
    out = io.StringIO()
    out.write(",".join(marker_set.columns()) + "\n")
    for t, row in enumerate(movement.flat()):
        out.write(str(t) + "," + ",".join(repr(float(v)) for v in row) + "\n")
    return out.getvalue()


def marker_set_from_dict(doc: Mapping) -> MarkerSet:
    kwargs = dict(markers=doc["markers"], groups=doc["groups"])
    if "mass_coefficients" in doc:
        kwargs["mass_coefficients"] = doc["mass_coefficients"]
    if "scale_pair" in doc:
        kwargs["scale_pair"] = doc["scale_pair"]
    return MarkerSet(**kwargs)


def load_dataset(manifest_path: str | Path) -> LabeledDataset:
    """Load every movement named in a manifest JSON file.

    Paths inside the manifest are relative to the manifest's directory.
    """
    manifest_path = Path(manifest_path)
    try:
        doc = json.loads(manifest_path.read_text())
    except OSError as exc:
        raise LoadError(f"cannot read manifest {manifest_path}: {exc}") from None
    except json.JSONDecodeError as exc:
        raise LoadError(f"invalid manifest JSON {manifest_path}: {exc}") from None
    try:
        marker_set = marker_set_from_dict(doc)
        frame_rate = float(doc["frame_rate"])
        label_set = tuple(doc["label_set"])
        entries = doc["movements"]
    except (KeyError, TypeError, ValueError) as exc:
        raise LoadError(f"{manifest_path}: bad manifest header: {exc}") from None

    base = manifest_path.parent
    movements = []
    for i, entry in enumerate(entries):
        path = base / entry["file"]
        label = entry.get("label")
        if label is not None and label not in label_set:
            raise LoadError(f"entry {i} ({entry['file']}): unknown label {label!r}")
        try:
            raw = path.read_bytes()
        except OSError:
            raise LoadError(f"entry {i}: cannot read {path}") from None
        try:
            mv = parse_trajectory_file(
                raw,
                marker_set,
                float(entry.get("frame_rate", frame_rate)),
                source_id=entry.get("id", Path(entry["file"]).stem),
                label=label,
                subject_id=entry.get("subject"),
            )
        except ParseError as exc:
            raise LoadError(f"entry {i} ({path}): {exc}") from None
        movements.append(mv)
    try:
        return LabeledDataset(marker_set, movements, label_set)
    except ValueError as exc:
        raise LoadError(f"{manifest_path}: {exc}") from None


def write_dataset(
    directory: str | Path,
    dataset: LabeledDataset,
    frame_rate: float | None = None,
) -> Path:
    """Write a dataset as a manifest plus one CSV per movement."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    ms = dataset.marker_set
    entries = []
    for mv in dataset.movements:
        name = f"{mv.source_id}.csv"
        (directory / name).write_text(format_trajectory(mv, ms))
        entry = {"file": name, "id": mv.source_id, "label": mv.label}
        if mv.subject_id is not None:
            entry["subject"] = mv.subject_id
        entries.append(entry)
    rate = frame_rate if frame_rate is not None else dataset.movements[0].frame_rate
    manifest = {
        "frame_rate": rate,
        "markers": list(ms.markers),
        "groups": {r: list(ms.groups[r]) for r in ROLES},
        "scale_pair": list(ms.scale_pair),
        "label_set": list(dataset.label_set),
        "movements": entries,
    }
    path = directory / "manifest.json"
    path.write_text(json.dumps(manifest, indent=2) + "\n")
    return path


# ---------------------------------------------------------------------------
# preprocessing


def resample(movement: Movement, target_rate: float) -> Movement:
    """Linearly interpolate onto a uniform grid at ``target_rate`` Hz.

    Endpoints are kept exactly; the new length is
    ``round((T - 1) * target_rate / frame_rate) + 1``.
    """
    if not target_rate > 0:
        raise ValueError("target_rate must be positive")
    T = movement.n_frames
    if target_rate == movement.frame_rate:
        return movement
    new_T = int(round((T - 1) * target_rate / movement.frame_rate)) + 1
    new_T = max(new_T, 2)
    src = np.arange(T, dtype=float)
    dst = np.linspace(0.0, T - 1.0, new_T)
    flat = movement.flat()
    out = np.empty((new_T, flat.shape[1]))
    for j in range(flat.shape[1]):
        out[:, j] = np.interp(dst, src, flat[:, j])
    out[0], out[-1] = flat[0], flat[-1]
    return movement.with_frames(out.reshape(new_T, -1, 3), frame_rate=target_rate)


def normalize_scale(movement: Movement, marker_set: MarkerSet) -> Movement:
    """Divide all coordinates by the frame-0 distance between ``scale_pair``.

    Frame 0 is the T-pose reference, the only pose guaranteed to be known.
    """
    a, b = (marker_set.index(m) for m in marker_set.scale_pair)
    scale = float(np.linalg.norm(movement.frames[0, a] - movement.frames[0, b]))
    if scale < 1e-9:
        raise DegeneratePoseError(
            f"{movement.source_id}: scale markers coincide at frame 0"
        )
    return movement.with_frames(
        movement.frames / scale, scale_factors=movement.scale_factors + (scale,)
    )


def stratified_folds(
    labels: Sequence, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Stratified k-fold partition of ``range(len(labels))``.

    Members of each label are shuffled and dealt round-robin; the dealing
    position carries over between labels so fold sizes stay balanced.
    """
    n = len(labels)
    if k < 2:
        raise ValueError("k must be at least 2")
    if k > n:
        raise ValueError(f"k={k} exceeds the number of items ({n})")
    rng = np.random.default_rng(seed)
    fold_of = np.empty(n, dtype=int)
    keys = sorted({str(lab) for lab in labels})
    pos = 0
    for key in keys:
        members = np.array([i for i, lab in enumerate(labels) if str(lab) == key])
        members = members[rng.permutation(len(members))]
        for m in members:
            fold_of[m] = pos % k
            pos += 1
    idx = np.arange(n)
    return [(idx[fold_of != f], idx[fold_of == f]) for f in range(k)]


def kfold_split(
    dataset: LabeledDataset, k: int, seed: int
) -> list[tuple[np.ndarray, np.ndarray]]:
    """Label-stratified (train, test) index pairs; deterministic given seed."""
    return stratified_folds(dataset.labels, k, seed)
