"""Affective re-generation of a desired motion path.

Pipeline for a desired path and a target emotion:

1. LMA vector of the desired path.
2. Drop the LMA components salient to both the original and the target
   emotion (per the RMLR coefficients).
3. Retrieve target-class movements inside an epsilon ball around the desired
   path in that subspace.
4. Train an HMM on the neighbours (plus ``n_d`` copies of the desired path).
5. Viterbi-decode the desired path, emit the state means along the path and
   low-pass the result.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from affectmotion import hmm as hmm_mod
from affectmotion.dataset import LabeledDataset, Movement
from affectmotion.evaluation import KNNClassifier
from affectmotion.filters import FilterParams, lowpass
from affectmotion.lma import COMPONENTS, DEFAULT_FILTER, feature_matrix, lma_vector
from affectmotion.rmlr import RMLRModel, nondiscriminative_set, salient_components


class GenerationError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it."""

    def __init__(self, stage: str, message: str):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage


class EmptySubspaceError(ValueError):
    pass


@dataclass(frozen=True)
class GenerationConfig:
    n_states: int = 12
    n_d: int = 0
    epsilon_fraction: float = 0.10
    smoothing: FilterParams = field(default_factory=lambda: FilterParams.lowpass(6.0))
    feature_filter: FilterParams = DEFAULT_FILTER
    distance_metric: str = "euclidean"
    seed: int = 0
    max_iter: int = 200
    tol: float = 1e-4
    cov_floor: float = 1e-2

    def __post_init__(self):
        if self.n_states < 2:
            raise ValueError("n_states must be at least 2")
        if self.n_d < 0:
            raise ValueError("n_d must be non-negative")
        if not 0.0 < self.epsilon_fraction <= 1.0:
            raise ValueError("epsilon_fraction must lie in (0, 1]")
        if self.distance_metric != "euclidean":
            raise ValueError("only the euclidean metric is supported")

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "n_d": self.n_d,
            "epsilon_fraction": self.epsilon_fraction,
            "smoothing": self.smoothing.to_dict(),
            "feature_filter": self.feature_filter.to_dict(),
            "distance_metric": self.distance_metric,
            "seed": self.seed,
            "max_iter": self.max_iter,
            "tol": self.tol,
            "cov_floor": self.cov_floor,
        }


@dataclass
class GenerationResult:
    output: Movement
    state_sequence: np.ndarray
    neighbors: list[str]
    subspace: list[str]
    hmm: hmm_mod.GaussianHMM
    original_emotion: str
    target_emotion: str
    diagnostics: dict

    def sidecar(self, config: GenerationConfig) -> dict:
        return {
            "source_id": self.diagnostics["source_id"],
            "original_emotion": self.original_emotion,
            "target_emotion": self.target_emotion,
            "output_frames": int(self.output.n_frames),
            "state_sequence": [int(s) for s in self.state_sequence],
            "neighbors": list(self.neighbors),
            "neighbor_distances": self.diagnostics["neighbor_distances"],
            "subspace": list(self.subspace),
            "radius": self.diagnostics["radius"],
            "distance_to_desired": self.diagnostics["distance_to_desired"],
            "reconstruction_error": self.diagnostics["reconstruction_error"],
            "warnings": list(self.diagnostics["warnings"]),
            "config": config.to_dict(),
        }


def select_subspace(
    rmlr_model: RMLRModel,
    original_emotion: str,
    target_emotion: str,
    all_components: Sequence[str] = COMPONENTS,
) -> list[str]:
    """Components kept for the neighbour search, in canonical order."""
    for lab in (original_emotion, target_emotion):
        if lab not in rmlr_model.label_order:
            raise KeyError(f"emotion {lab!r} unknown to the RMLR model")
    keep = nondiscriminative_set(
        all_components,
        salient_components(rmlr_model, original_emotion),
        salient_components(rmlr_model, target_emotion),
    )
    if not keep:
        raise EmptySubspaceError(
            f"no kinematic subspace for {original_emotion} -> {target_emotion}"
        )
    return [c for c in all_components if c in keep]


@dataclass
class Neighbors:
    indices: list[int]
    distances: list[float]
    radius: float
    warnings: list[str]


def epsilon_neighbors(
    features: np.ndarray,
    labels: Sequence[str],
    desired_features: np.ndarray,
    target_emotion: str,
    subspace: Sequence[str],
    epsilon_fraction: float = 0.10,
    components: Sequence[str] = COMPONENTS,
) -> Neighbors:
    """Target-class movements within the epsilon ball, nearest first.

    Columns are z-scored with statistics from ``features`` (the training
    set).  The radius is ``epsilon_fraction`` times the distance to the
    farthest target-class movement; an empty ball falls back to the single
    nearest target-class movement.
    """
    F = np.asarray(features, dtype=float)
    cols = [list(components).index(c) for c in subspace]
    target_idx = [i for i, lab in enumerate(labels) if lab == target_emotion]
    if not target_idx:
        raise ValueError(f"no movements labelled {target_emotion!r}")
    mean = F[:, cols].mean(axis=0)
    std = F[:, cols].std(axis=0)
    std = np.where(std > 0, std, 1.0)
    Z = (F[target_idx][:, cols] - mean) / std
    q = (np.asarray(desired_features, dtype=float)[cols] - mean) / std
    dist = np.sqrt(((Z - q) ** 2).sum(axis=1))
    return neighbors_from_distances(dist, target_idx, epsilon_fraction)


def neighbors_from_distances(dist, candidate_idx, epsilon_fraction) -> Neighbors:
    dist = np.asarray(dist, dtype=float)
    radius = float(epsilon_fraction * dist.max())
    order = np.argsort(dist, kind="stable")
    inside = [int(i) for i in order if dist[i] <= radius]
    notes = []
    if not inside:
        inside = [int(order[0])]
        notes.append(
            f"epsilon ball (radius {radius:.6g}) is empty; "
            "falling back to the nearest target-class movement"
        )
    return Neighbors(
        [int(candidate_idx[i]) for i in inside], [float(dist[i]) for i in inside], radius, notes
    )


def concatenate_state_means(hmm: hmm_mod.GaussianHMM, state_sequence) -> np.ndarray:
    return hmm.means[np.asarray(state_sequence, dtype=int)].copy()


def smooth(trajectory: np.ndarray, smoothing_params: FilterParams, frame_rate: float) -> np.ndarray:
    """Zero-phase low-pass per coordinate; length is unchanged."""
    traj = np.asarray(trajectory, dtype=float)
    if traj.shape[0] < 4 and not smoothing_params.is_identity:
        raise ValueError("smoothing needs at least 4 frames")
    return lowpass(traj, frame_rate, smoothing_params)


def mean_frame_distance(a: np.ndarray, b: np.ndarray) -> float:
    """Mean over frames of the Euclidean distance between flattened poses."""
    a = np.asarray(a).reshape(len(a), -1)
    b = np.asarray(b).reshape(len(b), -1)
    return float(np.linalg.norm(a - b, axis=1).mean())


def generate(
    desired: Movement,
    target_emotion: str,
    dataset: LabeledDataset,
    rmlr_model: RMLRModel,
    config: GenerationConfig = GenerationConfig(),
    features: np.ndarray | None = None,
    classifier: KNNClassifier | None = None,
    desired_features: np.ndarray | None = None,
) -> GenerationResult:
    """Re-generate ``desired`` so that it conveys ``target_emotion``.

    ``dataset`` movements and ``desired`` must share marker set and
    coordinate normalization.  ``features`` (N x 27 LMA matrix of the
    dataset) and ``desired_features`` (LMA vector of ``desired``) are
    computed when not given.  The original emotion is the
    desired path's label, or the classifier's prediction when unlabelled.
    """
    if target_emotion not in dataset.label_set:
        raise GenerationError("input", f"unknown target emotion {target_emotion!r}")
    ms = dataset.marker_set
    notes: list[str] = []

    try:
        if features is None:
            features = feature_matrix(dataset.movements, ms, config.feature_filter)
        if desired_features is None:
            desired_vec = lma_vector(desired, ms, config.feature_filter).as_array()
        else:
            desired_vec = np.asarray(desired_features, dtype=float)
    except ValueError as exc:
        raise GenerationError("lma", str(exc)) from exc

    labels = dataset.labels
    original = desired.label
    if original is None:
        if classifier is None:
            classifier = KNNClassifier(features, labels)
        original = classifier.predict(desired_vec)[0]
        notes.append(f"original emotion recognized as {original!r}")

    try:
        subspace = select_subspace(rmlr_model, original, target_emotion)
    except (KeyError, EmptySubspaceError) as exc:
        raise GenerationError("subspace", str(exc)) from exc

    try:
        nb = epsilon_neighbors(
            features, labels, desired_vec, target_emotion, subspace, config.epsilon_fraction
        )
    except ValueError as exc:
        raise GenerationError("neighbors", str(exc)) from exc
    notes.extend(nb.warnings)

    sequences, used, used_dist = [], [], []
    for i, dist in zip(nb.indices, nb.distances):
        mv = dataset.movements[i]
        if mv.n_frames < config.n_states:
            notes.append(f"neighbor {mv.source_id} shorter than {config.n_states} frames; dropped")
            continue
        sequences.append(mv.flat())
        used.append(mv.source_id)
        used_dist.append(dist)
    if not sequences:
        raise GenerationError("neighbors", "every neighbor is shorter than the state count")
    X_d = desired.flat()
    sequences.extend([X_d] * config.n_d)

    try:
        init = hmm_mod.init_segmental(sequences, config.n_states, config.cov_floor)
        model, report = hmm_mod.baum_welch(
            sequences, init, config.max_iter, config.tol, config.cov_floor
        )
    except (ValueError, hmm_mod.NumericalFailure, np.linalg.LinAlgError) as exc:
        raise GenerationError("hmm", str(exc)) from exc

    try:
        states = hmm_mod.viterbi(model, X_d)
    except ValueError as exc:
        raise GenerationError("viterbi", str(exc)) from exc
    raw = concatenate_state_means(model, states)
    try:
        out = smooth(raw, config.smoothing, desired.frame_rate)
    except ValueError as exc:
        raise GenerationError("smooth", str(exc)) from exc

    output = Movement(
        out.reshape(desired.n_frames, -1, 3),
        desired.frame_rate,
        source_id=f"{desired.source_id}_to_{target_emotion}",
        label=target_emotion,
        subject_id=desired.subject_id,
        scale_factors=desired.scale_factors,
    )
    diagnostics = {
        "source_id": desired.source_id,
        "neighbor_distances": used_dist,
        "radius": nb.radius,
        "warnings": notes,
        "em_iterations": report.iterations,
        "reconstruction_error": mean_frame_distance(raw, X_d),
        "distance_to_desired": mean_frame_distance(out, X_d),
    }
    return GenerationResult(
        output, states, used, subspace, model, original, target_emotion, diagnostics
    )
