"""Objective evaluation: kNN recognition, k-means exemplars, NN-search timing.

The kNN classifier in standardized LMA space stands in for an external
affective recognition model; it is plain plumbing, not a contribution.
"""

from __future__ import annotations

import csv
import io
import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np


# ---------------------------------------------------------------------------
# nearest-neighbour classification


class KNNClassifier:
    """k-nearest-neighbour vote in a z-scored feature space.

    Standardization statistics come from the training set only.  A tied
    vote falls back to the label of the single nearest neighbour.
    """

    def __init__(self, train_X, train_y, k: int = 1):
        X = np.asarray(train_X, dtype=float)
        if X.ndim != 2 or X.shape[0] == 0:
            raise ValueError("empty training set")
        if len(train_y) != X.shape[0]:
            raise ValueError("train_X and train_y lengths differ")
        self.k = min(k, X.shape[0])
        self.mean = X.mean(axis=0)
        std = X.std(axis=0)
        self.std = np.where(std > 0, std, 1.0)
        self.X = (X - self.mean) / self.std
        self.y = list(train_y)

    def predict(self, test_X) -> list:
        T = (np.atleast_2d(np.asarray(test_X, dtype=float)) - self.mean) / self.std
        out = []
        for row in T:
            dist = np.sqrt(((self.X - row) ** 2).sum(axis=1))
            order = np.argsort(dist, kind="stable")[: self.k]
            votes = Counter(self.y[i] for i in order)
            top = max(votes.values())
            winners = {lab for lab, n in votes.items() if n == top}
            if len(winners) == 1:
                out.append(winners.pop())
            else:
                out.append(self.y[order[0]])
        return out


def knn_classify(train_X, train_y, test_X, k: int = 1) -> list:
    return KNNClassifier(train_X, train_y, k).predict(test_X)


# ---------------------------------------------------------------------------
# confusion matrices


@dataclass(frozen=True)
class ConfusionMatrix:
    labels: tuple[str, ...]
    counts: np.ndarray  # rows: true label, columns: recognized label

    def percent(self) -> np.ndarray:
        rows = self.counts.sum(axis=1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            pct = np.where(rows > 0, 100.0 * self.counts / rows, 0.0)
        return pct

    @property
    def accuracy(self) -> float:
        total = self.counts.sum()
        return float(np.trace(self.counts) / total) if total else 0.0

    def to_csv(self) -> str:
        out = io.StringIO()
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["true\\recognized", *self.labels])
        for lab, row in zip(self.labels, self.counts):
            w.writerow([lab, *map(int, row)])
        w.writerow(["accuracy", repr(self.accuracy)])
        return out.getvalue()


def confusion_matrix(true_labels, predicted_labels, label_order) -> ConfusionMatrix:
    if len(true_labels) != len(predicted_labels):
        raise ValueError("label sequences differ in length")
    labels = tuple(label_order)
    pos = {lab: i for i, lab in enumerate(labels)}
    counts = np.zeros((len(labels), len(labels)), dtype=int)
    for t, p in zip(true_labels, predicted_labels):
        if t not in pos or p not in pos:
            raise ValueError(f"unknown label in pair ({t!r}, {p!r})")
        counts[pos[t], pos[p]] += 1
    return ConfusionMatrix(labels, counts)


# ---------------------------------------------------------------------------
# clustering


@dataclass(frozen=True)
class ClusteringResult:
    assignments: np.ndarray
    centers: np.ndarray
    goc: float
    k: int
    wcss: float
    wcss_history: tuple[float, ...] = field(default=(), compare=False)


def _wcss(X, assign, centers):
    return float(((X - centers[assign]) ** 2).sum())


def _lloyd(X, centers, max_iter):
    history = []
    assign = None
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None]) ** 2).sum(axis=2)
        new_assign = d2.argmin(axis=1)
        # repair empty clusters from the point farthest from its center
        for c in range(len(centers)):
            if not np.any(new_assign == c):
                far = int(np.argmax(d2[np.arange(len(X)), new_assign]))
                new_assign[far] = c
                d2[far] = 0.0
        history.append(_wcss(X, new_assign, centers))
        new_centers = np.array([X[new_assign == c].mean(axis=0) for c in range(len(centers))])
        history.append(_wcss(X, new_assign, new_centers))
        if assign is not None and np.array_equal(new_assign, assign):
            centers = new_centers
            break
        assign, centers = new_assign, new_centers
    return assign, centers, history


def _kmeanspp(X, k, rng):
    centers = [X[rng.integers(len(X))]]
    for _ in range(1, k):
        d2 = np.min([((X - c) ** 2).sum(axis=1) for c in centers], axis=0)
        total = d2.sum()
        if total <= 0:
            centers.append(X[rng.integers(len(X))])
        else:
            centers.append(X[rng.choice(len(X), p=d2 / total)])
    return np.array(centers, dtype=float)


def kmeans(X, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> ClusteringResult:
    """Lloyd's algorithm, best of ``restarts`` k-means++ initializations."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    if k < 1 or k > len(X):
        raise ValueError(f"k={k} must lie in [1, {len(X)}]")
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(restarts):
        assign, centers, hist = _lloyd(X, _kmeanspp(X, k, rng), max_iter)
        w = _wcss(X, assign, centers)
        if best is None or w < best[0] - 1e-12:
            best = (w, assign, centers, hist)
    w, assign, centers, hist = best
    g = goc(X, assign) if k >= 2 else float("nan")
    return ClusteringResult(assign, centers, g, k, w, tuple(hist))


def _mean_pairwise(A, B):
    return float(np.sqrt(((A[:, None, :] - B[None]) ** 2).sum(axis=2)).mean())


def goc(X, assignments) -> float:
    """Goodness of clustering: weighted between- over within-cluster distance.

    Distances are mean pairwise Euclidean; a singleton's within-cluster
    distance is 0 and the denominator is floored at 1e-12.
    """
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    assignments = np.asarray(assignments)
    clusters = [X[assignments == c] for c in np.unique(assignments)]
    if len(clusters) < 2:
        raise ValueError("GOC needs at least two clusters")
    n = len(X)
    num = den = 0.0
    for i, Ci in enumerate(clusters):
        ni = len(Ci)
        if ni > 1:
            iu = np.triu_indices(ni, 1)
            d = np.sqrt(((Ci[:, None, :] - Ci[None]) ** 2).sum(axis=2))[iu]
            den += ni * d.mean()
        for j, Cj in enumerate(clusters):
            if j != i:
                num += ni * ni / (n - ni) * _mean_pairwise(Ci, Cj)
    return num / (2.0 * max(den, 1e-12))


def select_exemplar(features, k_range=range(2, 6), seed: int = 0):
    """Index of the exemplar among generated movements.

    ``features`` is an N x p matrix (one LMA vector per movement).  The
    clustering with the highest GOC wins; the exemplar is the member of its
    most populous cluster closest to that cluster's center.  Returns
    ``(index, clustering_or_None, warnings)``.
    """
    X = np.asarray(features, dtype=float)
    n = len(X)
    if n < 2:
        raise ValueError("need at least two movements")
    std = X.std(axis=0)
    Z = (X - X.mean(axis=0)) / np.where(std > 0, std, 1.0)
    if not np.any(std > 0):
        return 0, None, ["all movements identical: first returned"]
    if n < 5:
        d = np.sqrt(((Z[:, None] - Z[None]) ** 2).sum(axis=2)).sum(axis=1)
        return int(np.argmin(d)), None, ["fewer than 5 movements: medoid returned"]
    best = None
    for k in k_range:
        if k < 2 or k >= n:
            continue
        res = kmeans(Z, k, seed=seed)
        if best is None or res.goc > best.goc:
            best = res
    if best is None:
        raise ValueError("no usable cluster count in k_range")
    sizes = np.bincount(best.assignments, minlength=best.k)
    top = int(np.argmax(sizes))
    members = np.flatnonzero(best.assignments == top)
    dist = np.sqrt(((Z[members] - best.centers[top]) ** 2).sum(axis=1))
    return int(members[np.argmin(dist)]), best, []


# ---------------------------------------------------------------------------
# nearest-neighbour search benchmark


@dataclass
class BenchmarkResult:
    method: str
    times: list[float]
    retrieved: list[int]

    @property
    def mean(self) -> float:
        return float(np.mean(self.times))

    @property
    def sd(self) -> float:
        return float(np.std(self.times))


def _timed(fn):
    t0 = time.perf_counter()
    out = fn()
    return out, time.perf_counter() - t0


def benchmark_nn_search(
    features: np.ndarray,
    labels: Sequence[str],
    queries: Sequence[int],
    methods: Sequence[str] = ("lma_subspace", "hmm_kl", "hmm_rmlr"),
    subspaces: dict | None = None,
    hmm_cache: Sequence | None = None,
    hmm_rmlr_model=None,
    kl_samples: int = 10,
    kl_horizon: int = 60,
    seed: int = 0,
    components: Sequence[str] | None = None,
) -> dict[str, BenchmarkResult]:
    """Time the nearest-neighbour search of each method per query.

    Queries are dataset indices; each search excludes the query itself.
    ``lma_subspace`` searches the z-scored LMA columns in
    ``subspaces[label]`` (all columns if absent); ``hmm_kl`` ranks cached
    per-movement HMMs by symmetrized Monte-Carlo KL; ``hmm_rmlr`` ranks
    flattened HMM parameters restricted to the non-discriminative set of
    ``hmm_rmlr_model``.
    """
    from affectmotion import hmm as hmm_mod
    from affectmotion.lma import COMPONENTS
    from affectmotion.rmlr import salient_components

    comps = list(components or COMPONENTS)
    F = np.asarray(features, dtype=float)
    std = F.std(axis=0)
    Z = (F - F.mean(axis=0)) / np.where(std > 0, std, 1.0)
    results = {}
    for method in methods:
        if method in ("hmm_kl", "hmm_rmlr") and hmm_cache is None:
            raise ValueError(f"method {method!r} needs cached per-movement HMMs")
        if method == "hmm_rmlr" and hmm_rmlr_model is None:
            raise ValueError("method 'hmm_rmlr' needs an RMLR model over HMM parameters")
        if method not in ("lma_subspace", "hmm_kl", "hmm_rmlr"):
            raise ValueError(f"unknown method {method!r}")
        times, got = [], []
        if method == "hmm_rmlr":
            P = np.array([flatten_hmm(m) for m in hmm_cache])
            Pz = hmm_rmlr_model.standardize(P)
        for q in queries:
            others = np.array([i for i in range(len(F)) if i != q])
            if method == "lma_subspace":
                sub = (subspaces or {}).get(labels[q]) or comps
                cols = [comps.index(c) for c in sub]

                def search():
                    d = np.sqrt(((Z[others][:, cols] - Z[q, cols]) ** 2).sum(axis=1))
                    return int(others[np.argmin(d)])

            elif method == "hmm_kl":

                def search():
                    d = [
                        hmm_mod.kl_distance(
                            hmm_cache[q], hmm_cache[i], kl_samples, kl_horizon, seed
                        )
                        for i in others
                    ]
                    return int(others[int(np.argmin(d))])

            else:

                def search():
                    sal = salient_components(hmm_rmlr_model, labels[q])
                    keep = [
                        j
                        for j, name in enumerate(hmm_rmlr_model.feature_order)
                        if name not in sal
                    ] or list(range(P.shape[1]))
                    d = np.sqrt(((Pz[others][:, keep] - Pz[q, keep]) ** 2).sum(axis=1))
                    return int(others[np.argmin(d)])

            idx, dt = _timed(search)
            times.append(dt)
            got.append(idx)
        results[method] = BenchmarkResult(method, times, got)
    return results


def flatten_hmm(model) -> np.ndarray:
    """Means, covariance upper triangles and transitions as one vector."""
    iu = np.triu_indices(model.d)
    return np.concatenate(
        [model.means.ravel(), np.concatenate([c[iu] for c in model.covariances]), model.transitions.ravel()]
    )


def benchmark_csv(results: dict[str, BenchmarkResult]) -> str:
    out = io.StringIO()
    w = csv.writer(out, lineterminator="\n")
    w.writerow(["method", "mean_s", "sd_s", "retrieved"])
    for name, r in results.items():
        w.writerow([name, f"{r.mean:.6g}", f"{r.sd:.6g}", " ".join(map(str, r.retrieved))])
    return out.getvalue()
