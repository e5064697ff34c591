"""Elastic-net regularized multinomial logistic regression.

Maximizes

    sum_i log P(y_i | x_i) - lam * sum_kj (alpha |b_kj| + (1 - alpha) b_kj^2)

over a K x (p + 1) coefficient matrix (column 0 holds the unpenalized
intercepts).  Features are standardized internally and coefficients are kept
in standardized units, so zero/nonzero patterns do not depend on feature
scale.  The solver is a proximal Newton method: each outer step expands the
log-likelihood to second order in all K x (p + 1) coefficients, maximizes
that penalized quadratic by cyclic coordinate descent with soft-thresholding,
and backtracks so the objective never decreases.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from affectmotion.dataset import stratified_folds

WEIGHT_FLOOR = 1e-5
DEFAULT_ALPHAS = tuple(round(0.05 * i, 2) for i in range(1, 21))


@dataclass(frozen=True)
class RMLRModel:
    theta: np.ndarray
    label_order: tuple[str, ...]
    feature_order: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = np.array(self.theta, dtype=float)
        K, p = len(self.label_order), len(self.feature_order)
        if K < 2:
            raise ValueError("need at least two classes")
        if theta.shape != (K, p + 1):
            raise ValueError(f"theta shape {theta.shape} != {(K, p + 1)}")
        if not np.all(np.isfinite(theta)):
            raise ValueError("non-finite coefficient")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "label_order", tuple(self.label_order))
        object.__setattr__(self, "feature_order", tuple(self.feature_order))
        object.__setattr__(self, "mean", np.asarray(self.mean, dtype=float))
        object.__setattr__(self, "std", np.asarray(self.std, dtype=float))

    @property
    def coef(self) -> np.ndarray:
        return self.theta[:, 1:]

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (np.asarray(X, dtype=float) - self.mean) / self.std

    def to_dict(self) -> dict:
        return {
            "label_order": list(self.label_order),
            "feature_order": list(self.feature_order),
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "theta": self.theta.tolist(),
            "fit": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RMLRModel":
        return cls(
            theta=np.array(d["theta"], dtype=float),
            label_order=d["label_order"],
            feature_order=d["feature_order"],
            mean=d["standardization"]["mean"],
            std=d["standardization"]["std"],
            meta=d.get("fit", {}),
        )

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "RMLRModel":
        return cls.from_dict(json.loads(text))


@dataclass(frozen=True)
class RegPath:
    alpha_grid: np.ndarray
    lambda_grid: np.ndarray  # one row per alpha
    cv_errors: np.ndarray
    best: tuple[float, float]
    warnings: tuple[str, ...] = ()

    def rows(self):
        for a_i, alpha in enumerate(self.alpha_grid):
            for l_i, lam in enumerate(self.lambda_grid[a_i]):
                yield float(alpha), float(lam), float(self.cv_errors[a_i, l_i])


# ---------------------------------------------------------------------------
# objective


def _softmax(eta: np.ndarray) -> np.ndarray:
    z = eta - eta.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _one_hot(y_idx: np.ndarray, K: int) -> np.ndarray:
    Y = np.zeros((len(y_idx), K))
    Y[np.arange(len(y_idx)), y_idx] = 1.0
    return Y


def log_likelihood(theta: np.ndarray, Xs: np.ndarray, Y: np.ndarray) -> float:
    eta = theta[:, 0] + Xs @ theta[:, 1:].T
    m = eta.max(axis=1, keepdims=True)
    lse = (m + np.log(np.exp(eta - m).sum(axis=1, keepdims=True)))[:, 0]
    return float(np.sum(Y * eta) - lse.sum())


def objective(theta, Xs, Y, lam, alpha) -> float:
    """Penalized log-likelihood (the quantity being maximized)."""
    B = theta[:, 1:]
    pen = lam * (alpha * np.abs(B).sum() + (1 - alpha) * (B**2).sum())
    return log_likelihood(theta, Xs, Y) - pen


def smooth_objective(theta, Xs, Y, lam, alpha) -> float:
    """Objective without the l1 term (differentiable everywhere)."""
    return log_likelihood(theta, Xs, Y) - lam * (1 - alpha) * (theta[:, 1:] ** 2).sum()


def smooth_gradient(theta, Xs, Y, lam, alpha) -> np.ndarray:
    """Analytic gradient of :func:`smooth_objective` with respect to theta."""
    P = _softmax(theta[:, 0] + Xs @ theta[:, 1:].T)
    R = Y - P
    grad = np.empty_like(theta)
    grad[:, 0] = R.sum(axis=0)
    grad[:, 1:] = R.T @ Xs - 2 * lam * (1 - alpha) * theta[:, 1:]
    return grad


# ---------------------------------------------------------------------------
# solver


@numba.njit(cache=True)
def _nb_objective(theta, Xs, Y, lam, alpha):
    N, p = Xs.shape
    K = theta.shape[0]
    ll = 0.0
    for i in range(N):
        mx = -1e300
        etas = np.empty(K)
        for k in range(K):
            e = theta[k, 0]
            for j in range(p):
                e += theta[k, j + 1] * Xs[i, j]
            etas[k] = e
            if e > mx:
                mx = e
        s = 0.0
        for k in range(K):
            s += np.exp(etas[k] - mx)
        lse = mx + np.log(s)
        for k in range(K):
            ll += Y[i, k] * (etas[k] - lse)
    pen = 0.0
    for k in range(K):
        for j in range(1, p + 1):
            b = theta[k, j]
            pen += alpha * abs(b) + (1.0 - alpha) * b * b
    return ll - lam * pen


@numba.njit(cache=True)
def _nb_probs(theta, Xs):
    N, p = Xs.shape
    K = theta.shape[0]
    P = np.empty((N, K))
    for i in range(N):
        mx = -1e300
        for k in range(K):
            e = theta[k, 0]
            for j in range(p):
                e += theta[k, j + 1] * Xs[i, j]
            P[i, k] = e
            if e > mx:
                mx = e
        s = 0.0
        for k in range(K):
            P[i, k] = np.exp(P[i, k] - mx)
            s += P[i, k]
        for k in range(K):
            P[i, k] /= s
    return P


@numba.njit(cache=True)
def _nb_hessian(Xa, P, K):
    """Negative Hessian of the log-likelihood, (K q) x (K q) with q = p + 1."""
    N, q = Xa.shape
    D = K * q
    H = np.zeros((D, D))
    w = np.empty(N)
    for k in range(K):
        for l in range(k, K):
            for i in range(N):
                if k == l:
                    wi = P[i, k] * (1.0 - P[i, k])
                    w[i] = wi if wi > WEIGHT_FLOOR else WEIGHT_FLOOR
                else:
                    w[i] = -P[i, k] * P[i, l]
            blk = (Xa * w.reshape(N, 1)).T @ Xa
            H[k * q:(k + 1) * q, l * q:(l + 1) * q] = blk
            if l != k:
                H[l * q:(l + 1) * q, k * q:(k + 1) * q] = blk.T
    return H


@numba.njit(cache=True)
def _nb_quadratic_cd(H, c, beta, q, l1, l2, active, tol, max_cycles):
    """Cyclic coordinate descent with soft-thresholding on a quadratic model.

    Maximizes ``c.d - d'Hd/2 - penalty(beta + d)`` in place on ``beta``;
    ``c`` is the gradient at the expansion point and is updated as
    coordinates move.  Intercepts (index multiple of q) are unpenalized.
    Full sweeps alternate with sweeps over the nonzero coordinates.
    """
    D = H.shape[0]
    updates = 0
    full = True
    for _cycle in range(max_cycles):
        change = 0.0
        for jj in range(D):
            j = jj % q
            if j > 0 and not active[j - 1]:
                continue
            b = beta[jj]
            if not full and j > 0 and b == 0.0:
                continue
            g = c[jj] + H[jj, jj] * b
            if j == 0:
                nb = g / H[jj, jj]
            elif g > l1:
                nb = (g - l1) / (H[jj, jj] + l2)
            elif g < -l1:
                nb = (g + l1) / (H[jj, jj] + l2)
            else:
                nb = 0.0
            d = nb - b
            updates += 1
            if d != 0.0:
                beta[jj] = nb
                for i in range(D):
                    c[i] -= d * H[i, jj]
                if abs(d) > change:
                    change = abs(d)
        if change < tol:
            if full:
                break
            full = True
        else:
            full = False
    return updates


@numba.njit(cache=True)
def _nb_fit(Xs, Y, theta, lam, alpha, active, tol, max_updates):
    N, p = Xs.shape
    K = Y.shape[1]
    q = p + 1
    l1 = lam * alpha
    l2 = 2.0 * lam * (1.0 - alpha)
    Xa = np.empty((N, q))
    for i in range(N):
        Xa[i, 0] = 1.0
        for j in range(p):
            Xa[i, j + 1] = Xs[i, j]
    updates = 0
    obj = _nb_objective(theta, Xs, Y, lam, alpha)
    converged = False
    inner_tol = 1e-2
    while updates < max_updates:
        P = _nb_probs(theta, Xs)
        H = _nb_hessian(Xa, P, K)
        R = Y - P
        c = np.empty(K * q)
        for k in range(K):
            for j in range(q):
                s = 0.0
                for i in range(N):
                    s += Xa[i, j] * R[i, k]
                c[k * q + j] = s
        old = theta.copy()
        beta = old.copy().reshape(K * q)
        updates += _nb_quadratic_cd(H, c, beta, q, l1, l2, active, inner_tol, 1000)
        prop = beta.reshape(K, q)
        # backtracking keeps the penalized objective monotone
        cand = prop.copy()
        new_obj = _nb_objective(cand, Xs, Y, lam, alpha)
        step = 1.0
        while new_obj < obj and step > 1e-10:
            step *= 0.5
            cand = old + step * (prop - old)
            new_obj = _nb_objective(cand, Xs, Y, lam, alpha)
        if new_obj < obj:
            cand = old
            new_obj = obj
        change = np.max(np.abs(cand - old))
        theta[:, :] = cand
        obj = new_obj
        if change < tol and inner_tol <= tol:
            converged = True
            break
        inner_tol = max(tol, min(inner_tol, 0.01 * change))
    return theta, obj, updates, converged


def _prepare(X, y, labels=None):
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise ValueError("X must be N x p")
    if labels is None:
        labels = sorted({str(v) for v in y})
    labels = tuple(labels)
    lookup = {lab: i for i, lab in enumerate(labels)}
    try:
        y_idx = np.array([lookup[str(v)] for v in y], dtype=int)
    except KeyError as exc:
        raise ValueError(f"label {exc.args[0]!r} not in label order") from None
    counts = np.bincount(y_idx, minlength=len(labels))
    if np.any(counts == 0):
        empty = [labels[i] for i in np.flatnonzero(counts == 0)]
        raise ValueError(f"empty class(es): {empty}")
    return X, y_idx, labels


def _standardization(X):
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    active = std > 1e-12 * np.maximum(1.0, np.abs(mean))
    std = np.where(active, std, 1.0)
    return mean, std, active


def fit(
    X: np.ndarray,
    y: Sequence,
    alpha: float,
    lam: float,
    feature_names: Sequence[str] | None = None,
    labels: Sequence[str] | None = None,
    theta0: np.ndarray | None = None,
    tol: float = 1e-7,
    max_updates: int | None = None,
) -> RMLRModel:
    """Fit the penalized model at one (alpha, lambda) pair.

    Constant features are standardized to zero and keep a zero coefficient.
    ``theta0`` warm-starts the solver (standardized units).
    """
    X, y_idx, labels = _prepare(X, y, labels)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError("alpha must lie in [0, 1]")
    if lam < 0:
        raise ValueError("lambda must be non-negative")
    N, p = X.shape
    K = len(labels)
    if N < K:
        raise ValueError("need at least as many samples as classes")
    names = tuple(feature_names) if feature_names is not None else tuple(f"x{j}" for j in range(p))
    if len(names) != p:
        raise ValueError("feature_names length does not match X")
    mean, std, active = _standardization(X)
    Xs = (X - mean) / std
    Y = _one_hot(y_idx, K)
    theta = np.zeros((K, p + 1)) if theta0 is None else np.array(theta0, dtype=float)
    if max_updates is None:
        max_updates = 10 * p * K * 1000
    theta, obj, updates, converged = _nb_fit(
        Xs, Y, theta, float(lam), float(alpha), active, tol, max_updates
    )
    meta = {
        "alpha": float(alpha),
        "lambda": float(lam),
        "objective": float(objective(theta, Xs, Y, lam, alpha)),
        "iterations": int(updates),
        "converged": bool(converged),
    }
    return RMLRModel(theta, labels, names, mean, std, meta)


def predict_proba(model: RMLRModel, x: np.ndarray) -> np.ndarray:
    """Class probabilities (symmetric softmax); accepts one p-vector or N x p."""
    x = np.asarray(x, dtype=float)
    p = len(model.feature_order)
    if x.shape[-1] != p:
        raise ValueError(f"expected {p} features, got {x.shape[-1]}")
    xs = model.standardize(x)
    return _softmax(model.theta[:, 0] + xs @ model.coef.T)


def predict(model: RMLRModel, X: np.ndarray) -> list[str]:
    P = predict_proba(model, np.atleast_2d(X))
    return [model.label_order[i] for i in P.argmax(axis=1)]


def lambda_max(X: np.ndarray, y: Sequence, alpha: float, labels=None) -> float:
    """Smallest lambda at which every non-intercept coefficient is zero."""
    X, y_idx, labels = _prepare(X, y, labels)
    mean, std, _ = _standardization(X)
    Xs = (X - mean) / std
    Y = _one_hot(y_idx, len(labels))
    R = Y - Y.mean(axis=0)
    g = np.abs(R.T @ Xs).max()
    return float(g / max(alpha, 1e-3))


def lambda_grid(lmax: float, n_lambda: int = 100, ratio: float = 1e-4) -> np.ndarray:
    return np.logspace(np.log10(lmax), np.log10(lmax * ratio), n_lambda)


def fit_path(X, y, alpha, lambdas, labels=None, feature_names=None) -> list[RMLRModel]:
    """Warm-started fits along a descending lambda sequence."""
    models = []
    theta = None
    for lam in lambdas:
        m = fit(X, y, alpha, lam, feature_names, labels, theta0=theta)
        theta = m.theta
        models.append(m)
    return models


def cross_validate(
    X: np.ndarray,
    y: Sequence,
    alpha_grid: Sequence[float] = DEFAULT_ALPHAS,
    n_lambda: int = 100,
    k: int = 10,
    seed: int = 0,
    labels: Sequence[str] | None = None,
) -> RegPath:
    """Stratified k-fold misclassification over an (alpha, lambda) grid.

    Each alpha gets its own log-spaced lambda grid from lambda_max down to
    1e-4 * lambda_max.  The best cell has the lowest error; ties go to the
    larger lambda, then the larger alpha.
    """
    X, y_idx, labels = _prepare(X, y, labels)
    y_lab = [labels[i] for i in y_idx]
    N = len(y_lab)
    notes = []
    counts = np.bincount(y_idx, minlength=len(labels))
    if counts.min() < k:
        msg = (
            f"smallest class has {counts.min()} members (< {k} folds); "
            "using leave-one-out"
        )
        warnings.warn(msg)
        notes.append(msg)
        idx = np.arange(N)
        folds = [(np.delete(idx, i), idx[i : i + 1]) for i in range(N)]
    else:
        folds = stratified_folds(y_lab, k, seed)

    alphas = np.asarray(alpha_grid, dtype=float)
    grids = np.array([lambda_grid(lambda_max(X, y_lab, a, labels), n_lambda) for a in alphas])
    errors = np.zeros((len(alphas), n_lambda))
    for a_i, alpha in enumerate(alphas):
        for train, test in folds:
            ytr = [y_lab[i] for i in train]
            models = fit_path(X[train], ytr, alpha, grids[a_i], labels=labels)
            truth = y_idx[test]
            for l_i, m in enumerate(models):
                P = predict_proba(m, X[test])
                errors[a_i, l_i] += np.sum(P.argmax(axis=1) != truth)
    errors /= N

    best_err = errors.min()
    cands = [
        (grids[a_i, l_i], alphas[a_i])
        for a_i in range(len(alphas))
        for l_i in range(n_lambda)
        if errors[a_i, l_i] <= best_err + 1e-12
    ]
    lam_best, alpha_best = max(cands)
    return RegPath(alphas, grids, errors, (float(alpha_best), float(lam_best)), tuple(notes))


def salient_components(model: RMLRModel, label: str, tol: float = 1e-8) -> set[str]:
    """Features with a nonzero coefficient in the row of ``label``."""
    if label not in model.label_order:
        raise KeyError(f"unknown class {label!r}")
    row = model.coef[model.label_order.index(label)]
    return {name for name, b in zip(model.feature_order, row) if abs(b) > tol}


def discriminative_components(
    model: RMLRModel, class_a: str, class_b: str, tol: float = 1e-8
) -> set[str]:
    """Features weighted (nonzero) for either class of the pair."""
    return salient_components(model, class_a, tol) | salient_components(model, class_b, tol)


def nondiscriminative_set(all_components, set_a, set_b) -> set[str]:
    """``L minus (L_a intersect L_b)``."""
    return set(all_components) - (set(set_a) & set(set_b))
