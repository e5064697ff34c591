"""Fully-connected HMMs with one full-covariance Gaussian output per state.

All recursions run in log space.  Covariances are kept above a floor by
clipping their eigenvalues, which is the exact constrained maximizer in the
M-step and therefore keeps EM monotone.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

LOG_2PI = float(np.log(2.0 * np.pi))


class NumericalFailure(RuntimeError):
    pass


def _floor_covs(covs: np.ndarray, floor: float) -> np.ndarray:
    """Clip the eigenvalues of a stack of covariances at ``floor``."""
    covs = 0.5 * (covs + np.swapaxes(covs, -1, -2))
    evals, evecs = np.linalg.eigh(covs)
    low = evals[..., 0] < floor
    if np.any(low):
        v, e = np.maximum(evals[low], floor), evecs[low]
        out = (e * v[:, None, :]) @ np.swapaxes(e, -1, -2)
        covs[low] = 0.5 * (out + np.swapaxes(out, -1, -2))
    return covs


@numba.njit(cache=True)
def _log_gauss(X, means, chol, logdet):
    """T x N Gaussian log densities given Cholesky factors."""
    T, d = X.shape
    N = means.shape[0]
    out = np.empty((T, N))
    z = np.empty(d)
    for s in range(N):
        L = chol[s]
        const = -0.5 * (d * LOG_2PI + logdet[s])
        for t in range(T):
            q = 0.0
            for i in range(d):
                acc = X[t, i] - means[s, i]
                for j in range(i):
                    acc -= L[i, j] * z[j]
                z[i] = acc / L[i, i]
                q += z[i] * z[i]
            out[t, s] = const - 0.5 * q
    return out


@dataclass(frozen=True)
class GaussianHMM:
    transitions: np.ndarray
    priors: np.ndarray
    means: np.ndarray
    covariances: np.ndarray
    meta: dict = field(default_factory=dict, compare=False)

    def __post_init__(self):
        A = np.array(self.transitions, dtype=float)
        pi = np.array(self.priors, dtype=float)
        mu = np.array(self.means, dtype=float)
        cov = np.array(self.covariances, dtype=float)
        n = A.shape[0]
        if A.shape != (n, n) or pi.shape != (n,) or mu.ndim != 2 or mu.shape[0] != n:
            raise ValueError("inconsistent HMM parameter shapes")
        d = mu.shape[1]
        if cov.shape != (n, d, d):
            raise ValueError(f"covariances must be {(n, d, d)}, got {cov.shape}")
        if np.any(A < 0) or not np.allclose(A.sum(axis=1), 1.0, atol=1e-9):
            raise ValueError("transition rows must be stochastic")
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("priors must sum to 1")
        self._set(A, pi, mu, cov)

    def _set(self, A, pi, mu, cov):
        chol = np.linalg.cholesky(cov)
        logdet = 2.0 * np.log(np.diagonal(chol, axis1=1, axis2=2)).sum(axis=1)
        for name, val in (("transitions", A), ("priors", pi), ("means", mu), ("covariances", cov)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "_chol", chol)
        object.__setattr__(self, "_logdet", logdet)

    @classmethod
    def _trusted(cls, A, pi, mu, cov, meta=None) -> "GaussianHMM":
        """Build without validation; for parameters produced by EM itself."""
        obj = object.__new__(cls)
        object.__setattr__(obj, "meta", {} if meta is None else meta)
        obj._set(A, pi, mu, cov)
        return obj

    @property
    def n_states(self) -> int:
        return self.transitions.shape[0]

    @property
    def d(self) -> int:
        return self.means.shape[1]

    def log_emissions(self, X: np.ndarray) -> np.ndarray:
        """T x N matrix of Gaussian log densities."""
        X = np.asarray(X, dtype=float)
        if X.ndim != 2 or X.shape[1] != self.d:
            raise ValueError(f"observations must be T x {self.d}, got {X.shape}")
        return _log_gauss(np.ascontiguousarray(X), self.means, self._chol, self._logdet)

    def log_params(self):
        with np.errstate(divide="ignore"):
            return np.log(self.priors), np.log(self.transitions)

    def to_dict(self) -> dict:
        return {
            "n_states": self.n_states,
            "d": self.d,
            "priors": self.priors.tolist(),
            "transitions": self.transitions.tolist(),
            "means": self.means.tolist(),
            "covariances": self.covariances.tolist(),
            "train": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GaussianHMM":
        return cls(d["transitions"], d["priors"], d["means"], d["covariances"], d.get("train", {}))

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True) + "\n"

    @classmethod
    def loads(cls, text: str) -> "GaussianHMM":
        return cls.from_dict(json.loads(text))


@dataclass
class TrainReport:
    log_likelihood_per_iter: list[float]
    iterations: int
    converged: bool


# ---------------------------------------------------------------------------
# log-space kernels


@numba.njit(cache=True)
def _lse(v):
    mx = -np.inf
    for x in v:
        if x > mx:
            mx = x
    if mx == -np.inf:
        return -np.inf
    s = 0.0
    for x in v:
        s += np.exp(x - mx)
    return mx + np.log(s)


@numba.njit(cache=True)
def _forward(logB, logpi, logA):
    T, N = logB.shape
    la = np.empty((T, N))
    tmp = np.empty(N)
    for j in range(N):
        la[0, j] = logpi[j] + logB[0, j]
    for t in range(1, T):
        for j in range(N):
            for i in range(N):
                tmp[i] = la[t - 1, i] + logA[i, j]
            la[t, j] = _lse(tmp) + logB[t, j]
    return la


@numba.njit(cache=True)
def _backward(logB, logA):
    T, N = logB.shape
    lb = np.zeros((T, N))
    tmp = np.empty(N)
    for t in range(T - 2, -1, -1):
        for i in range(N):
            for j in range(N):
                tmp[j] = logA[i, j] + logB[t + 1, j] + lb[t + 1, j]
            lb[t, i] = _lse(tmp)
    return lb


@numba.njit(cache=True)
def _xi_sum(la, lb, logB, logA, loglik):
    T, N = logB.shape
    xi = np.zeros((N, N))
    for t in range(T - 1):
        for i in range(N):
            if la[t, i] == -np.inf:
                continue
            for j in range(N):
                v = la[t, i] + logA[i, j] + logB[t + 1, j] + lb[t + 1, j] - loglik
                if v > -np.inf:
                    xi[i, j] += np.exp(v)
    return xi


@numba.njit(cache=True)
def _estep_scaled(logB, logpi, logA):
    """Scaled forward-backward in linear space.

    Returns (loglik, gamma, xi_sum); loglik is -inf if a scaling constant
    underflows, in which case the caller falls back to the log-space kernels.
    """
    T, N = logB.shape
    A = np.exp(logA)
    B = np.empty((T, N))
    shift = 0.0
    for t in range(T):
        mx = -np.inf
        for j in range(N):
            if logB[t, j] > mx:
                mx = logB[t, j]
        shift += mx
        for j in range(N):
            B[t, j] = np.exp(logB[t, j] - mx)
    alpha = np.empty((T, N))
    c = np.empty(T)
    tot = 0.0
    for j in range(N):
        alpha[0, j] = np.exp(logpi[j]) * B[0, j]
        tot += alpha[0, j]
    gamma = np.zeros((T, N))
    xi = np.zeros((N, N))
    if not tot > 0.0:
        return -np.inf, gamma, xi
    c[0] = tot
    for j in range(N):
        alpha[0, j] /= tot
    for t in range(1, T):
        tot = 0.0
        for j in range(N):
            acc = 0.0
            for i in range(N):
                acc += alpha[t - 1, i] * A[i, j]
            alpha[t, j] = acc * B[t, j]
            tot += alpha[t, j]
        if not tot > 0.0:
            return -np.inf, gamma, xi
        c[t] = tot
        for j in range(N):
            alpha[t, j] /= tot
    beta = np.empty((T, N))
    for j in range(N):
        beta[T - 1, j] = 1.0
    w = np.empty(N)
    for t in range(T - 2, -1, -1):
        for j in range(N):
            w[j] = B[t + 1, j] * beta[t + 1, j] / c[t + 1]
        for i in range(N):
            acc = 0.0
            for j in range(N):
                acc += A[i, j] * w[j]
                xi[i, j] += alpha[t, i] * A[i, j] * w[j]
            beta[t, i] = acc
    loglik = shift
    for t in range(T):
        loglik += np.log(c[t])
        for j in range(N):
            gamma[t, j] = alpha[t, j] * beta[t, j]
    return loglik, gamma, xi


@numba.njit(cache=True)
def _viterbi(logB, logpi, logA):
    T, N = logB.shape
    delta = np.empty((T, N))
    psi = np.zeros((T, N), dtype=np.int64)
    for j in range(N):
        delta[0, j] = logpi[j] + logB[0, j]
    for t in range(1, T):
        for j in range(N):
            best = -np.inf
            arg = 0
            for i in range(N):
                v = delta[t - 1, i] + logA[i, j]
                if v > best:
                    best = v
                    arg = i
            delta[t, j] = best + logB[t, j]
            psi[t, j] = arg
    path = np.empty(T, dtype=np.int64)
    best = -np.inf
    arg = 0
    for j in range(N):
        if delta[T - 1, j] > best:
            best = delta[T - 1, j]
            arg = j
    path[T - 1] = arg
    for t in range(T - 1, 0, -1):
        path[t - 1] = psi[t, path[t]]
    return path, best


# ---------------------------------------------------------------------------
# public operations


def log_likelihood(model: GaussianHMM, sequence: np.ndarray) -> float:
    """Exact forward-algorithm log-likelihood of one T x d sequence."""
    logB = model.log_emissions(sequence)
    logpi, logA = model.log_params()
    la = _forward(logB, logpi, logA)
    return float(_lse(la[-1]))


def viterbi(model: GaussianHMM, sequence: np.ndarray) -> np.ndarray:
    """Most likely state path (0-based); ties resolve to the lower index."""
    logB = model.log_emissions(sequence)
    logpi, logA = model.log_params()
    path, _ = _viterbi(logB, logpi, logA)
    return path


def viterbi_with_score(model: GaussianHMM, sequence: np.ndarray) -> tuple[np.ndarray, float]:
    logB = model.log_emissions(sequence)
    logpi, logA = model.log_params()
    path, score = _viterbi(logB, logpi, logA)
    return path, float(score)


def path_log_prob(model: GaussianHMM, sequence: np.ndarray, path: Sequence[int]) -> float:
    """Joint log-probability of a sequence and a given state path."""
    logB = model.log_emissions(sequence)
    logpi, logA = model.log_params()
    path = np.asarray(path)
    lp = logpi[path[0]] + logB[0, path[0]]
    for t in range(1, len(path)):
        lp += logA[path[t - 1], path[t]] + logB[t, path[t]]
    return float(lp)


def _check_sequences(sequences):
    seqs = [np.asarray(s, dtype=float) for s in sequences]
    if not seqs:
        raise ValueError("no training sequences")
    d = seqs[0].shape[1]
    for i, s in enumerate(seqs):
        if s.ndim != 2 or s.shape[1] != d:
            raise ValueError(f"sequence {i} has shape {s.shape}, expected (T, {d})")
    return seqs, d


def init_segmental(
    sequences: Sequence[np.ndarray], n_states: int, cov_floor: float = 1e-6
) -> GaussianHMM:
    """Initial model from equal-length segments of every sequence.

    Each sequence is cut into ``n_states`` contiguous segments (leftover
    frames go to the earliest segments); state s gets the mean and
    covariance of all frames pooled from segment s.  Transitions start
    uniform and the chain always starts in the first state.
    """
    seqs, d = _check_sequences(sequences)
    if n_states < 1:
        raise ValueError("n_states must be positive")
    pooled = [[] for _ in range(n_states)]
    for i, s in enumerate(seqs):
        if s.shape[0] < n_states:
            raise ValueError(
                f"sequence {i} has {s.shape[0]} frames, fewer than {n_states} states"
            )
        for st, seg in enumerate(np.array_split(s, n_states)):
            pooled[st].append(seg)
    means = np.empty((n_states, d))
    covs = np.empty((n_states, d, d))
    for st in range(n_states):
        frames = np.concatenate(pooled[st])
        means[st] = frames.mean(axis=0)
        c = frames - means[st]
        covs[st] = c.T @ c / len(frames)
    covs = _floor_covs(covs, cov_floor)
    A = np.full((n_states, n_states), 1.0 / n_states)
    pi = np.zeros(n_states)
    pi[0] = 1.0
    return GaussianHMM(A, pi, means, covs)


def baum_welch(
    sequences: Sequence[np.ndarray],
    init: GaussianHMM,
    max_iter: int = 200,
    tol: float = 1e-6,
    cov_floor: float = 1e-6,
    update_priors: bool = False,
) -> tuple[GaussianHMM, TrainReport]:
    """Multi-sequence EM.

    Expected counts are pooled over sequences.  Priors stay fixed unless
    ``update_priors``.  Stops when the per-frame log-likelihood improves by
    less than ``tol`` or after ``max_iter`` iterations.
    """
    seqs, d = _check_sequences(sequences)
    if d != init.d:
        raise ValueError(f"sequence dimension {d} != model dimension {init.d}")
    model = init
    n_frames = sum(s.shape[0] for s in seqs)
    X_all = np.concatenate(seqs)
    history: list[float] = []
    converged = False
    N = model.n_states
    for it in range(max_iter):
        logpi, logA = model.log_params()
        total = 0.0
        gamma_all = []
        xi = np.zeros((N, N))
        pi_acc = np.zeros(N)
        for s in seqs:
            logB = model.log_emissions(s)
            ll, g, x = _estep_scaled(logB, logpi, logA)
            if not np.isfinite(ll):
                la = _forward(logB, logpi, logA)
                lb = _backward(logB, logA)
                ll = _lse(la[-1])
                if not np.isfinite(ll):
                    raise NumericalFailure(f"numerical failure at iteration {it}")
                g = np.exp(la + lb - ll)
                x = _xi_sum(la, lb, logB, logA, ll)
            total += ll
            gamma_all.append(g)
            pi_acc += g[0]
            xi += x
        history.append(float(total))
        if it > 0 and (history[-1] - history[-2]) / n_frames < tol:
            converged = True
            break

        gamma = np.concatenate(gamma_all)
        occ = gamma.sum(axis=0)
        A = model.transitions.copy()
        rows = xi.sum(axis=1)
        for i in range(N):
            if rows[i] > 1e-300:
                A[i] = xi[i] / rows[i]
        means = model.means.copy()
        covs = model.covariances.copy()
        for st in range(N):
            if occ[st] < 1e-10:
                continue
            w = gamma[:, st]
            means[st] = w @ X_all / occ[st]
            c = X_all - means[st]
            covs[st] = (c * w[:, None]).T @ c / occ[st]
        covs = _floor_covs(covs, cov_floor)
        pi = pi_acc / pi_acc.sum() if update_priors else model.priors
        model = GaussianHMM._trusted(A, pi, means, covs)
    report = TrainReport(history, len(history), converged)
    model = GaussianHMM(
        model.transitions,
        model.priors,
        model.means,
        model.covariances,
        {"log_likelihood": history[-1], "iterations": len(history), "converged": converged},
    )
    return model, report


def sample(model: GaussianHMM, horizon: int, rng: np.random.Generator) -> np.ndarray:
    """Draw one observation sequence of length ``horizon``."""
    states = np.empty(horizon, dtype=int)
    states[0] = rng.choice(model.n_states, p=model.priors)
    cum = np.cumsum(model.transitions, axis=1)
    u = rng.random(horizon)
    for t in range(1, horizon):
        row = cum[states[t - 1]]
        states[t] = min(int(np.searchsorted(row, u[t] * row[-1], side="right")), model.n_states - 1)
    z = rng.standard_normal((horizon, model.d))
    return model.means[states] + np.einsum("tij,tj->ti", model._chol[states], z)


def kl_divergence(
    model_a: GaussianHMM, model_b: GaussianHMM, n_samples: int, horizon: int, rng
) -> float:
    """One-sided Monte-Carlo KL(a || b) per sequence of length ``horizon``."""
    total = 0.0
    for _ in range(n_samples):
        x = sample(model_a, horizon, rng)
        total += log_likelihood(model_a, x) - log_likelihood(model_b, x)
    return total / n_samples


def kl_distance(
    model_a: GaussianHMM,
    model_b: GaussianHMM,
    n_samples: int = 20,
    horizon: int = 100,
    seed: int = 0,
) -> float:
    """Symmetrized Monte-Carlo KL, ``(KL(a||b) + KL(b||a)) / 2``.

    Both directions draw from generators seeded identically, so swapping the
    arguments gives exactly the same value.
    """
    if model_a.d != model_b.d:
        raise ValueError("models have different observation dimensions")
    ab = kl_divergence(model_a, model_b, n_samples, horizon, np.random.default_rng(seed))
    ba = kl_divergence(model_b, model_a, n_samples, horizon, np.random.default_rng(seed))
    return 0.5 * (ab + ba)
