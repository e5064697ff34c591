import numpy as np
import pytest

from affectmotion.dataset import LabeledDataset, MarkerSet, Movement

MARKERS = ("head", "chest", "rhand", "lhand", "rfoot", "lfoot")


def simple_marker_set(**kw) -> MarkerSet:
    """One marker per role; the chest is the torso."""
    groups = {
        "torso": ("chest",),
        "head": ("head",),
        "right_hand": ("rhand",),
        "left_hand": ("lhand",),
        "right_foot": ("rfoot",),
        "left_foot": ("lfoot",),
    }
    return MarkerSet(markers=MARKERS, groups=groups, scale_pair=("chest", "head"), **kw)


def rigid_movement(path: np.ndarray, rate: float = 120.0, label=None, sid="m") -> Movement:
    """Every marker follows ``path`` (T x 3) from a fixed offset."""
    offsets = np.array(
        [[0, 0, 1.7], [0, 0, 1.3], [-0.3, 0.2, 1.2], [0.3, 0.2, 1.2], [-0.1, 0, 0], [0.1, 0, 0]]
    )
    frames = offsets[None] + np.asarray(path, dtype=float)[:, None, :]
    return Movement(frames, rate, sid, label)


def random_movement(rng, T=60, label=None, sid="m", scale=0.05) -> Movement:
    base = rigid_movement(np.zeros((T, 3))).frames
    walk = np.cumsum(rng.normal(0, scale, size=base.shape), axis=0)
    return Movement(base + walk, 120.0, sid, label)


@pytest.fixture
def marker_set():
    return simple_marker_set()


@pytest.fixture
def small_dataset(marker_set):
    rng = np.random.default_rng(0)
    movements = [
        random_movement(rng, label=lab, sid=f"{lab}_{i}")
        for lab in ("calm", "tense")
        for i in range(3)
    ]
    return LabeledDataset(marker_set, movements, ("calm", "tense"))


def random_hmm(rng, N, d):
    """Random full-covariance HMM with a dense prior and transition matrix."""
    from affectmotion.hmm import GaussianHMM

    A = rng.dirichlet(np.ones(N), size=N)
    pi = rng.dirichlet(np.ones(N))
    mu = rng.normal(0, 2, size=(N, d))
    L = rng.normal(size=(N, d, d))
    cov = L @ np.swapaxes(L, 1, 2) + 0.3 * np.eye(d)
    return GaussianHMM(A, pi, mu, cov)


def enumerate_paths(model, X):
    """Brute-force log-likelihood and best path over every state sequence."""
    import itertools

    from scipy.special import logsumexp
    from scipy.stats import multivariate_normal

    N, T = model.n_states, len(X)
    logB = np.array([multivariate_normal.logpdf(X, model.means[s], model.covariances[s]) for s in range(N)])
    logB = logB.reshape(N, T).T
    with np.errstate(divide="ignore"):
        logpi, logA = np.log(model.priors), np.log(model.transitions)
    paths = np.array(list(itertools.product(range(N), repeat=T)))
    t = np.arange(T)
    scores = logpi[paths[:, 0]] + logB[t, paths].sum(axis=1)
    scores += logA[paths[:, :-1], paths[:, 1:]].sum(axis=1)
    return logsumexp(scores), paths[int(np.argmax(scores))], scores


@pytest.fixture(scope="session")
def synth_setup():
    """Normalized 4-class synthetic suite, its LMA matrix and a fitted RMLR model."""
    import warnings

    from affectmotion import lma, rmlr, synthetic
    from affectmotion.dataset import normalize_scale

    raw = synthetic.synthetic_dataset(20, 0)
    ds = LabeledDataset(raw.marker_set, [normalize_scale(m, raw.marker_set) for m in raw.movements], raw.label_set)
    F = lma.feature_matrix(ds.movements, ds.marker_set)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        path = rmlr.cross_validate(F, ds.labels, alpha_grid=[0.5], k=4, seed=0)
    model = rmlr.fit(F, ds.labels, *path.best, feature_names=lma.COMPONENTS)
    return ds, F, model
