import numpy as np
import pytest

from affectmotion.hmm import (
    GaussianHMM,
    _backward,
    _estep_scaled,
    _forward,
    _lse,
    _xi_sum,
    baum_welch,
    init_segmental,
    kl_distance,
    log_likelihood,
    path_log_prob,
    sample,
    viterbi,
    viterbi_with_score,
)
from conftest import enumerate_paths, random_hmm


class TestValidation:
    def test_nonstochastic_rows(self):
        with pytest.raises(ValueError, match="stochastic"):
            GaussianHMM([[0.5, 0.4], [0.5, 0.5]], [1, 0], np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_bad_priors(self):
        with pytest.raises(ValueError, match="priors"):
            GaussianHMM(np.eye(2), [0.7, 0.7], np.zeros((2, 1)), np.ones((2, 1, 1)))

    def test_cov_shape(self):
        with pytest.raises(ValueError, match="covariances"):
            GaussianHMM(np.eye(2), [1, 0], np.zeros((2, 2)), np.ones((2, 1, 1)))

    def test_observation_dimension(self):
        m = random_hmm(np.random.default_rng(0), 2, 2)
        with pytest.raises(ValueError):
            log_likelihood(m, np.zeros((4, 3)))


class TestInference:
    @pytest.mark.parametrize("seed", range(10))
    def test_matches_enumeration(self, seed):
        rng = np.random.default_rng(seed)
        N, d, T = rng.integers(1, 5), rng.integers(1, 3), rng.integers(1, 7)
        m = random_hmm(rng, N, d)
        X = rng.normal(0, 2, size=(T, d))
        ll, best, scores = enumerate_paths(m, X)
        assert log_likelihood(m, X) == pytest.approx(ll, rel=1e-9, abs=1e-9)
        path, score = viterbi_with_score(m, X)
        np.testing.assert_array_equal(path, best)
        assert score == pytest.approx(scores.max(), abs=1e-9)
        assert path_log_prob(m, X, path) == pytest.approx(score, abs=1e-9)

    def test_long_sequence_is_finite(self):
        rng = np.random.default_rng(1)
        m = random_hmm(rng, 3, 2)
        X = sample(m, 5000, rng)
        assert np.isfinite(log_likelihood(m, X))
        assert len(viterbi(m, X)) == 5000

    def test_zero_transitions(self):
        A = np.array([[0.0, 1.0], [1.0, 0.0]])
        m = GaussianHMM(A, [1.0, 0.0], [[0.0], [5.0]], np.ones((2, 1, 1)))
        X = np.array([[0.0], [5.0], [0.0], [5.0]])
        np.testing.assert_array_equal(viterbi(m, X), [0, 1, 0, 1])

    @pytest.mark.parametrize("seed", range(5))
    def test_scaled_estep_matches_log_space(self, seed):
        rng = np.random.default_rng(seed)
        m = random_hmm(rng, 3, 2)
        X = sample(m, 40, rng)
        logB = m.log_emissions(X)
        logpi, logA = m.log_params()
        ll, g, xi = _estep_scaled(logB, logpi, logA)
        la, lb = _forward(logB, logpi, logA), _backward(logB, logA)
        ref = _lse(la[-1])
        assert ll == pytest.approx(ref, rel=1e-10)
        np.testing.assert_allclose(g, np.exp(la + lb - ref), atol=1e-10)
        np.testing.assert_allclose(xi, _xi_sum(la, lb, logB, logA, ref), atol=1e-9)


class TestTraining:
    @pytest.mark.parametrize("seed", range(5))
    def test_em_monotone(self, seed):
        rng = np.random.default_rng(seed)
        gen = random_hmm(rng, 3, 2)
        seqs = [sample(gen, 30, rng) for _ in range(3)]
        init = random_hmm(rng, 3, 2)
        _, rep = baum_welch(seqs, init, max_iter=50, tol=-np.inf)
        assert rep.iterations == 50
        assert np.all(np.diff(rep.log_likelihood_per_iter) >= -1e-8)

    def test_parameter_recovery(self):
        rng = np.random.default_rng(3)
        gen = GaussianHMM([[0.9, 0.1], [0.1, 0.9]], [0.5, 0.5], [[0.0], [6.0]], np.ones((2, 1, 1)))
        seqs = [sample(gen, 200, rng) for _ in range(5)]
        model, rep = baum_welch(seqs, init_segmental(seqs, 2), update_priors=True)
        assert rep.converged
        np.testing.assert_allclose(np.sort(model.means[:, 0]), [0.0, 6.0], atol=0.1)

    def test_segmental_init(self):
        seq = np.arange(10.0)[:, None]
        m = init_segmental([seq], 2)
        np.testing.assert_allclose(m.means[:, 0], [2.0, 7.0])
        np.testing.assert_array_equal(m.priors, [1.0, 0.0])
        np.testing.assert_allclose(m.transitions, 0.5)

    def test_too_short_sequence(self):
        with pytest.raises(ValueError, match="fewer than"):
            init_segmental([np.zeros((2, 1))], 3)

    def test_covariance_floor(self):
        seq = np.zeros((10, 2))
        m = init_segmental([seq], 2, cov_floor=1e-3)
        assert np.all(np.linalg.eigvalsh(m.covariances) >= 1e-3 - 1e-15)

    def test_training_is_deterministic(self):
        rng = np.random.default_rng(0)
        seqs = [rng.normal(size=(20, 2)) for _ in range(3)]
        a, _ = baum_welch(seqs, init_segmental(seqs, 3))
        b, _ = baum_welch(seqs, init_segmental(seqs, 3))
        assert a.dumps() == b.dumps()


class TestKL:
    def test_symmetric_and_zero_on_self(self):
        rng = np.random.default_rng(4)
        a, b = random_hmm(rng, 2, 2), random_hmm(rng, 3, 2)
        assert kl_distance(a, b, 5, 30) == kl_distance(b, a, 5, 30)
        assert kl_distance(a, a, 5, 30) == 0.0
        assert kl_distance(a, b, 5, 30) > 0

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(5)
        with pytest.raises(ValueError):
            kl_distance(random_hmm(rng, 2, 1), random_hmm(rng, 2, 2))


def test_json_roundtrip():
    m = random_hmm(np.random.default_rng(6), 3, 2)
    back = GaussianHMM.loads(m.dumps())
    for name in ("transitions", "priors", "means", "covariances"):
        np.testing.assert_array_equal(getattr(back, name), getattr(m, name))
    assert back.dumps() == m.dumps()


class TestWorkedExamples:
    def test_single_state_closed_form(self):
        rng = np.random.default_rng(0)
        seqs = [rng.normal(size=(30, 2)), rng.normal(size=(20, 2))]
        m, rep = baum_welch(seqs, init_segmental(seqs, 1), cov_floor=0.0)
        X = np.concatenate(seqs)
        np.testing.assert_allclose(m.means[0], X.mean(axis=0), atol=1e-12)
        np.testing.assert_allclose(m.covariances[0], np.cov(X.T, bias=True), atol=1e-12)

    def test_short_sequence_recovery(self):
        rng = np.random.default_rng(0)
        gen = GaussianHMM([[0.9, 0.1], [0.2, 0.8]], [1.0, 0.0], [[0.0], [6.0]], np.ones((2, 1, 1)))
        seqs = [sample(gen, 40, rng) for _ in range(50)]
        X = np.concatenate(seqs)
        lo, hi = X[X[:, 0] < 3], X[X[:, 0] >= 3]
        init = GaussianHMM(np.full((2, 2), 0.5), [1.0, 0.0], [lo.mean(0), hi.mean(0)],
                           [np.atleast_2d(lo.var()), np.atleast_2d(hi.var())])
        m, _ = baum_welch(seqs, init)
        np.testing.assert_allclose(m.means[:, 0], [0.0, 6.0], atol=0.1)

    def test_relabeling_symmetry(self):
        rng = np.random.default_rng(1)
        m = random_hmm(rng, 3, 2)
        p = np.array([2, 0, 1])
        q = GaussianHMM(m.transitions[np.ix_(p, p)], m.priors[p], m.means[p], m.covariances[p])
        X = rng.normal(size=(6, 2))
        assert log_likelihood(q, X) == pytest.approx(log_likelihood(m, X), abs=1e-12)

    def test_unreachable_state(self):
        rng = np.random.default_rng(2)
        m = random_hmm(rng, 2, 1)
        A = np.zeros((3, 3))
        A[:2, :2] = m.transitions
        A[2, 2] = 1.0
        big = GaussianHMM(A, np.r_[m.priors, 0.0], np.r_[m.means, [[0.0]]], np.r_[m.covariances, np.ones((1, 1, 1))])
        X = rng.normal(size=(5, 1))
        assert log_likelihood(big, X) == pytest.approx(log_likelihood(m, X), abs=1e-12)

    def test_forced_left_to_right_path(self):
        N = 4
        A = np.eye(N, k=1)
        A[-1, -1] = 1.0
        m = GaussianHMM(A, np.eye(N)[0], np.zeros((N, 1)), np.ones((N, 1, 1)))
        np.testing.assert_array_equal(viterbi(m, np.zeros((N, 1))), np.arange(N))

    def test_constructed_dominance(self):
        A = np.array([[0.98, 0.01, 0.01], [0.01, 0.98, 0.01], [0.01, 0.01, 0.98]])
        mu = [[-50.0], [0.0], [50.0]]
        cov = np.ones((3, 1, 1))
        X = np.zeros((6, 1))
        forced = GaussianHMM(A, [1.0, 0.0, 0.0], mu, cov)
        np.testing.assert_array_equal(viterbi(forced, X), [0, 1, 1, 1, 1, 1])
        free = GaussianHMM(A, np.full(3, 1 / 3), mu, cov)
        np.testing.assert_array_equal(viterbi(free, X), [1] * 6)

    def test_viterbi_beats_random_paths(self):
        rng = np.random.default_rng(3)
        m = random_hmm(rng, 4, 2)
        X = sample(m, 12, rng)
        best = path_log_prob(m, X, viterbi(m, X))
        for _ in range(100):
            assert path_log_prob(m, X, rng.integers(0, 4, size=12)) <= best + 1e-12

    def test_learned_parameters_stay_valid(self):
        rng = np.random.default_rng(4)
        seqs = [rng.normal(size=(15, 3)) for _ in range(2)]
        m, _ = baum_welch(seqs, init_segmental(seqs, 4, cov_floor=1e-3), cov_floor=1e-3)
        np.testing.assert_allclose(m.transitions.sum(axis=1), 1.0, atol=1e-12)
        assert np.linalg.eigvalsh(m.covariances).min() >= 0.5e-3

    def test_gaussian_kl(self):
        a = GaussianHMM([[1.0]], [1.0], [[0.0]], [[[1.0]]])
        b = GaussianHMM([[1.0]], [1.0], [[1.0]], [[[1.0]]])
        # each direction is (mu_a - mu_b)^2 / 2 = 0.5; the symmetrized value averages the two
        assert kl_distance(a, b, n_samples=10_000, horizon=1, seed=0) == pytest.approx(0.5, abs=0.05)

    def test_identical_models_kl_is_noise(self):
        m = random_hmm(np.random.default_rng(5), 2, 1)
        assert kl_distance(m, m, 50, 20) == 0.0
