import json
import warnings

import numpy as np
import pytest
from scipy.signal import butter, filtfilt

from affectmotion.dataset import LabeledDataset
from affectmotion.generation import (
    EmptySubspaceError,
    GenerationConfig,
    GenerationError,
    concatenate_state_means,
    epsilon_neighbors,
    generate,
    mean_frame_distance,
    neighbors_from_distances,
    select_subspace,
    smooth,
)
from affectmotion.hmm import GaussianHMM
from affectmotion.lma import COMPONENTS, lma_vector
from affectmotion.rmlr import RMLRModel
from affectmotion.synthetic import synth_movement

SMOOTH = GenerationConfig().smoothing


def toy_model(sal_a, sal_b, names="ABCDE"):
    theta = np.zeros((2, len(names) + 1))
    for row, sal in enumerate((sal_a, sal_b)):
        for c in sal:
            theta[row, 1 + names.index(c)] = 1.0
    return RMLRModel(theta, ("a", "b"), tuple(names), np.zeros(len(names)), np.ones(len(names)))


class TestConfig:
    def test_defaults(self):
        c = GenerationConfig()
        assert (c.n_states, c.n_d, c.epsilon_fraction) == (12, 0, 0.10)
        assert c.smoothing.cutoff_hz == 6.0

    @pytest.mark.parametrize("kw", [{"n_states": 1}, {"n_d": -1}, {"epsilon_fraction": 0.0}, {"distance_metric": "l1"}])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            GenerationConfig(**kw)


class TestSubspace:
    def test_overlapping_sets(self):
        assert select_subspace(toy_model("AB", "BC"), "a", "b", list("ABCDE")) == ["A", "C", "D", "E"]

    def test_disjoint_sets_keep_everything(self):
        assert select_subspace(toy_model("A", "B"), "a", "b", list("ABCDE")) == list("ABCDE")

    def test_identical_covering_sets(self):
        with pytest.raises(EmptySubspaceError, match="no kinematic subspace"):
            select_subspace(toy_model("ABCDE", "ABCDE"), "a", "b", list("ABCDE"))

    def test_unknown_emotion(self):
        with pytest.raises(KeyError):
            select_subspace(toy_model("A", "B"), "a", "zzz", list("ABCDE"))


class TestNeighbors:
    def test_two_inside_the_ball(self):
        nb = neighbors_from_distances([100.0, 2.0, 1.0], [7, 8, 9], 0.10)
        assert nb.radius == pytest.approx(10.0)
        assert nb.indices == [9, 8] and nb.distances == [1.0, 2.0]
        assert not nb.warnings

    def test_equidistant_falls_back_to_nearest(self):
        nb = neighbors_from_distances([5.0, 5.0, 5.0], [3, 4, 5], 0.10)
        assert nb.indices == [3]
        assert nb.warnings and "falling back" in nb.warnings[0]

    def test_desired_in_target_class_comes_first(self):
        rng = np.random.default_rng(0)
        F = rng.normal(size=(6, len(COMPONENTS)))
        labels = ["t", "t", "t", "o", "o", "t"]
        nb = epsilon_neighbors(F, labels, F[2], "t", COMPONENTS[:5])
        assert nb.indices[0] == 2 and nb.distances[0] == 0.0

    def test_only_target_class_returned(self):
        rng = np.random.default_rng(1)
        F = rng.normal(size=(10, len(COMPONENTS)))
        labels = ["t", "o"] * 5
        nb = epsilon_neighbors(F, labels, F[1], "t", COMPONENTS, epsilon_fraction=1.0)
        assert all(labels[i] == "t" for i in nb.indices) and len(nb.indices) == 5

    def test_no_target_members(self):
        with pytest.raises(ValueError, match="no movements"):
            epsilon_neighbors(np.zeros((2, 27)), ["o", "o"], np.zeros(27), "t", COMPONENTS)


class TestReconstruction:
    def hmm(self):
        return GaussianHMM(np.full((2, 2), 0.5), [1.0, 0.0], [[1.0, 2.0], [3.0, 4.0]], np.tile(np.eye(2), (2, 1, 1)))

    def test_state_means_follow_path(self):
        np.testing.assert_array_equal(concatenate_state_means(self.hmm(), [0, 1]), [[1, 2], [3, 4]])
        out = concatenate_state_means(self.hmm(), [1] * 7)
        assert out.shape == (7, 2) and np.all(out == [3, 4])

    def test_constant_passes_through(self):
        x = np.full((30, 4), 2.5)
        np.testing.assert_allclose(smooth(x, SMOOTH, 120.0), x, atol=1e-12)

    def test_step_response(self):
        step = np.r_[np.zeros(200), np.ones(200)][:, None]
        y = smooth(step, SMOOTH, 120.0)
        b, a = butter(2, 6.0 / 60.0)
        np.testing.assert_allclose(y[:, 0], filtfilt(b, a, step[:, 0]), atol=1e-12)
        assert -0.0345 <= y.min() and y.max() <= 1.0345

    def test_high_frequency_attenuated(self):
        t = np.arange(600) / 120.0
        x = np.sin(2 * np.pi * 30 * t)[:, None]
        y = smooth(x, SMOOTH, 120.0)
        assert np.sqrt((y**2).mean()) <= 0.1 * np.sqrt((x**2).mean())

    def test_too_short(self):
        with pytest.raises(ValueError, match="4 frames"):
            smooth(np.zeros((3, 2)), SMOOTH, 120.0)

    def test_length_unchanged(self):
        assert smooth(np.random.default_rng(0).normal(size=(25, 3)), SMOOTH, 120.0).shape == (25, 3)

    def test_mean_frame_distance(self):
        a = np.zeros((2, 2, 3))
        b = a.copy()
        b[0, 0, 0] = 3.0
        b[0, 1, 1] = 4.0
        assert mean_frame_distance(a, b) == pytest.approx(2.5)


class TestGenerate:
    def test_contract(self, synth_setup):
        ds, F, model = synth_setup
        mv = ds.movements[0]
        res = generate(mv, "fear", ds, model, features=F)
        assert res.output.n_frames == mv.n_frames
        assert res.output.frames.shape == mv.frames.shape
        assert np.all(res.state_sequence < 12) and len(res.state_sequence) == mv.n_frames
        labels = {m.source_id: m.label for m in ds.movements}
        assert res.neighbors and all(labels[s] == "fear" for s in res.neighbors)
        assert res.original_emotion == mv.label and res.target_emotion == "fear"
        side = res.sidecar(GenerationConfig())
        assert side["output_frames"] == mv.n_frames

    def test_deterministic(self, synth_setup):
        ds, F, model = synth_setup
        mv = ds.movements[9]
        a = generate(mv, "anger", ds, model, GenerationConfig(seed=3), features=F)
        b = generate(mv, "anger", ds, model, GenerationConfig(seed=3))
        np.testing.assert_array_equal(a.output.frames, b.output.frames)
        cfg = GenerationConfig(seed=3)
        assert json.dumps(a.sidecar(cfg)) == json.dumps(b.sidecar(cfg))

    def test_self_conversion_of_class_medoid_stays_in_class_range(self, synth_setup):
        ds, F, model = synth_setup
        Z = (F - F.mean(axis=0)) / F.std(axis=0)
        for lab in ds.label_set:
            idx = [j for j, m in enumerate(ds.movements) if m.label == lab]
            spread = np.sqrt(((Z[idx][:, None] - Z[idx][None]) ** 2).sum(axis=2)).sum(axis=1)
            mv = ds.movements[idx[int(np.argmin(spread))]]
            res = generate(mv, lab, ds, model, features=F)
            v = lma_vector(res.output, ds.marker_set).as_array()
            inside = (v >= F[idx].min(axis=0)) & (v <= F[idx].max(axis=0))
            assert inside.sum() >= 20, (lab, [c for c, ok in zip(COMPONENTS, inside) if not ok])

    def test_desired_copies_pull_towards_input(self, synth_setup):
        ds, F, model = synth_setup
        hits = 0
        for rep in range(5):
            mv = ds.movements[rep * 6 + 1]
            target = [l for l in ds.label_set if l != mv.label][rep % 3]
            d = [
                generate(mv, target, ds, model, GenerationConfig(n_d=nd, seed=rep), features=F).diagnostics[
                    "distance_to_desired"
                ]
                for nd in (0, 1, 4)
            ]
            hits += d[0] >= d[1] >= d[2]
        assert hits >= 4

    def test_many_copies_reduce_reconstruction_error(self, synth_setup):
        ds, F, model = synth_setup
        mv = ds.movements[3]
        base = generate(mv, "anger", ds, model, features=F)
        many = generate(mv, "anger", ds, model, GenerationConfig(n_d=5 * len(base.neighbors) + 5), features=F)
        assert many.diagnostics["reconstruction_error"] <= base.diagnostics["reconstruction_error"]

    def test_unlabelled_desired_is_recognized(self, synth_setup):
        ds, F, model = synth_setup
        mv = ds.movements[2]
        res = generate(mv.with_frames(mv.frames, label=None), "fear", ds, model, features=F)
        assert res.original_emotion == mv.label
        assert any("recognized" in w for w in res.diagnostics["warnings"])

    def test_unknown_target(self, synth_setup):
        ds, F, model = synth_setup
        with pytest.raises(GenerationError) as err:
            generate(ds.movements[0], "boredom", ds, model, features=F)
        assert err.value.stage == "input"

    def test_short_neighbors_all_dropped(self, synth_setup):
        ds, F, model = synth_setup
        with pytest.raises(GenerationError) as err:
            generate(ds.movements[0], "fear", ds, model, GenerationConfig(n_states=10**6), features=F)
        assert err.value.stage == "neighbors"


def test_slow_smooth_to_jerky_raises_time_effort():
    from affectmotion.dataset import normalize_scale
    from affectmotion.lma import COMPONENTS as names
    from affectmotion.lma import feature_matrix
    from affectmotion.rmlr import fit
    from affectmotion.synthetic import MARKER_SET

    rng = np.random.default_rng(11)
    mvs = []
    for lab, new in (("sadness", "smooth"), ("fear", "jerky")):
        for i in range(6):
            mv = synth_movement(lab, rng, f"{lab}{i}")
            mvs.append(normalize_scale(mv.with_frames(mv.frames, label=new), MARKER_SET))
    ds = LabeledDataset(MARKER_SET, mvs, ("smooth", "jerky"))
    F = feature_matrix(ds.movements, MARKER_SET)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        model = fit(F, ds.labels, 1.0, 1e9, feature_names=names)
    src = ds.movements[0]
    res = generate(src, "jerky", ds, model, features=F)
    t = names.index("TimeAll")
    assert lma_vector(res.output, MARKER_SET).as_array()[t] > F[0, t]
