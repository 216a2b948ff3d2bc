import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from dmlcrf import dml_net
from dmlcrf.dml_net import MlpParams, TrainConfig, TrainState
from dmlcrf.errors import DivergenceError, FormatError, LengthError, ShapeError, StateError
from dmlcrf.hsi_data import HsiCube, SampleSet
from oracles import (TINY_DIMS, finite_difference_grads, max_gradient_error, random_tiny_case,
                     reference_loss, relative_error, scalar_softmax)


class TestForward:
    def test_zero_network_is_uniform(self):
        dims = [6, 4, 4, 3, 5]
        params = MlpParams([np.zeros((a, b)) for a, b in zip(dims[:-1], dims[1:])],
                           [np.zeros(b) for b in dims[1:]])
        feature, logits, prob = dml_net.forward(params, np.arange(6.0))
        np.testing.assert_array_equal(logits, 0.0)
        np.testing.assert_allclose(prob, 1 / 5)

    def test_zero_logits_softmax(self):
        np.testing.assert_array_equal(dml_net.softmax(np.array([0.0, 0.0])), [0.5, 0.5])

    def test_prob_matches_scalar_softmax(self, rng):
        params = dml_net.init_params([7, 9, 6, 4, 3], rng)
        _, logits, prob = dml_net.forward(params, rng.standard_normal(7))
        assert abs(prob.sum() - 1.0) < 1e-9
        np.testing.assert_allclose(prob, scalar_softmax(list(logits)), atol=1e-12)

    def test_dimension_mismatch(self, rng):
        params = dml_net.init_params(TINY_DIMS, rng)
        with pytest.raises(ShapeError):
            dml_net.forward(params, np.zeros(5))

    def test_default_layer_dims(self, rng):
        cfg = TrainConfig()
        params = dml_net.init_params([103, *cfg.hidden, cfg.feature_dim, 9], rng)
        assert params.layer_dims == [103, 128, 64, 32, 9]
        assert params.activations == ["relu", "relu", "linear"]

    @settings(max_examples=100, deadline=None)
    @given(arrays(np.float64, st.integers(2, 8), elements=st.floats(-15, 15)), st.floats(-100, 100))
    def test_softmax_properties(self, logits, shift):
        # logit gaps beyond ~36 round a component to exactly 1.0 in float64
        p = dml_net.softmax(logits)
        assert np.all(p > 0) and np.all(p < 1)
        assert abs(p.sum() - 1.0) < 1e-6
        np.testing.assert_allclose(dml_net.softmax(logits + shift), p, atol=1e-9)


class TestLosses:
    def test_center_loss_zero_at_centers(self, rng):
        centers = rng.standard_normal((3, 4))
        labels = np.array([1, 3, 2, 3])
        assert dml_net.center_loss(centers[labels - 1], labels, centers) == 0.0

    def test_three_four_five(self):
        assert dml_net.center_loss([[3.0, 4.0]], [1], np.zeros((1, 2)), "norm") == 5.0

    def test_squared_form(self):
        assert dml_net.center_loss([[3.0, 4.0]], [1], np.zeros((1, 2)), "squared") == 12.5

    def test_batch_is_sum_of_individual_norms(self, rng):
        f, c = rng.standard_normal((2, 5)), rng.standard_normal((2, 5))
        expected = math.dist(f[0], c[1]) + math.dist(f[1], c[0])
        assert dml_net.center_loss(f, [2, 1], c) == pytest.approx(expected, rel=1e-12)

    def test_missing_center(self):
        with pytest.raises(StateError):
            dml_net.center_loss([[0.0]], [3], np.zeros((2, 1)))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, (4, 3), elements=st.floats(-10, 10)))
    def test_center_loss_nonnegative(self, feats):
        assert dml_net.center_loss(feats, [1, 2, 1, 2], np.zeros((2, 3))) >= 0.0

    def test_softmax_loss_cases(self, rng):
        assert dml_net.softmax_loss(np.array([0.0, 1.0]), 2) == 0.0
        assert dml_net.softmax_loss(np.full(4, 0.25), 3) == pytest.approx(1.3862943611198906)
        p = rng.dirichlet(np.ones(6))
        assert dml_net.softmax_loss(p, 4) == pytest.approx(-math.log(p[3]), rel=1e-14)
        assert dml_net.softmax_loss(np.array([1.0, 0.0]), 2) == pytest.approx(-math.log(1e-12))


class TestCenters:
    def test_zero_rate_keeps_centers(self, rng):
        state = TrainState(rng.standard_normal((2, 3)), [])
        out = dml_net.update_centers(state, rng.standard_normal((4, 3)), [1, 2, 2, 1], 0.0)
        np.testing.assert_array_equal(out.centers, state.centers)

    def test_single_sample_moves_halfway(self):
        state = TrainState(np.array([[0.0, 0.0], [5.0, 5.0]]), [])
        out = dml_net.update_centers(state, np.array([[2.0, -4.0]]), [1], 1.0)
        np.testing.assert_array_equal(out.centers, [[1.0, -2.0], [5.0, 5.0]])

    def test_repeated_updates_reach_batch_mean(self, rng):
        feats = rng.standard_normal((6, 3))
        labels = np.array([1, 1, 1, 2, 2, 2])
        state = TrainState(np.zeros((2, 3)), [])
        for _ in range(200):
            state = dml_net.update_centers(state, feats, labels, 0.5)
        np.testing.assert_allclose(state.centers[0], feats[:3].mean(axis=0), atol=1e-10)
        np.testing.assert_allclose(state.centers[1], feats[3:].mean(axis=0), atol=1e-10)


class TestBackward:
    @pytest.mark.parametrize("seed", range(5))
    @pytest.mark.parametrize("form", ["norm", "squared"])
    def test_matches_finite_differences(self, seed, form):
        assert max_gradient_error(seed, form) < 1e-4

    def test_lambda_zero_ignores_centers(self, rng):
        params, x, labels, state, cfg = random_tiny_case(3, lam=0.0)
        a = dml_net.backward(params, x, labels, state, cfg)
        moved = TrainState(state.centers + 100.0, [])
        b = dml_net.backward(params, x, labels, moved, cfg)
        for ga, gb in zip(a[0] + a[1], b[0] + b[1]):
            np.testing.assert_array_equal(ga, gb)

    def test_lambda_zero_is_cross_entropy_gradient(self):
        params, x, labels, state, cfg = random_tiny_case(4, lam=0.0)
        gw, gb, _ = dml_net.backward(params, x, labels, state, cfg)
        fw, fb = finite_difference_grads(params, lambda: reference_loss(params, x, labels, state.centers, 0.0, "norm"))
        for a, n in zip(gw + gb, fw + fb):
            assert relative_error(a, n).max() < 1e-4

    def test_center_gradient_zero_at_center(self):
        g = dml_net._center_grad(np.array([[1.0, 2.0]]), np.array([[1.0, 2.0]]), "norm")
        np.testing.assert_array_equal(g, 0.0)

    def test_finite_for_random_inputs(self, rng):
        params, x, labels, state, cfg = random_tiny_case(11)
        gw, gb, _ = dml_net.backward(params, x * 100, labels, state, cfg)
        assert all(np.all(np.isfinite(g)) for g in gw + gb)


def _toy_separable(seed=0, n=40):
    rng = np.random.default_rng(seed)
    a = rng.normal([2.0, 2.0], 0.5, size=(n, 2))
    b = rng.normal([-2.0, -2.0], 0.5, size=(n, 2))
    return SampleSet(np.vstack([a, b]), [1] * n + [2] * n, 2)


class TestTrain:
    def test_separable_toy_set(self):
        samples = _toy_separable()
        params, state, history = dml_net.train(samples, TrainConfig(epochs=200, hidden=(16, 8), feature_dim=4))
        assert np.mean(dml_net.predict(params, samples.spectra) == samples.labels) == 1.0
        assert len(history) == 200

    def test_bit_identical_reruns(self):
        samples = _toy_separable(1)
        cfg = TrainConfig(epochs=15, hidden=(8, 8), feature_dim=4, seed=42)
        a, sa, _ = dml_net.train(samples, cfg)
        b, sb, _ = dml_net.train(samples, cfg)
        for wa, wb in zip(a.weights + a.biases, b.weights + b.biases):
            assert np.array_equal(wa, wb)
        assert np.array_equal(sa.centers, sb.centers)

    def test_scatter_shrinks(self):
        samples = _toy_separable(2)
        cfg = TrainConfig(epochs=100, hidden=(16, 16), feature_dim=8, seed=3)
        init = dml_net.init_params([2, 16, 16, 8, 2], np.random.default_rng(3))
        params, _, _ = dml_net.train(samples, cfg)
        assert dml_net.within_class_scatter(params, samples) < dml_net.within_class_scatter(init, samples)

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_divergence_reports_epoch(self):
        samples = _toy_separable(3)
        cfg = TrainConfig(epochs=50, learning_rate=1e12, hidden=(8, 8), feature_dim=4)
        with pytest.raises(DivergenceError) as info:
            dml_net.train(samples, cfg)
        assert 1 <= info.value.epoch <= 50

    def test_exact_centers_are_class_means(self):
        samples = _toy_separable(4, n=12)
        cfg = TrainConfig(epochs=4, hidden=(6, 6), feature_dim=3, center_update="exact")
        params, state, _ = dml_net.train(samples, cfg)
        feats, _, _ = dml_net.forward(params, samples.spectra)
        for cls in (1, 2):
            np.testing.assert_allclose(state.centers[cls - 1], feats[samples.labels == cls].mean(axis=0), atol=1e-12)

    def test_minibatch_centers_track_exact_ones(self):
        samples = _toy_separable(5)
        base = dict(epochs=60, hidden=(8, 8), feature_dim=3, seed=2)
        params, state, _ = dml_net.train(samples, TrainConfig(**base))
        feats, _, _ = dml_net.forward(params, samples.spectra)
        means = dml_net.class_means(feats, samples.labels, 2)
        # centers trail the moving features a little but stay far closer than the class separation
        separation = np.linalg.norm(means[0] - means[1])
        assert np.linalg.norm(state.centers - means, axis=1).max() < 0.1 * separation

    def test_history_columns(self):
        _, _, history = dml_net.train(_toy_separable(), TrainConfig(epochs=3, hidden=(4, 4), feature_dim=2, lam=0.5))
        for row in history:
            assert row.joint_loss == pytest.approx(row.softmax_loss + 0.5 * row.center_loss)


class TestExtract:
    def test_single_pixel_matches_forward(self, rng):
        params = dml_net.init_params([5, 6, 6, 4, 3], rng)
        spectrum = rng.standard_normal(5)
        feats, probs = dml_net.extract(params, HsiCube(spectrum.reshape(1, 1, 5)))
        f, _, p = dml_net.forward(params, spectrum)
        np.testing.assert_allclose(feats.values[0, 0], f, rtol=1e-14)
        np.testing.assert_allclose(probs.values[0, 0], p, rtol=1e-14)

    def test_default_output_dims(self, rng):
        cfg = TrainConfig()
        params = dml_net.init_params([10, *cfg.hidden, cfg.feature_dim, 4], rng)
        feats, probs = dml_net.extract(params, HsiCube(rng.standard_normal((3, 5, 10))))
        assert feats.shape == (3, 5, 32)
        assert probs.shape == (3, 5, 4)
        np.testing.assert_allclose(probs.values.sum(-1), 1.0, atol=1e-12)

    def test_argmax_matches_pixel_loop(self, rng):
        params = dml_net.init_params([6, 8, 8, 4, 5], rng)
        cube = HsiCube(rng.standard_normal((7, 9, 6)))
        _, probs = dml_net.extract(params, cube, chunk=10)
        loop = np.zeros((7, 9), dtype=int)
        for r in range(7):
            for c in range(9):
                loop[r, c] = int(np.argmax(dml_net.forward(params, cube.values[r, c])[2])) + 1
        np.testing.assert_array_equal(probs.argmax_labels(), loop)

    def test_band_mismatch(self, rng):
        params = dml_net.init_params(TINY_DIMS, rng)
        with pytest.raises(ShapeError):
            dml_net.extract(params, HsiCube(np.zeros((2, 2, 3))))


class TestCheckpoint:
    def test_round_trip(self, tmp_path, rng):
        params = dml_net.init_params([5, 6, 4, 3, 2], rng)
        centers = rng.standard_normal((2, 3))
        dml_net.save_checkpoint(tmp_path / "m", params, centers)
        back, back_centers = dml_net.load_checkpoint(tmp_path / "m")
        assert back.layer_dims == params.layer_dims
        for a, b in zip(params.weights + params.biases, back.weights + back.biases):
            np.testing.assert_array_equal(a.astype(np.float32), b)
        np.testing.assert_array_equal(centers.astype(np.float32), back_centers)
        dml_net.save_checkpoint(tmp_path / "m2", back, back_centers)
        assert (tmp_path / "m").read_bytes() == (tmp_path / "m2").read_bytes()

    def test_layout(self, tmp_path):
        params = MlpParams([np.ones((1, 2)), np.full((2, 1), 2.0)], [np.zeros(2), np.array([3.0])], ["linear"])
        dml_net.save_checkpoint(tmp_path / "m", params, np.array([[7.0, 8.0]]))
        data = (tmp_path / "m").read_bytes()
        expected = (b"DMLW1" + np.array([2, 1, 2], "<u4").tobytes() + np.array([1, 1, 0, 0], "<f4").tobytes()
                    + np.array([2, 1], "<u4").tobytes() + np.array([2, 2, 3], "<f4").tobytes()
                    + np.array([7, 8], "<f4").tobytes())
        assert data == expected

    def test_bad_magic_and_truncation(self, tmp_path, rng):
        (tmp_path / "bad").write_bytes(b"XXXXX")
        with pytest.raises(FormatError):
            dml_net.load_checkpoint(tmp_path / "bad")
        params = dml_net.init_params(TINY_DIMS, rng)
        dml_net.save_checkpoint(tmp_path / "m", params, np.zeros((2, 3)))
        (tmp_path / "short").write_bytes((tmp_path / "m").read_bytes()[:-3])
        with pytest.raises(LengthError):
            dml_net.load_checkpoint(tmp_path / "short")

    def test_loss_csv(self, tmp_path):
        history = [dml_net.EpochLoss(1, 0.5, 0.25, 0.75)]
        dml_net.write_loss_csv(history, tmp_path / "loss.csv")
        assert (tmp_path / "loss.csv").read_text().splitlines() == [
            "epoch,softmax_loss,center_loss,joint_loss", "1,0.5,0.25,0.75"]


@pytest.mark.slow
def test_center_loss_tightens_synthetic_features(trained_lam1, trained_lam0, synth_scene):
    cube, labels = synth_scene
    samples = SampleSet.from_pixels(trained_lam1.cube, labels, trained_lam1.train_idx)
    with_center = dml_net.within_class_scatter(trained_lam1.params, samples)
    without = dml_net.within_class_scatter(trained_lam0.params, samples)
    assert with_center < without
