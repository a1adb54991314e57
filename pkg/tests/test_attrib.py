import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from helpers import brute_force_shapley, linear_model, random_net
from xsecbench.attrib import (AttribConfig, Attribution, attr_deeplift, attr_gradient, attr_gradient_shap,
                              attr_gradient_x_input, attr_integrated_gradients, attr_kernel_shap, attr_lime,
                              attr_occlusion, canonical_method, counterfactual_explain, dump_attributions,
                              exhaustive_single_substitutions, explain, load_attributions, make_explainer,
                              rank_features)
from xsecbench.datagen import one_hot_window
from xsecbench.errors import DegenerateError, DimensionError, NothingToExplainError, ValidationError
from xsecbench.netcore import (DenseLayer, Model, class_score, init_model, input_gradient, predict,
                               probabilities_batch)

W = np.array([1.0, -2.0, 3.0])


class TestGradientFamily:
    def test_gradient_linear(self):
        np.testing.assert_array_equal(attr_gradient(linear_model(W), [5.0, 1.0, -3.0], 0).scores, W)

    def test_gradient_is_input_gradient(self, rng):
        m = random_net(3)
        x = rng.normal(size=m.in_dim)
        np.testing.assert_array_equal(attr_gradient(m, x, 1).scores, input_gradient(m, x, 1))

    def test_gradient_x_input_linear(self):
        np.testing.assert_array_equal(attr_gradient_x_input(linear_model(W), [2.0, 0.0, 1.0], 0).scores,
                                      [2.0, 0.0, 3.0])

    def test_gradient_x_input_at_zero(self):
        assert not np.any(attr_gradient_x_input(random_net(1), np.zeros(6), 0).scores)

    def test_gradient_x_input_composition(self, rng):
        m = random_net(8)
        x = rng.normal(size=m.in_dim)
        np.testing.assert_array_equal(attr_gradient_x_input(m, x, 2).scores, attr_gradient(m, x, 2).scores * x)

    def test_default_class_is_prediction(self, rng):
        m = random_net(4)
        x = rng.normal(size=m.in_dim)
        a = attr_gradient(m, x)
        assert a.target_class == predict(m, x)


class TestIntegratedGradients:
    @pytest.mark.parametrize("m", [1, 7, 50])
    def test_linear_exact(self, m):
        x = np.array([0.5, -1.0, 2.0])
        a = attr_integrated_gradients(linear_model(W), x, 0, AttribConfig(ig_steps=m))
        np.testing.assert_allclose(a.scores, W * x, atol=1e-15)

    def test_x_equals_baseline(self, rng):
        x = rng.normal(size=6)
        a = attr_integrated_gradients(random_net(2), x, 0, AttribConfig(baseline=x))
        assert not np.any(a.scores)

    def test_converges_to_fine_quadrature(self):
        # right-Riemann error is O(|x - b| / m); inputs drawn from the planted-data range
        m = random_net(5, sizes=(6, 10, 3))
        x = np.random.default_rng(5).uniform(-1, 1, size=6)
        coarse = attr_integrated_gradients(m, x, 1, AttribConfig(ig_steps=50)).scores
        fine = attr_integrated_gradients(m, x, 1, AttribConfig(ig_steps=10000)).scores
        assert np.max(np.abs(coarse - fine)) < 1e-3

    def test_residual_reported(self, rng):
        m = random_net(6)
        x = rng.normal(size=6)
        a = attr_integrated_gradients(m, x, 0, AttribConfig(ig_steps=512))
        delta = class_score(m, x, 0) - class_score(m, np.zeros(6), 0)
        assert a.completeness_residual == pytest.approx(a.scores.sum() - delta, abs=1e-12)
        assert abs(a.completeness_residual) <= 1e-3 * max(1.0, abs(delta))

    def test_baseline_shape_mismatch(self):
        with pytest.raises(DimensionError, match="baseline shape mismatch"):
            attr_integrated_gradients(random_net(1), np.zeros(6), 0, AttribConfig(baseline=np.zeros(4)))

    def test_train_mean_baseline(self):
        mean = np.full(3, 0.5)
        a = attr_integrated_gradients(linear_model(W), np.ones(3), 0,
                                      AttribConfig(baseline="train_mean", train_mean=mean))
        np.testing.assert_allclose(a.scores, W * 0.5)


class TestDeepLift:
    def test_linear(self):
        x = np.array([0.3, 2.0, -1.5])
        np.testing.assert_allclose(attr_deeplift(linear_model(W), x, 0).scores, W * x, atol=1e-15)

    def test_x_equals_baseline(self, rng):
        x = rng.normal(size=6)
        a = attr_deeplift(random_net(2), x, 0, AttribConfig(baseline=x))
        assert not np.any(a.scores) and a.completeness_residual == 0.0

    @pytest.mark.parametrize("hidden", ["relu", "tanh", "sigmoid"])
    def test_summation_to_delta(self, hidden):
        r = np.random.default_rng(hash(hidden) % 2**32)
        for seed in range(20):
            m = init_model([8, 12, 9, 3], hidden, "softmax", seed)
            x, b = r.normal(size=8), r.normal(size=8)
            a = attr_deeplift(m, x, 2, AttribConfig(baseline=b))
            delta = class_score(m, x, 2) - class_score(m, b, 2)
            assert abs(a.scores.sum() - delta) < 1e-6

    def test_near_zero_delta_uses_derivative(self):
        # identical pre-activations in one unit: the multiplier falls back to the slope
        m = Model((DenseLayer([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], "tanh"),
                   DenseLayer([[1.0, 1.0]], [0.0])))
        a = attr_deeplift(m, [0.0, 1.0], 0, AttribConfig(baseline=np.array([0.0, 0.0])))
        np.testing.assert_allclose(a.scores, [0.0, np.tanh(1.0)])


class TestGradientShap:
    def test_single_baseline_equal_to_x(self, rng):
        x = rng.normal(size=6)
        a = attr_gradient_shap(random_net(1), x, 0, [x], AttribConfig(noise_sigma=0.0))
        assert not np.any(a.scores)

    @pytest.mark.parametrize("n", [1, 5, 40])
    def test_linear_constant_gradient(self, n):
        x, b = np.array([1.0, 2.0, 3.0]), np.array([0.5, -1.0, 0.0])
        a = attr_gradient_shap(linear_model(W), x, 0, [b], AttribConfig(noise_sigma=0.0, n_samples=n))
        np.testing.assert_allclose(a.scores, W * (x - b), atol=1e-14)

    def test_empty_baselines(self):
        with pytest.raises(ValidationError):
            attr_gradient_shap(random_net(1), np.zeros(6), 0, [])

    def test_deterministic_per_seed(self, rng):
        m, x, B = random_net(3), rng.normal(size=6), rng.normal(size=(4, 6))
        a = attr_gradient_shap(m, x, 0, B, AttribConfig(seed=3)).scores
        np.testing.assert_array_equal(a, attr_gradient_shap(m, x, 0, B, AttribConfig(seed=3)).scores)
        assert np.any(a != attr_gradient_shap(m, x, 0, B, AttribConfig(seed=4)).scores)

    def test_spread_shrinks_with_samples(self, rng):
        m, x, B = random_net(3), rng.normal(size=6), rng.normal(size=(8, 6))

        def spread(n):
            runs = np.stack([attr_gradient_shap(m, x, 0, B, AttribConfig(n_samples=n, seed=s)).scores
                             for s in range(30)])
            return runs.std(axis=0).mean()

        ratio = spread(1000) / spread(10)
        assert 1 / 20 <= ratio <= 1 / 5


class TestOcclusion:
    def test_linear_window_one(self):
        x = np.array([2.0, 1.0, -1.0])
        np.testing.assert_allclose(attr_occlusion(linear_model(W), x, 0).scores, W * x)

    def test_x_equals_baseline(self, rng):
        x = rng.normal(size=6)
        assert not np.any(attr_occlusion(random_net(1), x, 0, AttribConfig(baseline=x)).scores)

    def test_single_window(self, rng):
        m, x = random_net(2), rng.normal(size=6)
        a = attr_occlusion(m, x, 1, AttribConfig(occlusion_window=6)).scores
        np.testing.assert_allclose(a, class_score(m, x, 1) - class_score(m, np.zeros(6), 1))

    def test_ragged_last_window(self, rng):
        m, x = random_net(2), rng.normal(size=6)
        a = attr_occlusion(m, x, 1, AttribConfig(occlusion_window=4)).scores
        assert a[0] == a[3] and a[4] == a[5]


class TestLime:
    def test_constant_model(self, rng):
        m = Model((DenseLayer(np.zeros((1, 4)), [0.7], "identity"),))
        np.testing.assert_allclose(attr_lime(m, rng.normal(size=4), 0).scores, 0.0, atol=1e-6)

    def test_linear_probability_direction(self):
        w = np.array([1.0, -1.0])
        m = linear_model(0.1 * w, b=0.5)
        s = attr_lime(m, np.array([0.2, -0.1]), 0).scores
        assert s @ w / (np.linalg.norm(s) * np.linalg.norm(w)) > 0.99

    def test_seeded(self, rng):
        m, x = random_net(3), rng.normal(size=6)
        a = attr_lime(m, x, 0, AttribConfig(seed=1)).scores
        np.testing.assert_array_equal(a, attr_lime(m, x, 0, AttribConfig(seed=1)).scores)
        assert np.any(a != attr_lime(m, x, 0, AttribConfig(seed=2)).scores)

    def test_degenerate_neighbourhood(self):
        # perturbations far outside a tiny kernel: all weights underflow to zero
        cfg = AttribConfig(kernel_width=1e-6, feature_scale=10.0)
        with pytest.raises(DegenerateError, match="degenerate-neighborhood"):
            attr_lime(random_net(1), np.zeros(6), 0, cfg)


class TestKernelShap:
    def test_linear_exact(self):
        x = np.array([1.0, -0.5, 2.0])
        a = attr_kernel_shap(linear_model(W), x, 0, AttribConfig(shap_exact=True))
        np.testing.assert_allclose(a.scores, W * x, atol=1e-10)

    def test_linear_sampled(self):
        x = np.array([1.0, -0.5, 2.0, 0.3])
        m = linear_model(np.append(W, 4.0))
        np.testing.assert_allclose(attr_kernel_shap(m, x, 0).scores, m.layers[0].weights[0] * x, atol=1e-10)

    @given(st.integers(0, 2**32 - 1), st.integers(2, 9))
    @settings(max_examples=25, deadline=None)
    def test_efficiency(self, seed, d):
        m = init_model([d, 5, 2], "tanh", "softmax", seed % 1000)
        x = np.random.default_rng(seed).normal(size=d)
        a = attr_kernel_shap(m, x, 0, AttribConfig(n_samples=64, seed=seed))
        p = probabilities_batch(m, np.stack([x, np.zeros(d)]), 0)
        assert abs(a.scores.sum() - (p[0] - p[1])) <= 1e-6

    def test_exact_matches_brute_force(self, rng):
        m = init_model([6, 8, 3], "tanh", "softmax", 4)
        x = rng.normal(size=6)
        a = attr_kernel_shap(m, x, 2, AttribConfig(shap_exact=True)).scores
        np.testing.assert_allclose(a, brute_force_shapley(m, x, 2, np.zeros(6)), atol=1e-10)

    def test_sampled_close_to_brute_force(self, rng):
        m = init_model([8, 16, 3], "tanh", "softmax", 5)
        x = rng.normal(size=8)
        a = attr_kernel_shap(m, x, 1, AttribConfig(n_samples=4096, seed=5)).scores
        assert np.max(np.abs(a - brute_force_shapley(m, x, 1, np.zeros(8)))) < 0.02

    def test_exact_dimension_limit(self):
        with pytest.raises(ValidationError):
            attr_kernel_shap(init_model([26, 2]), np.zeros(26), 0, AttribConfig(shap_exact=True))

    def test_one_feature(self):
        m = linear_model([2.0], b=1.0)
        assert attr_kernel_shap(m, [3.0], 0).scores.tolist() == [6.0]


class TestCounterfactual:
    @staticmethod
    def toy_sequence_model(window=3, vocab=4, bad_event=3):
        # class 1 ("anomalous") fires when the bad event occurs anywhere in the window
        w1 = np.zeros(window * vocab)
        w1[np.arange(window) * vocab + bad_event] = 5.0
        return Model((DenseLayer(np.stack([np.zeros_like(w1), w1]), [0.0, -2.0], "softmax"),))

    def test_single_substitution_matches_exhaustive(self):
        m = self.toy_sequence_model()
        events = [0, 3, 1]
        cf = counterfactual_explain(m, one_hot_window(events, 4), 0, "discrete", vocab_size=4)
        assert cf.success and cf.diff_positions == [1]
        oracle = exhaustive_single_substitutions(m, events, 4, 0)
        assert (cf.diff_positions[0], int(cf.reference[1])) in oracle
        assert {p for p, _ in oracle} == {1}

    def test_two_bad_events_need_two_substitutions(self):
        m = self.toy_sequence_model()
        cf = counterfactual_explain(m, one_hot_window([3, 0, 3], 4), 0, "discrete", vocab_size=4)
        assert cf.success and cf.diff_positions == [0, 2]

    def test_never_benign(self):
        m = Model((DenseLayer(np.zeros((2, 8)), [0.0, 5.0], "softmax"),))
        cf = counterfactual_explain(m, one_hot_window([0, 1], 4), 0, "discrete", vocab_size=4)
        assert not cf.success
        assert cf.diff_positions == [p for p in range(2) if cf.original[p] != cf.reference[p]]

    def test_already_benign(self):
        m = self.toy_sequence_model()
        with pytest.raises(NothingToExplainError, match="nothing-to-explain"):
            counterfactual_explain(m, one_hot_window([0, 1, 2], 4), 0, "discrete", vocab_size=4)

    def test_continuous_flips_linear_model(self):
        m = Model((DenseLayer([[1.0, 0.0], [0.0, 1.0]], [0.0, 0.0], "softmax"),))
        x = np.array([0.0, 1.0])
        cf = counterfactual_explain(m, x, 0, "continuous")
        assert cf.success and cf.reference[0] > cf.reference[1]
        assert cf.diff_positions == [i for i in range(2) if cf.reference[i] != x[i]]

    def test_discrete_needs_one_hot(self):
        m = self.toy_sequence_model()
        x = one_hot_window([0, 3, 1], 4) * 0.5
        with pytest.raises(ValidationError):
            counterfactual_explain(m, x, 0, "discrete", vocab_size=4)


class TestRanking:
    def test_tie_break(self):
        assert rank_features(np.array([0.1, 0.5, 0.5]), 2) == [(1, 0.5), (2, 0.5)]

    def test_k_zero(self):
        assert rank_features(np.array([0.1, 0.5]), 0) == []

    def test_k_beyond_dim(self):
        r = rank_features(np.array([0.3, -1.0, 2.0]), 10)
        assert [i for i, _ in r] == [2, 0, 1]

    @given(st.lists(st.floats(-10, 10), min_size=1, max_size=30))
    def test_descending(self, scores):
        r = rank_features(np.array(scores), len(scores))
        vals = [s for _, s in r]
        assert vals == sorted(vals, reverse=True)
        assert sorted(i for i, _ in r) == list(range(len(scores)))


class TestDispatch:
    def test_aliases(self):
        assert canonical_method("IG") == "integrated_gradients"
        assert canonical_method("shap") == "kernel_shap"

    def test_unknown(self):
        with pytest.raises(ValidationError, match="gradient"):
            canonical_method("lrp")

    @pytest.mark.parametrize("method", ["gradient", "gradient_x_input", "integrated_gradients", "deeplift",
                                        "gradient_shap", "lime", "kernel_shap", "occlusion"])
    def test_every_method_runs(self, method, rng):
        m, x = random_net(2), rng.normal(size=6)
        a = explain(m, x, method, 1)
        assert isinstance(a, Attribution) and a.scores.shape == (6,) and np.all(np.isfinite(a.scores))
        np.testing.assert_array_equal(make_explainer(method)(m, x, 1), a.scores)

    def test_dump_round_trip(self, tmp_path, rng):
        m, x = random_net(2), rng.normal(size=6)
        recs = [explain(m, x, k, 0).to_record() for k in ("gradient", "integrated_gradients")]
        dump_attributions(recs, tmp_path / "a.jsonl", manifest={"command": "explain"})
        back = load_attributions(tmp_path / "a.jsonl")
        assert back == recs
        assert "completeness_residual" in back[1]
