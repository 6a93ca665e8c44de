"""Reverse-mode gradients validated against finite differences and closed forms."""

import numpy as np
import pytest

from camkit.autodiff import (
    DerivativeMaps,
    finite_diff_exp_maps,
    finite_diff_grad,
    forward_to,
    grad_score_wrt_activation,
    higher_order_maps,
    infer,
    run_tail,
)
from camkit.model_format import InputSpec, LayerRecord, Model, load_model, save_model

from conftest import make_gapnet, probe_input


def norm_rel_err(got, want):
    """Max absolute deviation normalized by the largest reference magnitude."""
    scale = np.abs(want).max()
    if scale == 0:
        return np.abs(got).max()
    return np.abs(got - want).max() / scale


def _handnet(tmp_path, conv_bias=0.5, lin_bias=-1.0):
    """input 1x2x2 -> conv(1 map, 2x2) -> flatten -> linear(1->1)."""
    input_spec = InputSpec(1, 2, 2, mean=(0.0,), std=(1.0,))
    layers = [
        LayerRecord("conv1", "conv", {"out_channels": 1, "in_channels": 1,
                                      "kernel": [2, 2], "stride": [1, 1], "padding": 0}),
        LayerRecord("flat", "flatten"),
        LayerRecord("head", "linear", {"out_features": 1, "in_features": 1}),
    ]
    tensors = {
        "conv1": (np.array([[[[1.0, 0.0], [0.0, 1.0]]]]), np.array([conv_bias])),
        "head": (np.array([[2.0]]), np.array([lin_bias])),
    }
    path = tmp_path / "handnet.camf"
    save_model(path, input_spec, layers, tensors, ["only"])
    return load_model(path)


class TestForwardTo:
    def test_hand_computed_activations(self, tmp_path):
        model = _handnet(tmp_path)
        x = np.array([[[1.0, 2.0], [3.0, 4.0]]])
        trace = forward_to(model, x, "conv1")
        # kernel picks out corners (1,1): 1 + 4 + 0.5
        np.testing.assert_allclose(trace.outputs[0], [[[5.5]]], atol=1e-12)
        np.testing.assert_allclose(trace.scores, [2.0 * 5.5 - 1.0], atol=1e-12)

    def test_zero_input_zero_biases(self, tmp_path):
        model = _handnet(tmp_path, conv_bias=0.0, lin_bias=0.0)
        trace = forward_to(model, np.zeros((1, 2, 2)), "conv1")
        assert all(np.all(out == 0) for out in trace.outputs)
        np.testing.assert_array_equal(trace.scores, [0.0])

    def test_last_layer_trace_matches_plain_inference(self, gapnet):
        x = probe_input(gapnet)
        trace = forward_to(gapnet, x, gapnet.layers[-1].name)
        np.testing.assert_array_equal(trace.scores, infer(gapnet, x))

    def test_unknown_layer_lists_valid_names(self, gapnet):
        with pytest.raises(ValueError) as exc:
            forward_to(gapnet, probe_input(gapnet), "nope")
        assert "conv1" in str(exc.value) and "head" in str(exc.value)

    def test_conv_layer_absorbs_following_relu(self, gapnet):
        x = probe_input(gapnet)
        trace = forward_to(gapnet, x, "conv1")
        assert trace.target_index == 1
        assert (trace.target_activations >= 0).all()

    def test_run_tail_reproduces_scores(self, deepnet):
        x = probe_input(deepnet)
        trace = forward_to(deepnet, x, "conv1")
        np.testing.assert_array_equal(
            run_tail(deepnet, trace.target_index, trace.target_activations),
            trace.scores,
        )


class TestGradScoreWrtActivation:
    def test_gap_identity_tail_is_uniform(self, fixture_dir):
        model, _ = make_gapnet(fixture_dir, identity_head=True)
        x = probe_input(model)
        trace = forward_to(model, x, "conv1")
        g = grad_score_wrt_activation(trace, model, 2)
        want = np.zeros_like(g)
        want[2] = 1.0 / 36.0
        np.testing.assert_allclose(g, want, atol=1e-15)

    @pytest.mark.parametrize("layer", ["conv1"])
    def test_matches_finite_differences_on_all_fixtures(self, all_fixture_models, layer):
        for name, model in all_fixture_models.items():
            x = probe_input(model, seed=1)
            trace = forward_to(model, x, layer)
            for c in range(model.num_classes()):
                g = grad_score_wrt_activation(trace, model, c)
                fd = finite_diff_grad(model, x, layer, c, h=1e-5)
                assert norm_rel_err(g, fd) < 1e-6, f"{name} class {c}"

    def test_doubling_final_row_doubles_gradient(self, gapnet):
        x = probe_input(gapnet)
        doubled = {k: (w.copy(), b.copy()) for k, (w, b) in gapnet.weights.items()}
        doubled["head"][0][1] *= 2.0
        model2 = Model(gapnet.manifest, doubled, gapnet.output_shapes)

        g1 = grad_score_wrt_activation(forward_to(gapnet, x, "conv1"), gapnet, 1)
        g2 = grad_score_wrt_activation(forward_to(model2, x, "conv1"), model2, 1)
        np.testing.assert_array_equal(g2, 2.0 * g1)

    def test_class_out_of_range_rejected(self, gapnet):
        trace = forward_to(gapnet, probe_input(gapnet), "conv1")
        with pytest.raises(ValueError, match="out of range"):
            grad_score_wrt_activation(trace, gapnet, 3)


class TestHigherOrderMaps:
    def test_zero_gradient_gives_zero_maps(self):
        maps = higher_order_maps(np.zeros((2, 3, 3)), score=1.7)
        assert (maps.d1 == 0).all() and (maps.d2 == 0).all() and (maps.d3 == 0).all()

    def test_unit_gradient_zero_score(self):
        maps = higher_order_maps(np.ones((1, 2, 2)), score=0.0)
        for m in (maps.d1, maps.d2, maps.d3):
            np.testing.assert_array_equal(m, np.ones((1, 2, 2)))

    def test_power_construction_identities(self):
        rng = np.random.default_rng(31)
        g = rng.normal(size=(3, 4, 4))
        s = 0.83
        maps = higher_order_maps(g, s)
        e = np.exp(s)
        np.testing.assert_allclose(maps.d2, maps.d1 ** 2 / e, rtol=1e-12)
        np.testing.assert_allclose(maps.d3, maps.d1 ** 3 / e ** 2, rtol=1e-12)
        assert (maps.d2 >= 0).all()
        nz = maps.d1 != 0
        np.testing.assert_array_equal(np.sign(maps.d3[nz]), np.sign(maps.d1[nz]))

    def test_shift_scales_all_maps_equally(self):
        g = np.array([[[0.5, -0.25], [1.0, 0.0]]])
        base = higher_order_maps(g, score=2.0)
        shifted = higher_order_maps(g, score=2.0, shift=2.0)
        factor = np.exp(2.0)
        np.testing.assert_allclose(shifted.d1 * factor, base.d1, rtol=1e-12)
        np.testing.assert_allclose(shifted.d2 * factor, base.d2, rtol=1e-12)
        np.testing.assert_allclose(shifted.d3 * factor, base.d3, rtol=1e-12)

    @pytest.mark.parametrize("fixture,layer", [("deepnet", "conv2"), ("poolnet", "pool1")])
    def test_matches_finite_difference_exp_derivatives(self, all_fixture_models, fixture, layer):
        model = all_fixture_models[fixture]
        x = probe_input(model, seed=2)
        trace = forward_to(model, x, layer)
        shift = float(trace.scores.max())
        for c in range(model.num_classes()):
            g = grad_score_wrt_activation(trace, model, c)
            maps = higher_order_maps(g, float(trace.scores[c]), shift)
            d2_fd, d3_fd = finite_diff_exp_maps(model, x, layer, c, h=1e-3, shift=shift)
            assert norm_rel_err(maps.d2, d2_fd) < 1e-3, f"{fixture} d2 class {c}"
            assert norm_rel_err(maps.d3, d3_fd) < 1e-3, f"{fixture} d3 class {c}"


class TestFiniteDiffGrad:
    def test_exact_on_linear_tail(self, gapnet):
        # After conv1's relu the remaining tail (gap, linear) is affine, so
        # central differences are exact for any step.
        x = probe_input(gapnet)
        trace = forward_to(gapnet, x, "conv1")
        g = grad_score_wrt_activation(trace, gapnet, 0)
        for h in (1e-1, 1e-3, 1e-6):
            fd = finite_diff_grad(gapnet, x, "conv1", 0, h=h)
            np.testing.assert_allclose(fd, g, atol=1e-9)

    def test_matches_reverse_mode_through_relu_tail(self, deepnet):
        x = probe_input(deepnet, seed=3)
        trace = forward_to(deepnet, x, "conv1")
        g = grad_score_wrt_activation(trace, deepnet, 2)
        fd = finite_diff_grad(deepnet, x, "conv1", 2, h=1e-5)
        assert norm_rel_err(g, fd) < 1e-6

    def test_step_sweep_decreases_then_plateaus(self, deepnet):
        x = probe_input(deepnet, seed=4)
        trace = forward_to(deepnet, x, "conv1")
        g = grad_score_wrt_activation(trace, deepnet, 0)
        errs = [
            norm_rel_err(finite_diff_grad(deepnet, x, "conv1", 0, h=h), g)
            for h in (1e-2, 1e-3, 1e-4)
        ]
        # On a piecewise-linear tail the error floor is roundoff noise, so
        # allow an absolute slack at the plateau.
        assert errs[1] <= errs[0] * 1.5 + 1e-10
        assert errs[2] <= errs[1] * 1.5 + 1e-10
        assert errs[-1] < 1e-6

    def test_non_positive_step_rejected(self, gapnet):
        with pytest.raises(ValueError, match="positive"):
            finite_diff_grad(gapnet, probe_input(gapnet), "conv1", 0, h=0.0)
