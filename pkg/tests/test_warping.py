"""Warping kernels against naive per-pixel loop oracles, plus the structural
identities (identity warps, replicate padding, splat normalization)."""

import numpy as np
import pytest
import torch

from motionflow import DegenerateWeight, ShapeMismatch
from motionflow.warping import (
    backward_warp,
    flow_consistency,
    flow_variance,
    forward_splat,
    gaussian3x3,
    splat_weights,
)
from oracles import (
    bw_warp_ref,
    consistency_ref,
    gauss3_ref,
    splat_ref,
    variance_ref,
    weights_ref,
)


def rand_field(rng, h, w, c, scale=1.0):
    return torch.from_numpy(rng.normal(scale=scale, size=(h, w, c)))


class TestBackwardWarp:
    def test_zero_flow_identity_bitexact(self):
        rng = np.random.default_rng(0)
        field = rand_field(rng, 6, 7, 3)
        out = backward_warp(field, torch.zeros(6, 7, 2, dtype=torch.float64))
        assert torch.equal(out, field)

    def test_ramp_half_pixel(self):
        w = 8
        ramp = (torch.arange(w, dtype=torch.float64) / (w - 1)).view(1, w, 1).expand(4, w, 1)
        flow = torch.zeros(4, w, 2, dtype=torch.float64)
        flow[..., 0] = 0.5
        out = backward_warp(ramp.contiguous(), flow)
        expect = torch.minimum(
            torch.arange(w, dtype=torch.float64) + 0.5, torch.tensor(float(w - 1))
        ) / (w - 1)
        assert torch.allclose(out[0, :, 0], expect, atol=1e-12)

    def test_integer_flow_is_index_shift(self):
        rng = np.random.default_rng(1)
        field = rand_field(rng, 5, 5, 2)
        flow = torch.zeros(5, 5, 2, dtype=torch.float64)
        flow[..., 0] = 2.0
        out = backward_warp(field, flow)
        shifted = field[:, [2, 3, 4, 4, 4], :]
        assert torch.equal(out, shifted)

    @pytest.mark.parametrize("seed", range(6))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed)
        field = rng.normal(size=(5, 5, 3))
        flow = rng.normal(scale=2.0, size=(5, 5, 2))
        out = backward_warp(torch.from_numpy(field), torch.from_numpy(flow))
        assert np.allclose(out.numpy(), bw_warp_ref(field, flow), atol=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            backward_warp(torch.zeros(4, 4, 1), torch.zeros(5, 4, 2))


class TestGaussian3x3:
    def test_constant_unchanged(self):
        field = torch.full((6, 6, 2), 3.25, dtype=torch.float64)
        assert torch.allclose(gaussian3x3(field), field, atol=1e-12)

    def test_unit_impulse(self):
        field = torch.zeros(5, 5, 1, dtype=torch.float64)
        field[2, 2, 0] = 1.0
        out = gaussian3x3(field)
        assert out[2, 2, 0] == pytest.approx(4 / 16)
        assert out[2, 1, 0] == pytest.approx(2 / 16)
        assert out[1, 1, 0] == pytest.approx(1 / 16)
        assert out[0, 0, 0] == 0.0

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_dense_conv_oracle(self, seed):
        rng = np.random.default_rng(seed + 10)
        field = rng.normal(size=(7, 6, 2))
        out = gaussian3x3(torch.from_numpy(field))
        assert np.allclose(out.numpy(), gauss3_ref(field), atol=1e-12)


class TestFlowConsistency:
    def test_exact_inverse_pair_is_zero(self):
        c = torch.tensor([1.5, -2.0], dtype=torch.float64)
        f_fwd = c.expand(6, 6, 2).contiguous()
        f_bwd = (-c).expand(6, 6, 2).contiguous()
        out = flow_consistency(f_fwd, f_bwd)
        assert float(out.abs().max()) == 0.0

    def test_aligned_pair_value(self):
        c = torch.tensor([1.0, 0.0], dtype=torch.float64)
        f = c.expand(4, 4, 2).contiguous()
        out = flow_consistency(f, f)
        assert torch.allclose(out, torch.full((4, 4, 1), 2.0, dtype=torch.float64))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed + 20)
        a = rng.normal(size=(6, 5, 2))
        b = rng.normal(size=(6, 5, 2))
        out = flow_consistency(torch.from_numpy(a), torch.from_numpy(b))
        assert np.allclose(out.numpy(), consistency_ref(a, b), atol=1e-12)

    def test_nonnegative(self):
        rng = np.random.default_rng(99)
        a = torch.from_numpy(rng.normal(size=(8, 8, 2)))
        b = torch.from_numpy(rng.normal(size=(8, 8, 2)))
        assert float(flow_consistency(a, b).min()) >= 0.0


class TestFlowVariance:
    def test_constant_is_zero(self):
        f = torch.tensor([4.0, -1.0]).expand(7, 7, 2).contiguous().double()
        assert float(flow_variance(f).abs().max()) == 0.0

    def test_checkerboard_matches_oracle(self):
        ys, xs = np.mgrid[0:8, 0:8]
        u = ((xs + ys) % 2).astype(np.float64) * 2.0
        f = np.stack([u, np.zeros_like(u)], axis=-1)
        out = flow_variance(torch.from_numpy(f))
        assert np.allclose(out.numpy(), variance_ref(f), atol=1e-12)

    def test_never_nan(self):
        # values chosen so G(F^2) - G(F)^2 dips below zero by fp error
        f = torch.full((6, 6, 2), 1e8, dtype=torch.float32)
        out = flow_variance(f)
        assert torch.isfinite(out).all()

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_loop_oracle(self, seed):
        rng = np.random.default_rng(seed + 30)
        f = rng.normal(scale=3.0, size=(6, 6, 2))
        out = flow_variance(torch.from_numpy(f))
        assert np.allclose(out.numpy(), variance_ref(f), atol=1e-10)


class TestSplatWeights:
    def test_zero_metrics_give_two(self):
        z = splat_weights(torch.zeros(4, 4, 1), torch.zeros(4, 4, 1), 1.0, 1.0)
        assert torch.allclose(z, torch.full((4, 4, 1), 2.0))

    def test_substitution(self):
        z = splat_weights(torch.ones(3, 3, 1), torch.zeros(3, 3, 1), 1.0, 1.0)
        assert torch.allclose(z, torch.full((3, 3, 1), 1.5))

    def test_monotone_decreasing_in_metrics(self):
        rng = np.random.default_rng(5)
        u = torch.from_numpy(rng.uniform(0, 4, size=(6, 6, 1)))
        v = torch.from_numpy(rng.uniform(0, 4, size=(6, 6, 1)))
        z = splat_weights(u, v, 0.7, 1.3)
        z_more = splat_weights(u + 0.5, v, 0.7, 1.3)
        assert torch.all(z_more < z)
        z_more_var = splat_weights(u, v + 0.5, 0.7, 1.3)
        assert torch.all(z_more_var < z)

    def test_range_for_nonnegative_inputs(self):
        rng = np.random.default_rng(6)
        u = torch.from_numpy(rng.uniform(0, 10, size=(5, 5, 1)))
        v = torch.from_numpy(rng.uniform(0, 10, size=(5, 5, 1)))
        z = splat_weights(u, v, 2.0, 0.5)
        assert float(z.min()) > 0.0
        assert float(z.max()) <= 2.0

    def test_matches_formula_oracle(self):
        rng = np.random.default_rng(7)
        u = rng.uniform(0, 3, size=(4, 4, 1))
        v = rng.uniform(0, 3, size=(4, 4, 1))
        z = splat_weights(torch.from_numpy(u), torch.from_numpy(v), 0.9, 1.7)
        assert np.allclose(z.numpy(), weights_ref(u, v, 0.9, 1.7), atol=1e-12)

    def test_degenerate_weight(self):
        with pytest.raises(DegenerateWeight):
            splat_weights(torch.ones(3, 3, 1), torch.zeros(3, 3, 1), -1.0, 1.0)


class TestForwardSplat:
    def test_identity_at_zero_flow(self):
        rng = np.random.default_rng(40)
        field = torch.from_numpy(rng.normal(size=(5, 6, 3)))
        z = torch.full((5, 6, 1), 0.7, dtype=torch.float64)
        out, cov = forward_splat(field, torch.zeros(5, 6, 2, dtype=torch.float64), z)
        assert torch.allclose(out, field, rtol=1e-12, atol=1e-12)
        assert torch.allclose(cov, torch.exp(z), rtol=1e-12, atol=1e-12)

    def test_row_shift_scatter(self):
        field = torch.tensor([[[1.0], [2.0], [3.0], [4.0]]], dtype=torch.float64)
        flow = torch.zeros(1, 4, 2, dtype=torch.float64)
        flow[..., 0] = 1.0
        z = torch.zeros(1, 4, 1, dtype=torch.float64)
        out, cov = forward_splat(field, flow, z)
        assert out[0, :, 0].tolist() == [0.0, 1.0, 2.0, 3.0]
        assert cov[0, 0, 0] == 0.0
        assert torch.all(cov[0, 1:, 0] > 0)

    def test_constant_field_preserved_where_covered(self):
        rng = np.random.default_rng(41)
        field = torch.full((6, 6, 2), 1.75, dtype=torch.float64)
        flow = torch.from_numpy(rng.normal(scale=1.5, size=(6, 6, 2)))
        z = torch.from_numpy(rng.normal(size=(6, 6, 1)))
        out, cov = forward_splat(field, flow, z)
        covered = cov[..., 0] > 1e-8
        assert torch.allclose(out[covered], torch.tensor(1.75, dtype=torch.float64), atol=1e-9)

    @pytest.mark.parametrize("seed", range(6))
    @pytest.mark.parametrize("mode", ["softmax", "linear"])
    def test_matches_scatter_oracle(self, seed, mode):
        rng = np.random.default_rng(seed + 50)
        field = rng.normal(size=(6, 5, 2))
        flow = rng.normal(scale=2.0, size=(6, 5, 2))
        z = rng.uniform(0.2, 2.0, size=(6, 5, 1))
        out, cov = forward_splat(
            torch.from_numpy(field), torch.from_numpy(flow), torch.from_numpy(z), mode=mode
        )
        out_ref, cov_ref = splat_ref(field, flow, z, mode=mode)
        assert np.allclose(out.numpy(), out_ref, atol=1e-10)
        assert np.allclose(cov.numpy(), cov_ref, atol=1e-10)

    def test_deterministic_accumulation(self):
        rng = np.random.default_rng(60)
        field = torch.from_numpy(rng.normal(size=(8, 8, 4)))
        flow = torch.from_numpy(rng.normal(scale=3.0, size=(8, 8, 2)))
        z = torch.from_numpy(rng.normal(size=(8, 8, 1)))
        a1, c1 = forward_splat(field, flow, z)
        a2, c2 = forward_splat(field, flow, z)
        assert torch.equal(a1, a2) and torch.equal(c1, c2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeMismatch):
            forward_splat(torch.zeros(4, 4, 1), torch.zeros(4, 4, 2), torch.zeros(4, 3, 1))
