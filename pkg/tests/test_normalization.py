"""Normalization round trips, target construction, bilateral split, scaled
endpoint flows, and coordinate grids."""

import numpy as np
import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from motionflow import (
    DegenerateDims,
    FlowField,
    MotionSpec,
    NonPositiveScale,
    TimestepOutOfRange,
)
from motionflow.flow_core import synth_sample
from motionflow.normalization import (
    compute_scale,
    coord_grid,
    denormalize,
    make_target,
    normalize,
    scaled_bidirectional,
    split_bilateral,
)


def const_field(u, v, h=6, w=6, dtype=torch.float64):
    return FlowField(torch.tensor([u, v], dtype=dtype).expand(h, w, 2).contiguous())


class TestComputeScale:
    def test_constant_pair(self):
        assert compute_scale(const_field(4, 0), const_field(-4, 0)) == pytest.approx(5.0)

    def test_zero_fields_floor(self):
        assert compute_scale(const_field(0, 0), const_field(0, 0)) == pytest.approx(1.25)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), scale=st.floats(0.01, 30.0))
    def test_margin_property(self, seed, scale):
        rng = np.random.default_rng(seed)
        a = FlowField(torch.from_numpy(rng.normal(scale=scale, size=(5, 4, 2))))
        b = FlowField(torch.from_numpy(rng.normal(scale=scale, size=(5, 4, 2))))
        s = compute_scale(a, b)
        biggest = max(float(a.data.abs().max()), float(b.data.abs().max()))
        assert s >= 1.25
        assert s >= 1.25 * biggest - 1e-12


class TestNormalizeDenormalize:
    def test_known_values(self):
        v = normalize(const_field(4, 0), 5.0)
        assert torch.allclose(v.data, torch.tensor([0.9, 0.5], dtype=torch.float64).expand(6, 6, 2))

    def test_zero_maps_to_midpoint(self):
        v = normalize(const_field(0, 0), 3.0)
        assert torch.allclose(v.data, torch.full((6, 6, 2), 0.5, dtype=torch.float64))

    def test_denormalize_midpoint_and_unit(self):
        v = normalize(const_field(0, 0), 7.0)
        assert float(denormalize(v).data.abs().max()) == 0.0
        from motionflow.normalization import NormalizedFlow

        v = NormalizedFlow(torch.tensor([1.0, 0.0]).expand(4, 4, 2).contiguous(), 5.0)
        out = denormalize(v)
        assert torch.allclose(out.data, torch.tensor([5.0, -5.0]).expand(4, 4, 2))

    def test_nonpositive_scale_rejected(self):
        with pytest.raises(NonPositiveScale):
            normalize(const_field(1, 1), 0.0)
        with pytest.raises(NonPositiveScale):
            make_target(const_field(0, 0), const_field(1, 1), -2.0)

    @settings(max_examples=60, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), s=st.floats(0.05, 100.0))
    def test_round_trip_1e9(self, seed, s):
        rng = np.random.default_rng(seed)
        f = FlowField(torch.from_numpy(rng.normal(scale=20.0, size=(6, 7, 2))))
        back = denormalize(normalize(f, s))
        assert torch.allclose(back.data, f.data, rtol=1e-9, atol=1e-9)

    def test_endpoint_range_with_computed_scale(self):
        rng = np.random.default_rng(4)
        f01 = FlowField(torch.from_numpy(rng.normal(scale=9.0, size=(8, 8, 2))))
        f10 = FlowField(torch.from_numpy(rng.normal(scale=9.0, size=(8, 8, 2))))
        s = compute_scale(f01, f10)
        for f in (f01, f10):
            v = normalize(f, s).data
            assert float(v.min()) >= 0.1 - 1e-9
            assert float(v.max()) <= 0.9 + 1e-9


class TestMakeTarget:
    def test_linear_motion_target_equals_v0(self):
        f01 = const_field(4, -2)
        f10 = const_field(-4, 2)
        s = compute_scale(f01, f10)
        for t in (0.1, 0.5, 0.8):
            ft0 = FlowField(-t * f01.data)
            ft1 = FlowField((1 - t) * f01.data)
            tgt = make_target(ft0, ft1, s)
            assert torch.allclose(tgt.data, normalize(f01, s).data, atol=1e-9)

    def test_boundary_identities(self):
        f01 = const_field(3, 1)
        f10 = const_field(-1, 2)
        s = compute_scale(f01, f10)
        zero = FlowField(torch.zeros(6, 6, 2, dtype=torch.float64))
        at0 = make_target(zero, f01, s)
        assert torch.allclose(at0.data, normalize(f01, s).data)
        at1 = make_target(f10, zero, s)
        neg = FlowField(-f10.data)
        assert torch.allclose(at1.data, normalize(neg, s).data)

    def test_quadratic_sample_target_from_oracle(self):
        spec = MotionSpec(kind="quadratic", velocity=(2.0, 0.0), accel=(0.0, 4.0))
        sample = synth_sample(spec, 24, 24, [0.5])
        _, ft0, ft1 = sample.gt[0]
        tgt = make_target(ft0, ft1, sample.scale)
        # quadratic target equals phi(f01) since ft1 - ft0 = v + a/2 = f01
        expect = normalize(sample.f01, sample.scale)
        assert torch.allclose(tgt.data, expect.data, atol=1e-6)


class TestSplitBilateral:
    def test_boundaries_and_midpoint(self):
        v = normalize(const_field(4, 0), 5.0)
        ft0, ft1 = split_bilateral(v, 0.0)
        assert float(ft0.data.abs().max()) == 0.0
        assert torch.allclose(ft1.data, const_field(4, 0).data)
        ft0, ft1 = split_bilateral(v, 1.0)
        assert torch.allclose(ft0.data, -const_field(4, 0).data)
        assert float(ft1.data.abs().max()) == 0.0
        ft0, ft1 = split_bilateral(v, 0.5)
        assert torch.allclose(ft0.data, const_field(-2, 0).data)
        assert torch.allclose(ft1.data, const_field(2, 0).data)

    @settings(max_examples=50, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), t=st.floats(0.0, 1.0))
    def test_reconstruction_identity(self, seed, t):
        rng = np.random.default_rng(seed)
        from motionflow.normalization import NormalizedFlow

        v = NormalizedFlow(torch.from_numpy(rng.uniform(-0.4, 1.4, size=(5, 6, 2))), 3.0)
        ft0, ft1 = split_bilateral(v, t)
        assert torch.allclose(ft1.data - ft0.data, denormalize(v).data, rtol=1e-12, atol=1e-12)

    def test_rejects_out_of_range(self):
        v = normalize(const_field(1, 1), 2.0)
        for t in (-0.01, 1.01):
            with pytest.raises(TimestepOutOfRange):
                split_bilateral(v, t)


class TestScaledBidirectional:
    def test_boundaries(self):
        f01, f10 = const_field(4, 0), const_field(-3, 1)
        a, b = scaled_bidirectional(f01, f10, 0.0)
        assert float(a.data.abs().max()) == 0.0
        assert torch.equal(b.data, f10.data)
        a, b = scaled_bidirectional(f01, f10, 1.0)
        assert torch.equal(a.data, f01.data)
        assert float(b.data.abs().max()) == 0.0

    def test_quarter_substitution(self):
        a, _ = scaled_bidirectional(const_field(4, 0), const_field(0, 0), 0.25)
        assert torch.allclose(a.data, const_field(1, 0).data)

    def test_linear_and_homogeneous(self):
        rng = np.random.default_rng(1)
        f01 = FlowField(torch.from_numpy(rng.normal(size=(5, 5, 2))))
        f10 = FlowField(torch.from_numpy(rng.normal(size=(5, 5, 2))))
        a1, _ = scaled_bidirectional(f01, f10, 0.2)
        a2, _ = scaled_bidirectional(f01, f10, 0.4)
        assert torch.allclose(2 * a1.data, a2.data, atol=1e-12)
        f01x3 = FlowField(3.0 * f01.data)
        a3, _ = scaled_bidirectional(f01x3, f10, 0.2)
        assert torch.allclose(a3.data, 3.0 * a1.data, atol=1e-12)

    def test_rejects_out_of_range(self):
        with pytest.raises(TimestepOutOfRange):
            scaled_bidirectional(const_field(1, 0), const_field(0, 0), 1.5)


class TestCoordGrid:
    def test_corners_and_t_channel(self):
        g = coord_grid(2, 2, 0.5)
        assert g.data[0, 0].tolist() == [-1.0, -1.0, 0.0]
        assert g.data[1, 1].tolist() == [1.0, 1.0, 0.0]
        assert float(coord_grid(4, 4, 0.0).data[..., 2].unique()) == -1.0
        assert float(coord_grid(4, 4, 1.0).data[..., 2].unique()) == 1.0

    def test_three_row_linspace(self):
        g = coord_grid(3, 5, 0.25)
        assert g.data[:, 0, 1].tolist() == [-1.0, 0.0, 1.0]

    def test_monotone_and_hits_borders(self):
        g = coord_grid(7, 9, 0.3).data
        xs = g[0, :, 0]
        ys = g[:, 0, 1]
        assert torch.all(xs[1:] > xs[:-1])
        assert torch.all(ys[1:] > ys[:-1])
        assert xs[0] == -1.0 and xs[-1] == 1.0
        assert ys[0] == -1.0 and ys[-1] == 1.0

    def test_degenerate_dims(self):
        with pytest.raises(DegenerateDims):
            coord_grid(1, 5, 0.5)
