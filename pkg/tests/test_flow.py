import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays
from scipy import ndimage

from conftest import textured
from softspot.flow import FlowField, TvL1Params, as_gray_frame, optical_strain, tvl1_flow


def central(a, margin):
    return a[margin:-margin, margin:-margin]


class TestParams:
    def test_defaults(self):
        p = TvL1Params()
        assert (p.lambda_, p.theta, p.tau, p.warps, p.zoom, p.max_iterations, p.stop_epsilon) == (
            0.15, 0.3, 0.25, 5, 0.5, 300, 0.01)
        assert p.median_filter is False

    @pytest.mark.parametrize("kw", [{"lambda_": 0}, {"theta": -1}, {"tau": 0}, {"warps": 0},
                                    {"scales": 0}, {"zoom": 1.0}, {"zoom": 0.0},
                                    {"max_iterations": 0}, {"stop_epsilon": 0}])
    def test_rejects_invalid(self, kw):
        with pytest.raises(ValueError):
            TvL1Params(**kw)


class TestGrayFrame:
    def test_uint8_scaled(self):
        f = as_gray_frame(np.array([[0, 255]], dtype=np.uint8))
        assert f.dtype == np.float64 and f.tolist() == [[0.0, 1.0]]

    def test_out_of_range_float_rejected(self):
        with pytest.raises(ValueError):
            as_gray_frame(np.full((4, 4), 1.5))

    def test_must_be_2d(self):
        with pytest.raises(ValueError):
            as_gray_frame(np.zeros((4, 4, 3)))


class TestTvL1:
    def test_identical_frames_give_zero_flow(self):
        img = textured(64, seed=1)
        f = tvl1_flow(img, img)
        assert max(np.abs(f.u).max(), np.abs(f.v).max()) < 1e-3

    def test_integer_shift_recovered(self):
        img = textured(64, seed=2)
        f = tvl1_flow(img, np.roll(img, 2, axis=1))
        assert abs(central(f.u, 8).mean() - 2.0) < 0.2
        assert abs(central(f.v, 8).mean()) < 0.2

    def test_vertical_subpixel_shift(self):
        img = textured(96, seed=3)
        moved = ndimage.shift(img, (0.6, 0.0), order=3, mode="wrap")
        f = tvl1_flow(img, np.clip(moved, 0, 1))
        assert abs(central(f.v, 16).mean() - 0.6) < 0.1
        assert abs(central(f.u, 16).mean()) < 0.1

    @pytest.mark.parametrize("seed", [4, 5])
    def test_mirror_symmetry(self, seed):
        a = textured(64, seed=seed)
        yy, xx = np.mgrid[0:64, 0:64].astype(float)
        dx = 2.5 * np.exp(-((xx - 40) ** 2 + (yy - 30) ** 2) / 150)
        dy = 0.3 - 1.5 * np.exp(-((xx - 20) ** 2 + (yy - 40) ** 2) / 100)
        b = np.clip(ndimage.map_coordinates(a, [yy - dy, xx - dx], order=3, mode="mirror"), 0, 1)
        f = tvl1_flow(a, b)
        g = tvl1_flow(a[:, ::-1], b[:, ::-1])
        assert np.abs(g.u[:, ::-1] + f.u).max() < 1e-6
        assert np.abs(g.v[:, ::-1] - f.v).max() < 1e-6

    def test_deterministic(self):
        a, b = textured(48, seed=6), textured(48, seed=7)
        f, g = tvl1_flow(a, b), tvl1_flow(a, b)
        assert np.array_equal(f.u, g.u) and np.array_equal(f.v, g.v)

    def test_energy_trace_non_increasing(self):
        img = textured(64, seed=8)
        f = tvl1_flow(img, np.roll(img, (1, 3), axis=(0, 1)))
        trace = np.array(f.energy_trace)
        assert len(trace) >= 1
        assert np.all(np.diff(trace) <= 1e-6)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            tvl1_flow(np.zeros((32, 32)), np.zeros((32, 33)))

    def test_too_small(self):
        with pytest.raises(ValueError):
            tvl1_flow(np.zeros((8, 8)), np.zeros((8, 8)))

    def test_pyramid_depth_capped_by_size(self):
        img = textured(20, seed=9)
        f = tvl1_flow(img, np.roll(img, 1, axis=1), TvL1Params(scales=8))
        assert f.u.shape == (20, 20)

    def test_median_filter_option_runs(self):
        img = textured(48, seed=10)
        f = tvl1_flow(img, np.roll(img, 1, axis=1), TvL1Params(median_filter=True))
        assert np.all(np.isfinite(f.u))


class TestFlowField:
    def test_rejects_nonfinite(self):
        u = np.zeros((4, 4))
        u[0, 0] = np.nan
        with pytest.raises(ValueError):
            FlowField(u, np.zeros((4, 4)))

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            FlowField(np.zeros((4, 4)), np.zeros((4, 5)))


class TestStrain:
    def grid(self, n=16):
        return np.mgrid[0:n, 0:n].astype(float)

    def test_constant_flow_has_no_strain(self):
        s = optical_strain(FlowField(np.full((8, 8), 1.3), np.full((8, 8), -0.4)))
        for a in (s.exx, s.eyy, s.exy, s.magnitude):
            assert np.all(a == 0)

    def test_affine(self):
        y, x = self.grid()
        s = optical_strain(FlowField(0.1 * x, 0.2 * y))
        assert np.abs(s.exx[1:-1, 1:-1] - 0.1).max() < 1e-12
        assert np.abs(s.eyy[1:-1, 1:-1] - 0.2).max() < 1e-12
        assert np.abs(s.exy[1:-1, 1:-1]).max() < 1e-12
        assert np.abs(s.magnitude[1:-1, 1:-1] - np.sqrt(0.05)).max() < 1e-12

    def test_shear(self):
        y, x = self.grid()
        s = optical_strain(FlowField(0.3 * y, np.zeros_like(y)))
        assert np.abs(s.exy[1:-1, 1:-1] - 0.15).max() < 1e-12
        assert np.abs(s.magnitude[1:-1, 1:-1] - np.sqrt(2 * 0.15**2)).max() < 1e-12

    def test_linear_fields_exact_at_borders_too(self):
        y, x = self.grid(9)
        s = optical_strain(FlowField(0.1 * x, 0.2 * y))
        assert np.abs(s.exx - 0.1).max() < 1e-12

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.float64, (6, 7), elements=st.integers(-5000, 5000).map(lambda i: i / 1000)),
           arrays(np.float64, (6, 7), elements=st.integers(-5000, 5000).map(lambda i: i / 1000)),
           st.floats(-3, 3))
    def test_scaling_and_magnitude_identity(self, u, v, c):
        s = optical_strain(FlowField(u, v))
        assert np.all(s.magnitude >= 0)
        assert np.allclose(s.magnitude, np.sqrt(s.exx**2 + s.eyy**2 + 2 * s.exy**2), atol=0, rtol=1e-15)
        scaled = optical_strain(FlowField(c * u, c * v))
        assert np.allclose(scaled.magnitude, abs(c) * s.magnitude, rtol=1e-9, atol=1e-12)
        zero = s.magnitude == 0
        assert np.array_equal(zero, (s.exx == 0) & (s.eyy == 0) & (s.exy == 0))
