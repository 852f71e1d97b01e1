import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kercon.kernels import KernelKind, LabelKernel, kernel_eval, weight_matrix

GAUSS2 = LabelKernel(KernelKind.GAUSSIAN, 2.0)
CAUCHY1 = LabelKernel(KernelKind.CAUCHY, 1.0)
DELTA = LabelKernel(KernelKind.DELTA)

finite = st.floats(-1e3, 1e3, allow_nan=False)
bandwidths = st.floats(0.05, 20.0)
kernels = st.one_of(
    st.builds(LabelKernel, st.just(KernelKind.GAUSSIAN), bandwidths),
    st.builds(LabelKernel, st.just(KernelKind.CAUCHY), bandwidths),
    st.just(DELTA),
)


class TestKernelEval:
    def test_gaussian_identity(self):
        assert kernel_eval(GAUSS2, 0.0) == 1.0

    def test_gaussian_value(self):
        # exp(-4/8) evaluated with mpmath at 30 digits
        assert kernel_eval(GAUSS2, 2.0) == pytest.approx(0.606530659712633, abs=1e-15)
        assert round(kernel_eval(GAUSS2, 2.0), 6) == 0.606531

    def test_cauchy_value(self):
        assert kernel_eval(CAUCHY1, 1.0) == 0.5

    def test_delta(self):
        assert kernel_eval(DELTA, 0.0) == 1.0
        assert kernel_eval(DELTA, 0.3) == 0.0

    @pytest.mark.parametrize("u", [math.nan, math.inf, -math.inf])
    def test_non_finite_difference(self, u):
        with pytest.raises(ValueError, match="invalid label difference"):
            kernel_eval(GAUSS2, u)

    @pytest.mark.parametrize("kind", ["rbf", "cauchy"])
    @pytest.mark.parametrize("bw", [0.0, -1.0, math.nan])
    def test_bandwidth_must_be_positive(self, kind, bw):
        with pytest.raises(ValueError):
            LabelKernel(kind, bw)

    def test_delta_ignores_bandwidth(self):
        LabelKernel("delta", -3.0)

    @given(kernels, finite)
    def test_range_symmetry_and_peak(self, kernel, u):
        v = kernel_eval(kernel, u)
        assert 0.0 <= v <= 1.0
        assert v == kernel_eval(kernel, -u)
        assert kernel_eval(kernel, 0.0) == 1.0

    @given(kernels)
    def test_non_increasing_in_abs_difference(self, kernel):
        grid = np.linspace(0, 50, 501)
        vals = [kernel_eval(kernel, u) for u in grid]
        assert all(a >= b for a, b in zip(vals, vals[1:]))


class TestConfig:
    def test_round_trip(self):
        for k in (GAUSS2, CAUCHY1):
            assert LabelKernel.from_config(k.to_config()) == k
        assert LabelKernel.from_config({"kernel": "rbf", "bandwidth": 2}).kind is KernelKind.GAUSSIAN

    def test_unknown_kernel_lists_valid(self):
        with pytest.raises(ValueError, match="rbf, cauchy, delta"):
            LabelKernel.from_config({"kernel": "laplace", "bandwidth": 1})


class TestWeightMatrix:
    def test_delta_on_discrete_labels(self):
        w = weight_matrix(DELTA, [5, 5, 9]).values
        np.testing.assert_array_equal(w, [[0, 1, 0], [1, 0, 0], [0, 0, 0]])

    def test_gaussian_pair(self):
        w = weight_matrix(GAUSS2, [0, 2]).values
        assert w[0, 1] == w[1, 0] == pytest.approx(0.606531, abs=5e-7)
        assert w[0, 0] == w[1, 1] == 0.0

    def test_batch_too_small(self):
        with pytest.raises(ValueError, match="batch too small"):
            weight_matrix(GAUSS2, [1.0])

    def test_non_finite_labels(self):
        with pytest.raises(ValueError):
            weight_matrix(GAUSS2, [1.0, math.nan])

    def test_immutable(self):
        w = weight_matrix(GAUSS2, [0, 1, 2])
        with pytest.raises(ValueError):
            w.values[0, 1] = 3.0

    def test_custom_distance_hook(self):
        w = weight_matrix(CAUCHY1, [0.0, 3.0], distance=lambda a, b: (a - b) / 3.0)
        assert w.values[0, 1] == 0.5

    @given(kernels, st.lists(st.floats(0, 100), min_size=2, max_size=12))
    def test_symmetric_bounded_entries(self, kernel, labels):
        w = weight_matrix(kernel, labels).values
        np.testing.assert_array_equal(w, w.T)
        assert np.all((w >= 0) & (w <= 1))
        assert np.all(np.diag(w) == 0)

    @given(kernels, st.lists(st.floats(0, 100), min_size=2, max_size=12))
    def test_equal_labels_have_unit_weight(self, kernel, labels):
        y = np.asarray(labels)
        w = weight_matrix(kernel, y).values
        same = (y[:, None] == y[None, :]) & ~np.eye(y.size, dtype=bool)
        assert np.all(w[same] == 1.0)

    @settings(max_examples=50)
    @given(kernels, st.lists(st.integers(0, 90), min_size=2, max_size=10), st.integers(-50, 50))
    def test_label_shift_invariance(self, kernel, labels, c):
        y = np.asarray(labels, dtype=float)
        np.testing.assert_array_equal(weight_matrix(kernel, y).values, weight_matrix(kernel, y + c).values)

    @settings(max_examples=50)
    @given(st.floats(0.1, 10), st.lists(st.floats(0, 90), min_size=2, max_size=10), st.floats(0.1, 10))
    def test_gaussian_scale_equivariance(self, sigma, labels, c):
        y = np.asarray(labels)
        a = weight_matrix(LabelKernel("rbf", sigma * c), c * y).values
        b = weight_matrix(LabelKernel("rbf", sigma), y).values
        np.testing.assert_allclose(a, b, rtol=1e-10, atol=1e-300)

    def test_narrow_gaussian_converges_to_delta(self, rng):
        for _ in range(20):
            y = np.round(rng.uniform(0, 5, size=8), 1)
            gauss = weight_matrix(LabelKernel("rbf", 1e-6), y).values
            delta = weight_matrix(DELTA, y).values
            np.testing.assert_allclose(gauss, delta, atol=1e-12, rtol=0)
