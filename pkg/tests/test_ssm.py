import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from posemagic.numerics import Param, Tensor, backward, grad_check
from posemagic.ssm import (
    ConfigError,
    ScanInputs,
    SsmParams,
    discretize,
    scan_backward,
    scan_parallel,
    scan_sequential,
    selective_params,
    selective_scan,
    ssm_forward,
)


def naive_scan(a, bx, c):
    """Unrolled double loop over steps and channels; the reference for both scans."""
    L, D, n = a.shape
    y = np.zeros((L, D))
    for d in range(D):
        for i in range(n):
            h = 0.0
            for t in range(L):
                h = a[t, d, i] * h + bx[t, d, i]
                y[t, d] += c[t, i] * h
    return y


def random_inputs(rng, L, D, n, lead=()):
    return ScanInputs(rng.uniform(0.0, 1.0, (*lead, L, D, n)), rng.normal(size=(*lead, L, D, n)),
                      rng.normal(size=(*lead, L, n)))


class TestDiscretize:
    def test_ln2_case(self):
        a, b = discretize(np.log(2.0), -1.0, 1.0)
        np.testing.assert_allclose([a, b], [0.5, 0.5], rtol=0, atol=1e-15)

    def test_unit_case(self):
        a, b = discretize(1.0, -1.0, 1.0)
        np.testing.assert_allclose([a, b], [np.exp(-1), 1 - np.exp(-1)], atol=1e-15)

    def test_small_step_limit(self):
        a, b = discretize(1e-8, -3.0, 2.0)
        assert abs(a - 1.0) < 1e-7 and abs(b) < 1e-7

    def test_nonnegative_A_rejected(self):
        with pytest.raises(ConfigError):
            discretize(0.1, np.array([[-1.0, 0.0]]), np.ones(2))
        with pytest.raises(ConfigError):
            SsmParams.from_A(np.array([[1.0]]), np.zeros((1, 1)), np.zeros((1, 1)),
                             np.zeros((1, 1)), np.zeros(1))

    @given(st.floats(1e-4, 5.0), st.floats(-10.0, -1e-3))
    @settings(max_examples=100, deadline=None)
    def test_coefficients_in_unit_interval(self, delta, A):
        a, b = discretize(delta, A, 1.0)
        assert 0.0 < a < 1.0
        assert 0.0 < b <= delta * (1 + 1e-12)


class TestSelectiveParams:
    def _params(self, rng, D=4, n=3):
        return SsmParams.init(D, n, rng)

    def test_zero_input_zero_bias_gives_ln2(self, rng):
        p = self._params(rng)
        p.delta_bias.data[...] = 0.0
        _, _, delta = selective_params(np.zeros((5, 4)), p)
        np.testing.assert_allclose(delta.data, np.log(2.0), atol=1e-15)

    def test_zero_wb_gives_zero_B(self, rng):
        p = self._params(rng)
        p.w_b.data[...] = 0.0
        B, _, _ = selective_params(rng.normal(size=(5, 4)), p)
        assert np.all(B.data == 0.0)

    def test_B_C_linear_without_bias(self, rng):
        p = self._params(rng)
        x = rng.normal(size=(6, 4))
        B1, C1, _ = selective_params(x, p)
        B2, C2, _ = selective_params(2 * x, p)
        np.testing.assert_allclose(B2.data, 2 * B1.data, atol=1e-12)
        np.testing.assert_allclose(C2.data, 2 * C1.data, atol=1e-12)

    def test_delta_strictly_positive(self, rng):
        p = self._params(rng)
        _, _, delta = selective_params(rng.normal(scale=50, size=(40, 4)), p)
        assert np.all(delta.data > 0)

    def test_init_step_range(self, rng):
        p = SsmParams.init(64, 4, rng)
        dt = np.log1p(np.exp(p.delta_bias.data))
        assert np.all((dt >= 1e-3 - 1e-12) & (dt <= 0.1 + 1e-12))
        np.testing.assert_allclose(p.A[0], -np.arange(1, 5))


class TestScans:
    def test_single_step(self, rng):
        inp = random_inputs(rng, 1, 3, 2)
        expect = (inp.b_bar_x[0] * inp.c[0]).sum(-1)
        np.testing.assert_allclose(scan_sequential(inp)[0], expect, atol=1e-15)
        np.testing.assert_array_equal(scan_parallel(inp), scan_sequential(inp))

    def test_memoryless(self, rng):
        inp = random_inputs(rng, 8, 3, 2)
        inp.a_bar[...] = 0.0
        np.testing.assert_allclose(scan_sequential(inp), (inp.b_bar_x * inp.c[:, None, :]).sum(-1),
                                   atol=1e-14)

    def test_prefix_sum(self):
        L = 37
        inp = ScanInputs(np.ones((L, 1, 1)), np.ones((L, 1, 1)), np.ones((L, 1)))
        np.testing.assert_allclose(scan_parallel(inp)[:, 0], np.arange(1, L + 1))

    def test_sequential_matches_naive_unroll(self, rng):
        inp = random_inputs(rng, 64, 5, 4)
        np.testing.assert_allclose(scan_sequential(inp), naive_scan(inp.a_bar, inp.b_bar_x, inp.c),
                                   atol=1e-12)

    @given(st.integers(1, 512), st.integers(1, 8), st.integers(1, 8), st.integers(0, 2**32 - 1))
    @settings(max_examples=100, deadline=None)
    def test_parallel_equals_sequential(self, L, D, n, seed):
        inp = random_inputs(np.random.default_rng(seed), L, D, n)
        assert np.max(np.abs(scan_parallel(inp) - scan_sequential(inp))) < 1e-10

    def test_batched_leading_axes(self, rng):
        inp = random_inputs(rng, 10, 2, 3, lead=(4,))
        for b in range(4):
            one = ScanInputs(inp.a_bar[b], inp.b_bar_x[b], inp.c[b])
            np.testing.assert_allclose(scan_sequential(inp)[b], scan_sequential(one), atol=1e-15)

    @pytest.mark.parametrize("impl,tol", [("sequential", 1e-12), ("parallel", 1e-10)])
    def test_causal(self, rng, impl, tol):
        inp = random_inputs(rng, 40, 3, 4)
        fn = scan_sequential if impl == "sequential" else scan_parallel
        base = fn(inp)
        for t in (0, 10, 39):
            bx = inp.b_bar_x.copy()
            bx[t + 1:] += rng.normal(size=bx[t + 1:].shape)
            out = fn(ScanInputs(inp.a_bar, bx, inp.c))
            assert np.max(np.abs(out[:t + 1] - base[:t + 1])) <= tol

    def test_long_sequence_bounded(self, rng):
        L = 10_000
        inp = ScanInputs(np.exp(-rng.uniform(1e-3, 1.0, (L, 2, 4))), rng.uniform(-1, 1, (L, 2, 4)),
                         rng.uniform(-1, 1, (L, 4)))
        y = scan_sequential(inp)
        assert np.all(np.isfinite(y)) and np.abs(y).max() < 1e4

    def test_shape_validation(self, rng):
        with pytest.raises(ValueError):
            ScanInputs(np.ones((4, 2, 3)), np.ones((4, 2, 3)), np.ones((5, 3)))


class TestScanBackward:
    def test_two_step_symbolic(self):
        # y1 = c1 b1, y2 = c2 (a2 b1 + b2); L = g1 y1 + g2 y2 with D = n = 1
        a = np.array([0.3, 0.6]).reshape(2, 1, 1)
        b = np.array([1.5, -0.7]).reshape(2, 1, 1)
        c = np.array([0.9, 2.0]).reshape(2, 1)
        g = np.array([0.4, -1.1]).reshape(2, 1)
        grads = scan_backward(ScanInputs(a, b, c), g)
        g1, g2, a2, b1, b2, c1, c2 = 0.4, -1.1, 0.6, 1.5, -0.7, 0.9, 2.0
        np.testing.assert_allclose(grads.a_bar.ravel(), [0.0, g2 * c2 * b1], atol=1e-15)
        np.testing.assert_allclose(grads.b_bar_x.ravel(), [g1 * c1 + g2 * c2 * a2, g2 * c2], atol=1e-15)
        np.testing.assert_allclose(grads.c.ravel(), [g1 * b1, g2 * (a2 * b1 + b2)], atol=1e-15)

    def test_zero_upstream(self, rng):
        grads = scan_backward(random_inputs(rng, 9, 2, 3), np.zeros((9, 2)))
        for arr in (grads.a_bar, grads.b_bar_x, grads.c):
            assert np.all(arr == 0.0)

    @pytest.mark.parametrize("impl", ["sequential", "parallel"])
    def test_matches_finite_differences(self, rng, impl):
        inp = random_inputs(rng, 12, 3, 2)
        a, b, c = Param(inp.a_bar, "a"), Param(inp.b_bar_x, "b"), Param(inp.c, "c")
        w = Tensor(rng.normal(size=(12, 3)))
        assert grad_check(lambda: (selective_scan(a, b, c, impl) * w).sum(), [a, b, c]) < 1e-5


class TestSsmForward:
    @pytest.mark.parametrize("impl", ["sequential", "parallel"])
    def test_gradients(self, rng, impl):
        p = SsmParams.init(4, 3, rng)
        p.delta_bias.data[...] = rng.uniform(-1, 1, 4)
        x = Param(rng.normal(size=(2, 7, 4)), "x")
        w = Tensor(rng.normal(size=(2, 7, 4)))
        assert grad_check(lambda: (ssm_forward(x, p, impl) * w).sum(), [x] + p.params(), eps=1e-4) < 1e-5

    def test_compiled_matches_array_path(self, rng):
        p = SsmParams.init(6, 4, rng)
        x = rng.normal(size=(3, 20, 6))
        np.testing.assert_allclose(ssm_forward(x, p, "sequential").data,
                                   ssm_forward(x, p, "parallel").data, atol=1e-12)

    def test_matches_discretize_plus_naive_scan(self, rng):
        p = SsmParams.init(3, 2, rng)
        x = rng.normal(size=(15, 3))
        B, C, delta = selective_params(x, p)
        a, bb = discretize(delta.data, p.A, B.data)
        expect = naive_scan(a, bb * x[:, :, None], C.data)
        np.testing.assert_allclose(ssm_forward(x, p).data, expect, atol=1e-12)
