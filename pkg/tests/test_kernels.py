import math
import warnings

import mpmath
import numpy as np
import pytest
from hypothesis import given, strategies as st
from scipy import integrate, special

from vlab.errors import DomainError, KernelSingularityError
from vlab.fracops import frac_integral
from vlab.grid import SampledFunction, UniformGrid
from vlab.kernels import (KernelClampWarning, KernelModel, apply_K, apply_K_adjoint,
                          apply_K_factorized, covariance, covariance_fbm_closed,
                          covariance_levy_closed, covariance_matrix, kernel_band_primitive,
                          kernel_eval, synthesis_matrix)
from vlab.specfun import v_h


def stationary(H):
    return KernelModel("stationary_fbm", hurst=H)


def levy(H):
    return KernelModel("levy_fbm", hurst=H)


def mp_stationary_kernel(H, t, s):
    # textbook form with the argument 1 - t/s <= 0
    with mpmath.workdps(40):
        H, t, s = mpmath.mpf(H), mpmath.mpf(t), mpmath.mpf(s)
        return float((t - s) ** (H - 0.5) / mpmath.gamma(H + 0.5)
                     * mpmath.hyp2f1(0.5 - H, H - 0.5, H + 0.5, 1 - t / s))


def mp_stationary_kernel_mp(H, t, s):
    H, t = mpmath.mpf(H), mpmath.mpf(t)
    return ((t - s) ** (H - 0.5) / mpmath.gamma(H + 0.5)
            * mpmath.hyp2f1(0.5 - H, H - 0.5, H + 0.5, 1 - t / s))


def constant_multifractional(H, n=64):
    return KernelModel("multifractional",
                       hurst_fn=SampledFunction(UniformGrid(n), np.full(n + 1, H)))


class TestModel:
    def test_defaults(self):
        m = stationary(0.7)
        assert m.alpha == 0.7 and m.homogeneous
        assert KernelModel("stationary-fbm", hurst=0.3).family == "stationary_fbm"

    @pytest.mark.parametrize("kwargs", [
        {"family": "brownian", "hurst": 0.5},
        {"family": "levy_fbm", "hurst": 1.0},
        {"family": "levy_fbm", "hurst": 0.0},
        {"family": "levy_fbm"},
        {"family": "levy_fbm", "hurst": 0.6, "alpha": 0.3},
        {"family": "multifractional"},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(DomainError):
            KernelModel(**kwargs)

    def test_multifractional_constraints(self):
        g = UniformGrid(10)
        with pytest.raises(DomainError):
            KernelModel("multifractional", hurst_fn=SampledFunction(g, np.full(11, 0.4)))
        hf = SampledFunction.from_callable(g, lambda t: 0.6 + 0.2 * t)
        m = KernelModel("multifractional", hurst_fn=hf)
        assert m.alpha == pytest.approx(0.05)
        assert m.alpha < 0.5
        with pytest.raises(DomainError):
            KernelModel("multifractional", hurst_fn=hf, alpha=0.2)
        assert m.hurst_at(0.5) == pytest.approx(0.7)
        assert m.describe()["family"] == "multifractional"


class TestKernelEval:
    def test_brownian_case(self):
        t = np.array([0.3, 0.9, 1.0])
        s = np.array([0.1, 0.2, 0.99])
        assert np.allclose(kernel_eval(stationary(0.5), t, s), 1.0, atol=1e-14)

    def test_levy_value(self):
        val = kernel_eval(levy(0.75), 1.0, 0.5)
        assert val == pytest.approx(0.5 ** 0.25 / special.gamma(1.25), rel=1e-14)
        assert val == pytest.approx(0.9277, abs=1e-4)

    @pytest.mark.parametrize("H", [0.1, 0.3, 0.45, 0.55, 0.7, 0.9])
    @pytest.mark.parametrize("t, s", [(1.0, 0.5), (1.0, 1e-6), (1.0, 0.999999), (0.3, 0.01)])
    def test_stationary_against_mpmath(self, H, t, s):
        assert kernel_eval(stationary(H), t, s) == pytest.approx(mp_stationary_kernel(H, t, s),
                                                                 rel=1e-10)

    @pytest.mark.filterwarnings("ignore::vlab.kernels.KernelClampWarning")
    def test_stationary_covariance_oracle(self):
        m = stationary(0.7)
        val, _ = integrate.quad(lambda r: kernel_eval(m, 1.0, r) * kernel_eval(m, 0.5, r),
                                0, 0.5, limit=200, points=[1e-6])
        assert abs(val - covariance_fbm_closed(0.7, 1.0, 0.5)) <= 1e-3 * v_h(0.7)

    @given(st.sampled_from(["levy_fbm", "stationary_fbm"]), st.floats(0.05, 0.95),
           st.floats(0.01, 1.0), st.floats(0.0, 1.0))
    def test_triangular(self, fam, H, t, frac):
        s = t + frac * (1 - t)
        assert kernel_eval(KernelModel(fam, hurst=H), t, s) == 0.0

    @given(st.floats(0.05, 0.95), st.floats(0.1, 1.0), st.floats(0.01, 0.99), st.floats(0.1, 0.9))
    def test_homogeneity(self, H, t, frac, lam):
        m = stationary(H)
        s = frac * t
        lhs = kernel_eval(m, lam * t, lam * s)
        assert lhs == pytest.approx(lam ** (H - 0.5) * kernel_eval(m, t, s), rel=1e-10)

    def test_singular_and_clamped(self):
        m = stationary(0.7)
        with pytest.raises(KernelSingularityError):
            kernel_eval(m, 1.0, 0.0)
        with pytest.warns(KernelClampWarning):
            v = kernel_eval(m, 1.0, 1e-12)
        assert v == pytest.approx(kernel_eval(m, 1.0, 1e-8), rel=1e-12)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            kernel_eval(levy(0.7), 1.0, 0.0)

    def test_rough_near_diagonal_is_finite(self):
        v = kernel_eval(stationary(0.2), 1.0, 1.0 - 1e-12)
        assert np.isfinite(v) and v > 1e3


class TestBandPrimitive:
    def test_triangular(self):
        assert kernel_band_primitive(stationary(0.7), 0.5, 0.7, 0.4) == 0.0

    def test_brownian_length(self):
        assert kernel_band_primitive(stationary(0.5), 0.2, 0.9, 0.6) == pytest.approx(0.4, abs=1e-12)

    @pytest.mark.parametrize("H", [0.2, 0.75])
    def test_levy_closed_form(self, H):
        t = 0.8
        exact = t ** (H + 0.5) / ((H + 0.5) * special.gamma(H + 0.5))
        assert kernel_band_primitive(levy(H), 0.0, t, t) == pytest.approx(exact, rel=1e-12)

    @pytest.mark.parametrize("H", [0.15, 0.3, 0.7, 0.9])
    def test_stationary_against_mpmath(self, H):
        a, b, t = 0.0, 0.25, 0.25
        with mpmath.workdps(30):
            ref = float(mpmath.quad(lambda s: mp_stationary_kernel_mp(H, t, s), [a, 1e-6, b]))
        assert kernel_band_primitive(stationary(H), a, b, t) == pytest.approx(ref, rel=1e-8)

    def test_synthesis_matrix_rows(self):
        m = stationary(0.3)
        g = UniformGrid(32)
        A = synthesis_matrix(m, g)
        k = 20
        direct = [kernel_band_primitive(m, g.nodes[i], g.nodes[i + 1], g.nodes[k]) / g.h
                  for i in range(32)]
        assert np.allclose(A[k], direct, rtol=1e-10, atol=1e-13)

    def test_invalid_band(self):
        with pytest.raises(DomainError):
            kernel_band_primitive(levy(0.5), 0.5, 0.5, 1.0)


class TestApplyK:
    def test_zero(self):
        f = SampledFunction(UniformGrid(16), np.zeros(17))
        assert np.all(apply_K(stationary(0.3), f).values == 0)

    def test_brownian_identity_integral(self):
        f = SampledFunction.from_callable(UniformGrid(64), lambda t: np.ones_like(t))
        assert np.allclose(apply_K(stationary(0.5), f).values, f.t, atol=1e-13)

    @pytest.mark.parametrize("H", [0.25, 0.75])
    def test_levy_is_fractional_integral(self, H):
        f = SampledFunction.from_callable(UniformGrid(2048), lambda t: np.cos(3 * t) + t ** 2)
        lhs = apply_K(levy(H), f).values
        rhs = frac_integral(f, H + 0.5).values
        assert np.max(np.abs(lhs - rhs)) <= 1e-6

    def test_triangular_operator(self, rng):
        g = UniformGrid(40)
        v = rng.standard_normal(41)
        w = v.copy()
        w[25:] = rng.standard_normal(16)
        m = stationary(0.35)
        a = apply_K(m, SampledFunction(g, v)).values
        b = apply_K(m, SampledFunction(g, w)).values
        assert np.array_equal(a[:25], b[:25])

    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_factorized_cross_check(self, H):
        errs = []
        for n in (128, 512):
            f = SampledFunction.from_callable(UniformGrid(n), np.cos)
            errs.append(np.max(np.abs(apply_K(stationary(H), f).values
                                      - apply_K_factorized(stationary(H), f).values)))
        assert errs[1] < errs[0] / 2
        assert errs[1] < 1e-2

    def test_factorized_family(self):
        with pytest.raises(DomainError):
            apply_K_factorized(levy(0.7), SampledFunction(UniformGrid(4), np.zeros(5)))

    def test_multifractional_continuity_in_H(self):
        f = SampledFunction.from_callable(UniformGrid(256), lambda t: 1 + np.sin(4 * t))
        base = apply_K(constant_multifractional(0.7), f).values
        norm = np.sqrt(np.mean(f.values ** 2))
        consts = []
        for d in (0.1, 0.03, 0.01):
            other = apply_K(constant_multifractional(0.7 - d), f).values
            consts.append(np.max(np.abs(other - base)) / (d * norm))
        assert max(consts) / min(consts) <= 2.0

    def test_constant_multifractional_matches_stationary(self):
        f = SampledFunction.from_callable(UniformGrid(64), np.cos)
        a = apply_K(constant_multifractional(0.7), f).values
        b = apply_K(stationary(0.7), f).values
        assert np.allclose(a, b, rtol=1e-10, atol=1e-12)


class TestAdjoint:
    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_indicator_gives_kernel_slice(self, H):
        m = stationary(H)
        g = UniformGrid(64)
        k = 40
        tk = g.nodes[k]
        out = apply_K_adjoint(m, lambda t: (t < tk).astype(float), 1.0, grid=g)
        s = g.nodes[1:k]
        assert np.allclose(out.values[1:k], kernel_eval(m, tk, s), rtol=1e-13)
        assert np.all(out.values[k:] == 0)

    def test_brownian_projection(self):
        g = UniformGrid(32)
        u = SampledFunction.from_callable(g, lambda t: np.exp(t))
        out = apply_K_adjoint(stationary(0.5), u, 1.0).values
        assert np.allclose(out[:-1], u.interval_means(), atol=1e-13)

    def test_levy_is_right_fractional_integral(self):
        g = UniformGrid(1024)
        u = SampledFunction.from_callable(g, lambda t: t)
        out = apply_K_adjoint(levy(0.75), u, 1.0).values
        ref = frac_integral(u, 0.25, "right").values
        mask = (g.nodes >= 0.05) & (g.nodes <= 0.95)
        assert np.max(np.abs(out[mask] - ref[mask])) <= 1e-3

    def test_restriction_identity(self):
        m = stationary(0.35)
        g = UniformGrid(64)
        T = g.nodes[40]
        fn = lambda t: np.cos(5 * t) + t
        full = apply_K_adjoint(m, lambda t: fn(t) * (t < T), 1.0, grid=g).values[:41]
        direct = apply_K_adjoint(m, fn, T, grid=g).values
        assert np.array_equal(full, direct)

    def test_callable_needs_grid(self):
        with pytest.raises(DomainError):
            apply_K_adjoint(levy(0.6), np.cos, 1.0)


class TestCovariance:
    def test_zero_time(self):
        assert covariance(stationary(0.7), 0.0, 0.5) == 0.0

    def test_brownian(self):
        m = stationary(0.5)
        for t, s in ((0.3, 0.8), (1.0, 1.0), (0.25, 0.5)):
            assert covariance(m, t, s) == pytest.approx(min(t, s), abs=1e-10)

    def test_closed_form_point(self):
        H = 0.7
        assert abs(covariance(stationary(H), 1.0, 0.5) - covariance_fbm_closed(H, 1.0, 0.5)) \
            <= 1e-3 * v_h(H)

    @pytest.mark.parametrize("H", [0.3, 0.55, 0.7])
    def test_closed_form_grid(self, H):
        nodes = np.arange(1, 17) / 16
        C = covariance_matrix(stationary(H), nodes)
        tt, ss = np.meshgrid(nodes, nodes, indexing="ij")
        assert np.max(np.abs(C - covariance_fbm_closed(H, tt, ss))) <= 1e-3 * v_h(H)

    @pytest.mark.parametrize("H", [0.2, 0.8])
    def test_levy_closed_form(self, H):
        nodes = np.array([0.1, 0.4, 0.9])
        tt, ss = np.meshgrid(nodes, nodes, indexing="ij")
        C = covariance_matrix(levy(H), nodes)
        assert np.allclose(C, covariance_levy_closed(H, tt, ss), rtol=1e-8, atol=1e-12)

    def test_levy_variance(self):
        H = 0.75
        assert covariance_levy_closed(H, 1.0, 1.0) == pytest.approx(
            1 / (2 * H * special.gamma(H + 0.5) ** 2), rel=1e-12)

    def test_symmetric_psd(self):
        nodes = np.linspace(1 / 32, 1, 32)
        C = covariance_matrix(stationary(0.3), nodes)
        assert np.array_equal(C, C.T)
        assert np.min(np.linalg.eigvalsh(C)) >= -1e-10 * np.trace(C)

    def test_closed_form_examples(self):
        assert covariance_fbm_closed(0.5, 0.3, 0.8) == pytest.approx(0.3, abs=1e-14)
        assert covariance_fbm_closed(0.7, 0.6, 0.6) == pytest.approx(v_h(0.7) * 0.6 ** 1.4)
        assert covariance_fbm_closed(0.7, 1.0, 0.5) == pytest.approx(v_h(0.7) / 2)
        assert v_h(0.7) / 2 == pytest.approx(0.4976, abs=1e-4)

    @given(st.floats(0.05, 0.95), st.floats(0.0, 1.0), st.floats(0.0, 1.0))
    def test_closed_form_symmetric(self, H, t, s):
        assert covariance_fbm_closed(H, t, s) == covariance_fbm_closed(H, s, t)
