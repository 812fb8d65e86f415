import json

import numpy as np
import pytest

from vlab.errors import DomainError, UnsupportedRegimeError
from vlab.grid import SampledFunction, UniformGrid
from vlab.kernels import KernelModel
from vlab.paths import RngSeed
from vlab.specfun import v_h
from vlab.verify import (EXACT_TOL, VerificationReport, check_covariance,
                         check_girsanov_shift, check_ito_residual, check_restriction,
                         drift_density, format_table)


def fbm(H):
    return KernelModel("stationary_fbm", hurst=H)


def mfbm():
    g = UniformGrid(64)
    return KernelModel("multifractional", alpha=0.05,
                       hurst_fn=SampledFunction.from_callable(g, lambda t: 0.6 + 0.1 * t))


class TestReport:
    def test_passed_and_json(self):
        r = VerificationReport("x", 0.5, 1.0, {"arr": np.arange(3), "v": np.float64(2.0)})
        assert r.passed
        d = json.loads(r.to_json())
        assert d == {"name": "x", "passed": True, "metric": 0.5, "threshold": 1.0,
                     "details": {"arr": [0, 1, 2], "v": 2.0}}
        assert not VerificationReport("y", 2.0, 1.0, {}).passed

    def test_table(self):
        text = format_table([VerificationReport("alpha", 0.1, 1.0, {}),
                             VerificationReport("beta", 3.0, 1.0, {})])
        assert "alpha" in text and "beta" in text
        assert "PASS" in text and "FAIL" in text


class TestCovariance:
    def test_brownian_deterministic(self):
        r = check_covariance(fbm(0.5), [0.25, 0.5, 0.75, 1.0], 0, RngSeed(0))
        assert r.details["deterministic_max_error"] <= 1e-6
        assert r.passed

    @pytest.mark.parametrize("H", [0.3, 0.7])
    def test_with_monte_carlo(self, H):
        r = check_covariance(fbm(H), [0.25, 0.5, 1.0], 4000, RngSeed(1))
        assert r.passed
        assert r.details["mc"].shape == (3, 3)

    def test_levy(self):
        r = check_covariance(KernelModel("levy_fbm", hurst=0.3), [0.3, 0.6, 0.9], 0, RngSeed(0))
        assert r.passed

    def test_multifractional_needs_mc(self):
        with pytest.raises(DomainError):
            check_covariance(mfbm(), [0.5, 1.0], 0, RngSeed(0))
        assert check_covariance(mfbm(), [0.5, 1.0], 500, RngSeed(0)).passed

    def test_bad_nodes(self):
        with pytest.raises(DomainError):
            check_covariance(fbm(0.7), [0.0, 1.0], 0, RngSeed(0))

    def test_reproducible(self):
        a = check_covariance(fbm(0.7), [0.5, 1.0], 300, RngSeed(5)).to_json()
        b = check_covariance(fbm(0.7), [0.5, 1.0], 300, RngSeed(5)).to_json()
        assert a == b


class TestIto:
    def test_refuses_rough(self):
        with pytest.raises(UnsupportedRegimeError):
            check_ito_residual(fbm(0.3), "cos", 1.0, 64, 10, RngSeed(0))
        with pytest.raises(UnsupportedRegimeError):
            check_ito_residual(mfbm(), "cos", 1.0, 64, 10, RngSeed(0), correction="numeric")

    def test_constant_and_square(self):
        assert check_ito_residual(fbm(0.7), "constant", 1.0, 64, 50, RngSeed(0)).metric == 0.0
        r = check_ito_residual(fbm(0.7), "square", 1.0, 64, 50, RngSeed(0))
        assert abs(r.details["mean_residual"]) < 1e-12

    @pytest.mark.parametrize("f", ["cos", "cube"])
    def test_brownian(self, f):
        assert check_ito_residual(fbm(0.5), f, 1.0, 256, 2000, RngSeed(3)).passed

    def test_smooth_fbm(self):
        assert check_ito_residual(fbm(0.7), "cos", 1.0, 512, 2000, RngSeed(0)).passed

    def test_numeric_route(self):
        assert check_ito_residual(fbm(0.7), "cos", 1.0, 256, 1000, RngSeed(0),
                                  correction="numeric").passed

    def test_drift_density_vanishes(self):
        s = np.array([0.2, 0.5, 0.8])
        assert np.allclose(drift_density(fbm(0.7), s, 1.0), 0.0, atol=1e-3)
        assert np.allclose(drift_density(KernelModel("levy_fbm", hurst=0.7), s, 1.0), 0.0,
                           atol=1e-3)

    def test_validation(self):
        with pytest.raises(DomainError):
            check_ito_residual(fbm(0.7), "exp", 1.0, 64, 10, RngSeed(0))
        with pytest.raises(DomainError):
            check_ito_residual(fbm(0.7), "cos", 1.0, 60, 10, RngSeed(0))
        with pytest.raises(DomainError):
            check_ito_residual(mfbm(), "cos", 1.0, 64, 10, RngSeed(0))

    def test_expected_trace(self):
        # E[X(T)^2 / 2] recovered through the square residual's symmetric sum
        from vlab.integrals import Integrand, stratonovich_estimate
        x = Integrand.composite(lambda v: v, lambda v: np.ones_like(v))
        est = stratonovich_estimate(x, fbm(0.7), RngSeed(0), 1.0, [32, 64, 128], paths=400)
        assert abs(est.extrapolated - 0.5 * v_h(0.7)) <= 4 * est.stderr


class TestExactIdentities:
    g = UniformGrid(128)

    def test_zero_shift(self):
        u = SampledFunction.from_callable(self.g, np.exp)
        zero = SampledFunction(self.g, np.zeros(129))
        r = check_girsanov_shift(fbm(0.7), u, zero, RngSeed(0))
        assert r.metric == 0.0 and r.details["shift"] == 0.0

    def test_brownian_unit_shift(self):
        one = SampledFunction(self.g, np.ones(129))
        r = check_girsanov_shift(fbm(0.5), one, one, RngSeed(0))
        assert r.details["shift"] == pytest.approx(1.0, abs=1e-9)
        assert r.passed

    @pytest.mark.parametrize("family,H", [("stationary_fbm", 0.3), ("levy_fbm", 0.8)])
    def test_girsanov(self, family, H):
        u = SampledFunction.from_callable(self.g, lambda t: 1 - t ** 2)
        v = SampledFunction.from_callable(self.g, np.sin)
        assert check_girsanov_shift(KernelModel(family, hurst=H), u, v, RngSeed(2)).metric <= EXACT_TOL

    def test_grid_mismatch(self):
        with pytest.raises(DomainError):
            check_girsanov_shift(fbm(0.7), SampledFunction(UniformGrid(4), np.zeros(5)),
                                 SampledFunction(UniformGrid(8), np.zeros(9)), RngSeed(0))

    def test_restriction_full_horizon(self):
        u = SampledFunction.from_callable(self.g, np.cos)
        r = check_restriction(fbm(0.7), u, 1.0, 1.0, RngSeed(0))
        assert r.metric <= EXACT_TOL

    @pytest.mark.parametrize("S", [0.25, 0.5, 0.75])
    def test_restriction(self, S):
        u = SampledFunction.from_callable(self.g, lambda t: 1 + 2 * t)
        for m in (fbm(0.3), fbm(0.7), KernelModel("levy_fbm", hurst=0.4)):
            assert check_restriction(m, u, S, 1.0, RngSeed(1)).passed

    def test_restriction_order(self):
        u = SampledFunction.from_callable(self.g, np.cos)
        with pytest.raises(DomainError):
            check_restriction(fbm(0.7), u, 0.75, 0.5, RngSeed(0))
