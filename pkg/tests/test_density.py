import math

import numpy as np
import pytest
from scipy.integrate import quad

from scalarquant.density import (Density, DensityKind, LinearApprox, linear_approx,
                                 slope_violations)
from scalarquant.errors import DegenerateIntervalError, DensitySpecError, DomainError


class TestEvaluation:
    def test_uniform_value(self):
        assert Density.uniform().pdf(0.3) == 1.0

    def test_beta22_midpoint(self):
        assert Density.beta(2, 2).pdf(0.5) == pytest.approx(1.5, abs=1e-14)

    def test_beta24_peak_at_quarter(self):
        d = Density.beta(2, 4)
        x = np.linspace(0.0, 1.0, 100_001)
        assert x[np.argmax(d.pdf(x))] == pytest.approx(0.25, abs=1e-5)

    def test_beta24_closed_form(self):
        x = np.array([0.1, 0.3, 0.7])
        np.testing.assert_allclose(Density.beta(2, 4).pdf(x), 20 * x * (1 - x) ** 3, rtol=1e-13)

    def test_scalar_in_scalar_out(self):
        assert isinstance(Density.beta(2, 2).pdf(0.2), float)

    @pytest.mark.parametrize("x", [-1e-9, 1.0 + 1e-9, float("nan")])
    def test_domain_error(self, x):
        with pytest.raises(DomainError):
            Density.uniform().pdf(x)

    def test_truncated_exponential_closed_form(self):
        d = Density.truncated_exponential(3.0)
        assert d.pdf(0.0) == pytest.approx(3.0 / (1.0 - math.exp(-3.0)), rel=1e-14)


@pytest.mark.parametrize("spec", ["uniform", "beta:1,1", "beta:2,2", "beta:2,4", "beta:4,2",
                                  "beta:5,1.5", "beta:1.2,6", "truncnorm:0.5,0.3",
                                  "truncnorm:0.2,0.1", "truncnorm:1.5,0.4", "truncexp:0.5",
                                  "truncexp:3", "piecewise:0,1,0.3,3,0.6,0.2,1,1"])
class TestFamilies:
    def test_normalized(self, spec):
        d = Density.parse(spec)
        kinks = list(d.params[0]) if d.kind is DensityKind.PIECEWISE_LINEAR else None
        mass = quad(lambda t: d.pdf(t), 0.0, 1.0, points=kinks, epsabs=1e-13, limit=200)[0]
        assert mass == pytest.approx(1.0, abs=1e-8)

    def test_nonnegative(self, spec):
        assert np.all(Density.parse(spec).pdf(np.linspace(0, 1, 1001)) >= 0.0)

    def test_slope_bound(self, spec):
        assert slope_violations(Density.parse(spec)).size == 0

    def test_config_round_trip(self, spec):
        d = Density.parse(spec)
        assert Density.from_config(d.to_config()) == d

    def test_derivative_matches_finite_difference(self, spec):
        d = Density.parse(spec)
        x = np.linspace(0.013, 0.987, 41)
        h = 1e-6
        fd = (d.pdf(x + h) - d.pdf(x - h)) / (2 * h)
        if d.kind is DensityKind.PIECEWISE_LINEAR:
            away = np.min(np.abs(x[:, None] - np.array(d.params[0])[None, :]), axis=1) > 2 * h
            x, fd = x[away], fd[away]
        np.testing.assert_allclose(d.dpdf(x), fd, rtol=1e-5, atol=1e-6)

    def test_sample_mean(self, spec):
        d = Density.parse(spec)
        s = d.sample(200_000, np.random.default_rng(1))
        assert np.all((s >= 0) & (s <= 1))
        assert s.mean() == pytest.approx(d.mean(), abs=5 * s.std() / math.sqrt(s.size))


class TestParsing:
    def test_config_record(self):
        d = Density.from_config({"kind": "beta", "alpha": 2, "beta": 4})
        assert d == Density.beta(2, 4)

    @pytest.mark.parametrize("text", ["gamma:2", "beta:2", "beta:x,2", "beta:0.5,2",
                                      "truncnorm:0.5,0", "truncexp:-1", "piecewise:0,1,1"])
    def test_rejects(self, text):
        with pytest.raises(DensitySpecError):
            Density.parse(text)

    def test_unknown_lists_families(self):
        with pytest.raises(DensitySpecError, match="beta"):
            Density.parse("gamma")

    def test_piecewise_bad_knots(self):
        with pytest.raises(DensitySpecError):
            Density.piecewise_linear([(0.1, 1.0), (1.0, 1.0)])

    def test_piecewise_renormalized(self):
        d = Density.piecewise_linear([(0, 2), (1, 2)])
        assert d.pdf(0.4) == pytest.approx(1.0)


class TestLinearApprox:
    def test_uniform(self):
        la = linear_approx(Density.uniform(), 0.2, 0.6)
        assert (la.slope, la.intercept) == (0.0, 1.0)

    def test_beta22_full_interval(self):
        la = linear_approx(Density.beta(2, 2), 0.0, 1.0)
        assert la.slope == 0.0 and la.intercept == 0.0

    def test_beta24_chord(self):
        f = lambda x: 20 * x * (1 - x) ** 3
        la = linear_approx(Density.beta(2, 4), 0.1, 0.3)
        m = (f(0.3) - f(0.1)) / 0.2
        assert la.slope == pytest.approx(m, rel=1e-13)
        assert la.intercept == pytest.approx(f(0.3) - m * 0.3, rel=1e-13)

    def test_matches_endpoints(self, rng):
        from conftest import random_density

        for _ in range(300):
            d = random_density(rng)
            lo, hi = np.sort(rng.random(2))
            if hi - lo < 1e-6:
                continue
            la = linear_approx(d, lo, hi)
            for x in (lo, hi):
                assert la(x) == pytest.approx(d.pdf(x), rel=1e-12, abs=1e-14)

    def test_exact_inside_piecewise_segment(self):
        d = Density.piecewise_linear([(0, 1), (0.5, 2), (1, 0.5)])
        la = linear_approx(d, 0.1, 0.4)
        x = np.linspace(0.1, 0.4, 7)
        np.testing.assert_allclose(la(x), d.pdf(x), rtol=1e-14)

    def test_degenerate(self):
        with pytest.raises(DegenerateIntervalError):
            linear_approx(Density.uniform(), 0.3, 0.3 + 1e-13)

    def test_outside_support(self):
        with pytest.raises(DomainError):
            linear_approx(Density.uniform(), -0.1, 0.5)

    def test_is_callable_dataclass(self):
        assert LinearApprox(2.0, 1.0, 0.0, 1.0)(0.5) == 2.0
