import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import synthetic_exceedances
from gpdtail.design import Exceedances
from gpdtail.gpd import gpd_density, gpd_survival
from gpdtail.likelihood import (ParamVector, contributions, feasible, gradient, log_likelihood,
                                naive_log_likelihood)


def _ratio_oracle(theta, data):
    """log f(y)^d S(y)^(1-d) / S(a), evaluated through the gpd kernel functions."""
    sigma = theta.scale(data.Z)
    total = []
    for y, a, d, s in zip(data.y, data.a, data.event, sigma):
        num = gpd_density(y, sigma=s, xi=theta.xi) if d else gpd_survival(y, sigma=s, xi=theta.xi)
        total.append(math.log(num) - math.log(gpd_survival(a, sigma=s, xi=theta.xi)))
    return math.fsum(total)


class TestValues:
    @pytest.mark.parametrize("xi", [-0.06, -0.03, 0.0, 0.15])
    def test_matches_ratio_form(self, xi):
        data = synthetic_exceedances(300, seed=4, xi=-0.1)
        theta = ParamVector([0.9, 0.1, -0.2], xi)
        assert feasible(theta, data)
        assert log_likelihood(theta, data) == pytest.approx(_ratio_oracle(theta, data), abs=1e-10,
                                                            rel=1e-12)

    def test_single_censored_record(self):
        data = Exceedances([3.0], [1.0], [False], [[1.0]])
        theta = ParamVector([math.log(2.0)], -0.1)
        expected = 10 * math.log(1 - 0.15) - 10 * math.log(1 - 0.05)
        assert log_likelihood(theta, data) == pytest.approx(expected, abs=1e-12)

    def test_exponential_death(self):
        data = Exceedances([2.0], [0.0], [True], [[1.0]])
        assert log_likelihood(ParamVector([0.0], 0.0), data) == pytest.approx(-2.0, abs=1e-12)

    def test_truncation_only_adds_entry_term(self):
        data = synthetic_exceedances(200, seed=1)
        theta = ParamVector([0.8, 0.0, 0.1], -0.11)
        sigma = theta.scale(data.Z)
        entry = math.fsum(np.log(gpd_survival(data.a, sigma=sigma, xi=theta.xi)).tolist())
        assert (naive_log_likelihood(theta, data) - log_likelihood(theta, data)
                == pytest.approx(entry, abs=1e-9))

    def test_no_truncation_equals_naive(self):
        data = synthetic_exceedances(200, seed=2, truncation=False)
        theta = ParamVector([0.8, 0.0, 0.1], -0.11)
        assert log_likelihood(theta, data) == naive_log_likelihood(theta, data)

    def test_order_invariant(self):
        data = synthetic_exceedances(1000, seed=3)
        theta = ParamVector([0.7, 0.1, 0.1], -0.1)
        perm = np.random.default_rng(0).permutation(len(data))
        assert log_likelihood(theta, data) == log_likelihood(theta, data.take(perm))

    def test_empty_rejected(self):
        data = synthetic_exceedances(10, seed=0).take(np.array([], dtype=int))
        with pytest.raises(ValueError):
            log_likelihood(ParamVector([1, 0, 0], -0.1), data)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError, match="columns"):
            log_likelihood(ParamVector([1.0], -0.1), synthetic_exceedances(10))


class TestFeasibility:
    def test_death_past_endpoint(self):
        # endpoint of sigma=1, xi=-0.5 is 2
        data = Exceedances([2.5], [0.0], [True], [[1.0]])
        theta = ParamVector([0.0], -0.5)
        assert not feasible(theta, data)
        assert log_likelihood(theta, data) == -np.inf
        assert contributions(theta, data)[0] == -np.inf

    def test_at_endpoint_is_infeasible(self):
        data = Exceedances([2.0], [0.0], [False], [[1.0]])
        assert not feasible(ParamVector([0.0], -0.5), data)

    def test_inside_support(self):
        data = Exceedances([1.9], [0.0], [True], [[1.0]])
        assert feasible(ParamVector([0.0], -0.5), data)
        assert np.isfinite(log_likelihood(ParamVector([0.0], -0.5), data))

    def test_positive_shape_always_feasible(self):
        data = Exceedances([1e6], [0.0], [True], [[1.0]])
        assert feasible(ParamVector([0.0], 0.3), data)

    def test_gradient_rejects_infeasible(self):
        data = Exceedances([2.5], [0.0], [True], [[1.0]])
        with pytest.raises(ValueError):
            gradient(ParamVector([0.0], -0.5), data)


def _fd_gradient(theta, data, h=1e-6):
    x = theta.as_array()
    g = np.empty_like(x)
    for j in range(len(x)):
        e = np.zeros_like(x)
        e[j] = h * max(1.0, abs(x[j]))
        g[j] = (log_likelihood(x + e, data) - log_likelihood(x - e, data)) / (2 * e[j])
    return g


class TestGradient:
    def test_symbolic_oracle(self):
        sp = pytest.importorskip("sympy")
        b0, b1, xi = sp.symbols("b0 b1 xi")
        rows = [(1.3, 0.0, 1, 0), (2.2, 0.4, 0, 1), (0.7, 0.2, 1, 1), (3.1, 1.5, 1, 0),
                (1.9, 0.9, 0, 0)]
        ell = 0
        for y, a, d, z in rows:
            sigma = sp.exp(b0 + b1 * z)
            ell += (-d * sp.log(sigma) - (1 / xi + d) * sp.log(1 + xi * y / sigma)
                    + (1 / xi) * sp.log(1 + xi * a / sigma))
        point = {b0: 0.8, b1: -0.3, xi: -0.14}
        want = [float(sp.diff(ell, v).subs(point).evalf(30)) for v in (b0, b1, xi)]
        data = Exceedances([r[0] for r in rows], [r[1] for r in rows], [bool(r[2]) for r in rows],
                           [[1.0, r[3]] for r in rows])
        got = gradient(ParamVector([0.8, -0.3], -0.14), data)
        np.testing.assert_allclose(got, want, rtol=1e-10, atol=1e-12)

    def test_finite_difference_random_points(self):
        data = synthetic_exceedances(500, seed=7)
        rng = np.random.default_rng(11)
        worst = 0.0
        checked = 0
        while checked < 50:
            theta = ParamVector([0.7 + rng.normal(0, 0.2), *rng.normal(0, 0.2, 2)],
                                rng.uniform(-0.3, 0.3))
            if not feasible(theta, data) or not feasible(theta.as_array() * 1.001, data):
                continue
            g = gradient(theta, data)
            fd = _fd_gradient(theta, data)
            worst = max(worst, float(np.max(np.abs(g - fd) / np.maximum(np.abs(g), 1.0))))
            checked += 1
        assert worst < 1e-6

    @pytest.mark.parametrize("xi", [-1e-9, 0.0, 1e-9, 5e-4, -5e-4])
    def test_continuity_near_zero_shape(self, xi):
        data = synthetic_exceedances(300, seed=5)
        ref = ParamVector([0.8, 0.1, 0.0], 2e-3)
        near = ParamVector([0.8, 0.1, 0.0], xi)
        # smooth in xi: compare against a first-order extrapolation from xi = +-2e-3
        lo = ParamVector([0.8, 0.1, 0.0], -2e-3)
        interp = gradient(lo, data) + (gradient(ref, data) - gradient(lo, data)) * (xi + 2e-3) / 4e-3
        scale = np.maximum(np.abs(interp), 1.0)
        assert np.max(np.abs(gradient(near, data) - interp) / scale) < 1e-3
        assert abs(log_likelihood(near, data) - log_likelihood(ParamVector([0.8, 0.1, 0.0], 0.0),
                                                               data)) < 1e-6 * len(data) + abs(xi) * 1e4

    def test_branch_switch_is_continuous(self):
        data = synthetic_exceedances(300, seed=6)
        inside = ParamVector([0.8, 0.1, 0.0], 0.99e-8)
        outside = ParamVector([0.8, 0.1, 0.0], 1.01e-8)
        assert abs(log_likelihood(inside, data) - log_likelihood(outside, data)) < 1e-6
        np.testing.assert_allclose(gradient(inside, data), gradient(outside, data), atol=1e-6)

    @settings(max_examples=30, deadline=None)
    @given(xi=st.floats(-0.3, 0.3), b=st.floats(0.3, 1.5))
    def test_order_invariant_gradient(self, xi, b):
        data = synthetic_exceedances(200, seed=8)
        theta = ParamVector([b, 0.0, 0.0], xi)
        if not feasible(theta, data):
            return
        perm = np.random.default_rng(1).permutation(len(data))
        np.testing.assert_array_equal(gradient(theta, data), gradient(theta, data.take(perm)))
