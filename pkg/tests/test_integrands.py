import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_conjugate, central_difference, refined_conjugate
from stochhom.errors import ConfigurationError, GridTooSmallError
from stochhom.integrands import (Integrand, Kind, dual_exponent, midpoint_convexity_gap,
                                 transfer_growth)

finite = st.floats(-50, 50, allow_nan=False)
exponents = st.sampled_from([1.5, 2.0, 3.0, 4.0])
coeffs = st.floats(0.1, 20.0)


def test_eval_examples():
    assert Integrand.power_law(2, {0: 1.0}, dimension_m=2).eval((0.0, 0.0), 0) == 0.0
    # a|xi|^p/p with p=2, a=3 at xi=2 gives 6; the a xi^2 form gives 12
    assert Integrand.power_law(2, {0: 3.0}).eval(2.0, 0) == pytest.approx(6.0)
    assert Integrand.quadratic({0: 3.0}).eval(2.0, 0) == pytest.approx(12.0)
    assert Integrand.power_law(4, {0: 1.0}).eval(2.0, 0) == pytest.approx(4.0)


def test_unknown_phase_is_refused():
    it = Integrand.quadratic({1: 1.0, 2: 4.0})
    with pytest.raises(ConfigurationError, match="unknown phase"):
        it.eval(1.0, 3)


def test_subgradient_examples():
    assert Integrand.quadratic({0: 2.0}).subgradient(3.0, 0) == pytest.approx(12.0)
    z = Integrand.power_law(3, {0: 1.0, 1: 5.0}, dimension_m=2).subgradient((0.0, 0.0), 1)
    assert np.all(z == 0.0)
    it = Integrand.power_law(3, {0: 1.0})
    assert it.subgradient(2.0, 0) == pytest.approx(4.0)
    fd = central_difference(lambda x: it.eval(x, 0), 2.0)
    assert abs(fd - 4.0) < 1e-6


def test_conjugate_examples():
    assert Integrand.quadratic({0: 1.0}).conjugate(3.0, 0) == pytest.approx(9.0 / 4.0)
    assert Integrand.power_law(3, {0: 1.0}).conjugate(8.0, 0) == pytest.approx(8 ** 1.5 / 1.5)
    assert 8 ** 1.5 / 1.5 == pytest.approx(15.0849, abs=1e-4)


def test_tabulated_conjugate_matches_brute_force():
    grid = np.linspace(-10, 10, 2001)
    it = Integrand.tabulated(grid, {0: grid ** 2})
    val = float(it.conjugate(2.0, 0))
    assert abs(val - 1.0) < 1e-3
    assert val == pytest.approx(brute_conjugate(lambda x: np.interp(x, grid, grid ** 2), 2.0,
                                                -10, 10), abs=1e-9)


def test_tabulated_conjugate_refuses_unbracketed_sigma():
    grid = np.linspace(-2, 2, 41)
    it = Integrand.tabulated(grid, {0: grid ** 2})
    with pytest.raises(GridTooSmallError) as exc:
        it.conjugate(10.0, 0)
    # the quadratic continuation reaches slope 10 at |xi| = 5
    assert exc.value.required_radius >= 4.0


def test_tabulated_kink_flag_and_minimal_norm_selection():
    grid = np.array([-2.0, -1.0, 0.0, 1.0, 2.0])
    it = Integrand.tabulated(grid, {0: np.abs(grid)})
    s, flag = it.subgradient(np.array([0.0, 0.5, 1.0]), 0, return_flag=True)
    assert flag.tolist() == [True, False, False]
    assert s[0] == 0.0 and s[1] == 1.0
    s, flag = it.subgradient(np.array([0.0]), 0, return_flag=True)
    assert s[0] == 0.0


def test_tabulated_nonconvex_table_refused():
    grid = np.linspace(-1, 1, 5)
    with pytest.raises(ConfigurationError, match="not convex"):
        Integrand.tabulated(grid, {0: -grid ** 2})


def test_fenchel_residual_examples():
    it = Integrand.quadratic({0: 1.0})
    assert it.fenchel_residual(1.0, 0.0, 0) == pytest.approx(1.0)
    for p in (1.5, 2.0, 3.0, 4.0):
        pl = Integrand.power_law(p, {0: 2.5})
        xi = np.linspace(-3, 3, 13)
        assert np.max(np.abs(pl.fenchel_residual(xi, pl.subgradient(xi, 0), 0))) <= 1e-9


def test_check_growth_examples():
    p = 3.0
    ok = Integrand.power_law(p, {0: 1.0}, growth_constants=(1.0, 1 / p - 0.01, 1 / p + 0.01))
    rep = ok.check_growth(0, 200)
    assert rep.holds
    bad = Integrand.power_law(p, {0: 1.0}, growth_constants=(1.0, 0.1, 1 / p - 0.05))
    rep = bad.check_growth(0, 200)
    assert not rep.holds
    assert rep.offending[0] == "primal upper"
    quad = Integrand.quadratic({0: 2.0})
    rep = quad.check_growth(0, 400)
    assert rep.witnessed_constants["cbar2"] == pytest.approx(0.125, rel=1e-3)
    assert rep.witnessed_constants["cbar2"] <= 0.125


def test_transfer_growth_formula():
    c0, c1, c2, p = 1.0, 0.5, 2.0, 3.0
    q = dual_exponent(p)
    assert transfer_growth(c0, c1, c2, p) == pytest.approx(
        (c0, (p * c2) ** (1 - q) / q, (p * c1) ** (1 - q) / q))


def test_conjugate_pair_metadata():
    it = Integrand.power_law(4, {0: 1.0, 1: 16.0})
    pair = it.conjugate_pair()
    assert pair.dual_exponent == pytest.approx(4 / 3)
    assert pair.dual_growth_constants == it.dual_growth_constants


def test_invalid_construction():
    with pytest.raises(ConfigurationError):
        Integrand.power_law(1.0, {0: 1.0})
    with pytest.raises(ConfigurationError):
        Integrand.power_law(2.0, {0: -1.0})
    with pytest.raises(ConfigurationError):
        Integrand.power_law(2.0, {0: 1.0}, growth_constants=(1.0, 0.0, 1.0))
    assert Integrand.quadratic({0: 1.0}).kind is Kind.TWO_PHASE_QUADRATIC


# -- properties ---------------------------------------------------------------

@settings(max_examples=200, deadline=None)
@given(p=exponents, a=coeffs, m=st.sampled_from([1, 2]), data=st.data())
def test_convexity_property(p, a, m, data):
    it = Integrand.power_law(p, {0: a}, dimension_m=m)
    x1 = np.array(data.draw(st.lists(finite, min_size=m, max_size=m)))
    x2 = np.array(data.draw(st.lists(finite, min_size=m, max_size=m)))
    t = data.draw(st.floats(0, 1))
    gap = midpoint_convexity_gap(lambda x: it.eval(x, 0), x1[None], x2[None], t)
    scale = 1 + abs(it.eval(x1, 0)) + abs(it.eval(x2, 0))
    assert gap[0] >= -1e-12 * scale


@settings(max_examples=200, deadline=None)
@given(p=exponents, a=coeffs, m=st.sampled_from([1, 2]), data=st.data())
def test_subdifferential_monotonicity_property(p, a, m, data):
    it = Integrand.power_law(p, {0: a}, dimension_m=m)
    x1 = np.array(data.draw(st.lists(finite, min_size=m, max_size=m)))
    x2 = np.array(data.draw(st.lists(finite, min_size=m, max_size=m)))
    s1, s2 = it.subgradient(x1, 0), it.subgradient(x2, 0)
    scale = 1 + np.linalg.norm(s1) * np.linalg.norm(x1) + np.linalg.norm(s2) * np.linalg.norm(x2)
    assert np.dot(s1 - s2, x1 - x2) >= -1e-12 * scale


def test_fenchel_inequality_on_many_random_pairs():
    rng = np.random.default_rng(0)
    for p in (1.5, 2.0, 3.0, 4.0):
        it = Integrand.power_law(p, {0: 1.0, 1: 7.0}, dimension_m=2)
        xi = rng.normal(scale=5, size=(10 ** 4, 2))
        sig = rng.normal(scale=5, size=(10 ** 4, 2))
        th = rng.integers(0, 2, 10 ** 4)
        r = it.fenchel_residual(xi, sig, th)
        scale = 1 + np.abs(np.sum(xi * sig, axis=1))
        assert np.all(r >= -1e-12 * scale)


@settings(max_examples=60, deadline=None)
@given(p=exponents, a=coeffs, x=st.floats(-5, 5))
def test_biconjugate_recovers_primal(p, a, x):
    it = Integrand.power_law(p, {0: a})
    s_star = float(it.subgradient(x, 0))
    half = 2 * abs(s_star) + 1
    val = refined_conjugate(lambda s: it.conjugate(s, 0), x, -half, half)
    assert val == pytest.approx(float(it.eval(x, 0)), rel=1e-9, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(p=exponents, a=coeffs, sigma=st.floats(-5, 5))
def test_closed_form_conjugate_matches_sup(p, a, sigma):
    it = Integrand.power_law(p, {0: a})
    x_star = float(it.conjugate_gradient(sigma, 0))
    half = 2 * abs(x_star) + 1
    val = refined_conjugate(lambda x: it.eval(x, 0), sigma, -half, half)
    assert float(it.conjugate(sigma, 0)) == pytest.approx(val, rel=1e-9, abs=1e-9)


@settings(max_examples=50, deadline=None)
@given(p=exponents, a=st.floats(0.2, 5.0), b=st.floats(0.2, 5.0))
def test_growth_transfer_property(p, a, b):
    lo, hi = min(a, b), max(a, b)
    it = Integrand.power_law(p, {0: lo, 1: hi}, growth_constants=(0.5, lo / p, hi / p))
    for th in (0, 1):
        rep = it.check_growth(th, 64, seed=1)
        assert rep.holds, rep.offending


def test_gradient_matches_finite_differences_in_2d():
    it = Integrand.power_law(3, {0: 2.0}, dimension_m=2)
    x = np.array([0.7, -1.3])
    g = it.subgradient(x, 0)
    h = 1e-6
    fd = [(it.eval(x + h * e, 0) - it.eval(x - h * e, 0)) / (2 * h) for e in np.eye(2)]
    assert np.allclose(g, fd, atol=1e-6)
    H = it.hessian(x, 0)
    fdH = np.array([(it.subgradient(x + h * e, 0) - it.subgradient(x - h * e, 0)) / (2 * h)
                    for e in np.eye(2)])
    assert np.allclose(H, fdH, atol=1e-5)
