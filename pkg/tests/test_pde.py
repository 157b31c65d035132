import numpy as np
import pytest

from oracles import dirichlet_quadratic_1d
from stochhom.cell import HomogenizedLaw
from stochhom.errors import AliasingError, ConfigurationError, ConvergenceError, HullError
from stochhom.integrands import Integrand
from stochhom.media import RandomMedium, fit_loglog_slope
from stochhom.pde import (ProblemSpec, a_priori_bound, a_priori_terms, dual_certificate,
                          l2_difference, max_error, solve_homogenized, solve_oscillating)

SINGLE = RandomMedium(1, (1,), (1.0,))
TWO = RandomMedium.two_phase(0.5, seed=21)
QUAD = Integrand.quadratic({1: 1.0, 2: 4.0})


def p_power_exact(alpha, f, p):
    """``u`` for ``-(alpha |u'|^(p-2) u')' = f`` on (0, 1) with zero ends, constant data."""
    k = 1.0 / (p - 1.0)
    return lambda x: (f / alpha) ** k / (k + 1) * (0.5 ** (k + 1) - np.abs(0.5 - x) ** (k + 1))


def test_quadratic_analytic_solution_and_order():
    a0, f = 1.5, 2.0
    it = Integrand.quadratic({1: a0})
    exact = dirichlet_quadratic_1d(a0, f)
    ns = [16, 32, 64, 128]
    errs = [max_error(solve_oscillating(ProblemSpec((0, 1), n, f, eta=1.0), SINGLE, it), exact)
            for n in ns]
    assert errs[-1] < 1e-5
    assert -fit_loglog_slope(ns, errs) >= 1.9


def test_p4_single_phase_against_closed_form():
    alpha, f, p = 2.0, 3.0, 4.0
    it = Integrand.power_law(p, {1: alpha})
    exact = p_power_exact(alpha, f, p)
    ns = [32, 64, 128]
    res = [solve_oscillating(ProblemSpec((0, 1), n, f, eta=1.0), SINGLE, it) for n in ns]
    errs = [max_error(r, exact) for r in res]
    assert all(r.converged and -1e-12 <= r.duality_gap <= 1e-8 for r in res)
    assert errs[0] > errs[1] > errs[2] and errs[-1] < 2e-4
    assert -fit_loglog_slope(ns, errs) >= 1.3


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_rhs_scaling(p):
    it = Integrand.power_law(p, {1: 1.0, 2: 4.0})
    spec = ProblemSpec((0, 1), 128, 1.0, eta=1 / 8)
    u1 = solve_oscillating(spec, TWO, it).u
    lam = 3.0
    u2 = solve_oscillating(ProblemSpec((0, 1), 128, lam, eta=1 / 8), TWO, it).u
    assert np.allclose(u2, lam ** (1 / (p - 1)) * u1, rtol=1e-7, atol=1e-12)


def test_domain_and_eta_rescaling_commute():
    # u(x) on (0, 1) at scale eta equals u(2x)/4 on (0, 2) at scale 2 eta for p = 2
    spec1 = ProblemSpec((0, 1), 128, 1.0, eta=1 / 8)
    spec2 = ProblemSpec((0, 2), 128, 1.0, eta=1 / 4)
    u1 = solve_oscillating(spec1, TWO, QUAD).u
    u2 = solve_oscillating(spec2, TWO, QUAD).u
    assert np.allclose(u2, 4 * u1, rtol=1e-8)


def test_zero_rhs_gives_zero_solution():
    res = solve_oscillating(ProblemSpec((0, 1), 64, 0.0, eta=1 / 4), TWO,
                            Integrand.power_law(3, {1: 1.0, 2: 5.0}))
    assert np.all(res.u == 0) and res.duality_gap == pytest.approx(0.0, abs=1e-15)


def test_coefficient_and_rhs_scaling_leave_u_unchanged():
    spec = ProblemSpec((0, 1), 128, 2.0, eta=1 / 8)
    u1 = solve_oscillating(spec, TWO, QUAD).u
    lam = 7.0
    u2 = solve_oscillating(ProblemSpec((0, 1), 128, 2.0 * lam, eta=1 / 8), TWO,
                           Integrand.quadratic({1: lam, 2: 4 * lam})).u
    assert np.allclose(u1, u2, rtol=1e-9, atol=1e-14)


@pytest.mark.parametrize("p", [2.0, 3.0])
def test_a_priori_bound_is_eta_independent(p):
    it = Integrand.power_law(p, {1: 1.0, 2: 4.0}, growth_constants=(0.1, 1 / p, 4 / p))
    spec = ProblemSpec((0, 1), 1024, 2.0, eta=1 / 8)
    bound = a_priori_bound(spec, it)
    q = p / (p - 1)
    for eta in (1 / 8, 1 / 16, 1 / 32, 1 / 64, 1 / 128, 1 / 256):
        res = solve_oscillating(spec.with_eta(eta), TWO, it)
        lhs, rhs = a_priori_terms(res, it)
        assert lhs <= rhs + 1e-12
        vol = res.mesh.volumes
        total = vol @ np.abs(res.grad_u[:, 0]) ** p + vol @ np.abs(res.sigma[:, 0]) ** q
        assert total <= bound


def test_single_phase_homogenized_equals_oscillating():
    a0 = 2.5
    law = HomogenizedLaw.quadratic((np.linspace(-2, 2, 9),), a0)
    spec = ProblemSpec((0, 1), 64, 1.0, eta=1 / 8)
    osc = solve_oscillating(spec, SINGLE, Integrand.quadratic({1: a0}))
    hom = solve_homogenized(spec, law)
    assert np.max(np.abs(osc.u - hom.u)) <= 1e-10
    assert l2_difference(osc, hom) <= 1e-10


def test_homogenized_two_phase_quadratic_closed_form():
    law = HomogenizedLaw.quadratic((np.linspace(-1, 1, 9),), 1.6)
    res = solve_homogenized(ProblemSpec((0, 1), 64, 2.0), law)
    x = res.mesh.nodes[..., 0]
    assert np.max(np.abs(res.u - dirichlet_quadratic_1d(1.6, 2.0)(x))) < 1e-12
    assert -1e-12 <= res.duality_gap <= 1e-10


def test_dual_certificate_and_inclusion_residual():
    it = Integrand.power_law(4, {1: 1.0, 2: 16.0})
    spec = ProblemSpec((0, 1), 256, 2.0, eta=1 / 16)
    res = solve_oscillating(spec, TWO, it)
    assert res.converged
    gap = dual_certificate(res, spec, it)
    assert -1e-12 <= gap <= 1e-6
    assert gap == pytest.approx(res.duality_gap, abs=1e-12)
    assert res.inclusion_residual <= 1e-10
    assert res.divergence_residual <= 1e-8


def test_truncated_newton_is_flagged():
    it = Integrand.power_law(4, {1: 1.0, 2: 16.0})
    spec = ProblemSpec((0, 1), 256, 2.0, eta=1 / 16)
    res = solve_oscillating(spec, TWO, it, max_iter=1, raise_on_failure=False)
    assert not res.converged and res.duality_gap > 1e-8
    with pytest.raises(ConvergenceError) as exc:
        solve_oscillating(spec, TWO, it, max_iter=1)
    assert exc.value.gap == pytest.approx(res.duality_gap)


def test_comparison_principle():
    it = Integrand.power_law(3, {1: 1.0, 2: 9.0})
    lo = solve_oscillating(ProblemSpec((0, 1), 128, lambda x: 1 + 0 * x[..., 0], eta=1 / 8),
                           TWO, it)
    hi = solve_oscillating(ProblemSpec((0, 1), 128, lambda x: 1 + x[..., 0] ** 2, eta=1 / 8),
                           TWO, it)
    assert np.all(hi.u >= lo.u - 1e-12)
    assert np.all(lo.u >= -1e-14)


def test_perturbed_rhs_is_f_plus_eta_g():
    spec = ProblemSpec((0, 1), 64, 1.0, eta=1 / 8, perturbation=2.0)
    assert np.allclose(spec.rhs(np.array([[0.3]])), 1.25)


def test_aliasing_and_bad_specs():
    with pytest.raises(AliasingError, match="eta/4"):
        ProblemSpec((0, 1), 8, 1.0, eta=0.1)
    ProblemSpec((0, 1), 40, 1.0, eta=0.1)  # h = eta/4 is allowed
    with pytest.raises(ConfigurationError):
        ProblemSpec((1, 0), 8)
    with pytest.raises(ConfigurationError):
        solve_oscillating(ProblemSpec((0, 1), 8), SINGLE, QUAD)


def test_homogenized_solution_outside_hull_is_refused():
    law = HomogenizedLaw.quadratic((np.linspace(-0.5, 0.5, 5),), 1.0)
    with pytest.raises(HullError) as exc:
        solve_homogenized(ProblemSpec((0, 1), 32, 20.0), law)
    lo, hi = exc.value.needed_range
    assert hi > 0.5 and lo < -0.5


def test_2d_manufactured_solution_order():
    a0 = 0.75
    it = Integrand.quadratic({1: a0}, dimension_m=2)
    med = RandomMedium(2, (1,), (1.0,))
    exact = lambda x: np.sin(np.pi * x[..., 0]) * np.sin(np.pi * x[..., 1])
    rhs = lambda x: 2 * a0 * 2 * np.pi ** 2 * exact(x)
    ns = [8, 16, 32]
    errs = [max_error(solve_oscillating(ProblemSpec(((0, 1), (0, 1)), n, rhs, eta=1.0),
                                        med, it), exact) for n in ns]
    assert -fit_loglog_slope(ns, errs) >= 1.8


def test_2d_two_phase_p4_and_csv(tmp_path):
    it = Integrand.power_law(4, {1: 1.0, 2: 16.0}, dimension_m=2)
    med = RandomMedium.two_phase(0.5, dimension_m=2, seed=4)
    spec = ProblemSpec(((0, 1), (0, 1)), 16, 2.0, eta=1 / 4)
    res = solve_oscillating(spec, med, it)
    assert res.converged and -1e-12 <= res.duality_gap <= 1e-8
    assert res.grad_u.shape == (2 * 16 * 16, 2)
    res.to_csv(tmp_path / "s.csv", master_seed=7)
    lines = (tmp_path / "s.csv").read_text().splitlines()
    assert lines[0].startswith("# master_seed=7")
    assert lines[1] == "kind,x,y,u,sigma_1,sigma_2"
    assert len(lines) == 2 + 17 * 17 + 2 * 16 * 16


def test_2d_homogenized_quadratic_matches_single_phase():
    a0 = 1.6
    ax = np.linspace(-1.5, 1.5, 7)
    law = HomogenizedLaw.quadratic((ax, ax), a0)
    it = Integrand.quadratic({1: a0}, dimension_m=2)
    spec = ProblemSpec(((0, 1), (0, 1)), 16, 2.0, eta=1 / 4)
    hom = solve_homogenized(spec, law)
    osc = solve_oscillating(spec, RandomMedium(2, (1,), (1.0,)), it)
    assert np.max(np.abs(hom.u - osc.u)) <= 1e-10
    # the gap of the tabulated law stays within its interpolation error
    assert -1e-12 <= hom.duality_gap <= 2 * law.interpolation_error_bound()
    assert hom.divergence_residual <= 1e-10
