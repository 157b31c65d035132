import dataclasses

import numpy as np
import pytest

from stochhom.cell import HomogenizedLaw
from stochhom.errors import AliasingError, ConfigurationError, SeedMismatchError
from stochhom.harness import (divcurl_product_test, monotonicity_test, oscillating_corrector,
                              run_convergence, smooth_test_functions, weak_error)
from stochhom.integrands import Integrand
from stochhom.media import RandomMedium, fit_loglog_slope
from stochhom.pde import ProblemSpec, solve_homogenized, solve_oscillating

QUAD = Integrand.quadratic({1: 1.0, 2: 4.0})
TWO = RandomMedium.two_phase(0.5, seed=0)
LAW = HomogenizedLaw.quadratic((np.linspace(-1.5, 1.5, 13),), 1.6)


def test_test_functions_vanish_on_the_boundary():
    fs = smooth_test_functions((0.0, 2.0))
    assert len(fs) == 4
    ends = np.array([[0.0], [2.0]])
    assert all(np.allclose(f(ends), 0) for f in fs)
    fs2 = smooth_test_functions(((0, 1), (0, 1)))
    assert len(fs2) == 16
    pts = np.array([[0.0, 0.3], [0.4, 1.0]])
    assert all(np.allclose(f(pts), 0) for f in fs2)


def test_weak_error_of_identical_fields_is_zero():
    x = np.linspace(0, 1, 101)[:, None]
    f = np.sin(x[:, 0])
    assert weak_error(f, f, smooth_test_functions((0, 1)), x, np.full(101, 0.01)) == 0.0


def test_weak_error_of_fast_oscillation_decays():
    n = 2 ** 14
    x = (np.arange(n) + 0.5) / n
    w = np.full(n, 1.0 / n)
    tests = smooth_test_functions((0, 1))
    etas = [1 / 8, 1 / 16, 1 / 32, 1 / 64]
    errs = [weak_error(np.cos(2 * np.pi * x / e + 0.3), 0 * x, tests, x, w) for e in etas]
    assert all(a > b for a, b in zip(errs, errs[1:]))
    assert fit_loglog_slope(etas, errs) >= 0.9
    # the strong norm does not decay
    assert np.sqrt(w @ np.sin(2 * np.pi * x / etas[-1]) ** 2) == pytest.approx(np.sqrt(0.5), 1e-6)


def test_single_phase_sweep_is_exact():
    a0 = 1.6
    single = RandomMedium(1, (1,), (1.0,))
    spec = ProblemSpec((0, 1), 128, 2.0)
    rep = run_convergence(spec, single, Integrand.quadratic({1: a0}), LAW, [1 / 8, 1 / 16],
                          [0, 1], xi_values=(1.0,))
    assert len(rep.records) == 4 and not rep.flagged
    for rec in rep.records:
        assert rec["strong_L2_error_u"] <= 1e-10
        assert rec["weak_error_sigma"] <= 1e-10
        assert rec["divcurl_error"] <= 1e-10
        assert rec["monotonicity_min"] >= 0


def test_divcurl_product_of_identical_solutions():
    res = solve_oscillating(ProblemSpec((0, 1), 64, 2.0, eta=1 / 4), TWO, QUAD)
    assert divcurl_product_test(res, res, smooth_test_functions((0, 1))[-1]) == 0.0


def test_single_phase_monotonicity_is_a_square():
    a0 = 2.0
    med = RandomMedium(1, (1,), (1.0,), seed=3)
    it = Integrand.quadratic({1: a0})
    res = solve_oscillating(ProblemSpec((0, 1), 64, 2.0, eta=1 / 4), med, it)
    cor = oscillating_corrector(res, med, it, 0.5)
    assert np.max(np.abs(cor.v)) < 1e-12
    expected = np.min(2 * a0 * (res.grad_u[:, 0] - 0.5) ** 2)
    assert monotonicity_test(res, cor) == pytest.approx(expected, abs=1e-12)


@pytest.mark.parametrize("p", [2.0, 4.0])
def test_two_phase_monotonicity_nonnegative(p):
    it = Integrand.power_law(p, {1: 1.0, 2: 4.0 if p == 2 else 16.0})
    res = solve_oscillating(ProblemSpec((0, 1), 256, 2.0, eta=1 / 16), TWO, it)
    for xi in (-1.0, 0.0, 1.0):
        cor = oscillating_corrector(res, TWO, it, xi)
        assert cor.duality_gap <= 1e-10
        assert monotonicity_test(res, cor) >= -1e-10


def test_monotonicity_detects_a_corrupted_flux():
    res = solve_oscillating(ProblemSpec((0, 1), 128, 2.0, eta=1 / 8), TWO, QUAD)
    cor = oscillating_corrector(res, TWO, QUAD, 1.0)
    bad = dataclasses.replace(res, sigma=cor.z - (res.grad_u - cor.xi - cor.v))
    assert monotonicity_test(bad, cor) < -1e-3


def test_monotonicity_refuses_mismatched_realizations():
    spec = ProblemSpec((0, 1), 64, 2.0, eta=1 / 4)
    a = solve_oscillating(spec, TWO, QUAD, omega_seed=1)
    b = solve_oscillating(spec, TWO, QUAD, omega_seed=2)
    with pytest.raises(SeedMismatchError):
        monotonicity_test(a, oscillating_corrector(b, TWO, QUAD, 1.0))
    c = solve_oscillating(spec.with_eta(1 / 8), TWO, QUAD, omega_seed=1)
    with pytest.raises(SeedMismatchError):
        monotonicity_test(a, oscillating_corrector(c, TWO, QUAD, 1.0))


def test_corrector_needs_an_oscillating_solve():
    res = solve_homogenized(ProblemSpec((0, 1), 64, 2.0), LAW)
    with pytest.raises(ConfigurationError):
        oscillating_corrector(res, TWO, QUAD, 1.0)


def test_2d_corrector_and_monotonicity():
    it = Integrand.quadratic({1: 1.0, 2: 4.0}, dimension_m=2)
    med = RandomMedium.two_phase(0.5, dimension_m=2, seed=6)
    res = solve_oscillating(ProblemSpec(((0, 1), (0, 1)), 16, 2.0, eta=1 / 4), med, it)
    cor = oscillating_corrector(res, med, it, (1.0, -1.0))
    assert cor.v.shape == res.grad_u.shape
    assert monotonicity_test(res, cor) >= -1e-10


def test_sweep_report_csv_and_schedule_checks(tmp_path):
    spec = ProblemSpec((0, 1), 128, 2.0)
    wrong = HomogenizedLaw.quadratic((np.linspace(-1.5, 1.5, 13),), 1.0)
    rep = run_convergence(spec, TWO, QUAD, LAW, [1 / 4, 1 / 8], [0, 1, 2], negative_law=wrong,
                          master_seed=5)
    assert rep.median("strong_L2_error_u").shape == (2,)
    assert all(r["negative_control_error_u"] > r["strong_L2_error_u"] for r in rep.records)
    assert set(rep.rates) >= {"strong_L2_error_u", "weak_error_sigma"}
    rep.to_csv(tmp_path / "c.csv")
    lines = (tmp_path / "c.csv").read_text().splitlines()
    assert lines[0] == "# master_seed=5"
    assert len(lines) == 2 + 6 + 2
    assert sum(",median," in ln for ln in lines) == 2
    assert "fitted log-log rate" in rep.summary()
    with pytest.raises(ConfigurationError):
        run_convergence(spec, TWO, QUAD, LAW, [1 / 8, 1 / 4], [0])
    with pytest.raises(AliasingError):
        run_convergence(spec, TWO, QUAD, LAW, [1 / 8, 1 / 64], [0])


def test_sweep_is_deterministic_and_thread_independent():
    spec = ProblemSpec((0, 1), 64, 2.0)
    a = run_convergence(spec, TWO, QUAD, LAW, [1 / 4, 1 / 8], [3, 4], workers=1)
    b = run_convergence(spec, TWO, QUAD, LAW, [1 / 4, 1 / 8], [3, 4], workers=3)
    np.testing.assert_equal(a.records, b.records)
