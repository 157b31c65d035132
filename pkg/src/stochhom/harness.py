"""Convergence experiments for the oscillating problem as ``eta -> 0``.

For each ``(eta, seed)`` the oscillating Dirichlet problem is solved and
compared with the single homogenized solution: strong ``L2`` error of ``u``,
weak errors of ``grad u`` and ``sigma`` against a fixed library of smooth
test functions, the div-curl product ``sigma . grad u`` tested against a
bump, and the per-realization monotonicity check against oscillating
corrector fields.
"""
from __future__ import annotations

import csv
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .cell import CellProblemConfig, solve_corrector
from .errors import ConfigurationError, SeedMismatchError
from .integrands import Integrand
from .media import RandomMedium, RealizationField, fit_loglog_slope
from .pde import (ProblemSpec, SolveResult, l2_difference, solve_homogenized,
                  solve_oscillating)

__all__ = [
    "CorrectorField",
    "ConvergenceReport",
    "smooth_test_functions",
    "weak_error",
    "divcurl_product_test",
    "oscillating_corrector",
    "monotonicity_test",
    "run_convergence",
]


def _bump_1d(lo, hi):
    mid, half = 0.5 * (lo + hi), 0.5 * (hi - lo)

    def g(x):
        s = (x - mid) / half
        return np.where(np.abs(s) < 1, (1 - s * s) ** 2, 0.0)
    return g


def _sine_1d(lo, hi, k):
    return lambda x: np.sin(k * np.pi * (x - lo) / (hi - lo))


def smooth_test_functions(domain) -> list[Callable]:
    """Smooth test functions vanishing on the boundary of the box.

    Sinusoids ``sin(k pi x)`` for ``k = 1, 2, 3`` and a quartic bump on each
    axis; in 2-D all tensor products. Functions take points ``(..., m)``.
    """
    dom = np.asarray(domain, dtype=float).reshape(-1, 2)
    per_axis = []
    for lo, hi in dom:
        per_axis.append([_sine_1d(lo, hi, k) for k in (1, 2, 3)] + [_bump_1d(lo, hi)])
    if len(per_axis) == 1:
        return [(lambda x, g=g: g(x[..., 0])) for g in per_axis[0]]
    return [(lambda x, g=g, h=h: g(x[..., 0]) * h(x[..., 1]))
            for g in per_axis[0] for h in per_axis[1]]


def weak_error(field_eta, field_star, test_functions, points, weights) -> float:
    """``max_g max_d |sum_c w_c (F_eta - F_star)_d(x_c) g(x_c)|``.

    ``points`` are quadrature points ``(N, m)`` with weights ``(N,)``;
    fields are ``(N,)`` or ``(N, k)``.
    """
    diff = np.asarray(field_eta, dtype=float) - np.asarray(field_star, dtype=float)
    if diff.ndim == 1:
        diff = diff[:, None]
    pts = np.asarray(points, dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    w = np.asarray(weights, dtype=float)
    worst = 0.0
    for g in test_functions:
        vals = (w * g(pts))[:, None] * diff
        worst = max(worst, float(np.max(np.abs(vals.sum(axis=0)))))
    return worst


def divcurl_product_test(result_eta: SolveResult, result_star: SolveResult, psi) -> float:
    """``|int (sigma_eta . grad u_eta) psi - int (sigma* . grad u*) psi|``."""
    mesh = result_eta.mesh
    wpsi = mesh.volumes * psi(mesh.centres)
    a = np.sum(result_eta.sigma * result_eta.grad_u, axis=-1)
    b = np.sum(result_star.sigma * result_star.grad_u, axis=-1)
    return float(abs(wpsi @ (a - b)))


@dataclass
class CorrectorField:
    """Corrector ``v`` and flux ``z`` on the cells of a Dirichlet mesh."""

    xi: np.ndarray
    v: np.ndarray
    z: np.ndarray
    seed: int
    eta: float
    duality_gap: float


def oscillating_corrector(result_eta: SolveResult, medium: RandomMedium,
                          integrand: Integrand, xi, tolerance=1e-10) -> CorrectorField:
    """Periodic corrector of the realization seen by ``result_eta``.

    The grid squares of the Dirichlet mesh are taken as nodes of a torus of
    ``(Q-side / eta)`` lattice cells with ``eta / h`` nodes per cell, carrying
    exactly the phases of the oscillating solve. The corrector of that torus
    is mapped back to the cells.
    """
    mesh = result_eta.mesh
    eta = result_eta.eta
    m = mesh.m
    if eta is None or result_eta.cell_labels is None:
        raise ConfigurationError("an oscillating solve (with eta and phases) is required")
    side = mesh.axes[0][-1] - mesh.axes[0][0]
    h = side / mesh.n
    if any(abs((a[-1] - a[0]) - side) > 1e-12 * side for a in mesh.axes):
        raise ConfigurationError("oscillating correctors need a square domain")
    r = eta / h
    L = side / eta
    if abs(r - round(r)) > 1e-9 or abs(L - round(L)) > 1e-9 or round(L) < 2:
        raise ConfigurationError(
            f"eta/h = {r:g} and side/eta = {L:g} must be integers (and side/eta >= 2)")
    r, L = int(round(r)), int(round(L))
    nsq = mesh.n ** m
    labels = result_eta.cell_labels[:nsq].reshape((mesh.n,) * m)
    lab_index = {lab: i for i, lab in enumerate(medium.phase_labels)}
    idx = np.vectorize(lab_index.__getitem__, otypes=[np.intp])(labels)
    coords = tuple(mesh.axes[d][:-1] + 0.5 * h for d in range(m))
    realization = RealizationField(
        window=tuple((float(a[0]), float(a[-1])) for a in mesh.axes), eta=float(eta),
        grid_spacing=float(h), coords=coords, phase_index=idx,
        labels=medium.phase_labels, seed=result_eta.seed)
    xi = np.atleast_1d(np.asarray(xi, dtype=float))
    cfg = CellProblemConfig(xi=tuple(xi), torus_cells=L, nodes_per_cell=r,
                            realization_count=1, solver_tolerance=tolerance)
    sol = solve_corrector(cfg, realization, integrand)
    v = sol.v.reshape(nsq, m)[mesh.square_of_cell]
    z = sol.z.reshape(nsq, m)[mesh.square_of_cell]
    return CorrectorField(xi, v, z, result_eta.seed, float(eta), sol.duality_gap)


def monotonicity_test(result_eta: SolveResult, corrector: CorrectorField, xi=None) -> float:
    """``min_c (sigma_eta - z) . (grad u_eta - xi - v)`` over the cells.

    Refuses to pair a solution and a corrector from different realizations.
    """
    if corrector.seed != result_eta.seed or not np.isclose(corrector.eta, result_eta.eta):
        raise SeedMismatchError(
            f"solution (seed={result_eta.seed}, eta={result_eta.eta}) and corrector "
            f"(seed={corrector.seed}, eta={corrector.eta}) come from different realizations")
    x = corrector.xi if xi is None else np.atleast_1d(np.asarray(xi, dtype=float))
    prod = np.sum((result_eta.sigma - corrector.z) * (result_eta.grad_u - x - corrector.v), axis=-1)
    return float(prod.min())


# -- the sweep ---------------------------------------------------------------

_RECORD_FIELDS = [
    "strong_L2_error_u", "strong_error_grad_u", "strong_error_sigma",
    "weak_error_grad_u", "weak_error_sigma", "divcurl_error", "monotonicity_min",
    "energy", "grad_norm_p", "sigma_norm_q", "duality_gap", "negative_control_error_u",
]


@dataclass
class ConvergenceReport:
    eta_schedule: list
    seeds: list
    records: list
    aggregates: dict
    rates: dict
    metadata: dict = field(default_factory=dict)
    excluded: list = field(default_factory=list)

    @property
    def flagged(self) -> bool:
        return bool(self.excluded)

    def median(self, key) -> np.ndarray:
        """Median of ``key`` over seeds, in schedule order."""
        return np.array([self.aggregates[eta][key] for eta in self.eta_schedule])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            fh.write(f"# master_seed={self.metadata.get('master_seed', '')}\n")
            w = csv.writer(fh)
            w.writerow(["eta", "seed"] + _RECORD_FIELDS)
            for rec in self.records:
                w.writerow([repr(rec["eta"]), rec["seed"]]
                           + [repr(float(rec[k])) for k in _RECORD_FIELDS])
            for eta in self.eta_schedule:
                agg = self.aggregates[eta]
                w.writerow([repr(eta), "median"] + [repr(float(agg[k])) for k in _RECORD_FIELDS])

    def summary(self) -> str:
        lines = [f"eta schedule: {', '.join(f'{e:g}' for e in self.eta_schedule)}",
                 f"seeds: {len(self.seeds)} (excluded solves: {len(self.excluded)})"]
        head = ["eta", "L2 err u", "weak grad u", "weak sigma", "div-curl", "mono min", "wrong law"]
        lines.append("  ".join(f"{h:>12}" for h in head))
        for eta in self.eta_schedule:
            a = self.aggregates[eta]
            vals = [eta, a["strong_L2_error_u"], a["weak_error_grad_u"], a["weak_error_sigma"],
                    a["divcurl_error"], a["monotonicity_min"], a["negative_control_error_u"]]
            lines.append("  ".join(f"{v:12.4e}" for v in vals))
        for k, v in self.rates.items():
            lines.append(f"fitted log-log rate of {k}: {v:.3f}")
        return "\n".join(lines)


def _one_run(spec, medium, integrand, eta, seed, u_star, u_wrong, tests, xi_values):
    res = solve_oscillating(spec.with_eta(eta), medium, integrand, omega_seed=seed,
                            raise_on_failure=False)
    if not res.converged:
        return None, res
    mesh = res.mesh
    vol, cen = mesh.volumes, mesh.centres
    p, q = integrand.exponent_p, integrand.dual_exponent
    dg = res.grad_u - u_star.grad_u
    ds = res.sigma - u_star.sigma
    mono = min([np.inf] + [monotonicity_test(res, oscillating_corrector(res, medium, integrand, xi))
               for xi in xi_values])
    rec = {
        "eta": float(eta), "seed": int(seed),
        "strong_L2_error_u": l2_difference(res, u_star),
        "strong_error_grad_u": float(np.sqrt(vol @ np.sum(dg * dg, axis=-1))),
        "strong_error_sigma": float(np.sqrt(vol @ np.sum(ds * ds, axis=-1))),
        "weak_error_grad_u": weak_error(res.grad_u, u_star.grad_u, tests, cen, vol),
        "weak_error_sigma": weak_error(res.sigma, u_star.sigma, tests, cen, vol),
        "divcurl_error": divcurl_product_test(res, u_star, tests[-1]),
        "monotonicity_min": mono,
        "energy": res.energy,
        "grad_norm_p": float(vol @ np.linalg.norm(res.grad_u, axis=-1) ** p),
        "sigma_norm_q": float(vol @ np.linalg.norm(res.sigma, axis=-1) ** q),
        "duality_gap": res.duality_gap,
        "negative_control_error_u": l2_difference(res, u_wrong) if u_wrong is not None
        else float("nan"),
    }
    return rec, res


def run_convergence(spec_template: ProblemSpec, medium: RandomMedium, integrand: Integrand,
                    law, eta_schedule: Sequence[float], seeds: Sequence[int],
                    negative_law=None, xi_values=(-1.0, 0.0, 1.0), workers: int = 1,
                    master_seed=None) -> ConvergenceReport:
    """Sweep ``eta`` and realizations against one homogenized solution.

    ``negative_law`` (optional) is a deliberately wrong law whose solution
    is compared with every oscillating solve as a control.
    """
    etas = [float(e) for e in eta_schedule]
    if not etas or any(b >= a for a, b in zip(etas, etas[1:])):
        raise ConfigurationError("eta schedule must be strictly decreasing")
    for eta in etas:
        spec_template.with_eta(eta)  # raises AliasingError when unresolved
    base = ProblemSpec(spec_template.domain, spec_template.grid_nodes,
                       spec_template.rhs_f, None, spec_template.perturbation)
    u_star = solve_homogenized(base, law)
    u_wrong = solve_homogenized(base, negative_law) if negative_law is not None else None
    tests = smooth_test_functions(base.domain)
    m = integrand.dimension_m
    xi_list = [np.full(m, x) if np.ndim(x) == 0 else np.asarray(x, float) for x in xi_values]

    jobs = [(eta, int(s)) for eta in etas for s in seeds]

    def work(job):
        return _one_run(base, medium, integrand, job[0], job[1], u_star, u_wrong, tests, xi_list)

    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            outs = list(ex.map(work, jobs))
    else:
        outs = [work(j) for j in jobs]

    records, excluded = [], []
    for (eta, seed), (rec, res) in sorted(zip(jobs, outs), key=lambda t: (-t[0][0], t[0][1])):
        if rec is None:
            excluded.append({"eta": eta, "seed": seed, "gap": res.duality_gap})
        else:
            records.append(rec)
    aggregates = {}
    for eta in etas:
        rows = [r for r in records if r["eta"] == eta]
        agg = {}
        for k in _RECORD_FIELDS:
            vals = np.array([r[k] for r in rows])
            agg[k] = float(np.median(vals)) if vals.size else float("nan")
        agg["monotonicity_min"] = float(min((r["monotonicity_min"] for r in rows),
                                            default=np.nan))
        aggregates[eta] = agg
    rates = {}
    for k in ("strong_L2_error_u", "weak_error_grad_u", "weak_error_sigma", "divcurl_error"):
        y = np.array([aggregates[e][k] for e in etas])
        if len(etas) >= 2 and np.all(y > 0):
            rates[k] = fit_loglog_slope(etas, y)
    meta = {
        "master_seed": master_seed,
        "medium_seed": medium.seed,
        "grid_nodes": base.grid_nodes,
        "law_source": law.metadata.get("source", "tabulated"),
        "law_metadata": dict(law.metadata),
        "negative_control": negative_law is not None,
        "tolerance_gap": 1e-10 if integrand.exponent_p == 2.0 else 1e-8,
    }
    return ConvergenceReport(etas, [int(s) for s in seeds], records, aggregates, rates,
                             meta, excluded)
