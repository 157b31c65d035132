"""Dirichlet problems ``-div sigma = f``, ``sigma in dphi(x/eta, grad u)`` on boxes.

Both the oscillating problem (phases of a random medium at scale ``eta``)
and the homogenized problem (a tabulated law) are solved as convex energy
minimizations

    min_u  sum_c |c| phi_c(B u) - sum_i M_i f_i u_i ,   u = 0 on the boundary,

with P1 elements: intervals in 1-D, two triangles per grid square in 2-D.
``B`` maps nodal values to cellwise constant gradients, ``M`` is the lumped
mass. The flux ``sigma = dphi(B u)`` is cellwise constant and the discrete
divergence is ``-B^T W`` (``W`` the cell volumes), so the optimality system
is exactly discrete conservation.

The dual certificate projects ``sigma`` onto the affine set
``B^T W s = M f`` and evaluates ``P(u) + D(s) >= 0``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from ._newton import damped_newton
from .errors import AliasingError, ConfigurationError, ConvergenceError, HullError
from .integrands import Integrand, Material

__all__ = [
    "ProblemSpec",
    "Mesh",
    "SolveResult",
    "LawMaterial",
    "solve_oscillating",
    "solve_homogenized",
    "solve_with_material",
    "dual_certificate",
    "a_priori_bound",
    "a_priori_terms",
    "max_error",
    "l2_difference",
]


@dataclass(frozen=True)
class ProblemSpec:
    """Box domain, ``n`` grid cells per side, right-hand side and scale.

    ``rhs_f`` is a constant, a callable of node coordinates ``(..., m)`` or a
    nodal array. The right-hand side actually used is ``f + eta * g`` with
    ``g = perturbation`` (zero by default). ``eta=None`` is allowed for
    homogenized solves.
    """

    domain: tuple
    grid_nodes: int
    rhs_f: object = 1.0
    eta: float | None = None
    perturbation: object = None

    def __post_init__(self):
        dom = np.asarray(self.domain, dtype=float)
        if dom.ndim == 1:
            dom = dom[None, :]
        if dom.shape[0] not in (1, 2) or dom.shape[1] != 2 or np.any(dom[:, 1] <= dom[:, 0]):
            raise ConfigurationError("domain must be (lo, hi) or ((lo, hi), (lo, hi)) with lo < hi")
        object.__setattr__(self, "domain", tuple((float(a), float(b)) for a, b in dom))
        if int(self.grid_nodes) < 2:
            raise ConfigurationError("grid_nodes must be >= 2")
        object.__setattr__(self, "grid_nodes", int(self.grid_nodes))
        if self.eta is not None:
            if self.eta <= 0:
                raise ConfigurationError("eta must be positive")
            if max(self.spacing) > self.eta / 4 * (1 + 1e-12):
                raise AliasingError(
                    f"grid spacing {max(self.spacing):g} exceeds eta/4 = {self.eta / 4:g}; "
                    f"use at least {int(np.ceil(4 * max(b - a for a, b in self.domain) / self.eta))} "
                    "cells per side")

    @property
    def dimension_m(self) -> int:
        return len(self.domain)

    @property
    def spacing(self) -> tuple:
        return tuple((b - a) / self.grid_nodes for a, b in self.domain)

    @property
    def volume(self) -> float:
        return float(np.prod([b - a for a, b in self.domain]))

    def with_eta(self, eta) -> "ProblemSpec":
        return ProblemSpec(self.domain, self.grid_nodes, self.rhs_f, eta, self.perturbation)

    def _field(self, value, pts):
        if value is None:
            return np.zeros(pts.shape[:-1])
        if callable(value):
            out = np.asarray(value(pts), dtype=float)
        else:
            out = np.asarray(value, dtype=float)
        out = np.broadcast_to(out, pts.shape[:-1]).astype(float)
        if not np.all(np.isfinite(out)):
            raise ConfigurationError("right-hand side must be finite")
        return out

    def rhs(self, pts) -> np.ndarray:
        """Nodal ``f^eta = f + eta g`` at node coordinates ``pts``."""
        f = self._field(self.rhs_f, pts)
        if self.perturbation is not None and self.eta is not None:
            f = f + self.eta * self._field(self.perturbation, pts)
        return f


class Mesh:
    """Uniform P1 mesh of a box; cells are intervals or triangles."""

    def __init__(self, spec: ProblemSpec):
        m, n = spec.dimension_m, spec.grid_nodes
        self.m, self.n = m, n
        self.axes = tuple(np.linspace(a, b, n + 1) for a, b in spec.domain)
        self.shape = (n + 1,) * m
        self.nodes = np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1)
        nn = (n + 1) ** m
        idx = np.arange(nn).reshape(self.shape)
        boundary = np.zeros(self.shape, dtype=bool)
        for d in range(m):
            sl = [slice(None)] * m
            sl[d] = 0
            boundary[tuple(sl)] = True
            sl[d] = -1
            boundary[tuple(sl)] = True
        self.interior = idx[~boundary]
        if m == 1:
            h = spec.spacing[0]
            cells = np.arange(n)
            rows = np.concatenate([cells, cells])
            cols = np.concatenate([cells, cells + 1])
            data = np.concatenate([-np.ones(n), np.ones(n)]) / h
            self.B = sp.csr_matrix((data, (rows, cols)), shape=(n, nn))
            self.volumes = np.full(n, h)
            self.centres = (0.5 * (self.axes[0][:-1] + self.axes[0][1:]))[:, None]
            self.square_of_cell = cells
            self.cell_vertices = np.stack([cells, cells + 1], axis=1)
        else:
            hx, hy = spec.spacing
            i, j = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
            i, j = i.ravel(), j.ravel()
            p00, p10 = idx[i, j], idx[i + 1, j]
            p01, p11 = idx[i, j + 1], idx[i + 1, j + 1]
            nsq = n * n
            # lower triangle (p00, p10, p01) then upper triangle (p11, p01, p10)
            gx = [(p00, p10), (p01, p11)]
            gy = [(p00, p01), (p10, p11)]
            rows, cols, data = [], [], []
            for t in range(2):
                cell = np.arange(nsq) + t * nsq
                a, b = gx[t]
                rows += [cell, cell]
                cols += [a, b]
                data += [np.full(nsq, -1 / hx), np.full(nsq, 1 / hx)]
                a, b = gy[t]
                rows += [cell + 2 * nsq, cell + 2 * nsq]
                cols += [a, b]
                data += [np.full(nsq, -1 / hy), np.full(nsq, 1 / hy)]
            self.B = sp.csr_matrix((np.concatenate(data),
                                    (np.concatenate(rows), np.concatenate(cols))),
                                   shape=(4 * nsq, nn))
            self.volumes = np.full(2 * nsq, 0.5 * hx * hy)
            self.cell_vertices = np.concatenate([np.stack([p00, p10, p01], 1),
                                                 np.stack([p11, p01, p10], 1)])
            flat = self.nodes.reshape(-1, 2)
            self.centres = flat[self.cell_vertices].mean(axis=1)
            self.square_of_cell = np.concatenate([np.arange(nsq), np.arange(nsq)])
            sq_centres = np.stack([self.axes[0][i] + hx / 2, self.axes[1][j] + hy / 2], axis=1)
            self.square_centres = sq_centres
        if m == 1:
            self.square_centres = self.centres
        self.n_cells = self.volumes.size
        # lumped P1 mass: each cell gives |c| / (m + 1) to each vertex
        self.mass = np.bincount(self.cell_vertices.ravel(),
                                weights=np.repeat(self.volumes / (m + 1), m + 1),
                                minlength=nn)
        self.W = sp.diags(np.tile(self.volumes, m))
        self.Bi = self.B[:, self.interior].tocsr()

    def gradient(self, u_full) -> np.ndarray:
        """Cellwise gradients ``(n_cells, m)`` of a nodal field."""
        return (self.B @ u_full.ravel()).reshape(self.m, self.n_cells).T


class LawMaterial:
    """Adapter exposing a :class:`~stochhom.cell.HomogenizedLaw` like a material.

    In 1-D the energy is the exact antiderivative of the interpolated flux,
    so energy, flux and conjugate are a consistent convex triple.
    """

    def __init__(self, law):
        self.law = law
        self.m = law.dimension_m

    def energy(self, g):
        if self.m == 1:
            return self.law.potential(g[..., 0])
        return self.law.phi0_at(g, extrapolate=True)

    def flux(self, g):
        return self.law.flux_at(g, extrapolate=True)

    def hessian(self, g):
        J = self.law.flux_jacobian(g, extrapolate=True)
        return 0.5 * (J + np.swapaxes(J, -1, -2))

    def conjugate(self, s):
        if self.m == 1:
            return self.law.potential_conjugate(s[..., 0])
        return self.law.conjugate(s)


@dataclass
class SolveResult:
    u: np.ndarray
    grad_u: np.ndarray
    sigma: np.ndarray
    energy: float
    divergence_residual: float
    inclusion_residual: float
    duality_gap: float
    converged: bool
    iterations: int
    seed: int | None
    eta: float | None
    mesh: Mesh = field(repr=False)
    rhs: np.ndarray = field(repr=False)
    cell_labels: np.ndarray | None = field(default=None, repr=False)

    @property
    def cell_volumes(self) -> np.ndarray:
        return self.mesh.volumes

    def to_csv(self, path, master_seed=None) -> None:
        """Node rows ``(x, [y], u)`` followed by cell rows ``(centre, sigma)``."""
        m = self.mesh.m
        names = ["x", "y"][:m]
        pts = self.mesh.nodes.reshape(-1, m)
        with open(path, "w", newline="") as fh:
            fh.write(f"# master_seed={master_seed if master_seed is not None else self.seed} "
                     f"eta={self.eta!r}\n")
            w = csv.writer(fh)
            w.writerow(["kind"] + names + ["u"] + [f"sigma_{d + 1}" for d in range(m)])
            for pt, uv in zip(pts, self.u.ravel()):
                w.writerow(["node"] + [repr(float(c)) for c in pt] + [repr(float(uv))] + [""] * m)
            for c, s in zip(self.mesh.centres, self.sigma):
                w.writerow(["cell"] + [repr(float(v)) for v in c] + [""]
                           + [repr(float(v)) for v in s])


def _default_tolerance(p):
    return 1e-10 if p == 2.0 else 1e-8


def _dual_gap(mesh, material, u_full, b_full, energy):
    """Project the flux onto ``B^T W s = b`` (interior rows) and return the gap."""
    g = mesh.gradient(u_full)
    s = material.flux(g)
    svec = s.T.ravel()
    Wd = mesh.W.diagonal()
    resid = mesh.Bi.T @ (Wd * svec) - b_full[mesh.interior]
    K = (mesh.Bi.T @ mesh.W @ mesh.Bi).tocsc()
    q = spla.spsolve(K, resid)
    s_adm = (svec - mesh.Bi @ q).reshape(mesh.m, mesh.n_cells).T
    dual = float(mesh.volumes @ material.conjugate(s_adm))
    return energy + dual


def _solve(spec: ProblemSpec, material, mesh: Mesh, *, p, tolerance, max_iter, merit,
           x0=None, seed=None, cell_labels=None, raise_on_failure=True, final_check=None,
           gap_floor=0.0):
    m = mesh.m
    pts = mesh.nodes
    f_full = spec.rhs(pts).ravel()
    b_full = mesh.mass * f_full
    b = b_full[mesh.interior]
    Bi, vol = mesh.Bi, mesh.volumes
    BiT = Bi.T.tocsr()
    ni = mesh.interior.size
    volw = np.tile(vol, m)
    bscale = max(float(np.max(np.abs(b / mesh.mass[mesh.interior]))), 1e-300)

    def grads(x):
        return (Bi @ x).reshape(m, mesh.n_cells).T

    def energy(x):
        return float(vol @ material.energy(grads(x)) - b @ x)

    def gradient(x):
        return BiT @ (volw * material.flux(grads(x)).T.ravel()) - b

    def hessian(x):
        Hn = material.hessian(grads(x)) * vol[:, None, None]
        if m == 1:
            Hb = sp.diags(Hn[:, 0, 0])
        else:
            Hb = sp.bmat([[sp.diags(Hn[:, i, j]) for j in range(m)] for i in range(m)])
        H = (BiT @ Hb @ Bi).tocsr()
        reg = 1e-12 * (abs(H.diagonal()).max() + 1e-300)
        return H + reg * sp.identity(ni, format="csr")

    def full(x):
        u = np.zeros(mesh.nodes.shape[:-1]).ravel()
        u[mesh.interior] = x
        return u

    def divres(x):
        return float(np.max(np.abs(gradient(x)) / mesh.mass[mesh.interior])) / bscale \
            if ni else 0.0

    def stop(x):
        if not ni:
            return True, 0.0
        dr = divres(x)
        if dr > tolerance:
            return False, dr
        gap = _dual_gap(mesh, material, full(x), b_full, energy(x))
        return gap <= tolerance + gap_floor, gap

    start = np.zeros(ni) if x0 is None else np.asarray(x0, float)
    res = damped_newton(energy, gradient, hessian, start, stop, max_iter=max_iter, merit=merit)
    u = full(res.x)
    g = mesh.gradient(u)
    if final_check is not None:
        final_check(g)
    sig = material.flux(g)
    incl = material.energy(g) + material.conjugate(sig) - np.sum(g * sig, axis=-1)
    E = energy(res.x)
    gap = _dual_gap(mesh, material, u, b_full, E) if ni else 0.0
    result = SolveResult(
        u=u.reshape(mesh.shape), grad_u=g, sigma=sig, energy=E,
        divergence_residual=divres(res.x), inclusion_residual=float(np.max(np.abs(incl))),
        duality_gap=float(gap), converged=res.converged, iterations=res.iterations,
        seed=seed, eta=spec.eta, mesh=mesh, rhs=f_full.reshape(mesh.shape),
        cell_labels=cell_labels)
    if not res.converged and raise_on_failure:
        raise ConvergenceError(
            f"Dirichlet solve did not converge in {max_iter} iterations "
            f"(gap {gap:.3e}, divergence residual {result.divergence_residual:.3e})",
            float(gap), result)
    return result


def _cell_labels(spec: ProblemSpec, mesh: Mesh, medium):
    """Phase labels of every cell, read at grid-square centres."""
    if medium.dimension_m != spec.dimension_m:
        raise ConfigurationError("medium and domain dimensions differ")
    idx = medium.phase_index_at(mesh.square_centres / spec.eta)
    return np.asarray(medium.phase_labels, dtype=object)[idx][mesh.square_of_cell]


def solve_with_material(spec: ProblemSpec, material, p=2.0, tolerance=None, max_iter=100,
                        merit="energy", raise_on_failure=True, seed=None, cell_labels=None,
                        x0=None, final_check=None, gap_floor=0.0) -> SolveResult:
    """Solve with any object exposing ``energy/flux/hessian/conjugate``.

    ``gap_floor`` is added to the tolerance of the duality gap (not of the
    divergence residual) when energy and conjugate are only approximately
    a Legendre pair.
    """
    mesh = Mesh(spec)
    tol = _default_tolerance(p) if tolerance is None else tolerance
    return _solve(spec, material, mesh, p=p, tolerance=tol, max_iter=max_iter, merit=merit,
                  seed=seed, cell_labels=cell_labels, raise_on_failure=raise_on_failure,
                  x0=x0, final_check=final_check, gap_floor=gap_floor)


def solve_oscillating(spec: ProblemSpec, medium, integrand: Integrand, omega_seed=None,
                      tolerance=None, max_iter=100, raise_on_failure=True) -> SolveResult:
    """Minimize the discrete energy with phases ``theta(x / eta)`` of one realization.

    For ``p != 2`` Newton starts from the quadratic problem with the same
    phase coefficients.
    """
    if spec.eta is None:
        raise ConfigurationError("the oscillating problem needs eta")
    if integrand.dimension_m != spec.dimension_m:
        raise ConfigurationError("integrand and domain dimensions differ")
    if not integrand.is_analytic:
        raise ConfigurationError("Newton solves need an analytic (strictly convex, C2) integrand")
    if omega_seed is not None:
        medium = medium.with_seed(omega_seed)
    mesh = Mesh(spec)
    labels = _cell_labels(spec, mesh, medium)
    rows = integrand.phase_index(np.asarray(medium.phase_labels, dtype=object))
    row_of_label = dict(zip(medium.phase_labels, rows))
    material = Material(integrand, np.array([row_of_label[lab] for lab in labels]))
    p = integrand.exponent_p
    tol = _default_tolerance(p) if tolerance is None else tolerance
    x0 = None
    if p != 2.0:
        quad = Integrand.power_law(2.0, dict(zip(integrand.labels, integrand._alpha)),
                                   integrand.dimension_m)
        warm = _solve(spec, Material(quad, material.phase_index), mesh, p=2.0,
                      tolerance=1e-10, max_iter=5, merit="energy", raise_on_failure=False)
        x0 = warm.u.ravel()[mesh.interior]
    return _solve(spec, material, mesh, p=p, tolerance=tol, max_iter=max_iter,
                  merit="energy", x0=x0, seed=medium.seed, cell_labels=labels,
                  raise_on_failure=raise_on_failure)


def solve_homogenized(spec: ProblemSpec, law, tolerance=None, max_iter=100,
                      raise_on_failure=True) -> SolveResult:
    """Solve with the tabulated homogenized law.

    Newton may step outside the tabulated hull (the law is linearly
    extrapolated meanwhile); the converged gradients must lie inside it.

    In 2-D the interpolated values and fluxes are not an exact Legendre
    pair, so the duality gap cannot drop below the tabulation error; it is
    accepted up to ``m |Q| law.interpolation_error_bound()`` on top of the
    tolerance. The divergence residual keeps the plain tolerance.
    """
    if law.dimension_m != spec.dimension_m:
        raise ConfigurationError("law and domain dimensions differ")
    p = float(law.metadata.get("exponent_p", 2.0))
    m = law.dimension_m
    merit = "energy" if m == 1 else "residual"
    floor = 0.0 if m == 1 else m * spec.volume * law.interpolation_error_bound()
    return solve_with_material(spec, LawMaterial(law), p=p, tolerance=tolerance,
                               max_iter=max_iter, merit=merit,
                               raise_on_failure=raise_on_failure,
                               final_check=law.check_hull, gap_floor=floor)


def dual_certificate(result: SolveResult, spec: ProblemSpec, integrand_or_law) -> float:
    """Primal plus dual objective at the recovered ``(u, sigma)``; ``>= 0``."""
    mesh = result.mesh
    if isinstance(integrand_or_law, Integrand):
        if result.cell_labels is None:
            material = integrand_or_law.on(np.full(mesh.n_cells, integrand_or_law.labels[0],
                                                   dtype=object))
        else:
            material = integrand_or_law.on(result.cell_labels)
    else:
        material = LawMaterial(integrand_or_law)
    b_full = (mesh.mass * spec.rhs(mesh.nodes).ravel())
    u = result.u.ravel()
    E = float(mesh.volumes @ material.energy(mesh.gradient(u)) - b_full @ u)
    return _dual_gap(mesh, material, u, b_full, E)


def a_priori_terms(result: SolveResult, integrand: Integrand):
    """``(lhs, rhs)`` of ``min(c1, cbar1)(|grad u|_p^p + |sigma|_q^q) - c0|Q| <= <u, f>``."""
    c0, c1, _ = integrand.growth_constants
    _, cb1, _ = integrand.dual_growth_constants
    p, q = integrand.exponent_p, integrand.dual_exponent
    vol = result.mesh.volumes
    gp = float(vol @ np.linalg.norm(result.grad_u, axis=-1) ** p)
    sq = float(vol @ np.linalg.norm(result.sigma, axis=-1) ** q)
    Q = float(vol.sum())
    lhs = min(c1, cb1) * (gp + sq) - c0 * Q
    rhs = float((result.mesh.mass * result.rhs.ravel()) @ result.u.ravel())
    return lhs, rhs


def a_priori_bound(spec: ProblemSpec, integrand: Integrand) -> float:
    """``eta``-independent bound on ``|grad u|_p^p + |sigma|_q^q``.

    Combines the energy estimate with Poincare's inequality
    ``|u|_p <= d |grad u|_p`` (``d`` the shortest side of the box).
    """
    c0, c1, _ = integrand.growth_constants
    _, cb1, _ = integrand.dual_growth_constants
    p, q = integrand.exponent_p, integrand.dual_exponent
    cmin = min(c1, cb1)
    mesh = Mesh(spec)
    f = spec.rhs(mesh.nodes).ravel()
    fq = float((mesh.mass @ np.abs(f) ** q) ** (1.0 / q))
    Q = spec.volume
    d = min(b - a for a, b in spec.domain)
    x_max = max((2 * c0 * Q / cmin) ** (1.0 / p), (2 * fq * d / cmin) ** (1.0 / (p - 1.0)))
    return (c0 * Q + fq * d * x_max) / cmin


def max_error(result: SolveResult, exact: Callable) -> float:
    """Max of ``|u_h - u|`` at nodes and at cell centroids (P1 reconstruction)."""
    mesh = result.mesh
    u = result.u.ravel()
    pts = mesh.nodes.reshape(-1, mesh.m)
    e_nodes = np.abs(u - exact(pts if mesh.m > 1 else pts[:, 0]))
    uc = u[mesh.cell_vertices].mean(axis=1)
    c = mesh.centres
    e_cells = np.abs(uc - exact(c if mesh.m > 1 else c[:, 0]))
    return float(max(e_nodes.max(), e_cells.max()))


def l2_difference(a: SolveResult, b) -> float:
    """Discrete ``L2(Q)`` norm of ``u_a - u_b`` (lumped mass)."""
    ub = b.u if isinstance(b, SolveResult) else np.asarray(b)
    d = (a.u - ub).ravel()
    return float(np.sqrt(a.mesh.mass @ (d * d)))
