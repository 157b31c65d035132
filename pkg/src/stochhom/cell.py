"""Cell (auxiliary) problem on a periodic representative volume element.

For a fixed mean gradient ``xi`` the corrector ``v = grad w`` of an
``L``-periodic potential ``w`` minimizes the averaged energy
``mean phi(xi + v, theta)``; the flux is ``z = dphi(xi + v)``. At the optimum
``z`` is divergence free, and the averaged energy is the sample estimate of
the homogenized density ``phi0(xi)``.

Every solve carries a duality-gap certificate: the flux is projected onto
the exactly divergence-free fields (an FFT Poisson solve) and the gap

    mean[phi(xi + v) + phi*(z_sol) - xi . z_sol]

is nonnegative by weak duality and vanishes at the optimum.
"""
from __future__ import annotations

import csv
import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
import scipy.sparse as sp
from scipy import optimize, stats

from . import _ops
from ._newton import damped_newton
from .errors import ConfigurationError, ConvergenceError, GridTooSmallError, HullError
from .integrands import Integrand, Material
from .media import RandomMedium, RealizationField, sample_realization

__all__ = [
    "CellProblemConfig",
    "CorrectorSolution",
    "Estimate",
    "HomogenizedLaw",
    "MeanFluxReport",
    "rve_realization",
    "solve_corrector",
    "estimate_phi0",
    "estimate_psi0",
    "tabulate_law",
    "check_mean_flux_law",
    "discrete_weyl_orthogonality",
    "potential_field",
    "solenoidal_field",
]

_NODE_BUDGET = {1: 10 ** 7, 2: 10 ** 6}


@dataclass(frozen=True)
class CellProblemConfig:
    xi: tuple
    torus_cells: int = 16
    nodes_per_cell: int = 1
    realization_count: int = 8
    solver_tolerance: float = 1e-10
    max_iter: int = 60

    def __post_init__(self):
        xi = tuple(float(x) for x in np.atleast_1d(np.asarray(self.xi, dtype=float)))
        object.__setattr__(self, "xi", xi)
        if len(xi) not in (1, 2):
            raise ConfigurationError("xi must be a 1- or 2-vector")
        if self.torus_cells < 2:
            raise ConfigurationError("torus_cells (L) must be >= 2")
        if self.nodes_per_cell < 1 or self.realization_count < 1:
            raise ConfigurationError("nodes_per_cell and realization_count must be >= 1")
        total = (self.torus_cells * self.nodes_per_cell) ** len(xi)
        if total > _NODE_BUDGET[len(xi)]:
            raise ConfigurationError(
                f"{total} torus nodes exceed the budget of {_NODE_BUDGET[len(xi)]}")

    @property
    def dimension_m(self) -> int:
        return len(self.xi)

    @property
    def nodes_per_side(self) -> int:
        return self.torus_cells * self.nodes_per_cell

    def with_xi(self, xi) -> "CellProblemConfig":
        return replace(self, xi=tuple(np.atleast_1d(np.asarray(xi, dtype=float))))


def rve_realization(medium: RandomMedium, config: CellProblemConfig, index: int = 0
                    ) -> RealizationField:
    """The ``index``-th RVE window; distinct indices are disjoint (independent)."""
    L, m = config.torus_cells, medium.dimension_m
    if m != config.dimension_m:
        raise ConfigurationError("medium and xi dimensions differ")
    window = [(index * L, (index + 1) * L)] + [(0, L)] * (m - 1)
    return sample_realization(medium, window, 1.0, 1.0 / config.nodes_per_cell,
                              endpoint=False)


@dataclass
class CorrectorSolution:
    """Cell corrector on one torus window.

    ``psi0_sample`` is the dual cell value ``xi . <z~> - <phi*(z~)>`` of the
    divergence-free projection ``z~`` of the flux; it equals ``phi0_sample``
    when the gap is zero.
    """
    xi: np.ndarray
    w: np.ndarray
    v: np.ndarray
    z: np.ndarray
    phi0_sample: float
    psi0_sample: float
    duality_gap: float
    mean_flux: np.ndarray
    divergence_residual: float
    converged: bool
    iterations: int
    grid_spacing: float
    seed: int
    eta: float
    material: Material = field(repr=False)

    def nodewise_fenchel(self) -> np.ndarray:
        g = self.xi + self.v
        return self.material.energy(g) + self.material.conjugate(self.z) - np.sum(g * self.z, axis=-1)


def _material_for(realization: RealizationField, integrand: Integrand) -> Material:
    row_of_label = integrand.phase_index(np.asarray(realization.labels, dtype=object))
    return Material(integrand, row_of_label[realization.phase_index])


def _certificate(material, xi, v, z, h):
    """Gap, psi0 sample and projected flux for a corrector/flux pair."""
    zs = _ops.project_solenoidal(z, h)
    g = xi + v
    fenchel = material.energy(g) + material.conjugate(zs) - np.sum(g * zs, axis=-1)
    gap = float(np.mean(fenchel) + np.mean(np.sum(v * zs, axis=-1)))
    psi0 = float(xi @ zs.reshape(-1, xi.size).mean(axis=0) - np.mean(material.conjugate(zs)))
    return gap, psi0, zs


def solve_corrector(config: CellProblemConfig, realization: RealizationField,
                    integrand: Integrand, raise_on_failure: bool = True
                    ) -> CorrectorSolution:
    """Minimize the discrete cell energy over periodic potentials.

    Damped Newton from ``w = 0``; for quadratic densities the first step is
    the exact linear solve. Iteration stops once both the duality gap and the
    relative divergence defect ``h max|div z| / max|z|`` are at most
    ``config.solver_tolerance``.
    """
    m = integrand.dimension_m
    if realization.dimension_m != m or config.dimension_m != m:
        raise ConfigurationError("integrand, realization and xi dimensions differ")
    shape = realization.shape
    if shape != (config.nodes_per_side,) * m:
        raise ConfigurationError(
            f"realization shape {shape} does not cover the {config.nodes_per_side}^{m} torus")
    xi = np.asarray(config.xi, dtype=float)
    h = realization.grid_spacing / realization.eta
    material = _material_for(realization, integrand)
    flat = Material(integrand, material.phase_index.ravel())
    n = int(np.prod(shape))

    D = _ops.gradient_matrix(shape, h)[:, 1:].tocsr()
    DT = D.T.tocsr()

    def field_of(x):
        return xi + (D @ x).reshape(m, n).T

    def energy(x):
        return float(np.mean(flat.energy(field_of(x))))

    def gradient(x):
        return DT @ flat.flux(field_of(x)).T.ravel() / n

    def hessian(x):
        Hn = flat.hessian(field_of(x))
        H = DT @ _ops.block_hessian(Hn) @ D / n
        reg = 1e-13 * (abs(H.diagonal()).max() + 1e-300)
        return H + reg * sp.identity(n - 1, format="csr")

    def unpack(x):
        w = np.concatenate([[0.0], x]).reshape(shape)
        w -= w.mean()
        v = _ops.grad(w, h)
        return w, v, material.flux(xi + v)

    def stop(x):
        _, v, z = unpack(x)
        gap = _certificate(material, xi, v, z, h)[0]
        # the gap is quadratic in the equilibrium defect, so check the defect too
        defect = np.max(np.abs(_ops.divergence(z, h))) * h / (np.max(np.abs(z)) + 1e-300)
        return gap <= config.solver_tolerance and defect <= config.solver_tolerance, gap

    res = damped_newton(energy, gradient, hessian, np.zeros(n - 1), stop,
                        max_iter=config.max_iter)
    w, v, z = unpack(res.x)
    gap, psi0, _ = _certificate(material, xi, v, z, h)
    sol = CorrectorSolution(
        xi=xi, w=w, v=v, z=z,
        phi0_sample=float(np.mean(material.energy(xi + v))),
        psi0_sample=psi0,
        duality_gap=gap,
        mean_flux=z.reshape(-1, m).mean(axis=0),
        divergence_residual=float(np.max(np.abs(_ops.divergence(z, h)))),
        converged=res.converged,
        iterations=res.iterations,
        grid_spacing=realization.grid_spacing,
        seed=realization.seed,
        eta=realization.eta,
        material=material,
    )
    if not res.converged and raise_on_failure:
        raise ConvergenceError(
            f"corrector did not converge in {config.max_iter} iterations "
            f"(gap {gap:.3e}, tolerance {config.solver_tolerance:.1e})", gap, sol)
    return sol


# -- estimators ------------------------------------------------------------

def _halfwidth(samples, axis=0):
    samples = np.asarray(samples, dtype=float)
    k = samples.shape[axis]
    if k < 2:
        return np.full(samples.shape[1:], np.nan) if samples.ndim > 1 else float("nan")
    hw = stats.t.ppf(0.975, k - 1) * samples.std(axis=axis, ddof=1) / np.sqrt(k)
    return hw if samples.ndim > 1 else float(hw)


def _pmap(fn, items, workers):
    if workers and workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            return list(ex.map(fn, items))
    return [fn(i) for i in items]


@dataclass
class Estimate:
    """Realization average with a Student-t 95% confidence half-width."""

    mean: float
    halfwidth: float
    samples: np.ndarray
    mean_flux: np.ndarray | None = None
    flux_halfwidth: np.ndarray | None = None
    gaps: np.ndarray | None = None
    excluded: list = field(default_factory=list)  # (realization index, gap)
    solutions: list | None = None


def estimate_phi0(config: CellProblemConfig, medium: RandomMedium, integrand: Integrand,
                  xi=None, workers: int = 1, keep_solutions: bool = False) -> Estimate:
    """Average ``phi0`` samples over ``R`` disjoint RVE windows of ``medium``."""
    if xi is not None:
        config = config.with_xi(xi)

    def one(k):
        return solve_corrector(config, rve_realization(medium, config, k), integrand,
                               raise_on_failure=False)

    sols = _pmap(one, range(config.realization_count), workers)
    good = [s for s in sols if s.converged]
    excluded = [(k, s.duality_gap) for k, s in enumerate(sols) if not s.converged]
    if not good:
        raise ConvergenceError("no corrector converged", max(s.duality_gap for s in sols))
    phi = np.array([s.phi0_sample for s in good])
    flux = np.array([s.mean_flux for s in good])
    return Estimate(
        mean=float(phi.mean()), halfwidth=_halfwidth(phi), samples=phi,
        mean_flux=flux.mean(axis=0), flux_halfwidth=_halfwidth(flux),
        gaps=np.array([s.duality_gap for s in sols]), excluded=excluded,
        solutions=sols if keep_solutions else None)


def _dual_solve(config, realization, integrand, zeta):
    """``min mean phi*(z)`` over divergence-free ``z`` with mean ``zeta``.

    Realized through the primal: find ``xi`` whose corrector has mean flux
    ``zeta``, then read ``phi*`` off the projected flux.
    """
    zeta = np.atleast_1d(np.asarray(zeta, dtype=float))
    cache = {}

    def solve(x):
        x = np.atleast_1d(np.asarray(x, dtype=float))
        key = tuple(x)
        if key not in cache:
            cache[key] = solve_corrector(config.with_xi(x), realization, integrand,
                                         raise_on_failure=False)
        return cache[key]

    alpha = float(np.mean(integrand._alpha)) if integrand.is_analytic else 1.0
    p = integrand.exponent_p
    r = np.linalg.norm(zeta)
    guess = zeta * (r / alpha) ** (1.0 / (p - 1.0)) / r if r > 0 else zeta * 0.0

    if zeta.size == 1:
        def f(x):
            return float(solve(x).mean_flux[0] - zeta[0])

        x0 = float(guess[0])
        f0 = f(x0)
        if f0 == 0.0:
            xs = x0
        else:
            direction = -np.sign(f0)
            step = max(abs(x0), 1.0) * 0.5
            x1 = x0 + direction * step
            while np.sign(f(x1)) == np.sign(f0):
                step *= 2.0
                x1 = x0 + direction * step
                if step > 1e12:
                    raise ConvergenceError("could not bracket the dual mean flux", np.inf)
            lo, hi = sorted((x0, x1))
            xs = optimize.brentq(f, lo, hi, xtol=1e-14 * max(1.0, abs(x0)), rtol=1e-15)
        xs = np.array([xs])
    else:
        def obj(x):
            s = solve(x)
            return s.phi0_sample - float(zeta @ x), s.mean_flux - zeta

        out = optimize.minimize(obj, guess, jac=True, method="BFGS",
                                options={"gtol": 1e-11, "maxiter": 200})
        xs = out.x
    sol = solve(xs)
    h = realization.grid_spacing / realization.eta
    zs = _ops.project_solenoidal(sol.z, h)
    # first-order correction for the residual mismatch of the mean flux
    psi = float(np.mean(sol.material.conjugate(zs)) + xs @ (zeta - sol.mean_flux))
    return psi, sol


def estimate_psi0(config: CellProblemConfig, medium: RandomMedium, integrand: Integrand,
                  zeta, workers: int = 1) -> Estimate:
    """Average of the per-window dual cell values at mean flux ``zeta``."""
    def one(k):
        return _dual_solve(config, rve_realization(medium, config, k), integrand, zeta)

    out = _pmap(one, range(config.realization_count), workers)
    good = [(psi, s) for psi, s in out if s.converged]
    excluded = [(k, s.duality_gap) for k, (_, s) in enumerate(out) if not s.converged]
    if not good:
        raise ConvergenceError("no dual cell solve converged", np.inf)
    psi = np.array([g[0] for g in good])
    return Estimate(mean=float(psi.mean()), halfwidth=_halfwidth(psi), samples=psi,
                    gaps=np.array([s.duality_gap for _, s in out]), excluded=excluded)


# -- homogenized law -------------------------------------------------------

def _locate(axis, x):
    i = np.clip(np.searchsorted(axis, x, side="right") - 1, 0, axis.size - 2)
    d = axis[i + 1] - axis[i]
    return i, (x - axis[i]) / d, d


def _multilinear(axes, values, pts):
    """Piecewise (bi)linear interpolation with linear extrapolation.

    ``values`` has shape ``grid + (k,)``; returns ``(vals (..., k),
    grads (..., k, m))``.
    """
    if len(axes) == 1:
        i, t, d = _locate(axes[0], pts[..., 0])
        v0, v1 = values[i], values[i + 1]
        tt = t[..., None]
        return v0 * (1 - tt) + v1 * tt, ((v1 - v0) / d[..., None])[..., None]
    i, tx, dx = _locate(axes[0], pts[..., 0])
    j, ty, dy = _locate(axes[1], pts[..., 1])
    v00, v10 = values[i, j], values[i + 1, j]
    v01, v11 = values[i, j + 1], values[i + 1, j + 1]
    tx, ty = tx[..., None], ty[..., None]
    val = v00 * (1 - tx) * (1 - ty) + v10 * tx * (1 - ty) + v01 * (1 - tx) * ty + v11 * tx * ty
    gx = ((v10 - v00) * (1 - ty) + (v11 - v01) * ty) / dx[..., None]
    gy = ((v01 - v00) * (1 - tx) + (v11 - v10) * tx) / dy[..., None]
    return val, np.stack([gx, gy], axis=-1)


@dataclass
class HomogenizedLaw:
    """``phi0`` and its mean-flux gradient tabulated on a tensor grid of ``xi``."""

    axes: tuple
    phi0: np.ndarray
    dphi0: np.ndarray
    phi0_halfwidth: np.ndarray
    dphi0_halfwidth: np.ndarray
    gaps: np.ndarray
    metadata: dict = field(default_factory=dict)
    unconverged: list = field(default_factory=list)

    def __post_init__(self):
        self.axes = tuple(np.asarray(a, dtype=float) for a in self.axes)
        for a in self.axes:
            if a.ndim != 1 or a.size < 2 or np.any(np.diff(a) <= 0):
                raise ConfigurationError("law axes must be strictly increasing with >= 2 nodes")

    @classmethod
    def from_function(cls, axes, phi, flux, metadata=None):
        """Tabulate an exactly known law (no sampling error)."""
        axes = tuple(np.atleast_1d(np.asarray(a, dtype=float)) for a in axes)
        pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)
        vals = np.asarray(phi(pts), dtype=float)
        grads = np.asarray(flux(pts), dtype=float).reshape(vals.shape + (len(axes),))
        zeros = np.zeros_like(vals)
        return cls(axes, vals, grads, zeros, np.zeros_like(grads), zeros.copy(),
                   dict(metadata or {}, source="exact"))

    @classmethod
    def quadratic(cls, axes, c, metadata=None):
        """Law ``c |xi|^2`` (e.g. harmonic or arithmetic mean coefficient)."""
        return cls.from_function(axes, lambda x: c * np.sum(x * x, axis=-1),
                                 lambda x: 2 * c * x, metadata)

    @property
    def dimension_m(self) -> int:
        return len(self.axes)

    @property
    def xi_grid(self) -> np.ndarray:
        return np.stack(np.meshgrid(*self.axes, indexing="ij"), axis=-1).reshape(-1, self.dimension_m)

    @property
    def hull(self) -> list:
        return [(float(a[0]), float(a[-1])) for a in self.axes]

    def _as_points(self, xi):
        x = np.asarray(xi, dtype=float)
        if self.dimension_m == 1 and (x.ndim == 0 or x.shape[-1] != 1):
            return x[..., None], True
        return x, False

    def check_hull(self, xi):
        pts, _ = self._as_points(xi)
        for d, (lo, hi) in enumerate(self.hull):
            col = pts[..., d]
            tol = 1e-12 * max(1.0, hi - lo)
            if col.size and (col.min() < lo - tol or col.max() > hi + tol):
                need = (float(min(lo, col.min())), float(max(hi, col.max())))
                raise HullError(
                    f"law queried at xi[{d}] in [{col.min():.6g}, {col.max():.6g}] outside the "
                    f"tabulated [{lo:g}, {hi:g}]; tabulate at least {need[0]:.6g}..{need[1]:.6g}",
                    needed_range=need)

    def phi0_at(self, xi, extrapolate=False):
        pts, _ = self._as_points(xi)
        if not extrapolate:
            self.check_hull(pts)
        return _multilinear(self.axes, self.phi0[..., None], pts)[0][..., 0]

    def flux_at(self, xi, extrapolate=False):
        pts, squeeze = self._as_points(xi)
        if not extrapolate:
            self.check_hull(pts)
        val = _multilinear(self.axes, self.dphi0, pts)[0]
        return val[..., 0] if squeeze else val

    def flux_jacobian(self, xi, extrapolate=False):
        pts, _ = self._as_points(xi)
        if not extrapolate:
            self.check_hull(pts)
        return _multilinear(self.axes, self.dphi0, pts)[1]

    # exact potential of the interpolated flux (m = 1) --------------------
    def _potential_nodes(self):
        ax, s = self.axes[0], self.dphi0[:, 0]
        i0 = int(np.argmin(np.abs(ax)))
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (s[1:] + s[:-1]) * np.diff(ax))])
        return self.phi0[i0] + cum - cum[i0]

    def potential(self, xi):
        """Antiderivative of the piecewise-linear flux (m = 1), anchored at the
        grid node closest to the origin; linearly extrapolated flux beyond."""
        if self.dimension_m != 1:
            raise ConfigurationError("the exact flux potential is defined for m = 1 only")
        ax, s = self.axes[0], self.dphi0[:, 0]
        nodes = self._potential_nodes()
        x = np.asarray(xi, dtype=float)
        i, t, d = _locate(ax, x)
        tt = t * d
        return nodes[i] + s[i] * tt + 0.5 * (s[i + 1] - s[i]) / d * tt * tt

    def potential_conjugate(self, sigma):
        """Exact conjugate of :meth:`potential` (requires increasing flux)."""
        ax, s = self.axes[0], self.dphi0[:, 0]
        if np.any(np.diff(s) <= 0):
            raise ConfigurationError("tabulated flux is not strictly increasing")
        sig = np.asarray(sigma, dtype=float)
        i, t, d = _locate(s, sig)
        x = ax[i] + t * (ax[i + 1] - ax[i])
        return sig * x - self.potential(x)

    # numerics on the tabulated values -----------------------------------
    def conjugate(self, zeta):
        """Grid Legendre transform: max over tabulated nodes, refusing edge maxima."""
        z, squeeze = self._as_points(zeta)
        pts = self.xi_grid
        vals = self.phi0.reshape(-1)
        cand = z.reshape(-1, self.dimension_m) @ pts.T - vals[None, :]
        best = cand.argmax(axis=1)
        grid_idx = np.stack(np.unravel_index(best, self.phi0.shape), axis=-1)
        zf = z.reshape(-1, self.dimension_m)
        for d, a in enumerate(self.axes):
            # edge maxima are only valid when the slope condition brackets zeta
            for edge, nb in ((0, 1), (a.size - 1, a.size - 2)):
                on_edge = grid_idx[:, d] == edge
                if not np.any(on_edge):
                    continue
                idx_edge = grid_idx[on_edge].copy()
                idx_nb = idx_edge.copy()
                idx_nb[:, d] = nb
                f_e = self.phi0[tuple(idx_edge.T)]
                f_n = self.phi0[tuple(idx_nb.T)]
                chord = (f_e - f_n) / (a[edge] - a[nb])
                zd = zf[on_edge, d]
                tol = 1e-9 * (1 + np.abs(zd))
                bad = (zd > chord + tol) if edge else (zd < chord - tol)
                if np.any(bad):
                    worst = float(zd[bad][np.argmax(np.abs(zd[bad] - chord[bad]))])
                    need = abs(a[edge]) * 2.0
                    raise GridTooSmallError(
                        f"conjugate at zeta[{d}]={worst:g} is not bracketed by the law "
                        f"grid; extend axis {d} to radius >= {need:g}", need)
        out = cand[np.arange(cand.shape[0]), best].reshape(z.shape[:-1])
        return out

    def interpolation_error_bound(self) -> float:
        """Bound on the grid-conjugate / interpolation error: ``max|d2 phi0| h^2 / 8``."""
        bound = 0.0
        for d, a in enumerate(self.axes):
            if a.size < 3:
                continue
            f = np.moveaxis(self.phi0, d, 0)
            h = np.diff(a)
            slopes = np.diff(f, axis=0) / h.reshape((-1,) + (1,) * (f.ndim - 1))
            curv = np.diff(slopes, axis=0) / (0.5 * (h[1:] + h[:-1])).reshape(
                (-1,) + (1,) * (f.ndim - 1))
            bound = max(bound, float(np.max(np.abs(curv)) * np.max(h) ** 2 / 8.0))
        return bound

    def convexity_audit(self, tol=None):
        """Midpoint convexity of ``phi0`` and monotonicity of the flux along axes.

        Returns ``(passes, worst_second_difference)``; negative second
        differences within twice the confidence half-widths are tolerated.
        """
        worst = np.inf
        ok = True
        hw = np.nan_to_num(self.phi0_halfwidth)
        for d, a in enumerate(self.axes):
            if a.size < 3:
                continue
            f = np.moveaxis(self.phi0, d, 0)
            e = np.moveaxis(hw, d, 0)
            h = np.diff(a).reshape((-1,) + (1,) * (f.ndim - 1))
            # second divided difference scaled to a midpoint-type gap
            gap = (f[2:] * h[:-1] + f[:-2] * h[1:]) / (h[:-1] + h[1:]) - f[1:-1]
            allow = 2.0 * (e[2:] + e[:-2] + e[1:-1]) + (tol if tol is not None else
                                                         1e-12 * (1 + np.abs(f[1:-1])))
            worst = min(worst, float(gap.min()))
            ok &= bool(np.all(gap >= -allow))
            s = np.moveaxis(self.dphi0[..., d], d, 0)
            es = np.moveaxis(np.nan_to_num(self.dphi0_halfwidth[..., d]), d, 0)
            ok &= bool(np.all(np.diff(s, axis=0) >= -2.0 * (es[1:] + es[:-1]) - 1e-12))
        return ok, worst

    def to_csv(self, path) -> Path:
        """Write the table and a ``.meta.json`` sidecar; returns the sidecar path."""
        path = Path(path)
        m = self.dimension_m
        pts = self.xi_grid
        phi = self.phi0.reshape(-1)
        dphi = self.dphi0.reshape(-1, m)
        hw = self.phi0_halfwidth.reshape(-1)
        dhw = self.dphi0_halfwidth.reshape(-1, m)
        gaps = self.gaps.reshape(-1)
        header = ([f"xi_{d + 1}" for d in range(m)] + ["phi0"]
                  + [f"dphi0_{d + 1}" for d in range(m)] + ["phi0_ci"]
                  + [f"dphi0_ci_{d + 1}" for d in range(m)] + ["gap"])
        seed = self.metadata.get("master_seed", self.metadata.get("seed", ""))
        with open(path, "w", newline="") as fh:
            fh.write(f"# master_seed={seed}\n")
            w = csv.writer(fh)
            w.writerow(header)
            for k in range(pts.shape[0]):
                row = list(pts[k]) + [phi[k]] + list(dphi[k]) + [hw[k]] + list(dhw[k]) + [gaps[k]]
                w.writerow([repr(float(x)) for x in row])
        meta = path.with_suffix(".meta.json")
        meta.write_text(json.dumps({"metadata": self.metadata,
                                    "shape": list(self.phi0.shape),
                                    "unconverged": self.unconverged},
                                   indent=2, sort_keys=True, default=str) + "\n")
        return meta

    @classmethod
    def from_csv(cls, path) -> "HomogenizedLaw":
        path = Path(path)
        meta = json.loads(path.with_suffix(".meta.json").read_text())
        shape = tuple(meta["shape"])
        m = len(shape)
        with open(path, newline="") as fh:
            rows = [r for r in csv.reader(line for line in fh if not line.startswith("#"))]
        data = np.array([[float(x) for x in r] for r in rows[1:]])
        pts = data[:, :m]
        axes = tuple(np.unique(pts[:, d]) for d in range(m))
        phi = data[:, m].reshape(shape)
        dphi = data[:, m + 1:2 * m + 1].reshape(shape + (m,))
        hw = data[:, 2 * m + 1].reshape(shape)
        dhw = data[:, 2 * m + 2:3 * m + 2].reshape(shape + (m,))
        gaps = data[:, 3 * m + 2].reshape(shape)
        return cls(axes, phi, dphi, hw, dhw, gaps, meta["metadata"], meta["unconverged"])


def tabulate_law(medium: RandomMedium, integrand: Integrand, xi_grid,
                 config: CellProblemConfig, workers: int = 1) -> HomogenizedLaw:
    """Estimate ``phi0`` and its mean flux at every node of a tensor ``xi`` grid.

    ``xi_grid`` is a 1-D array for ``m = 1`` or a pair of axes for ``m = 2``.
    The same RVE windows are reused at every node (common random numbers), so
    the table is the exact law of the sample-averaged cell problem.
    """
    m = integrand.dimension_m
    axes = (np.asarray(xi_grid, dtype=float),) if m == 1 else tuple(
        np.asarray(a, dtype=float) for a in xi_grid)
    if len(axes) != m:
        raise ConfigurationError("xi grid dimension does not match the integrand")
    shape = tuple(a.size for a in axes)
    pts = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, m)
    ests = _pmap(lambda x: estimate_phi0(config, medium, integrand, xi=x), list(pts), workers)
    phi = np.array([e.mean for e in ests]).reshape(shape)
    hw = np.array([e.halfwidth for e in ests]).reshape(shape)
    dphi = np.array([e.mean_flux for e in ests]).reshape(shape + (m,))
    dhw = np.array([e.flux_halfwidth for e in ests]).reshape(shape + (m,))
    gaps = np.array([np.max(e.gaps) for e in ests]).reshape(shape)
    unconverged = [{"xi": [float(v) for v in pts[k]], "realization": int(r), "gap": float(g)}
                   for k, e in enumerate(ests) for r, g in e.excluded]
    meta = {
        "seed": medium.seed,
        "dimension_m": m,
        "phase_labels": [str(x) for x in medium.phase_labels],
        "phase_probabilities": list(medium.phase_probabilities),
        "torus_shift": list(medium.torus_shift),
        "integrand_kind": integrand.kind.value,
        "exponent_p": integrand.exponent_p,
        "torus_cells": config.torus_cells,
        "nodes_per_cell": config.nodes_per_cell,
        "realization_count": config.realization_count,
        "solver_tolerance": config.solver_tolerance,
    }
    return HomogenizedLaw(axes, phi, dphi, hw, dhw, gaps, meta, unconverged)


@dataclass(frozen=True)
class MeanFluxReport:
    xi: np.ndarray
    mean_flux: np.ndarray
    fenchel_residual: float
    fd_flux: np.ndarray
    fd_mismatch: float
    ci_halfwidth: float
    interpolation_bound: float

    @property
    def tolerance(self) -> float:
        """``2 x (CI half-width + interpolation bound)``."""
        return 2.0 * (self.ci_halfwidth + self.interpolation_bound)


def check_mean_flux_law(law: HomogenizedLaw, corrector, xi) -> MeanFluxReport:
    """Verify that the mean flux at ``xi`` is a subgradient of the tabulated law.

    ``corrector`` is a :class:`CorrectorSolution` or an :class:`Estimate`
    (anything with a ``mean_flux``). Two checks are reported: the Fenchel
    residual against the grid conjugate of the law, and central finite
    differences of the law along each axis.
    """
    x = np.atleast_1d(np.asarray(xi, dtype=float))
    ez = np.atleast_1d(np.asarray(corrector.mean_flux, dtype=float))
    phi = float(law.phi0_at(x))
    resid = phi + float(law.conjugate(ez)) - float(x @ ez)
    fd = np.full(x.size, np.nan)
    for d, a in enumerate(law.axes):
        j = int(np.argmin(np.abs(a - x[d])))
        if 0 < j < a.size - 1 and abs(a[j] - x[d]) < 1e-12 * (1 + abs(x[d])):
            step = min(a[j + 1] - a[j], a[j] - a[j - 1])
        else:
            i = int(np.clip(np.searchsorted(a, x[d]) - 1, 0, a.size - 2))
            step = a[i + 1] - a[i]
        e = np.zeros(x.size)
        e[d] = step
        try:
            fd[d] = (float(law.phi0_at(x + e)) - float(law.phi0_at(x - e))) / (2 * step)
        except HullError:
            pass
    idx = tuple(int(np.argmin(np.abs(a - x[d]))) for d, a in enumerate(law.axes))
    ci = float(np.nan_to_num(law.phi0_halfwidth[idx]))
    ci += float(np.abs(x) @ np.nan_to_num(law.dphi0_halfwidth[idx]))
    fhw = getattr(corrector, "flux_halfwidth", None)
    if fhw is not None:
        ci += float(np.abs(x) @ np.nan_to_num(np.atleast_1d(fhw)))
    mismatch = float(np.nanmax(np.abs(fd - ez))) if np.any(np.isfinite(fd)) else float("nan")
    return MeanFluxReport(x, ez, resid, fd, mismatch, ci, law.interpolation_error_bound())


# -- discrete Weyl decomposition --------------------------------------------

def potential_field(w, h=1.0):
    """Mean-zero discrete potential field ``grad w`` of a periodic scalar ``w``."""
    return _ops.grad(np.asarray(w, dtype=float), h)


def solenoidal_field(psi, h=1.0):
    """Mean-zero discrete divergence-free field built from a stream function.

    On a 1-torus the only such field is zero.
    """
    psi = np.asarray(psi, dtype=float)
    if psi.ndim == 1:
        return np.zeros(psi.shape + (1,))
    if psi.ndim != 2:
        raise ConfigurationError("stream functions are supported on 1- and 2-tori")
    return _ops.rotated_grad(psi, h)


def discrete_weyl_orthogonality(v_fields, z_fields, relative=False) -> float:
    """Largest ``|<z, v>|`` over all pairs (optionally divided by the norms)."""
    worst = 0.0
    for v in v_fields:
        v = np.asarray(v, dtype=float)
        nv = np.linalg.norm(v)
        for z in z_fields:
            z = np.asarray(z, dtype=float)
            ip = abs(float(np.sum(v * z)))
            if relative:
                denom = nv * np.linalg.norm(z)
                ip = ip / denom if denom > 0 else 0.0
            worst = max(worst, ip)
    return worst
