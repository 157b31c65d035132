"""Phase-indexed convex energy densities with p-growth.

Three families are provided:

``PowerLaw``
    ``phi(xi, theta) = a(theta) |xi|^p / p``
``TwoPhaseQuadratic``
    ``phi(xi, theta) = a(theta) |xi|^2`` (the chess-board form; any number of
    phases is accepted, the name refers to the classical two-phase example)
``TabulatedConvex``
    a user supplied convex curve per phase, sampled on a common grid and
    interpolated piecewise linearly (m = 1 only)

Both analytic kinds are written internally as ``alpha |xi|^p / p`` with
``alpha = a`` (power law) or ``alpha = 2a`` (quadratic), which gives closed
forms for the gradient, Hessian and conjugate
``phi*(s) = alpha^(1 - p') |s|^p' / p'``.

Vector arguments carry the spatial dimension on the last axis. For ``m = 1``
plain scalars (or arrays without a trailing axis of length one) are accepted
and results come back without the trailing axis.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from types import MappingProxyType
from typing import Any, Mapping

import numpy as np

from .errors import ConfigurationError, GridTooSmallError

__all__ = [
    "Kind",
    "Integrand",
    "ConjugatePair",
    "GrowthReport",
    "Material",
    "dual_exponent",
    "transfer_growth",
    "midpoint_convexity_gap",
]


class Kind(str, Enum):
    POWER_LAW = "PowerLaw"
    TWO_PHASE_QUADRATIC = "TwoPhaseQuadratic"
    TABULATED_CONVEX = "TabulatedConvex"


def dual_exponent(p: float) -> float:
    return p / (p - 1.0)


def transfer_growth(c0: float, c1: float, c2: float, p: float) -> tuple[float, float, float]:
    """Growth constants of the conjugate from those of the primal density.

    If ``-c0 + c1|x|^p <= phi <= c0 + c2|x|^p`` then
    ``-c0 + cb1|s|^q <= phi* <= c0 + cb2|s|^q`` with ``q = p/(p-1)`` and
    ``cb_i = (p c_j)^(1-q) / q``, the upper primal constant feeding the lower
    dual one and vice versa. Both follow from conjugating ``c |x|^p`` and the
    order reversal of conjugation.
    """
    q = dual_exponent(p)
    cb1 = (p * c2) ** (1.0 - q) / q
    cb2 = (p * c1) ** (1.0 - q) / q
    return c0, cb1, cb2


def _norm(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


@dataclass(frozen=True)
class GrowthReport:
    holds: bool
    witnessed_constants: dict
    declared_constants: dict
    offending: tuple | None = None  # (envelope name, point, value, bound)


@dataclass(frozen=True)
class ConjugatePair:
    primal: "Integrand"
    dual_growth_constants: tuple[float, float, float]
    dual_exponent: float


@dataclass(frozen=True, eq=False)
class Integrand:
    kind: Kind
    exponent_p: float
    phase_params: Mapping[Any, Any]
    dimension_m: int = 1
    growth_constants: tuple[float, float, float] | None = None
    table_grid: np.ndarray | None = field(default=None, compare=False)

    # -- construction -----------------------------------------------------
    @classmethod
    def power_law(cls, p, coefficients, dimension_m=1, growth_constants=None):
        """``a(theta)|xi|^p / p`` with ``coefficients = {theta: a}``."""
        return cls(Kind.POWER_LAW, float(p), dict(coefficients), dimension_m,
                   growth_constants)

    @classmethod
    def quadratic(cls, coefficients, dimension_m=1, growth_constants=None):
        """``a(theta)|xi|^2`` with ``coefficients = {theta: a}``."""
        return cls(Kind.TWO_PHASE_QUADRATIC, 2.0, dict(coefficients),
                   dimension_m, growth_constants)

    @classmethod
    def tabulated(cls, grid, values, p=2.0, growth_constants=None):
        """Piecewise-linear convex curves, ``values = {theta: samples on grid}``."""
        grid = np.asarray(grid, dtype=float)
        params = {k: np.asarray(v, dtype=float) for k, v in values.items()}
        return cls(Kind.TABULATED_CONVEX, float(p), params, 1, growth_constants,
                   table_grid=grid)

    def __post_init__(self):
        kind = Kind(self.kind)
        object.__setattr__(self, "kind", kind)
        if not 1.0 < self.exponent_p < np.inf:
            raise ConfigurationError(f"exponent p must lie in (1, inf), got {self.exponent_p}")
        if kind is Kind.TWO_PHASE_QUADRATIC and self.exponent_p != 2.0:
            raise ConfigurationError("TwoPhaseQuadratic has p = 2")
        if self.dimension_m < 1:
            raise ConfigurationError("dimension_m must be positive")
        if not self.phase_params:
            raise ConfigurationError("at least one phase is required")
        labels = tuple(self.phase_params)
        object.__setattr__(self, "phase_params", MappingProxyType(dict(self.phase_params)))
        object.__setattr__(self, "_labels", labels)
        object.__setattr__(self, "_index", {lab: i for i, lab in enumerate(labels)})

        if kind is Kind.TABULATED_CONVEX:
            self._validate_table()
        else:
            a = np.array([float(self.phase_params[k]) for k in labels])
            if np.any(~np.isfinite(a)) or np.any(a <= 0):
                raise ConfigurationError("phase coefficients must be positive and finite")
            alpha = 2.0 * a if kind is Kind.TWO_PHASE_QUADRATIC else a
            object.__setattr__(self, "_alpha", alpha)

        if self.growth_constants is None:
            object.__setattr__(self, "growth_constants", self._default_growth())
        else:
            gc = tuple(float(c) for c in self.growth_constants)
            if len(gc) != 3 or min(gc) <= 0:
                raise ConfigurationError("growth constants (c0, c1, c2) must all be > 0")
            object.__setattr__(self, "growth_constants", gc)

    def _validate_table(self):
        if self.dimension_m != 1:
            raise ConfigurationError("TabulatedConvex supports m = 1 only")
        grid = self.table_grid
        if grid is None or grid.ndim != 1 or grid.size < 3 or np.any(np.diff(grid) <= 0):
            raise ConfigurationError("table grid must be strictly increasing with >= 3 nodes")
        vals = np.stack([np.asarray(self.phase_params[k], float) for k in self._labels])
        if vals.shape[1] != grid.size:
            raise ConfigurationError("every phase table must match the grid length")
        slopes = np.diff(vals, axis=1) / np.diff(grid)
        scale = np.max(np.abs(slopes)) + 1.0
        if np.any(np.diff(slopes, axis=1) < -1e-10 * scale):
            raise ConfigurationError("tabulated values are not convex")
        object.__setattr__(self, "_table", vals)
        object.__setattr__(self, "_slopes", slopes)

    def _default_growth(self):
        c0, p = 1.0, self.exponent_p
        if self.kind is Kind.TABULATED_CONVEX:
            r = np.abs(self.table_grid)
            keep = r > 1e-12
            ratio_lo = (self._table[:, keep] + c0) / r[keep] ** p
            ratio_hi = (self._table[:, keep] - c0) / r[keep] ** p
            c1 = max(float(ratio_lo.min()), 1e-12)
            c2 = max(float(ratio_hi.max()), c1)
            return (c0, c1, c2)
        return (c0, float(self._alpha.min() / p), float(self._alpha.max() / p))

    # -- helpers ----------------------------------------------------------
    @property
    def labels(self) -> tuple:
        return self._labels

    @property
    def is_analytic(self) -> bool:
        return self.kind is not Kind.TABULATED_CONVEX

    @property
    def dual_exponent(self) -> float:
        return dual_exponent(self.exponent_p)

    @property
    def dual_growth_constants(self) -> tuple[float, float, float]:
        return transfer_growth(*self.growth_constants, self.exponent_p)

    def conjugate_pair(self) -> ConjugatePair:
        return ConjugatePair(self, self.dual_growth_constants, self.dual_exponent)

    def phase_index(self, theta) -> np.ndarray:
        """Map phase labels (scalar or array) to row indices of the phase table."""
        arr = np.asarray(theta)
        if arr.ndim == 0:
            key = arr.item()
            if key not in self._index:
                raise ConfigurationError(f"unknown phase label {key!r}; known: {self._labels}")
            return np.asarray(self._index[key])
        uniq, inv = np.unique(arr, return_inverse=True)
        rows = []
        for u in uniq:
            key = u.item() if hasattr(u, "item") else u
            if key not in self._index:
                raise ConfigurationError(f"unknown phase label {key!r}; known: {self._labels}")
            rows.append(self._index[key])
        return np.asarray(rows, dtype=np.intp)[inv].reshape(arr.shape)

    def coefficient(self, theta):
        """Internal ``alpha`` (analytic kinds) for the given phase(s)."""
        return self._alpha[self.phase_index(theta)]

    def _split(self, xi):
        arr = np.asarray(xi, dtype=float)
        if self.dimension_m == 1 and (arr.ndim == 0 or arr.shape[-1] != 1):
            return arr[..., None], True
        if arr.shape[-1] != self.dimension_m:
            raise ConfigurationError(
                f"expected vectors of length {self.dimension_m}, got shape {arr.shape}")
        return arr, False

    def on(self, theta) -> "Material":
        """Bind to a fixed array of phases for fast repeated evaluation."""
        return Material(self, self.phase_index(theta))

    # -- public operations ------------------------------------------------
    def eval(self, xi, theta):
        vec, _ = self._split(xi)
        return self.on(theta).energy(vec)

    def subgradient(self, xi, theta, return_flag=False):
        """Element of the subdifferential; minimal-norm selection at kinks.

        With ``return_flag=True`` also returns a boolean array marking points
        where the subdifferential is multivalued (tabulated kinks only).
        """
        vec, squeeze = self._split(xi)
        g, flag = self.on(theta).flux(vec, return_flag=True)
        if squeeze:
            g = g[..., 0]
        return (g, flag) if return_flag else g

    def conjugate(self, sigma, theta):
        vec, _ = self._split(sigma)
        return self.on(theta).conjugate(vec)

    def conjugate_gradient(self, sigma, theta):
        vec, squeeze = self._split(sigma)
        g = self.on(theta).conjugate_gradient(vec)
        return g[..., 0] if squeeze else g

    def hessian(self, xi, theta):
        vec, _ = self._split(xi)
        return self.on(theta).hessian(vec)

    def fenchel_residual(self, xi, sigma, theta):
        """``phi(xi) + phi*(sigma) - <sigma, xi>``; zero iff sigma is a subgradient."""
        x, _ = self._split(xi)
        s, _ = self._split(sigma)
        mat = self.on(theta)
        return mat.energy(x) + mat.conjugate(s) - np.sum(x * s, axis=-1)

    def check_growth(self, theta, sample_count: int, seed: int = 0) -> GrowthReport:
        """Sample log-spaced shells and verify the primal and dual envelopes.

        Witnessed constants are the tightest values compatible with the
        samples: ``c1 = min (phi + c0)/|xi|^p``, ``c2 = max (phi - c0)/|xi|^p``
        and likewise for the conjugate with exponent ``p'``.
        """
        if sample_count < 1:
            raise ConfigurationError("sample_count must be >= 1")
        c0, c1, c2 = self.growth_constants
        _, cb1, cb2 = self.dual_growth_constants
        p, q = self.exponent_p, self.dual_exponent
        m = self.dimension_m
        rng = np.random.default_rng(seed)

        if self.kind is Kind.TABULATED_CONVEX:
            r_max = float(np.min(np.abs(self.table_grid[[0, -1]])))
            idx = self.phase_index(theta)
            s_max = float(min(abs(self._slopes[idx, 0]), abs(self._slopes[idx, -1])))
        else:
            r_max, s_max = 1e3, 1e3
        radii = np.geomspace(1e-3, r_max, sample_count)
        s_radii = np.geomspace(1e-3, max(s_max, 2e-3), sample_count)
        if m == 1:
            dirs = np.where(rng.random(sample_count) < 0.5, -1.0, 1.0)[:, None]
        else:
            dirs = rng.normal(size=(sample_count, m))
            dirs /= _norm(dirs)[:, None]
        xi = radii[:, None] * dirs
        sig = s_radii[:, None] * dirs
        if self.kind is Kind.TABULATED_CONVEX:
            lo, hi = self.table_grid[0], self.table_grid[-1]
            xi = np.clip(xi, lo, hi)
            sl = self._slopes[self.phase_index(theta)]
            sig = np.clip(sig, sl[0], sl[-1])

        mat = self.on(theta)
        phi = mat.energy(xi)
        phis = mat.conjugate(sig)
        rp = _norm(xi) ** p
        sq = _norm(sig) ** q
        witnessed = {
            "c1": float(np.min((phi + c0) / rp)),
            "c2": float(np.max((phi - c0) / rp)),
            "cbar1": float(np.min((phis + c0) / sq)),
            "cbar2": float(np.max((phis - c0) / sq)),
        }
        declared = {"c0": c0, "c1": c1, "c2": c2, "cbar1": cb1, "cbar2": cb2}

        tol = 1e-12
        checks = [
            ("primal lower", xi, phi, -c0 + c1 * rp, phi - (-c0 + c1 * rp)),
            ("primal upper", xi, phi, c0 + c2 * rp, (c0 + c2 * rp) - phi),
            ("dual lower", sig, phis, -c0 + cb1 * sq, phis - (-c0 + cb1 * sq)),
            ("dual upper", sig, phis, c0 + cb2 * sq, (c0 + cb2 * sq) - phis),
        ]
        for name, pts, val, bound, slack in checks:
            scale = tol * (1.0 + np.abs(bound))
            bad = np.flatnonzero(slack < -scale)
            if bad.size:
                k = bad[np.argmin(slack[bad])]
                pt = pts[k, 0] if m == 1 else pts[k]
                return GrowthReport(False, witnessed, declared,
                                    (name, pt, float(val[k]), float(bound[k])))
        return GrowthReport(True, witnessed, declared)


class Material:
    """An integrand bound to a fixed array of phase indices.

    All array arguments have shape ``phases.shape + (m,)``.
    """

    def __init__(self, integrand: Integrand, phase_index):
        self.integrand = integrand
        self.phase_index = np.asarray(phase_index)
        if integrand.is_analytic:
            self.alpha = integrand._alpha[self.phase_index]

    @property
    def p(self):
        return self.integrand.exponent_p

    # analytic kinds ----------------------------------------------------
    def energy(self, g):
        if not self.integrand.is_analytic:
            return self._tab_eval(g[..., 0])
        p = self.p
        if p == 2.0:
            return 0.5 * self.alpha * np.sum(g * g, axis=-1)
        return self.alpha * _norm(g) ** p / p

    def flux(self, g, return_flag=False):
        if not self.integrand.is_analytic:
            s, flag = self._tab_subgradient(g[..., 0])
            s = s[..., None]
        else:
            p = self.p
            if p == 2.0:
                s = self.alpha[..., None] * g
            else:
                r = _norm(g)
                with np.errstate(divide="ignore", invalid="ignore"):
                    w = np.where(r > 0, r ** (p - 2.0), 0.0)
                s = (self.alpha * w)[..., None] * g
            flag = np.zeros(s.shape[:-1], dtype=bool)
        return (s, flag) if return_flag else s

    def hessian(self, g, floor=1e-300):
        """Second derivative, shape ``(..., m, m)``.

        For ``p < 2`` the Hessian blows up at the origin; ``|g|`` is floored to
        keep it finite.
        """
        if not self.integrand.is_analytic:
            raise ConfigurationError(
                "Newton solves need an analytic (strictly convex, C2) integrand")
        p = self.p
        m = g.shape[-1]
        eye = np.eye(m)
        if p == 2.0:
            return self.alpha[..., None, None] * np.broadcast_to(eye, g.shape[:-1] + (m, m))
        r = np.maximum(_norm(g), floor)
        unit = g / r[..., None]
        outer = unit[..., :, None] * unit[..., None, :]
        return (self.alpha * r ** (p - 2.0))[..., None, None] * (eye + (p - 2.0) * outer)

    def conjugate(self, s):
        if not self.integrand.is_analytic:
            return self._tab_conjugate(s[..., 0])
        p = self.p
        q = dual_exponent(p)
        if p == 2.0:
            return 0.5 * np.sum(s * s, axis=-1) / self.alpha
        return self.alpha ** (1.0 - q) * _norm(s) ** q / q

    def conjugate_gradient(self, s):
        if not self.integrand.is_analytic:
            raise ConfigurationError("conjugate gradient is only available in closed form")
        p = self.p
        q = dual_exponent(p)
        r = _norm(s)
        with np.errstate(divide="ignore", invalid="ignore"):
            w = np.where(r > 0, r ** (q - 2.0), 0.0)
        return (self.alpha ** (1.0 - q) * w)[..., None] * s

    # tabulated kind ----------------------------------------------------
    def _tab_rows(self, x):
        idx = np.broadcast_to(self.phase_index, np.shape(x))
        return idx

    def _tab_eval(self, x):
        it = self.integrand
        grid = it.table_grid
        x = np.asarray(x, float)
        if np.any(x < grid[0] - 1e-12) or np.any(x > grid[-1] + 1e-12):
            raise ConfigurationError(
                f"tabulated integrand queried outside [{grid[0]}, {grid[-1]}]")
        rows = self._tab_rows(x)
        out = np.empty(np.shape(x))
        for r in np.unique(rows):
            mask = rows == r
            out[mask] = np.interp(x[mask], grid, it._table[r])
        return out

    def _tab_subgradient(self, x):
        it = self.integrand
        grid, slopes = it.table_grid, it._slopes
        x = np.asarray(x, float)
        if np.any(x < grid[0] - 1e-12) or np.any(x > grid[-1] + 1e-12):
            raise ConfigurationError(
                f"tabulated integrand queried outside [{grid[0]}, {grid[-1]}]")
        rows = self._tab_rows(x)
        n = grid.size
        j = np.clip(np.searchsorted(grid, x, side="right") - 1, 0, n - 2)
        out = slopes[rows, j]
        # node detection: nearest grid node within a relative tolerance
        k = np.clip(np.rint(np.interp(x, grid, np.arange(n))).astype(int), 0, n - 1)
        h = np.min(np.diff(grid))
        at_node = np.abs(x - grid[k]) <= 1e-9 * h
        interior = at_node & (k > 0) & (k < n - 1)
        left = slopes[rows, np.clip(k - 1, 0, n - 2)]
        right = slopes[rows, np.clip(k, 0, n - 2)]
        kink = interior & (right - left > 1e-12 * (1 + np.abs(right)))
        sel = np.clip(0.0, left, right)
        out = np.where(kink, sel, out)
        out = np.where(at_node & (k == n - 1), slopes[rows, n - 2], out)
        return out, kink

    def _tab_conjugate(self, s):
        """Max over grid nodes; refuse when the sup is not bracketed."""
        it = self.integrand
        grid, table, slopes = it.table_grid, it._table, it._slopes
        s = np.asarray(s, float)
        rows = self._tab_rows(s)
        out = np.empty(np.shape(s))
        for r in np.unique(rows):
            mask = rows == r
            sv = s[mask]
            cand = sv[:, None] * grid[None, :] - table[r][None, :]
            out[mask] = cand.max(axis=1)
            tol = 1e-12 * (1 + np.abs(sv))
            lo_bad = sv < slopes[r, 0] - tol
            hi_bad = sv > slopes[r, -1] + tol
            if np.any(lo_bad | hi_bad):
                if np.any(hi_bad):
                    worst = float(sv[hi_bad].max())
                    edge, slope = grid[-1], slopes[r, -1]
                else:
                    worst = float(sv[lo_bad].min())
                    edge, slope = grid[0], slopes[r, 0]
                required = _required_radius(abs(edge), slope, worst, it.exponent_p)
                raise GridTooSmallError(
                    f"Legendre transform at sigma={worst:g} is not bracketed by the "
                    f"table (edge slope {slope:g}); extend the grid to radius >= "
                    f"{required:.4g}", required)
        return out


def _required_radius(radius, edge_slope, sigma, p):
    """Radius where a p-growth continuation of the edge slope reaches ``sigma``."""
    if edge_slope == 0 or np.sign(edge_slope) != np.sign(sigma):
        return 2.0 * radius
    return radius * (abs(sigma) / abs(edge_slope)) ** (1.0 / (p - 1.0))


def midpoint_convexity_gap(fun, points_a, points_b, t) -> np.ndarray:
    """``t f(a) + (1-t) f(b) - f(t a + (1-t) b)``; nonnegative for convex ``f``."""
    a = np.asarray(points_a, float)
    b = np.asarray(points_b, float)
    t = np.asarray(t, float)
    tt = t[..., None] if a.ndim > t.ndim else t
    return t * fun(a) + (1 - t) * fun(b) - fun(tt * a + (1 - tt) * b)
