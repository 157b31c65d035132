"""Stationary ergodic random media of chess-board type.

A :class:`RandomMedium` assigns an i.i.d. phase to every unit cell of the
lattice ``Z^m``. The phase of cell ``k`` is a pure function of
``(seed, k)`` obtained from a SplitMix64 hash, so any window can be sampled
out of order and overlapping windows at different scales always agree.

A realization at scale ``eta`` evaluates the phase at point ``x`` as the
phase of lattice cell ``floor(x / eta + torus_shift)``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .errors import AliasingError, ConfigurationError

__all__ = [
    "RandomMedium",
    "RealizationField",
    "ErgodicRecord",
    "sample_realization",
    "ergodic_average",
    "expectation",
    "fit_loglog_slope",
]

_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_SHIFT_SALT = np.uint64(0xD1B54A32D192ED03)
# nodes sitting exactly on a cell face belong to the cell on their right
_FACE_EPS = 1e-9


def _splitmix(x: np.ndarray) -> np.ndarray:
    z = x + _GOLDEN
    z = (z ^ (z >> np.uint64(30))) * _M1
    z = (z ^ (z >> np.uint64(27))) * _M2
    return z ^ (z >> np.uint64(31))


def _hash_cells(seed: int, cells: np.ndarray) -> np.ndarray:
    """Hash integer lattice indices of shape ``(..., m)`` to uint64."""
    cells = np.asarray(cells, dtype=np.int64)
    h = np.full(cells.shape[:-1], np.uint64(seed & 0xFFFFFFFFFFFFFFFF), dtype=np.uint64)
    h = _splitmix(h)
    for d in range(cells.shape[-1]):
        h = _splitmix(h ^ cells[..., d].astype(np.uint64))
    return h


def _to_unit(h: np.ndarray) -> np.ndarray:
    return (h >> np.uint64(11)).astype(np.float64) * (1.0 / 9007199254740992.0)


@dataclass(frozen=True)
class RandomMedium:
    """i.i.d. phase lattice with a master seed and a uniform torus shift."""

    dimension_m: int
    phase_labels: tuple
    phase_probabilities: tuple
    seed: int = 0
    torus_shift: tuple | None = None
    cell_size: float = field(default=1.0, init=False)

    def __post_init__(self):
        if self.dimension_m not in (1, 2):
            raise ConfigurationError("only m = 1 or m = 2 media are supported")
        labels = tuple(self.phase_labels)
        probs = tuple(float(x) for x in self.phase_probabilities)
        if len(labels) == 0 or len(labels) != len(probs):
            raise ConfigurationError("phase labels and probabilities must match in length")
        if len(set(labels)) != len(labels):
            raise ConfigurationError("phase labels must be distinct")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-12:
            raise ConfigurationError("phase probabilities must be >= 0 and sum to 1")
        shift = (0.0,) * self.dimension_m if self.torus_shift is None else tuple(
            float(s) for s in self.torus_shift)
        if len(shift) != self.dimension_m or not all(0.0 <= s < 1.0 for s in shift):
            raise ConfigurationError("torus_shift must be an m-vector in [0, 1)^m")
        if not 0 <= int(self.seed) < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        object.__setattr__(self, "phase_labels", labels)
        object.__setattr__(self, "phase_probabilities", probs)
        object.__setattr__(self, "torus_shift", shift)
        object.__setattr__(self, "seed", int(self.seed))

    @classmethod
    def two_phase(cls, probability=0.5, labels=(1, 2), dimension_m=1, seed=0):
        return cls(dimension_m, tuple(labels), (probability, 1.0 - probability), seed)

    def with_seed(self, seed: int) -> "RandomMedium":
        return replace(self, seed=int(seed))

    def with_shift(self, shift) -> "RandomMedium":
        return replace(self, torus_shift=tuple(shift))

    def randomized_shift(self) -> "RandomMedium":
        """Copy whose torus shift is drawn from the seed (for stationarity tests)."""
        salts = np.arange(self.dimension_m, dtype=np.uint64) + _SHIFT_SALT
        h = _splitmix(_splitmix(np.full(self.dimension_m, np.uint64(self.seed))) ^ salts)
        return self.with_shift(tuple(float(u) for u in _to_unit(h)))

    def cell_phase_index(self, cells) -> np.ndarray:
        """Phase index of lattice cells ``cells`` with shape ``(..., m)``.

        For ``m = 1`` a plain integer array is accepted as well.
        """
        cells = np.asarray(cells, dtype=np.int64)
        if self.dimension_m == 1 and (cells.ndim == 0 or cells.shape[-1] != 1):
            cells = cells[..., None]
        u = _to_unit(_hash_cells(self.seed, cells))
        cdf = np.cumsum(self.phase_probabilities)
        idx = np.searchsorted(cdf, u, side="right")
        return np.minimum(idx, len(cdf) - 1)

    def cell_labels(self, cells) -> np.ndarray:
        return np.asarray(self.phase_labels, dtype=object)[self.cell_phase_index(cells)]

    def cell_of(self, y) -> np.ndarray:
        """Lattice cell containing the point ``y`` (lattice units, shape ``(..., m)``)."""
        y = np.asarray(y, dtype=float)
        return np.floor(y + np.asarray(self.torus_shift) + _FACE_EPS).astype(np.int64)

    def phase_index_at(self, y) -> np.ndarray:
        return self.cell_phase_index(self.cell_of(y))


@dataclass(frozen=True)
class RealizationField:
    """Phases of one medium sampled on a tensor grid at scale ``eta``."""

    window: tuple
    eta: float
    grid_spacing: float
    coords: tuple
    phase_index: np.ndarray
    labels: tuple
    seed: int

    @property
    def values(self) -> np.ndarray:
        """Phase labels at the grid nodes."""
        return np.asarray(self.labels, dtype=object)[self.phase_index]

    @property
    def shape(self) -> tuple:
        return self.phase_index.shape

    @property
    def dimension_m(self) -> int:
        return len(self.coords)

    def points(self) -> np.ndarray:
        mesh = np.meshgrid(*self.coords, indexing="ij")
        return np.stack(mesh, axis=-1)

    def to_csv(self, path) -> None:
        pts = self.points().reshape(-1, self.dimension_m)
        vals = self.values.reshape(-1)
        names = ["x", "y"][: self.dimension_m]
        with open(path, "w", newline="") as fh:
            fh.write(f"# seed={self.seed} eta={self.eta!r} grid_spacing={self.grid_spacing!r}\n")
            w = csv.writer(fh)
            w.writerow(names + ["phase"])
            for pt, v in zip(pts, vals):
                w.writerow([repr(float(c)) for c in pt] + [v])


def _normalize_window(window, m):
    win = np.asarray(window, dtype=float)
    if win.ndim == 1:
        win = win[None, :]
    if win.shape != (m, 2) or np.any(win[:, 1] <= win[:, 0]):
        raise ConfigurationError(f"window must be {m} (lo, hi) pairs with lo < hi")
    return tuple((float(lo), float(hi)) for lo, hi in win)


def sample_realization(medium: RandomMedium, window, eta: float, grid_spacing: float,
                       endpoint: bool = True, node_offset: float = 0.0) -> RealizationField:
    """Sample the phase field ``x -> theta(T_{x/eta} omega)`` on a uniform grid.

    Nodes are ``lo + (i + node_offset) * grid_spacing``; ``(hi - lo)`` must be
    an integer multiple of the spacing. With ``endpoint=False`` the node at
    ``hi`` is dropped (half-open windows, used for periodic tori);
    ``node_offset=0.5`` samples cell centres.
    """
    if eta <= 0 or grid_spacing <= 0:
        raise ConfigurationError("eta and grid_spacing must be positive")
    if grid_spacing > eta * (1 + 1e-12):
        raise AliasingError(
            f"grid spacing {grid_spacing:g} exceeds eta={eta:g}; the microstructure "
            "would be aliased")
    win = _normalize_window(window, medium.dimension_m)
    coords = []
    for lo, hi in win:
        n = (hi - lo) / grid_spacing
        nr = int(round(n))
        if abs(n - nr) > 1e-9 * max(1.0, n):
            raise ConfigurationError("window length must be a multiple of grid_spacing")
        count = nr + 1 if (endpoint and node_offset == 0.0) else nr
        coords.append(lo + (np.arange(count) + node_offset) * grid_spacing)
    mesh = np.stack(np.meshgrid(*coords, indexing="ij"), axis=-1)
    idx = medium.phase_index_at(mesh / eta)
    return RealizationField(win, float(eta), float(grid_spacing), tuple(coords), idx,
                            medium.phase_labels, medium.seed)


def _phase_values(medium: RandomMedium, g) -> np.ndarray:
    if isinstance(g, Mapping):
        return np.array([float(g[lab]) for lab in medium.phase_labels])
    return np.array([float(g(lab)) for lab in medium.phase_labels])


def expectation(medium: RandomMedium, g: Callable | Mapping) -> float:
    """Exact ``E[g(theta)] = sum_theta P(theta) g(theta)``."""
    return float(np.dot(medium.phase_probabilities, _phase_values(medium, g)))


@dataclass(frozen=True)
class ErgodicRecord:
    window_size: float
    average: float
    error_to_expectation: float


def _axis_weights(W, shift):
    """Cells intersecting ``[0, W]`` after shifting, and the overlap lengths."""
    k = np.arange(np.floor(shift), np.ceil(W + shift), dtype=np.int64)
    w = np.minimum(k + 1, W + shift) - np.maximum(k, shift)
    return k, w


def _window_mean(medium: RandomMedium, gvals: np.ndarray, W: float) -> float:
    shift = medium.torus_shift
    if medium.dimension_m == 1:
        k, w = _axis_weights(W, shift[0])
        return float(np.dot(w, gvals[medium.cell_phase_index(k)]) / W)
    k0, w0 = _axis_weights(W, shift[0])
    k1, w1 = _axis_weights(W, shift[1])
    total = 0.0
    rows = max(1, 2 ** 20 // max(1, k1.size))
    for start in range(0, k0.size, rows):
        kk0 = k0[start:start + rows]
        cells = np.stack(np.meshgrid(kk0, k1, indexing="ij"), axis=-1)
        vals = gvals[medium.cell_phase_index(cells)]
        total += float(w0[start:start + rows] @ vals @ w1)
    return total / (W * W)


def ergodic_average(medium: RandomMedium, g: Callable | Mapping,
                    window_sizes: Sequence[float]) -> list[ErgodicRecord]:
    """Spatial averages of ``g(theta(x))`` over ``[0, W]^m`` at ``eta = 1``.

    The integral of the piecewise-constant realization is computed exactly.
    """
    sizes = [float(w) for w in window_sizes]
    if any(w <= 0 for w in sizes) or any(b <= a for a, b in zip(sizes, sizes[1:])):
        raise ConfigurationError("window sizes must be positive and strictly increasing")
    gvals = _phase_values(medium, g)
    target = float(np.dot(medium.phase_probabilities, gvals))
    out = []
    for W in sizes:
        avg = _window_mean(medium, gvals, W)
        out.append(ErgodicRecord(W, avg, abs(avg - target)))
    return out


def fit_loglog_slope(x, y) -> float:
    """Least-squares slope of ``log y`` against ``log x``."""
    lx, ly = np.log(np.asarray(x, float)), np.log(np.asarray(y, float))
    return float(np.polyfit(lx, ly, 1)[0])
