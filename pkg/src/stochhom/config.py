"""Experiment configuration: INI sections mirroring the library modules.

``parse_config(serialize_config(cfg)) == cfg`` holds for every valid
configuration (floats are written with ``repr``).
"""
from __future__ import annotations

import configparser
from dataclasses import dataclass, field, fields, replace

import numpy as np

from .cell import CellProblemConfig
from .errors import ConfigurationError
from .integrands import Integrand, Kind
from .media import RandomMedium
from .pde import ProblemSpec

__all__ = [
    "ConfigParseError",
    "ExperimentConfig",
    "MediumConfig",
    "IntegrandConfig",
    "CellConfig",
    "PdeConfig",
    "HarnessConfig",
    "BirkhoffConfig",
    "RunConfig",
    "parse_config",
    "serialize_config",
    "load_config",
    "derive_seeds",
]

_PURPOSE = {"birkhoff": 0, "cell": 1, "solve": 2, "converge": 3}


class ConfigParseError(ConfigurationError):
    def __init__(self, message, line=None):
        super().__init__(message if line is None else f"line {line}: {message}")
        self.line = line


def derive_seeds(master_seed: int, purpose: str, count: int) -> list[int]:
    """Independent 64-bit seeds for one pipeline stage."""
    ss = np.random.SeedSequence(int(master_seed), spawn_key=(_PURPOSE[purpose],))
    return [int(s) for s in ss.generate_state(count, dtype=np.uint64)]


def _label(tok: str):
    tok = tok.strip()
    try:
        return int(tok)
    except ValueError:
        return tok


def _floats(text: str) -> tuple:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _fmt_floats(vals) -> str:
    return ", ".join(repr(float(v)) for v in vals)


@dataclass(frozen=True)
class MediumConfig:
    dimension_m: int = 1
    labels: tuple = (1, 2)
    probabilities: tuple = (0.5, 0.5)
    torus_shift: tuple | None = None

    def build(self, seed: int) -> RandomMedium:
        return RandomMedium(self.dimension_m, self.labels, self.probabilities, seed,
                            self.torus_shift)


@dataclass(frozen=True)
class IntegrandConfig:
    kind: str = "TwoPhaseQuadratic"
    p: float = 2.0
    coefficients: tuple = ((1, 1.0), (2, 4.0))
    growth_constants: tuple | None = None
    table_grid: tuple | None = None
    table_values: tuple | None = None  # ((label, (values...)), ...)

    def build(self, dimension_m: int) -> Integrand:
        kind = Kind(self.kind)
        if kind is Kind.TABULATED_CONVEX:
            if self.table_grid is None or self.table_values is None:
                raise ConfigurationError("TabulatedConvex needs table_grid and table values")
            return Integrand.tabulated(self.table_grid, dict(self.table_values), self.p,
                                       self.growth_constants)
        coeffs = dict(self.coefficients)
        if kind is Kind.TWO_PHASE_QUADRATIC:
            return Integrand.quadratic(coeffs, dimension_m, self.growth_constants)
        return Integrand.power_law(self.p, coeffs, dimension_m, self.growth_constants)


@dataclass(frozen=True)
class CellConfig:
    xi_grid: tuple = (-1.0, -0.75, -0.5, -0.25, 0.25, 0.5, 0.75, 1.0)
    xi_grid_2: tuple | None = None
    torus_cells: int = 10000
    nodes_per_cell: int = 1
    realization_count: int = 8
    solver_tolerance: float = 1e-10
    max_iter: int = 60

    def problem(self, dimension_m) -> CellProblemConfig:
        return CellProblemConfig((0.0,) * dimension_m, self.torus_cells, self.nodes_per_cell,
                                 self.realization_count, self.solver_tolerance, self.max_iter)

    def axes(self, dimension_m):
        if dimension_m == 1:
            return np.asarray(self.xi_grid)
        if self.xi_grid_2 is None:
            return (np.asarray(self.xi_grid), np.asarray(self.xi_grid))
        return (np.asarray(self.xi_grid), np.asarray(self.xi_grid_2))


@dataclass(frozen=True)
class PdeConfig:
    domain: tuple = ((0.0, 1.0),)
    grid_nodes: int = 512
    rhs_f: float = 2.0
    perturbation: float | None = None
    eta: float | None = None
    law: str | None = None

    def spec(self, eta=None) -> ProblemSpec:
        return ProblemSpec(self.domain, self.grid_nodes, self.rhs_f,
                           eta if eta is not None else self.eta, self.perturbation)


@dataclass(frozen=True)
class HarnessConfig:
    eta_schedule: tuple = (0.125, 0.0625, 0.03125, 0.015625)
    seed_count: int = 16
    negative_law_c: float | None = None
    xi_values: tuple = (-1.0, 0.0, 1.0)
    library: str = "sines3+bump"


@dataclass(frozen=True)
class BirkhoffConfig:
    window_sizes: tuple = (100.0, 316.0, 1000.0, 3162.0, 10000.0, 31623.0, 100000.0)
    observable: str = "indicator:1"
    seed_count: int = 16


@dataclass(frozen=True)
class RunConfig:
    master_seed: int = 0
    out: str = "out"
    threads: int = 1


@dataclass(frozen=True)
class ExperimentConfig:
    medium: MediumConfig = field(default_factory=MediumConfig)
    integrand: IntegrandConfig = field(default_factory=IntegrandConfig)
    cell: CellConfig = field(default_factory=CellConfig)
    pde: PdeConfig = field(default_factory=PdeConfig)
    harness: HarnessConfig = field(default_factory=HarnessConfig)
    birkhoff: BirkhoffConfig = field(default_factory=BirkhoffConfig)
    run: RunConfig = field(default_factory=RunConfig)

    def with_run(self, **kw) -> "ExperimentConfig":
        return replace(self, run=replace(self.run, **kw))

    def with_pde(self, **kw) -> "ExperimentConfig":
        return replace(self, pde=replace(self.pde, **kw))


# -- serialization ------------------------------------------------------------

def _opt(v, fmt=repr):
    return "none" if v is None else fmt(v)


def serialize_config(cfg: ExperimentConfig) -> str:
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    md = cfg.medium
    cp["medium"] = {
        "dimension_m": str(md.dimension_m),
        "labels": ", ".join(str(x) for x in md.labels),
        "probabilities": _fmt_floats(md.probabilities),
        "torus_shift": _opt(md.torus_shift, _fmt_floats),
    }
    it = cfg.integrand
    sec = {
        "kind": it.kind,
        "p": repr(float(it.p)),
        "coefficients": ", ".join(f"{lab}:{float(a)!r}" for lab, a in it.coefficients),
        "growth_constants": _opt(it.growth_constants, _fmt_floats),
        "table_grid": _opt(it.table_grid, _fmt_floats),
    }
    for lab, vals in it.table_values or ():
        sec[f"table_values.{lab}"] = _fmt_floats(vals)
    cp["integrand"] = sec
    c = cfg.cell
    cp["cell"] = {
        "xi_grid": _fmt_floats(c.xi_grid),
        "xi_grid_2": _opt(c.xi_grid_2, _fmt_floats),
        "torus_cells": str(c.torus_cells),
        "nodes_per_cell": str(c.nodes_per_cell),
        "realization_count": str(c.realization_count),
        "solver_tolerance": repr(float(c.solver_tolerance)),
        "max_iter": str(c.max_iter),
    }
    pd = cfg.pde
    cp["pde"] = {
        "domain": "; ".join(_fmt_floats(iv) for iv in pd.domain),
        "grid_nodes": str(pd.grid_nodes),
        "rhs_f": repr(float(pd.rhs_f)),
        "perturbation": _opt(pd.perturbation, lambda v: repr(float(v))),
        "eta": _opt(pd.eta, lambda v: repr(float(v))),
        "law": _opt(pd.law, str),
    }
    h = cfg.harness
    cp["harness"] = {
        "eta_schedule": _fmt_floats(h.eta_schedule),
        "seed_count": str(h.seed_count),
        "negative_law_c": _opt(h.negative_law_c, lambda v: repr(float(v))),
        "xi_values": _fmt_floats(h.xi_values),
        "library": h.library,
    }
    b = cfg.birkhoff
    cp["birkhoff"] = {
        "window_sizes": _fmt_floats(b.window_sizes),
        "observable": b.observable,
        "seed_count": str(b.seed_count),
    }
    r = cfg.run
    cp["run"] = {"master_seed": str(r.master_seed), "out": r.out, "threads": str(r.threads)}
    lines = []
    for name in cp.sections():
        lines.append(f"[{name}]")
        lines += [f"{k} = {v}" for k, v in cp[name].items()]
        lines.append("")
    return "\n".join(lines)


def _line_of(text, section, key):
    current = None
    for i, raw in enumerate(text.splitlines(), 1):
        s = raw.strip()
        if s.startswith("[") and s.endswith("]"):
            current = s[1:-1].strip()
        elif current == section and s.split("=", 1)[0].strip() == key:
            return i
    return None


class _Reader:
    def __init__(self, cp, text):
        self.cp, self.text = cp, text
        self.used = set()

    def get(self, section, key, conv, default):
        if not self.cp.has_section(section) or not self.cp.has_option(section, key):
            return default
        self.used.add((section, key))
        raw = self.cp.get(section, key).strip()
        if raw.lower() == "none":
            return None
        try:
            return conv(raw)
        except (ValueError, TypeError) as exc:
            raise ConfigParseError(f"[{section}] {key} = {raw!r}: {exc}",
                                   _line_of(self.text, section, key)) from None


def _int(s):
    return int(s, 0)


def _coeffs(s):
    out = []
    for tok in s.split(","):
        if not tok.strip():
            continue
        lab, val = tok.split(":")
        out.append((_label(lab), float(val)))
    return tuple(out)


def _domain(s):
    return tuple(_floats(part) for part in s.split(";"))


def _labels(s):
    return tuple(_label(t) for t in s.split(",") if t.strip())


def parse_config(text: str) -> ExperimentConfig:
    """Parse INI text; errors name the offending line where possible."""
    cp = configparser.ConfigParser(interpolation=None)
    cp.optionxform = str
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        line = getattr(exc, "lineno", None)
        if line is None and getattr(exc, "errors", None):
            line = exc.errors[0][0]
        raise ConfigParseError(str(exc).splitlines()[0], line) from None
    known = {f.name for f in fields(ExperimentConfig)}
    for sec in cp.sections():
        if sec not in known:
            raise ConfigParseError(f"unknown section [{sec}]", _line_of_section(text, sec))
    rd = _Reader(cp, text)
    d = ExperimentConfig()

    md = MediumConfig(
        rd.get("medium", "dimension_m", _int, d.medium.dimension_m),
        rd.get("medium", "labels", _labels, d.medium.labels),
        rd.get("medium", "probabilities", _floats, d.medium.probabilities),
        rd.get("medium", "torus_shift", _floats, d.medium.torus_shift),
    )
    table_values = None
    if cp.has_section("integrand"):
        tv = []
        for key in cp["integrand"]:
            if key.startswith("table_values."):
                tv.append((_label(key.split(".", 1)[1]),
                           rd.get("integrand", key, _floats, None)))
        table_values = tuple(tv) or None
    it = IntegrandConfig(
        rd.get("integrand", "kind", str, d.integrand.kind),
        rd.get("integrand", "p", float, d.integrand.p),
        rd.get("integrand", "coefficients", _coeffs, d.integrand.coefficients),
        rd.get("integrand", "growth_constants", _floats, d.integrand.growth_constants),
        rd.get("integrand", "table_grid", _floats, d.integrand.table_grid),
        table_values,
    )
    c = CellConfig(
        rd.get("cell", "xi_grid", _floats, d.cell.xi_grid),
        rd.get("cell", "xi_grid_2", _floats, d.cell.xi_grid_2),
        rd.get("cell", "torus_cells", _int, d.cell.torus_cells),
        rd.get("cell", "nodes_per_cell", _int, d.cell.nodes_per_cell),
        rd.get("cell", "realization_count", _int, d.cell.realization_count),
        rd.get("cell", "solver_tolerance", float, d.cell.solver_tolerance),
        rd.get("cell", "max_iter", _int, d.cell.max_iter),
    )
    pd = PdeConfig(
        rd.get("pde", "domain", _domain, d.pde.domain),
        rd.get("pde", "grid_nodes", _int, d.pde.grid_nodes),
        rd.get("pde", "rhs_f", float, d.pde.rhs_f),
        rd.get("pde", "perturbation", float, d.pde.perturbation),
        rd.get("pde", "eta", float, d.pde.eta),
        rd.get("pde", "law", str, d.pde.law),
    )
    h = HarnessConfig(
        rd.get("harness", "eta_schedule", _floats, d.harness.eta_schedule),
        rd.get("harness", "seed_count", _int, d.harness.seed_count),
        rd.get("harness", "negative_law_c", float, d.harness.negative_law_c),
        rd.get("harness", "xi_values", _floats, d.harness.xi_values),
        rd.get("harness", "library", str, d.harness.library),
    )
    b = BirkhoffConfig(
        rd.get("birkhoff", "window_sizes", _floats, d.birkhoff.window_sizes),
        rd.get("birkhoff", "observable", str, d.birkhoff.observable),
        rd.get("birkhoff", "seed_count", _int, d.birkhoff.seed_count),
    )
    r = RunConfig(
        rd.get("run", "master_seed", _int, d.run.master_seed),
        rd.get("run", "out", str, d.run.out),
        rd.get("run", "threads", _int, d.run.threads),
    )
    for sec in cp.sections():
        for key in cp[sec]:
            if (sec, key) not in rd.used:
                raise ConfigParseError(f"unknown key [{sec}] {key}", _line_of(text, sec, key))
    if not 0 <= r.master_seed < 2 ** 64:
        raise ConfigParseError("master_seed must be an unsigned 64-bit integer",
                               _line_of(text, "run", "master_seed"))
    # semantic checks, reported at the most specific line available
    for sec, keys, check in (
            ("medium", ("probabilities", "labels", "dimension_m"), lambda: md.build(0)),
            ("integrand", ("coefficients", "kind", "p", "growth_constants"),
             lambda: it.build(md.dimension_m))):
        try:
            check()
        except ConfigParseError:
            raise
        except (ConfigurationError, ValueError) as exc:
            lines = [_line_of(text, sec, k) for k in keys]
            line = next((ln for ln in lines if ln is not None), _line_of_section(text, sec))
            raise ConfigParseError(str(exc), line) from None
    return ExperimentConfig(md, it, c, pd, h, b, r)


def _line_of_section(text, section):
    for i, raw in enumerate(text.splitlines(), 1):
        if raw.strip() == f"[{section}]":
            return i
    return None


def load_config(path) -> ExperimentConfig:
    with open(path) as fh:
        return parse_config(fh.read())
