"""Command-line driver: ``stochhom {birkhoff,cell,solve,converge}``.

Every run writes the resolved configuration to ``<out>/config.ini`` next
to its CSV outputs. All randomness derives from the master seed.
"""
from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .cell import HomogenizedLaw, tabulate_law
from .config import (ConfigParseError, ExperimentConfig, derive_seeds, load_config,
                     serialize_config)
from .errors import (AliasingError, ConfigurationError, ConvergenceError,
                     GridTooSmallError, HullError)
from .harness import run_convergence
from .media import ergodic_average, fit_loglog_slope
from .pde import solve_homogenized, solve_oscillating

EXIT_OK, EXIT_PARSE, EXIT_CONVERGENCE, EXIT_ALIASING, EXIT_HULL = 0, 2, 3, 4, 5


def _observable(spec: str):
    kind, _, arg = spec.partition(":")
    if kind == "indicator":
        target = arg.strip()

        def g(label):
            return 1.0 if str(label) == target else 0.0
        return g
    if kind == "constant":
        value = float(arg)
        return lambda label: value
    raise ConfigurationError(f"unknown observable {spec!r} (use indicator:<label> or constant:<c>)")


def _prepare_out(cfg: ExperimentConfig) -> Path:
    out = Path(cfg.run.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.ini").write_text(serialize_config(cfg))
    return out


def cmd_birkhoff(cfg: ExperimentConfig) -> int:
    out = _prepare_out(cfg)
    g = _observable(cfg.birkhoff.observable)
    sizes = cfg.birkhoff.window_sizes
    seeds = derive_seeds(cfg.run.master_seed, "birkhoff", cfg.birkhoff.seed_count)
    errors = []
    path = out / "birkhoff.csv"
    with open(path, "w", newline="") as fh:
        fh.write(f"# master_seed={cfg.run.master_seed}\n")
        w = csv.writer(fh)
        w.writerow(["seed", "W", "average", "error"])
        for s in seeds:
            recs = ergodic_average(cfg.medium.build(s), g, sizes)
            errors.append([r.error_to_expectation for r in recs])
            for r in recs:
                w.writerow([s, repr(r.window_size), repr(r.average), repr(r.error_to_expectation)])
        med = np.median(np.array(errors), axis=0)
        for W, e in zip(sizes, med):
            w.writerow(["median", repr(float(W)), "", repr(float(e))])
    if np.all(med > 0):
        print(f"fitted log-log slope of the median error: {fit_loglog_slope(sizes, med):.4f}")
    else:
        print("median error vanishes (constant observable); slope undefined")
    print(f"wrote {path}")
    return EXIT_OK


def _tabulate(cfg: ExperimentConfig):
    m = cfg.medium.dimension_m
    seed = derive_seeds(cfg.run.master_seed, "cell", 1)[0]
    medium = cfg.medium.build(seed)
    integrand = cfg.integrand.build(m)
    law = tabulate_law(medium, integrand, cfg.cell.axes(m), cfg.cell.problem(m),
                       workers=cfg.run.threads)
    law.metadata["master_seed"] = cfg.run.master_seed
    return law


def cmd_cell(cfg: ExperimentConfig) -> int:
    out = _prepare_out(cfg)
    law = _tabulate(cfg)
    law.to_csv(out / "law.csv")
    p = float(law.metadata["exponent_p"])
    tol = cfg.cell.solver_tolerance
    report = out / "cell_gaps.txt"
    lines = [f"solver tolerance {tol:g}; max gap {float(np.max(law.gaps)):.3e}"]
    pts = law.xi_grid
    for k, (x, g, phi) in enumerate(zip(pts, law.gaps.ravel(), law.phi0.ravel())):
        r = float(np.linalg.norm(x))
        ratio = (phi * p / r ** p) if r > 0 else float("nan")
        if cfg.integrand.kind == "TwoPhaseQuadratic" and r > 0:
            ratio = phi / r ** 2
        lines.append(f"xi={np.array2string(x, precision=6)} phi0={phi:.10g} "
                     f"coefficient={ratio:.6g} gap={g:.3e}")
    for u in law.unconverged:
        lines.append(f"UNCONVERGED xi={u['xi']} realization={u['realization']} gap={u['gap']:.3e}")
    report.write_text("\n".join(lines) + "\n")
    print("\n".join(lines))
    if law.unconverged or float(np.max(law.gaps)) > tol:
        print(f"error: {len(law.unconverged)} corrector(s) did not reach the gap tolerance",
              file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


def cmd_solve(cfg: ExperimentConfig) -> int:
    out = _prepare_out(cfg)
    m = cfg.medium.dimension_m
    if cfg.pde.law is not None:
        law = HomogenizedLaw.from_csv(cfg.pde.law)
        res = solve_homogenized(cfg.pde.spec(eta=None), law)
    else:
        if cfg.pde.eta is None:
            raise ConfigurationError("[pde] eta (or --eta) is required for the oscillating solve")
        seed = derive_seeds(cfg.run.master_seed, "solve", 1)[0]
        res = solve_oscillating(cfg.pde.spec(), cfg.medium.build(seed), cfg.integrand.build(m))
    path = out / "solve.csv"
    res.to_csv(path, master_seed=cfg.run.master_seed)
    print(f"energy={res.energy:.12g} gap={res.duality_gap:.3e} "
          f"divergence_residual={res.divergence_residual:.3e} iterations={res.iterations}")
    print(f"wrote {path}")
    return EXIT_OK


def cmd_converge(cfg: ExperimentConfig) -> int:
    out = _prepare_out(cfg)
    m = cfg.medium.dimension_m
    integrand = cfg.integrand.build(m)
    law = HomogenizedLaw.from_csv(cfg.pde.law) if cfg.pde.law else _tabulate(cfg)
    negative = None
    if cfg.harness.negative_law_c is not None:
        c, p = cfg.harness.negative_law_c, integrand.exponent_p
        if p == 2.0 and cfg.integrand.kind == "TwoPhaseQuadratic":
            negative = HomogenizedLaw.quadratic(law.axes, c, {"exponent_p": 2.0})
        else:
            negative = HomogenizedLaw.from_function(
                law.axes, lambda x: c * np.linalg.norm(x, axis=-1) ** p / p,
                lambda x: c * np.linalg.norm(x, axis=-1, keepdims=True) ** (p - 2) * x,
                {"exponent_p": p})
    seeds = derive_seeds(cfg.run.master_seed, "converge", cfg.harness.seed_count)
    medium = cfg.medium.build(seeds[0])
    rep = run_convergence(cfg.pde.spec(eta=None), medium, integrand, law,
                          cfg.harness.eta_schedule, seeds, negative_law=negative,
                          xi_values=cfg.harness.xi_values, workers=cfg.run.threads,
                          master_seed=cfg.run.master_seed)
    rep.to_csv(out / "convergence.csv")
    summary = rep.summary()
    (out / "convergence_summary.txt").write_text(summary + "\n")
    print(summary)
    if rep.flagged:
        print(f"error: {len(rep.excluded)} solve(s) excluded for non-convergence", file=sys.stderr)
        return EXIT_CONVERGENCE
    return EXIT_OK


COMMANDS = {"birkhoff": cmd_birkhoff, "cell": cmd_cell, "solve": cmd_solve,
            "converge": cmd_converge}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stochhom", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=sorted(COMMANDS))
    ap.add_argument("--config", type=Path, help="INI experiment configuration")
    ap.add_argument("--out", help="output directory (overrides [run] out)")
    ap.add_argument("--seed", type=int, help="master seed, unsigned 64-bit")
    ap.add_argument("--eta", type=float, help="microstructure scale for `solve`")
    ap.add_argument("--threads", type=int, help="worker threads")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config) if args.config else ExperimentConfig()
        run_kw = {}
        if args.out is not None:
            run_kw["out"] = args.out
        if args.seed is not None:
            if not 0 <= args.seed < 2 ** 64:
                raise ConfigParseError("--seed must be an unsigned 64-bit integer")
            run_kw["master_seed"] = args.seed
        if args.threads is not None:
            run_kw["threads"] = max(1, args.threads)
        cfg = cfg.with_run(**run_kw)
        if args.eta is not None:
            cfg = cfg.with_pde(eta=args.eta)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"cannot read configuration {exc.filename}: {exc.strerror}", file=sys.stderr)
        return EXIT_PARSE
    try:
        return COMMANDS[args.command](cfg)
    except AliasingError as exc:
        print(f"aliasing: {exc}", file=sys.stderr)
        return EXIT_ALIASING
    except (HullError, GridTooSmallError) as exc:
        print(f"hull violation: {exc}", file=sys.stderr)
        return EXIT_HULL
    except ConvergenceError as exc:
        print(f"non-convergence: {exc}", file=sys.stderr)
        return EXIT_CONVERGENCE
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except OSError as exc:
        print(f"I/O error on {exc.filename}: {exc.strerror}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
