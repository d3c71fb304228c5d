"""Command line entry point.

    kawasaki-lab simulate      --config run.cfg --out DIR
    kawasaki-lab hierarchy     --config run.cfg --out DIR
    kawasaki-lab verify        --config run.cfg --out DIR
    kawasaki-lab combinatorics --m-max 8 --n-max 8 --out DIR
    kawasaki-lab metric A.csv B.csv

Exit codes: 0 success, 1 validation error, 2 check failure, 3 internal
invariant violation.  Artifact directories are written to a staging
directory next to the target and renamed into place when complete.
"""
from __future__ import annotations

import argparse
import csv
import json
import os
import shutil
import sys
import tempfile
from contextlib import contextmanager
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .combinatorics import (composition_weight, enumerate_compositions, stirling2_row, wk)
from .config import ConfigError, RunConfig, load_config, parse_config
from .configuration import Configuration, TestFunction, Theta, bl_metric
from .estimators import (alpha_convergence, chentsov, fp_residual, moment_bounds, summary_table,
                         type_growth, write_jsonl, ReportRecord)
from .hierarchy import CorrelationTable, Grid, evolve, spectral_free_evolution
from .simulator import RNG_NAME, SimulationError, run_ensemble

EXIT_OK, EXIT_INVALID, EXIT_CHECK, EXIT_INTERNAL = 0, 1, 2, 3
ALPHA_LADDER = (1.0, 0.5, 0.25, 0.1, 0.05)
CHENTSOV_LADDER = (0.05, 0.1, 0.2, 0.4)


class CheckFailure(Exception):
    pass


THREADS = 0


def version_stamp() -> dict:
    import numba
    import scipy
    return {"kawasaki_lab": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "numba": numba.__version__, "python": sys.version.split()[0], "rng": RNG_NAME,
            "threads_requested": THREADS}


@contextmanager
def staged(target: Path):
    """Yield a staging directory that replaces ``target`` on success."""
    target = Path(target)
    target.parent.mkdir(parents=True, exist_ok=True)
    stage = Path(tempfile.mkdtemp(prefix=f".{target.name}.stage-", dir=target.parent))
    try:
        yield stage
    except BaseException:
        shutil.rmtree(stage, ignore_errors=True)
        raise
    if target.exists():
        shutil.rmtree(target)
    os.replace(stage, target)


def _write_common(stage: Path, cfg: RunConfig | None):
    if cfg is not None:
        (stage / "config.cfg").write_text(cfg.dumps())
    (stage / "version.json").write_text(json.dumps(version_stamp(), indent=1, sort_keys=True))


def _ensemble(cfg: RunConfig, alpha=None, query=None):
    params = cfg.model_params()
    if alpha is not None:
        params = params.with_alpha(alpha)
    q = cfg["run.query_times"] if query is None else query
    t_max = max(cfg["run.t_max"], max(q, default=0.0))
    return run_ensemble(cfg.source(), cfg["run.replicas"], t_max, params, cfg["run.base_seed"],
                        q, cfg["run.torus"])


# ----------------------------------------------------------------------------
# workflows


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    ens = _ensemble(cfg)
    with staged(out) as stage:
        ens.save(stage)
        _write_common(stage, cfg)
    print(f"ensemble digest {ens.digest()}")
    return EXIT_OK


def _hierarchy_initial(cfg: RunConfig, grid: Grid) -> CorrelationTable:
    kappa, amp = cfg["hierarchy.kappa"], cfg["hierarchy.amplitude"]
    k1 = kappa + amp * np.cos(np.pi * grid.nodes / grid.R)
    return CorrelationTable.from_profile(grid, k1, cfg["hierarchy.N_max"], cfg["hierarchy.J_max"],
                                         cfg["hierarchy.closure"])


def run_hierarchy(cfg: RunConfig) -> tuple[CorrelationTable, dict]:
    params = cfg.model_params()
    if params.d != 1:
        raise ConfigError("model.d", "the hierarchy solver needs d = 1")
    grid = Grid(float(cfg["hierarchy.R"]), int(cfg["hierarchy.M"]))
    k0 = _hierarchy_initial(cfg, grid)
    t = float(cfg["hierarchy.t"])
    out = evolve(k0, t, params, cfg["hierarchy.scheme"], dt=cfg["hierarchy.dt"],
                 n_terms=cfg["hierarchy.n_terms"], theta0=cfg["hierarchy.theta0"],
                 theta_prime=cfg["hierarchy.theta_prime"],
                 self_interaction=cfg["hierarchy.self_interaction"])
    report = {"t": t, "scheme": cfg["hierarchy.scheme"], "type": out.type_estimate(),
              "min_k1": float(out.arrays[1].min()), "asymmetry": out.max_asymmetry()}
    if params.is_free:
        ref = spectral_free_evolution(k0.arrays[1], grid, params, t)
        report["spectral_error"] = float(np.abs(out.arrays[1] - ref).max())
    if "certificate" in out.meta:
        report["certificate"] = out.meta["certificate"]
    return out, report


def cmd_hierarchy(cfg: RunConfig, out: Path) -> int:
    table, report = run_hierarchy(cfg)
    with staged(out) as stage:
        table.save(stage / "table")
        (stage / "report.json").write_text(json.dumps(_finite(report), indent=1, sort_keys=True))
        _write_common(stage, cfg)
    print(json.dumps(_finite(report), sort_keys=True))
    return EXIT_OK


def _finite(obj):
    if isinstance(obj, dict):
        return {k: _finite(v) for k, v in obj.items()}
    if isinstance(obj, list):
        return [_finite(v) for v in obj]
    if isinstance(obj, float) and not np.isfinite(obj):
        return str(obj)
    return obj


def _test_function(cfg: RunConfig) -> TestFunction:
    d = cfg["model.d"]
    theta = Theta.gaussian(cfg["verify.theta_amplitude"], (0.0,) * d, 1.0)
    try:
        return TestFunction.F_tilde(theta, cfg["verify.tau"])
    except ValueError as exc:
        raise ConfigError("verify.tau", str(exc)) from None


def run_checks(cfg: RunConfig) -> list[ReportRecord]:
    params = cfg.model_params()
    checks = cfg["verify.checks"]
    recs: list[ReportRecord] = []
    ens = None
    if any(c in checks for c in ("moments", "fp_residual", "type_growth", "metric_axioms")):
        ens = _ensemble(cfg)
    q = [float(t) for t in cfg["run.query_times"]]
    kappa = cfg["initial.kappa"] if cfg["initial.kind"] == "poisson" else None
    lo, hi = cfg.window()
    if "moments" in checks and kappa is not None:
        for t in q:
            recs += moment_bounds(ens, t, (lo, hi), 4, kappa)
    if "fp_residual" in checks:
        recs.append(fp_residual(ens, _test_function(cfg), q[0], q[-1], params))
    if "type_growth" in checks and kappa is not None and cfg["model.d"] == 1:
        span = hi[0] - lo[0]
        bins = np.linspace(lo[0] + span / 4, hi[0] - span / 4, 11)
        recs += type_growth(ens, q, kappa, bins, params.c_a)
    if "alpha_convergence" in checks:
        t = q[-1]
        ensembles = {a: _ensemble(cfg, alpha=a) for a in (0.0,) + ALPHA_LADDER}
        recs.append(alpha_convergence(_test_function(cfg), t, ensembles))
    if "chentsov" in checks:
        query = sorted({0.0} | {s / 2 for s in CHENTSOV_LADDER} | set(CHENTSOV_LADDER))
        ensembles = {a: _ensemble(cfg, alpha=a, query=query) for a in (1.0, 0.1)}
        r, _ = chentsov(ensembles, CHENTSOV_LADDER)
        recs += r
    if "hierarchy_spectral" in checks and params.is_free and cfg["model.d"] == 1:
        _, rep = run_hierarchy(cfg)
        recs.append(ReportRecord("hierarchy_spectral", "free hierarchy vs Fourier solution",
                                 rep["spectral_error"], 0.0, 1e-4, "upper", 0.0))
    if "metric_axioms" in checks:
        configs = ens.configs_at(q[-1])
        worst = 0.0
        for i in range(0, len(configs) - 2, 3):
            a, b, c = configs[i], configs[i + 1], configs[i + 2]
            worst = max(worst, bl_metric(a, c) - bl_metric(a, b) - bl_metric(b, c))
        recs.append(ReportRecord("metric_triangle", "triangle inequality", worst, 0.0, 1e-9,
                                 "upper", 0.0))
    if "combinatorics" in checks:
        bad = sum(1 for m in range(1, 9) for n in range(9)
                  if sum(composition_weight(c) for c in enumerate_compositions(m, n)) != m**n)
        recs.append(ReportRecord("composition_sums", "composition weight identity", float(bad),
                                 0.0, 0.0, "equal", 0.0))
    ns = cfg["verify.n_sigma"]
    if ns is not None:
        recs = [replace(r, n_sigma=float(ns)) if r.n_sigma > 0 else r for r in recs]
    return recs


def cmd_verify(cfg: RunConfig, out: Path) -> int:
    recs = run_checks(cfg)
    table = summary_table(recs)
    with staged(out) as stage:
        write_jsonl(recs, stage / "reports.jsonl")
        (stage / "summary.txt").write_text(table + "\n")
        _write_common(stage, cfg)
    print(table)
    failed = [r for r in recs if r.verdict == "fail"]
    return EXIT_CHECK if failed else EXIT_OK


def cmd_combinatorics(m_max: int, n_max: int, out: Path) -> int:
    if m_max < 1 or n_max < 0:
        raise ConfigError("--m-max/--n-max", "need m-max >= 1 and n-max >= 0")
    with staged(out) as stage:
        with (stage / "compositions.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n", "count", "weight_sum", "m_pow_n"])
            for m in range(1, m_max + 1):
                for n in range(n_max + 1):
                    comps = enumerate_compositions(m, n)
                    w.writerow([m, n, len(comps), sum(composition_weight(c) for c in comps), m**n])
        with (stage / "stirling.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["n", "l", "S"])
            for n in range(n_max + 1):
                for l, s in enumerate(stirling2_row(n)):
                    w.writerow([n, l, s])
        with (stage / "wk.csv").open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["m", "n", "k", "closed_form", "recurrence"])
            for m in range(1, m_max + 1):
                for n in range(n_max + 1):
                    for k in range(n + 1):
                        w.writerow([m, n, k, wk(m, n, k), wk(m, n, k, "recurrence")])
        _write_common(stage, None)
    print(f"tables written to {out}")
    return EXIT_OK


def cmd_metric(a: Path, b: Path, out: Path | None) -> int:
    for p in (a, b):
        if not Path(p).is_file():
            raise ConfigError("metric", f"file {str(p)!r} not found")
    g1, g2 = Configuration.from_csv(a), Configuration.from_csv(b)
    if g1.d != g2.d:
        raise ConfigError("metric", "configurations have different dimensions")
    value = bl_metric(g1, g2)
    if out is not None:
        with staged(out) as stage:
            (stage / "metric.json").write_text(json.dumps({"a": str(a), "b": str(b), "value": value}))
            _write_common(stage, None)
    print(repr(value))
    return EXIT_OK


# ----------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="run configuration file")
    common.add_argument("--out", type=Path, help="artifact directory")
    common.add_argument("--seed", type=int, help="base seed (overrides the config)")
    common.add_argument("--threads", type=int, default=0,
                        help="worker threads, 0 = auto (recorded; replicas run serially)")
    parser = argparse.ArgumentParser(prog="kawasaki-lab", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in ("simulate", "hierarchy", "verify"):
        sub.add_parser(name, parents=[common])
    p = sub.add_parser("combinatorics", parents=[common])
    p.add_argument("--m-max", type=int, default=8)
    p.add_argument("--n-max", type=int, default=8)
    p = sub.add_parser("metric", parents=[common])
    p.add_argument("a", type=Path)
    p.add_argument("b", type=Path)
    return parser


def _resolve(args) -> tuple[RunConfig, Path]:
    cfg = load_config(args.config) if args.config else parse_config("")
    if args.seed is not None:
        if not 0 <= args.seed < 2**64:
            raise ConfigError("--seed", "must be an unsigned 64-bit integer")
        cfg = cfg.with_overrides(**{"run.base_seed": args.seed})
    out = args.out if args.out is not None else Path(cfg["output.dir"])
    return cfg, out


def main(argv=None) -> int:
    global THREADS
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 0:
            raise ConfigError("--threads", "must be >= 0")
        THREADS = args.threads
        if args.command == "combinatorics":
            return cmd_combinatorics(args.m_max, args.n_max, args.out or Path("combinatorics"))
        if args.command == "metric":
            return cmd_metric(args.a, args.b, args.out)
        cfg, out = _resolve(args)
        return {"simulate": cmd_simulate, "hierarchy": cmd_hierarchy,
                "verify": cmd_verify}[args.command](cfg, out)
    except ConfigError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except (SimulationError, AssertionError) as exc:
        print(f"internal invariant violation: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    except ValueError as exc:
        print(f"validation error: {exc}", file=sys.stderr)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
