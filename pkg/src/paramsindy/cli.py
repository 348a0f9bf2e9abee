"""Command-line front end.

Subcommands: ``simulate``, ``discover``, ``sgs-discover``, ``sgs-bench``,
``refine-study`` and ``ablate``. Exit codes: 0 success, 2 configuration or
input error, 3 numerical failure, 4 convergence failure. A run that stops
early leaves ``FAILED`` (with the error message) in its output directory.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import io
import json
import logging
import sys
import time
from contextlib import contextmanager
from pathlib import Path

import numpy as np

from . import __version__
from .archive import ArchiveError, load_dataset, save_dataset
from .config import RunConfig, bundled_configs
from .ensemble import aggregate, iterative_prune, realization_grams, refined_fit
from .exceptions import ConfigError, ConvergenceError, DivergenceError
from .features import evaluate_features
from .filtering import ClosureModel
from .gram import GramSystem
from .library import build_library, dsf_filter, enumerate_and_reduce, manifest
from .sgs import (analytic_profiles, benchmark_closures, build_sgs_dataset, discover_closure,
                  grid_refinement_study)
from .simulate import generate_dataset
from .solvers import make_solver

logger = logging.getLogger("paramsindy")

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_CONVERGENCE = 0, 1, 2, 3, 4
COMMANDS = ("simulate", "discover", "sgs-discover", "sgs-bench", "refine-study", "ablate")
FAILURE_MARKER = "FAILED"


class Run:
    """Output directory, timings and report assembly for one invocation."""

    def __init__(self, command, cfg: RunConfig, out: Path, seed: int, threads: int):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.seed = seed
        self.threads = threads
        self.timings: dict[str, float] = {}
        self.peak_rows = 0

    @contextmanager
    def stage(self, name):
        t0 = time.perf_counter()
        yield
        self.timings[name] = round(time.perf_counter() - t0, 6)

    def write_text(self, name: str, text: str) -> Path:
        path = self.out / name
        path.write_text(text)
        return path

    def write_report(self, results: dict, library=None) -> Path:
        report = {
            "tool": "paramsindy",
            "version": __version__,
            "command": self.command,
            "config": self.cfg.resolved(self.seed),
            "library": manifest(library) if library is not None else None,
            "peak_rows": int(self.peak_rows),
            "results": results,
            "timings": self.timings,
        }
        return self.write_text("report.json", json.dumps(report, indent=2, sort_keys=True) + "\n")


def _load_snapshots(run: Run):
    case = run.cfg.case_spec(run.seed)
    path = run.cfg.get("case", "dataset")
    if path:
        snaps, _ = load_dataset(path)
        return snaps, case
    return generate_dataset(case, threads=run.threads), case


def _dry_run(terms, n_candidates=None) -> int:
    print(f"library: {len(terms)} terms" + (f" (of {n_candidates} candidates)" if n_candidates else ""))
    for item in manifest(terms):
        print(f"  {item['name']:40s} [{item['dim'][0]}, {item['dim'][1]}]")
    p = len(terms)
    print(f"gram dimension p = {p} ({p * p * 8} bytes for G)")
    return EXIT_OK


def cmd_simulate(run: Run, dry_run: bool) -> int:
    case = run.cfg.case_spec(run.seed)
    if dry_run:
        print(json.dumps(case.to_dict(), indent=2))
        return EXIT_OK
    with run.stage("simulate"):
        snaps = generate_dataset(case, threads=run.threads)
    with run.stage("save"):
        save_dataset(run.out / "dataset", snaps, case.to_dict(), run.seed)
    run.peak_rows = max((s.u.size for s in snaps), default=0)
    results = {"n_realizations": len(snaps), "dataset": "dataset",
               "params": [dict(s.params) for s in snaps]}
    run.write_report(results)
    return EXIT_OK


def cmd_discover(run: Run, dry_run: bool) -> int:
    cfg = run.cfg
    cfg.require("case", "library")
    spec = cfg.library_spec()
    terms = build_library(spec)
    ens = cfg.ensemble_config(run.seed, run.threads)
    if dry_run:
        return _dry_run(terms, len(enumerate_and_reduce(spec)))
    with run.stage("simulate"):
        snaps, _ = _load_snapshots(run)
    with run.stage("gram"):
        grams = realization_grams(snaps, terms, threads=run.threads)
    run.peak_rows = max(g.n_rows for g in grams)
    with run.stage("regression"):
        if cfg.get("ensemble", "enabled", True):
            report = iterative_prune(grams, cfg=ens)
            if cfg.get("ensemble", "refine", True):
                report.refined = refined_fit(grams, report.selected_terms, ens)
        else:
            total = _total(grams)
            sol = make_solver(ens.method, **ens.solver_params).fit_gram(total).solution()
            report = aggregate([sol], ens)
    run.write_report(report.to_dict(), terms)
    print(report.equation())
    return EXIT_OK


def _total(grams) -> GramSystem:
    total = grams[0].copy()
    for g in grams[1:]:
        total = total + g
    return total


def _discover_sgs(run: Run, dry_run: bool):
    cfg = run.cfg
    spec = cfg.sgs_spec(run.seed)
    terms = spec.library()
    if dry_run:
        _dry_run(terms)
        return None, None
    ens = cfg.ensemble_config(run.seed, run.threads, sgs=True)
    with run.stage("dataset"):
        data = build_sgs_dataset(spec, terms, threads=run.threads)
    run.peak_rows = max(g.n_rows for g in data.batches)
    with run.stage("discovery"):
        found = discover_closure(data, ens, cfg.sgs_methods())
    return found, terms


def cmd_sgs_discover(run: Run, dry_run: bool) -> int:
    found, terms = _discover_sgs(run, dry_run)
    if found is None:
        return EXIT_OK
    run.write_text("closure.json", json.dumps(found.to_dict(), indent=2, sort_keys=True) + "\n")
    run.write_report(found.to_dict(), terms)
    best = found.best
    print(f"{best.term}: C = {best.coefficient:.4f}, C_s = {best.smagorinsky_constant:.4f} "
          f"({found.chosen})")
    return EXIT_OK


def cmd_sgs_bench(run: Run, dry_run: bool) -> int:
    cfg = run.cfg
    c = cfg.get("bench", "sindy_c")
    results = {}
    if c is None:
        found, _ = _discover_sgs(run, dry_run)
        if found is None:
            return EXIT_OK
        c = found.best.coefficient
        results["discovery"] = found.to_dict()
    elif dry_run:
        print(f"benchmark with C = {c}")
        return EXIT_OK
    models = [ClosureModel("sindy_signed", c), *cfg.baseline_models()]
    spec = cfg.eval_spec(run.seed)
    with run.stage("benchmark"):
        table = benchmark_closures(models, spec, threads=run.threads)
    with run.stage("profiles"):
        profiles = analytic_profiles(models, nu=cfg.get("bench", "profile_nu", 0.005 / np.pi),
                                     width=cfg.get("bench", "profile_width", 5),
                                     time=cfg.get("bench", "profile_time", 0.5))
    run.write_text("metrics.csv", table.to_csv())
    run.write_text("profiles.csv", profiles)
    results.update({"averaged": table.averaged(), "rows": table.rows,
                    "eval": {"n_cases": spec.n_cases, "seed": spec.seed,
                             "widths": list(spec.widths)}})
    run.write_report(results)
    for model, avg in table.averaged().items():
        print(f"{model:28s} r2 = {avg['r2']:.4f}")
    return EXIT_OK


def cmd_refine_study(run: Run, dry_run: bool) -> int:
    cfg = run.cfg
    levels = cfg.get("refine", "n_x", (151, 301, 401))
    base = cfg.sgs_spec(run.seed)
    n_real = cfg.get("refine", "n_realizations")
    if n_real is not None:
        case = dataclasses.replace(base.case, n_realizations=n_real)
        batches = None if base.n_batches is None else min(base.n_batches, n_real)
        base = dataclasses.replace(base, case=case, n_batches=batches)
    if dry_run:
        for n in levels:
            print(f"n_x = {n}: dx = {(base.case.x_max - base.case.x_min) / (n - 1):.6g}")
        return EXIT_OK
    ens = cfg.ensemble_config(run.seed, run.threads, sgs=True)
    with run.stage("study"):
        table = grid_refinement_study(levels, base, ens, cfg.sgs_methods(), threads=run.threads)
    run.write_text("refinement.csv", table.to_csv())
    run.write_report({"rows": table.rows, "quadratic_fits": table.fits})
    print(table.to_csv(), end="")
    return EXIT_OK


def _ablation_row(snaps, terms, ens, gram_mode: str, ensemble: bool) -> dict:
    """One ablation run; returns timing, memory proxy and the identified equation."""
    t0 = time.perf_counter()
    columns = [t.name for t in terms]
    if gram_mode == "batched":
        grams = realization_grams(snaps, terms)
        largest = max(g.n_rows for g in grams) * len(terms) * 8
        peak = max(largest, grams[0].nbytes)
    else:
        blocks = [evaluate_features(s, terms) for s in snaps]
        theta = np.vstack([b[0] for b in blocks])
        peak = theta.nbytes
        grams = []
        start = 0
        for th, y in blocks:
            rows = slice(start, start + len(y))
            grams.append(GramSystem.from_rows(columns, theta[rows], y))
            start += len(y)
        del theta
    if ensemble:
        report = iterative_prune(grams, cfg=ens)
        report.refined = refined_fit(grams, report.selected_terms, ens)
        equation = report.equation()
        active = report.final.selected_terms
    else:
        sol = make_solver(ens.method, **ens.solver_params).fit_gram(_total(grams)).solution()
        single = aggregate([sol], ens)
        equation = single.equation()
        active = single.selected_terms
    return {"runtime_s": round(time.perf_counter() - t0, 6), "peak_bytes": int(peak),
            "equation": equation, "active_terms": active}


def cmd_ablate(run: Run, dry_run: bool) -> int:
    cfg = run.cfg
    cfg.require("case", "library")
    spec = cfg.library_spec()
    dsf_modes = cfg.get("ablate", "dsf", ("on", "off"))
    gram_modes = cfg.get("ablate", "gram", ("batched", "monolithic"))
    ens_modes = cfg.get("ablate", "ensemble", ("on", "off"))
    for name, vals, allowed in (("dsf", dsf_modes, {"on", "off"}),
                                ("gram", gram_modes, {"batched", "monolithic"}),
                                ("ensemble", ens_modes, {"on", "off"})):
        bad = set(vals) - allowed
        if bad:
            raise ConfigError(f"ablate.{name}: unknown value(s) {sorted(bad)}")
    raw = enumerate_and_reduce(spec)
    libraries = {"on": dsf_filter(raw, spec) if spec.dsf_mode != "off" else raw, "off": raw}
    if dry_run:
        for mode in dsf_modes:
            print(f"dsf {mode}: {len(libraries[mode])} terms")
        return EXIT_OK
    ens = cfg.ensemble_config(run.seed, run.threads)
    with run.stage("simulate"):
        snaps, _ = _load_snapshots(run)
    rows = []
    for dsf in dsf_modes:
        for gram in gram_modes:
            for ensemble in ens_modes:
                row = {"dsf": dsf, "gram": gram, "ensemble": ensemble,
                       "n_terms": len(libraries[dsf])}
                row.update(_ablation_row(snaps, libraries[dsf], ens, gram, ensemble == "on"))
                rows.append(row)
                logger.info("ablate %s", row)
    run.peak_rows = max(s.u.size for s in snaps)
    buf = io.StringIO()
    fields = ["dsf", "gram", "ensemble", "n_terms", "runtime_s", "peak_bytes", "equation"]
    w = csv.DictWriter(buf, fieldnames=fields, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    w.writerows(rows)
    run.write_text("ablation.csv", buf.getvalue())
    run.timings.update({f"{r['dsf']}/{r['gram']}/{r['ensemble']}": r["runtime_s"] for r in rows})
    stable = [{k: v for k, v in r.items() if k != "runtime_s"} for r in rows]
    run.write_report({"runs": stable, "library_sizes": {m: len(libraries[m]) for m in dsf_modes}},
                     libraries[dsf_modes[0]])
    print(buf.getvalue(), end="")
    return EXIT_OK


HANDLERS = {
    "simulate": cmd_simulate,
    "discover": cmd_discover,
    "sgs-discover": cmd_sgs_discover,
    "sgs-bench": cmd_sgs_bench,
    "refine-study": cmd_refine_study,
    "ablate": cmd_ablate,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="paramsindy", description="Parameter-aware sparse PDE and closure identification.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True,
                       help=f"config file or bundled name ({', '.join(bundled_configs())})")
        p.add_argument("--set", dest="overrides", action="append", default=[],
                       metavar="SECTION.KEY=VALUE", help="override a config value (repeatable)")
        p.add_argument("--out", help="output directory (default: run.out or runs/<command>)")
        p.add_argument("--seed", type=int, help="global seed (overrides run.seed)")
        p.add_argument("--threads", type=int, help="worker threads")
        p.add_argument("--dry-run", action="store_true",
                       help="print the resolved library and Gram size without touching data")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = Path(args.out) if args.out else None
    try:
        cfg = RunConfig.load(args.config).with_overrides(args.overrides)
        seed = cfg.seed(args.seed)
        threads = args.threads or cfg.get("run", "threads", 1)
        if threads < 1:
            raise ConfigError("threads must be >= 1")
        out = Path(args.out or cfg.get("run", "out") or f"runs/{args.command}")
        run = Run(args.command, cfg, out, seed, threads)
        if not args.dry_run:
            out.mkdir(parents=True, exist_ok=True)
            (out / FAILURE_MARKER).unlink(missing_ok=True)
        code = HANDLERS[args.command](run, args.dry_run)
        return code
    except (ConfigError, ArchiveError) as exc:
        return _fail(out, args, EXIT_CONFIG, f"config error: {exc}")
    except (DivergenceError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(out, args, EXIT_NUMERICAL, f"numerical failure: {exc}")
    except ConvergenceError as exc:
        return _fail(out, args, EXIT_CONVERGENCE, f"convergence failure: {exc}")


def _fail(out, args, code, message) -> int:
    print(message, file=sys.stderr)
    if out is not None and not args.dry_run:
        try:
            out.mkdir(parents=True, exist_ok=True)
            (out / FAILURE_MARKER).write_text(f"exit {code}\n{message}\n")
        except OSError:
            pass
    return code


if __name__ == "__main__":
    sys.exit(main())
