"""Subgrid-stress closure discovery for filtered Burgers data.

Pipeline: simulate Burgers realizations, box-filter them at several widths,
regress the exact stress on a library of filtered-field terms with ``nu`` and
``Delta`` as parameters, prune with a decaying CV threshold, and compare the
surviving closure with classical models on unseen cases.
"""

from __future__ import annotations

import csv
import io
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from .ensemble import EnsembleConfig, EnsembleReport, iterative_prune, refined_fit
from .exceptions import ConfigError
from .features import evaluate_features, sgs_inputs
from .filtering import ClosureModel, FilterSpec, closure_metrics
from .gram import GramSystem
from .grid import BUFFER_CELLS, SchemeTag, apply_stencil, trim_buffer
from .library import MonomialTerm, build_library, deriv, library_preset, make_monomial, param
from .simulate import CaseSpec, case_preset, realization

logger = logging.getLogger(__name__)


def sgs_case(**overrides) -> CaseSpec:
    """Burgers setup for stress data.

    The stress ``filter(u^2) - filter(u)^2`` is the flux-form residual of the
    filtered equation, so the resolved runs integrate the flux form, which
    also places shocks at their conservation-law speed.
    """
    overrides.setdefault("advection", "conservative")
    return case_preset("burgers", **overrides)


class CollinearityWarning(UserWarning):
    """Two library columns are scalar multiples of each other in the data."""


@dataclass(frozen=True)
class SgsDatasetSpec:
    """Filtered-Burgers regression data.

    Parameters
    ----------
    case : CaseSpec
        Burgers realizations at DNS resolution, conservative advection by
        default (see :func:`sgs_case`).
    widths : tuple of int
        Odd box-filter widths in cells; ``Delta = k * dx``.
    n_batches : int, optional
        Realizations are grouped into this many contiguous Gram batches,
        which become the ensemble's subsampling units. ``None`` keeps one
        batch per realization.
    max_degree, tolerance
        Library degree and soft dimensional tolerance.
    """

    case: CaseSpec = field(default_factory=lambda: sgs_case(n_realizations=500))
    widths: tuple[int, ...] = (3, 5, 7, 9, 11)
    n_batches: int | None = 50
    max_degree: int = 3
    tolerance: float = 0.25

    def __post_init__(self):
        if self.case.equation != "burgers":
            raise ConfigError("SGS data is built from Burgers realizations")
        if not self.widths:
            raise ConfigError("at least one filter width is needed")
        for k in self.widths:
            if k < 1 or k % 2 == 0:
                raise ConfigError(f"filter widths must be odd and positive, got {k}")
        if not 0 <= self.tolerance <= 1:
            raise ConfigError(f"tolerance must lie in [0, 1], got {self.tolerance}")
        if self.n_batches is not None and not 1 <= self.n_batches <= self.case.n_realizations:
            raise ConfigError(f"n_batches must lie in [1, {self.case.n_realizations}]")

    def library(self) -> list[MonomialTerm]:
        return build_library(library_preset("sgs", max_degree=self.max_degree,
                                            tolerance=self.tolerance))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["case"] = self.case.to_dict()
        d["widths"] = list(self.widths)
        return d


@dataclass
class SgsDataset:
    """Gram batches of the stress regression, one per realization group."""

    spec: SgsDatasetSpec
    terms: list
    batches: list
    deltas: tuple[float, ...]

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(t.name for t in self.terms)

    @property
    def n_pairs(self) -> int:
        return self.spec.case.n_realizations * len(self.spec.widths)

    def total(self) -> GramSystem:
        total = self.batches[0].copy()
        for g in self.batches[1:]:
            total = total + g
        return total

    def restrict(self, columns: Sequence[str]) -> "SgsDataset":
        keep = set(columns)
        terms = [t for t in self.terms if t.name in keep]
        return SgsDataset(self.spec, terms, [g.subset([t.name for t in terms]) for g in self.batches],
                          self.deltas)


def single_term_library() -> list[MonomialTerm]:
    """The one-term library ``Delta^2 * u_x|cd1^2``."""
    ux = deriv("cd1")
    return [make_monomial([param("Delta", 2), ux, ux])]


def realization_stress_gram(snapshot, terms, widths, buffer: int = BUFFER_CELLS) -> GramSystem:
    """Gram system of one realization pooled over all filter widths."""
    gram = GramSystem.empty([t.name for t in terms])
    for k in widths:
        theta, y = evaluate_features(snapshot, terms, "tau_sgs", FilterSpec(k), buffer)
        gram.accumulate(theta, y)
    return gram


def build_sgs_dataset(spec: SgsDatasetSpec, terms: Sequence[MonomialTerm] | None = None,
                      threads: int = 1) -> SgsDataset:
    """Simulate, filter and accumulate the stress regression for ``spec``."""
    terms = list(terms) if terms is not None else spec.library()
    case = spec.case

    def one(i):
        return realization_stress_gram(realization(case, i), terms, spec.widths)

    indices = range(case.n_realizations)
    if threads <= 1:
        grams = [one(i) for i in indices]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            grams = list(pool.map(one, indices))
    n_batches = spec.n_batches or len(grams)
    batches = []
    for chunk in np.array_split(np.arange(len(grams)), n_batches):
        total = grams[chunk[0]]
        for i in chunk[1:]:
            total = total + grams[i]
        batches.append(total)
    dx = case.grid.dx
    return SgsDataset(spec, terms, batches, tuple(k * dx for k in spec.widths))


def collinear_pairs(gram: GramSystem, tol: float = 1e-9) -> list[tuple[str, str]]:
    """Column pairs whose uncentered correlation is within ``tol`` of one."""
    d = np.sqrt(np.diag(gram.G))
    live = d > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        corr = np.abs(gram.G) / np.outer(d, d)
    pairs = []
    p = gram.p
    for i in range(p):
        for j in range(i + 1, p):
            if live[i] and live[j] and corr[i, j] >= 1 - tol:
                pairs.append((gram.columns[i], gram.columns[j]))
    return pairs


@dataclass
class DiscoveredClosure:
    """Dominant term of a pruned stress regression.

    ``coefficient`` is ``C`` in ``tau = C * Delta^2 * u_x^2`` from the
    unpenalized refit on the surviving terms, with ``std`` and ``cv`` from
    that refit. ``ensemble_coefficient`` and ``ensemble_cv`` are the pruning
    solver's own statistics for the term, which carry its shrinkage. The
    signed form used for prediction is ``-C * Delta^2 * u_x * |u_x|`` and the
    effective Smagorinsky constant is ``sqrt(C)``.
    """

    term: str
    coefficient: float
    std: float
    cv: float
    solver: str
    iterations: int
    cv_history: list
    active_terms: list
    ensemble_coefficient: float = float("nan")
    ensemble_std: float = float("nan")
    ensemble_cv: float = float("nan")
    report: EnsembleReport | None = None

    @property
    def smagorinsky_constant(self) -> float:
        return math.sqrt(self.coefficient) if self.coefficient > 0 else float("nan")

    @property
    def signed_form(self) -> str:
        return f"tau = -{self.coefficient:.4f}*Delta^2*u_x*|u_x|"

    def model(self) -> ClosureModel:
        return ClosureModel("sindy_signed", self.coefficient)

    def to_dict(self) -> dict:
        return {
            "term": self.term,
            "C": self.coefficient,
            "C_s": self.smagorinsky_constant,
            "std": self.std,
            "cv": self.cv,
            "ensemble_C": self.ensemble_coefficient,
            "ensemble_std": self.ensemble_std,
            "ensemble_cv": self.ensemble_cv,
            "signed_form": self.signed_form,
            "solver": self.solver,
            "iterations": self.iterations,
            "cv_history": self.cv_history,
            "active_terms": self.active_terms,
        }


@dataclass
class ClosureDiscovery:
    """Per-solver closures and the one whose pruning pass ended with the lower CV."""

    closures: dict
    chosen: str
    warnings: list = field(default_factory=list)

    @property
    def best(self) -> DiscoveredClosure:
        return self.closures[self.chosen]

    def to_dict(self) -> dict:
        return {"chosen": self.chosen,
                "closures": {k: v.to_dict() for k, v in self.closures.items()},
                "warnings": self.warnings}


def _closure_from_report(report: EnsembleReport, solver: str, rms: dict) -> DiscoveredClosure:
    """Take the selected term with the largest RMS contribution to the stress."""
    cols = list(report.columns)
    sel = [j for j, s in enumerate(report.selected) if s]
    j = max(sel, key=lambda k: abs(report.mean[k]) * rms[cols[k]])
    history = [h["stats"].get(cols[j], {}).get("cv") for h in report.history]
    final = report.final
    r = list(final.columns).index(cols[j])
    return DiscoveredClosure(
        term=cols[j], coefficient=float(final.mean[r]), std=float(final.std[r]),
        cv=float(final.cv[r]), solver=solver, iterations=len(report.history),
        cv_history=history, active_terms=report.selected_terms,
        ensemble_coefficient=float(report.mean[j]), ensemble_std=float(report.std[j]),
        ensemble_cv=float(report.cv[j]), report=report)


def discover_closure(dataset: SgsDataset, cfg: EnsembleConfig | None = None,
                     methods: Sequence[str] = ("elasticnet", "sr3")) -> ClosureDiscovery:
    """Iterative pruning with each solver, then a refit on the surviving terms.

    The chosen solver is the one whose last pruning pass gave the dominant
    term the lower CV.

    Warns with :class:`CollinearityWarning` when some library columns are
    exact multiples of each other in the data, which happens for instance
    when only one filter width is present and ``Delta`` powers cannot be
    told apart.
    """
    if not dataset.batches:
        raise ValueError("empty dataset")
    base = cfg or EnsembleConfig.for_sgs()
    found = []
    pairs = collinear_pairs(dataset.total())
    if pairs:
        msg = (f"{len(pairs)} collinear column pair(s), e.g. {pairs[0][0]} ~ {pairs[0][1]}; "
               "coefficients of these columns are not separately identifiable")
        warnings.warn(msg, CollinearityWarning, stacklevel=2)
        found.append(msg)
    total = dataset.total()
    rms = dict(zip(total.columns, np.sqrt(np.diag(total.G) / max(total.n_rows, 1))))
    closures = {}
    for method in methods:
        run = base.replace(method=method)
        report = iterative_prune(dataset.batches, cfg=run, target="tau_sgs")
        report.refined = refined_fit(dataset.batches, report.selected_terms, run, target="tau_sgs")
        closures[method] = _closure_from_report(report, method, rms)
        logger.info("%s: %s C=%.4f cv=%.4g", method, closures[method].term,
                    closures[method].coefficient, closures[method].cv)
    chosen = min(closures, key=lambda k: (closures[k].ensemble_cv, list(closures).index(k)))
    return ClosureDiscovery(closures, chosen, found)


@dataclass(frozen=True)
class EvalSpec:
    """Unseen Burgers cases for a-priori closure scoring."""

    n_cases: int = 50
    nu_range: tuple[float, float] = (0.001 / math.pi, 0.01 / math.pi)
    widths: tuple[int, ...] = (3, 5, 7, 9, 11)
    seed: int = 1_000_003
    n_x: int = 150
    n_t: int = 500
    advection: str = "conservative"

    def case(self) -> CaseSpec:
        return sgs_case(n_realizations=self.n_cases, nu_range=tuple(self.nu_range),
                        seed=self.seed, n_x=self.n_x, n_t=self.n_t, advection=self.advection)


def filtered_derivatives(ubar: np.ndarray, dx: float) -> dict:
    """``u``, ``u_x`` (cd1), ``u_xx`` (cd2), ``u_xxx`` (cd2_3rd) of a filtered field."""
    return {"u": ubar,
            "u_x": apply_stencil(ubar, dx, SchemeTag.CD1),
            "u_xx": apply_stencil(ubar, dx, SchemeTag.CD2),
            "u_xxx": apply_stencil(ubar, dx, SchemeTag.CD2_3RD)}


@dataclass
class BenchmarkTable:
    rows: list

    def averaged(self) -> dict:
        """Width-averaged metrics per model."""
        out = {}
        for r in self.rows:
            out.setdefault(r["model"], []).append(r)
        return {m: {k: float(np.mean([r[k] for r in rs])) for k in ("mse", "mae", "r2")}
                for m, rs in out.items()}

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["model", "width", "mse", "mae", "r2"])
        for r in self.rows:
            w.writerow([r["model"], r["width"], repr(r["mse"]), repr(r["mae"]), repr(r["r2"])])
        for m, avg in self.averaged().items():
            w.writerow([m, "mean", repr(avg["mse"]), repr(avg["mae"]), repr(avg["r2"])])
        return buf.getvalue()


def benchmark_closures(models: Sequence[ClosureModel], eval_spec: EvalSpec | None = None,
                       threads: int = 1, buffer: int = BUFFER_CELLS) -> BenchmarkTable:
    """Score closures against exact stresses of fresh cases, per filter width.

    All buffer-trimmed space-time points of all cases are pooled with equal
    weight for each width.
    """
    if not models:
        raise ValueError("no models to benchmark")
    spec = eval_spec or EvalSpec()
    case = spec.case()
    dx = case.grid.dx

    def one(i):
        snap = realization(case, i)
        out = {}
        for k in spec.widths:
            ubar, tau, params = sgs_inputs(snap, FilterSpec(k))
            fields = filtered_derivatives(ubar, dx)
            preds = [trim_buffer(m.predict(fields, params["Delta"]), buffer) for m in models]
            out[k] = (trim_buffer(tau, buffer), preds)
        return out

    if threads <= 1:
        per_case = [one(i) for i in range(spec.n_cases)]
    else:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            per_case = list(pool.map(one, range(spec.n_cases)))
    rows = []
    for k in spec.widths:
        truth = np.concatenate([c[k][0].ravel() for c in per_case])
        for j, m in enumerate(models):
            pred = np.concatenate([c[k][1][j].ravel() for c in per_case])
            rows.append({"model": m.label, "width": k, **closure_metrics(pred, truth)})
    return BenchmarkTable(rows)


@dataclass
class RefinementTable:
    rows: list
    fits: dict

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["solver", "n_x", "dx", "C_s", "C", "std", "ensemble_C", "ensemble_std"])
        for r in self.rows:
            w.writerow([r["solver"], r["n_x"], repr(r["dx"]), repr(r["C_s"]), repr(r["C"]),
                        repr(r["std"]), repr(r["ensemble_C"]), repr(r["ensemble_std"])])
        return buf.getvalue()

    def coefficients(self, solver: str) -> list[float]:
        return [r["C"] for r in self.rows if r["solver"] == solver]


def grid_refinement_study(n_x_list: Sequence[int], base: SgsDatasetSpec | None = None,
                          cfg: EnsembleConfig | None = None,
                          methods: Sequence[str] = ("elasticnet", "sr3"),
                          threads: int = 1) -> RefinementTable:
    """Single-term closure coefficient versus grid spacing.

    Each level reuses ``base`` with ``n_x`` replaced; filter widths stay fixed
    in cells. A quadratic ``C(dx)`` is fitted per solver.
    """
    if len(n_x_list) < 3:
        raise ValueError("a refinement study needs at least 3 grid levels")
    base = base or SgsDatasetSpec()
    cfg = cfg or EnsembleConfig.for_sgs()
    terms = single_term_library()
    rows = []
    for n_x in n_x_list:
        case = CaseSpec.from_dict({**base.case.to_dict(), "n_x": int(n_x)})
        spec = SgsDatasetSpec(case, base.widths, base.n_batches, base.max_degree, base.tolerance)
        data = build_sgs_dataset(spec, terms, threads=threads)
        found = discover_closure(data, cfg, methods)
        for method, cl in found.closures.items():
            rows.append({"solver": method, "n_x": int(n_x), "dx": case.grid.dx,
                         "C": cl.coefficient, "C_s": cl.smagorinsky_constant, "std": cl.std,
                         "ensemble_C": cl.ensemble_coefficient, "ensemble_std": cl.ensemble_std})
    fits = {}
    for method in methods:
        dx = [r["dx"] for r in rows if r["solver"] == method]
        c = [r["C"] for r in rows if r["solver"] == method]
        fits[method] = np.polyfit(dx, c, 2).tolist()
    return RefinementTable(rows, fits)


ANALYTIC_ICS = {
    "sine": lambda x: -np.sin(np.pi * x),
    "cubic_sine": lambda x: -np.sin(np.pi * x) ** 3,
}


def analytic_profiles(models: Sequence[ClosureModel], nu: float = 0.005 / math.pi,
                      width: int = 5, time: float = 0.5, n_x: int = 150, n_t: int = 500,
                      buffer: int = BUFFER_CELLS) -> str:
    """Plot-ready CSV of true and modelled stress at one time for the sine ICs.

    Columns: ``ic, x, u_bar, tau`` and one column per model label.
    """
    from .simulate import solve_pde

    case = sgs_case(n_x=n_x, n_t=n_t)
    grid = case.grid
    row = int(round((time - grid.t_min) / grid.dt))
    if not 0 <= row < grid.n_t:
        raise ValueError(f"time {time} is outside [{grid.t_min}, {grid.t_max}]")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["ic", "x", "u_bar", "tau", *[m.label for m in models]])
    x = grid.x
    for name, ic in ANALYTIC_ICS.items():
        u0 = ic(x)
        u0[-1] = u0[0]
        snap = solve_pde("burgers", grid, {"nu": nu}, u0, case.advection)
        ubar, tau, params = sgs_inputs(snap, FilterSpec(width))
        fields = filtered_derivatives(ubar, grid.dx)
        preds = [m.predict(fields, params["Delta"])[row] for m in models]
        for i in range(buffer, grid.n_x - buffer):
            w.writerow([name, repr(float(x[i])), repr(float(ubar[row, i])),
                        repr(float(tau[row, i])), *[repr(float(p[i])) for p in preds]])
    return buf.getvalue()
