"""Subsampled ensembles of sparse fits, stability statistics and iterative pruning.

The subsampling unit is a realization. Each realization contributes one
:class:`GramSystem` over the full library; an estimator sums the systems of
its drawn realizations and solves on the columns that are still active, so
no feature rows are re-evaluated between iterations.
"""

from __future__ import annotations

import json
import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from .exceptions import ConfigError, ConvergenceError
from .features import evaluate_features
from .gram import GramSystem
from .grid import BUFFER_CELLS, FieldSnapshot
from .library import MonomialTerm
from .solvers import SparseSolution, make_solver

logger = logging.getLogger(__name__)

CV_EPS = 1e-10


@dataclass(frozen=True)
class EnsembleConfig:
    """Ensemble, selection and solver settings.

    Parameters
    ----------
    n_estimators : int
        Number of subsampled fits per pass.
    fraction : float
        Share of realizations drawn (without replacement) by each estimator.
    f_threshold : float
        Minimum consensus frequency for a term to be selected.
    cv_init, cv_decay : float
        The CV threshold at pass ``i`` (0-based) is ``cv_init * cv_decay**i``.
    noise_floor : float
        Coefficients with magnitude at or below this count as absent.
    max_iter : int
        Maximum number of pruning passes.
    seed : int
        Estimator ``m`` draws with ``default_rng([seed, m])``.
    method, solver_params
        Solver name and keyword arguments passed to :func:`make_solver`.
    refine_method, refine_params
        Solver for the refit on selected terms; unpenalized least squares
        by default, since sparsity has already been decided.
    threads : int
        Worker threads for estimator fits; never changes results.
    """

    n_estimators: int = 10
    fraction: float = 0.8
    f_threshold: float = 0.8
    cv_init: float = 0.15
    cv_decay: float = 1.0
    noise_floor: float = 1e-5
    max_iter: int = 10
    seed: int = 0
    method: str = "stlsq"
    solver_params: dict = field(default_factory=dict)
    refine_method: str = "ridge"
    refine_params: dict = field(default_factory=lambda: {"lam": 0.0})
    threads: int = 1

    def __post_init__(self):
        if self.n_estimators < 1:
            raise ConfigError(f"n_estimators must be >= 1, got {self.n_estimators}")
        if not 0 < self.fraction <= 1:
            raise ConfigError(f"fraction must lie in (0, 1], got {self.fraction}")
        if not 0 < self.f_threshold <= 1:
            raise ConfigError(f"f_threshold must lie in (0, 1], got {self.f_threshold}")
        if not 0 < self.cv_decay <= 1:
            raise ConfigError(f"cv_decay must lie in (0, 1], got {self.cv_decay}")
        if self.cv_init < 0 or self.noise_floor < 0:
            raise ConfigError("cv_init and noise_floor must be non-negative")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be >= 1, got {self.max_iter}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        make_solver(self.method, **self.solver_params)
        make_solver(self.refine_method, **self.refine_params)

    @classmethod
    def for_pde(cls, **overrides) -> "EnsembleConfig":
        """Fixed CV threshold 0.15, STLSQ."""
        return cls(**overrides)

    @classmethod
    def for_sgs(cls, method: str = "sr3", **overrides) -> "EnsembleConfig":
        """CV threshold starting at 0.5 and halving every pass."""
        opts = dict(cv_init=0.5, cv_decay=0.5, method=method)
        opts.update(overrides)
        return cls(**opts)

    def cv_threshold(self, iteration: int) -> float:
        return self.cv_init * self.cv_decay ** iteration

    def replace(self, **changes) -> "EnsembleConfig":
        d = asdict(self)
        d.update(changes)
        return EnsembleConfig(**d)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class EnsembleReport:
    """Per-term statistics of one ensemble pass, plus pruning history.

    ``coefficients`` is ``(n_estimators, p)``. ``std`` is the population
    standard deviation over the estimators where the term is present, so a
    term present in a single estimator has ``std == 0``. With a single
    estimator CV is undefined (NaN) and selection uses consensus only.
    """

    columns: tuple[str, ...]
    coefficients: np.ndarray
    mean: np.ndarray
    std: np.ndarray
    cv: np.ndarray
    frequency: np.ndarray
    selected: np.ndarray
    cv_threshold: float
    history: list = field(default_factory=list)
    refined: "EnsembleReport | None" = None
    first_pass: "EnsembleReport | None" = None
    converged: bool = False
    target: str = "u_t"

    @property
    def n_estimators(self) -> int:
        return self.coefficients.shape[0]

    @property
    def cv_defined(self) -> bool:
        return self.n_estimators > 1

    @property
    def selected_terms(self) -> list[str]:
        return [c for c, s in zip(self.columns, self.selected) if s]

    @property
    def final(self) -> "EnsembleReport":
        """The refined pass when present, else this pass."""
        return self.refined if self.refined is not None else self

    def coefficients_of(self, selected_only: bool = True) -> dict:
        keep = self.selected if selected_only else np.ones(len(self.columns), bool)
        return {c: float(m) for c, m, k in zip(self.columns, self.mean, keep) if k}

    def equation(self, precision: int = 3) -> str:
        """``"u_t = -1.000*u*u_x|uw2 + 1.000*nu*u_xx|cd2"`` from the final pass."""
        final = self.final
        parts = []
        for name, c in final.coefficients_of().items():
            sign = "-" if c < 0 else "+"
            parts.append((sign, f"{abs(c):.{precision}f}*{name}"))
        if not parts:
            return f"{self.target} = 0"
        first_sign, first = parts[0]
        text = ("-" if first_sign == "-" else "") + first
        for sign, body in parts[1:]:
            text += f" {sign} {body}"
        return f"{self.target} = {text}"

    def term_table(self) -> list[dict]:
        rows = []
        for j, name in enumerate(self.columns):
            rows.append({"term": name, "mean": _num(self.mean[j]), "std": _num(self.std[j]),
                         "cv": _num(self.cv[j]), "frequency": float(self.frequency[j]),
                         "selected": bool(self.selected[j])})
        return rows

    def to_dict(self) -> dict:
        d = {
            "target": self.target,
            "equation": self.equation(),
            "converged": self.converged,
            "n_estimators": self.n_estimators,
            "cv_defined": self.cv_defined,
            "cv_threshold": self.cv_threshold,
            "terms": self.term_table(),
            "history": self.history,
        }
        if self.refined is not None:
            d["refined"] = {"terms": self.refined.term_table(),
                            "cv_defined": self.refined.cv_defined}
        return d

    def to_json(self, **kwargs) -> str:
        kwargs.setdefault("indent", 2)
        return json.dumps(self.to_dict(), **kwargs)


def _num(x):
    x = float(x)
    return None if math.isnan(x) else x


def realization_grams(snapshots: Sequence[FieldSnapshot], terms: Sequence[MonomialTerm],
                      target="u_t", buffer: int = BUFFER_CELLS, threads: int = 1) -> list[GramSystem]:
    """One Gram system per snapshot over ``terms``."""
    columns = [t.name for t in terms]

    def one(snap):
        theta, y = evaluate_features(snap, terms, target, buffer=buffer)
        return GramSystem.from_rows(columns, theta, y)

    if threads <= 1:
        return [one(s) for s in snapshots]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(one, snapshots))


def _as_batches(data, terms=None) -> list[GramSystem]:
    data = list(data)
    if not data:
        raise ValueError("no realizations given")
    if all(isinstance(d, GramSystem) for d in data):
        return data
    if terms is None:
        raise ValueError("terms are needed to evaluate snapshots")
    return realization_grams(data, terms)


def draw_subsets(n_batches: int, cfg: EnsembleConfig) -> list[np.ndarray]:
    """Sorted realization indices for each estimator."""
    k = math.ceil(cfg.fraction * n_batches)
    if cfg.fraction * n_batches < 1:
        raise ConfigError(f"fraction {cfg.fraction} of {n_batches} realizations draws nothing")
    out = []
    for m in range(cfg.n_estimators):
        rng = np.random.default_rng([cfg.seed, m])
        out.append(np.sort(rng.choice(n_batches, size=k, replace=False)))
    return out


def _sum_subset(batches, idx, columns) -> GramSystem:
    total = batches[idx[0]].subset(columns)
    for i in idx[1:]:
        total = total + batches[i].subset(columns)
    return total


def bootstrap_fit(data, terms=None, cfg: EnsembleConfig | None = None,
                  columns: Sequence[str] | None = None) -> list[SparseSolution]:
    """Fit ``cfg.n_estimators`` solvers on realization subsamples.

    ``data`` is a list of per-realization Gram systems, or snapshots together
    with ``terms``. ``columns`` restricts the fit to a subset of the library.
    """
    cfg = cfg or EnsembleConfig()
    batches = _as_batches(data, terms)
    columns = list(columns) if columns is not None else list(batches[0].columns)
    if not columns:
        raise ValueError("no columns to fit")
    subsets = draw_subsets(len(batches), cfg)

    def fit(idx):
        solver = make_solver(cfg.method, **cfg.solver_params)
        return solver.fit_gram(_sum_subset(batches, idx, columns)).solution()

    if cfg.threads <= 1:
        return [fit(idx) for idx in subsets]
    with ThreadPoolExecutor(max_workers=cfg.threads) as pool:
        return list(pool.map(fit, subsets))


def aggregate(solutions: Sequence[SparseSolution], cfg: EnsembleConfig | None = None,
              cv_threshold: float | None = None, target: str = "u_t") -> EnsembleReport:
    """Consensus frequency, mean, std and CV per term; dual-threshold selection."""
    cfg = cfg or EnsembleConfig()
    if not solutions:
        raise ValueError("no solutions to aggregate")
    columns = tuple(solutions[0].columns)
    for s in solutions[1:]:
        if tuple(s.columns) != columns:
            raise ValueError("solutions have different column orders")
    threshold = cfg.cv_init if cv_threshold is None else cv_threshold
    coefs = np.vstack([s.coef for s in solutions])
    present = np.abs(coefs) > cfg.noise_floor
    counts = present.sum(axis=0)
    freq = counts / coefs.shape[0]
    masked = np.where(present, coefs, 0.0)
    with np.errstate(invalid="ignore", divide="ignore"):
        mean = np.where(counts > 0, masked.sum(axis=0) / np.maximum(counts, 1), 0.0)
        var = np.where(present, (coefs - mean) ** 2, 0.0).sum(axis=0) / np.maximum(counts, 1)
    std = np.sqrt(var)
    if coefs.shape[0] > 1:
        cv = std / (np.abs(mean) + CV_EPS)
        stable = cv <= threshold
    else:
        cv = np.full(len(columns), np.nan)
        stable = np.ones(len(columns), bool)
    selected = (freq >= cfg.f_threshold) & stable & (counts > 0)
    return EnsembleReport(columns, coefs, mean, std, cv, freq, selected, threshold, target=target)


def _keep_most_stable(report: EnsembleReport, cfg: EnsembleConfig) -> None:
    if report.selected.any():
        return
    agree = np.flatnonzero(report.frequency >= cfg.f_threshold)
    if agree.size and report.cv_defined:
        report.selected[agree[np.argmin(report.cv[agree])]] = True


def _history_entry(iteration, report: EnsembleReport) -> dict:
    return {
        "iteration": iteration,
        "cv_threshold": report.cv_threshold,
        "active": list(report.columns),
        "selected": report.selected_terms,
        "stats": {c: {"mean": _num(report.mean[j]), "std": _num(report.std[j]),
                      "cv": _num(report.cv[j]), "frequency": float(report.frequency[j])}
                  for j, c in enumerate(report.columns) if report.selected[j]},
    }


def iterative_prune(data, terms=None, cfg: EnsembleConfig | None = None,
                    target: str = "u_t") -> EnsembleReport:
    """Repeat fit, aggregate and restrict until the active set settles.

    The CV test never removes the most stable term that passes consensus,
    so a decaying threshold narrows the set down to one term rather than to
    nothing. The loop stops when the set is unchanged and either the
    threshold is fixed (``cv_decay == 1``) or a single term remains, or
    after ``cfg.max_iter`` passes.

    Raises
    ------
    ConvergenceError
        When a pass selects no terms; the diagnostics carry the last
        non-empty active set.
    """
    cfg = cfg or EnsembleConfig()
    batches = _as_batches(data, terms)
    active = list(batches[0].columns)
    if not active:
        raise ValueError("library is empty")
    history = []
    report = None
    for it in range(cfg.max_iter):
        sols = bootstrap_fit(batches, cfg=cfg, columns=active)
        report = aggregate(sols, cfg, cfg.cv_threshold(it), target=target)
        _keep_most_stable(report, cfg)
        history.append(_history_entry(it, report))
        if it == 0:
            first = report
        new = report.selected_terms
        logger.info("pass %d: %d -> %d terms (cv threshold %.4g)", it, len(active), len(new),
                    report.cv_threshold)
        if not new:
            raise ConvergenceError(f"pass {it} pruned every term", last_active=active,
                                   history=history)
        if new == active and (cfg.cv_decay == 1.0 or len(new) == 1):
            report.converged = True
            break
        active = new
    report.history = history
    report.first_pass = first
    return report


def refined_fit(data, selected_terms: Sequence[str], cfg: EnsembleConfig | None = None,
                terms=None, target: str = "u_t") -> EnsembleReport:
    """Ensemble refit restricted to ``selected_terms``; all of them are reported."""
    cfg = cfg or EnsembleConfig()
    selected_terms = list(selected_terms)
    if not selected_terms:
        raise ValueError("refined fit needs at least one selected term")
    refit = cfg.replace(method=cfg.refine_method, solver_params=dict(cfg.refine_params))
    sols = bootstrap_fit(data, terms, refit, columns=selected_terms)
    report = aggregate(sols, cfg, target=target)
    report.selected = np.abs(report.mean) > 0
    return report


class EnsembleSINDy(RegressorMixin, BaseEstimator):
    """Parameter-aware sparse identification with ensemble pruning.

    ``fit`` takes a list of snapshots (or per-realization Gram systems), runs
    :func:`iterative_prune` and then :func:`refined_fit` on the survivors.

    Parameters
    ----------
    library : TermLibrary or list of MonomialTerm
        Candidate terms; an unfitted :class:`TermLibrary` is fitted first.
    config : EnsembleConfig, optional
    target : str
        ``"u_t"`` for PDE identification.
    refine : bool
        Run the restricted refit after pruning.
    """

    def __init__(self, library=None, config=None, target="u_t", refine=True):
        self.library = library
        self.config = config
        self.target = target
        self.refine = refine

    def _terms(self):
        lib = self.library
        if lib is None:
            raise ValueError("EnsembleSINDy needs a library")
        if hasattr(lib, "fit") and not hasattr(lib, "terms_"):
            lib.fit()
        return list(lib.terms_) if hasattr(lib, "terms_") else list(lib)

    def fit(self, X, y=None):
        cfg = self.config or EnsembleConfig()
        terms = self._terms()
        data = list(X)
        if data and not isinstance(data[0], GramSystem):
            data = realization_grams(data, terms, self.target, threads=cfg.threads)
        self.terms_ = terms
        report = iterative_prune(data, cfg=cfg, target=self.target)
        if self.refine:
            report.refined = refined_fit(data, report.selected_terms, cfg, target=self.target)
        self.report_ = report
        coef = report.final.coefficients_of()
        self.coef_ = np.array([coef.get(t.name, 0.0) for t in terms])
        return self

    def equation(self, precision: int = 3) -> str:
        check_is_fitted(self, "report_")
        return self.report_.equation(precision)

    def predict(self, X):
        """Target rows for snapshots ``X`` (or a feature matrix over the full library)."""
        check_is_fitted(self, "coef_")
        if isinstance(X, np.ndarray):
            return X @ self.coef_
        if isinstance(X, FieldSnapshot):
            X = [X]
        active = [t for t, c in zip(self.terms_, self.coef_) if c != 0]
        coef = self.coef_[self.coef_ != 0]
        return np.concatenate([evaluate_features(s, active, self.target)[0] @ coef for s in X])
