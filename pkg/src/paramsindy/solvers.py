"""Sparse solvers that need only the Gram pair.

Every solver works on the standardized system: columns are scaled to unit
root-mean-square (from ``diag(G) / n_rows``) and the target to unit RMS, so
thresholds and penalties are dimensionless. Returned coefficients are in the
original column units.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numba
import numpy as np
from scipy import linalg
from sklearn.base import BaseEstimator, RegressorMixin

from .exceptions import ConvergenceError
from .gram import GramSystem

logger = logging.getLogger(__name__)


@dataclass
class SparseSolution:
    coef: np.ndarray
    columns: tuple[str, ...]
    method: str
    hyperparameters: dict = field(default_factory=dict)

    @property
    def active(self) -> np.ndarray:
        return np.abs(self.coef) > 0

    @property
    def active_terms(self) -> list[str]:
        return [c for c, a in zip(self.columns, self.active) if a]

    def as_dict(self) -> dict:
        return dict(zip(self.columns, map(float, self.coef)))


@dataclass
class Standardized:
    """Gram pair rescaled to unit-RMS columns and target."""

    G: np.ndarray
    b: np.ndarray
    col_scale: np.ndarray
    y_scale: float
    live: np.ndarray

    @classmethod
    def from_gram(cls, gram: GramSystem) -> "Standardized":
        n = gram.n_rows
        if n == 0:
            raise ValueError("Gram system holds no rows")
        if n < gram.p:
            warnings.warn(f"only {n} rows for {gram.p} columns; solution is underdetermined",
                          RuntimeWarning, stacklevel=3)
        diag = np.clip(np.diag(gram.G), 0.0, None)
        scale = np.sqrt(diag / n)
        live = scale > 0
        s = np.where(live, scale, 1.0)
        y_scale = np.sqrt(gram.y_ss / n) if gram.y_ss > 0 else 1.0
        G = gram.G / (n * np.outer(s, s))
        b = gram.b / (n * s * y_scale)
        G[~live, :] = 0.0
        G[:, ~live] = 0.0
        b[~live] = 0.0
        return cls(G, b, s, float(y_scale), live)

    def unscale(self, z: np.ndarray) -> np.ndarray:
        return np.where(self.live, z * self.y_scale / self.col_scale, 0.0)

    def rel_error(self, z: np.ndarray) -> float:
        """Residual energy relative to ``sum y^2`` for standardized coefficients."""
        return float(1.0 - 2 * z @ self.b + z @ self.G @ z)


def _ridge_solve(G, b, lam, idx=None):
    if idx is None:
        idx = np.arange(len(b))
    z = np.zeros(len(b))
    if len(idx) == 0:
        return z
    A = G[np.ix_(idx, idx)] + lam * np.eye(len(idx))
    try:
        c, low = linalg.cho_factor(A, check_finite=False)
        z[idx] = linalg.cho_solve((c, low), b[idx], check_finite=False)
    except linalg.LinAlgError:
        if lam == 0:
            raise ValueError("Gram matrix is singular; use a positive ridge penalty") from None
        z[idx] = linalg.lstsq(A, b[idx])[0]
    if not np.all(np.isfinite(z)):
        raise ValueError("ridge solve produced non-finite coefficients")
    return z


def ridge_standardized(std: Standardized, lam: float) -> np.ndarray:
    idx = np.flatnonzero(std.live)
    if lam == 0 and len(idx):
        G = std.G[np.ix_(idx, idx)]
        w = np.linalg.eigvalsh(G)
        if w[0] <= 1e-14 * max(w[-1], 1e-300):
            raise ValueError("Gram matrix is singular; use a positive ridge penalty")
    return _ridge_solve(std.G, std.b, lam, idx)


def stlsq_standardized(std: Standardized, lam: float, threshold: float, max_iter: int = 20):
    live = np.flatnonzero(std.live)
    z = _ridge_solve(std.G, std.b, lam, live)
    active = std.live & (np.abs(z) >= threshold)
    for it in range(max_iter):
        z = _ridge_solve(std.G, std.b, lam, np.flatnonzero(active))
        new_active = active & (np.abs(z) >= threshold)
        if np.array_equal(new_active, active):
            break
        active = new_active
    z[~active] = 0.0
    return z


def soft_threshold(x, t):
    return np.sign(x) * np.maximum(np.abs(x) - t, 0.0)


def elasticnet_objective(G, b, z, alpha, l1_ratio) -> float:
    return float(0.5 * z @ G @ z - b @ z + alpha * l1_ratio * np.abs(z).sum()
                 + 0.5 * alpha * (1 - l1_ratio) * z @ z)


@numba.njit(cache=True)
def _cd_sweeps(G, b, z, live, l1, l2, tol, max_sweeps, history):
    grad = b - G @ z
    p = len(b)
    for sweep in range(max_sweeps):
        max_change = 0.0
        for j in range(p):
            if not live[j]:
                continue
            old = z[j]
            rho = grad[j] + G[j, j] * old
            mag = abs(rho) - l1
            new = 0.0
            if mag > 0:
                new = (mag if rho > 0 else -mag) / (G[j, j] + l2)
            if new != old:
                delta = new - old
                for i in range(p):
                    grad[i] -= G[i, j] * delta
                z[j] = new
                if abs(delta) > max_change:
                    max_change = abs(delta)
        if sweep < len(history):
            obj = 0.0
            for i in range(p):
                # 1/2 z'Gz - b'z = -1/2 z'(b + grad) since grad = b - Gz
                obj += -0.5 * z[i] * (b[i] + grad[i]) + l1 * abs(z[i]) + 0.5 * l2 * z[i] * z[i]
            history[sweep] = obj
        if max_change < tol:
            return sweep + 1, max_change
    return -1, max_change


def elasticnet_standardized(std: Standardized, alpha: float, l1_ratio: float = 0.9,
                            tol: float = 1e-10, max_sweeps: int = 10_000, z0=None,
                            history: list | None = None, strict: bool = False) -> np.ndarray:
    """Cyclic coordinate descent on ``1/2 z'Gz - b'z + a*r|z|_1 + a(1-r)/2 |z|^2``.

    ``history``, when given, receives the objective after every sweep.
    Hitting ``max_sweeps`` stops the descent with a warning, or raises
    :class:`ConvergenceError` when ``strict``.
    """
    p = len(std.b)
    z = np.zeros(p) if z0 is None else np.array(z0, dtype=float)
    trace = np.full(max_sweeps if history is not None else 0, np.nan)
    sweeps, change = _cd_sweeps(std.G, std.b, z, std.live, alpha * l1_ratio,
                                alpha * (1 - l1_ratio), tol, max_sweeps, trace)
    if history is not None:
        history.extend(trace[~np.isnan(trace)].tolist())
    if not np.all(np.isfinite(z)):
        raise ConvergenceError("elastic net iterate became non-finite", coef=z, alpha=alpha)
    if sweeps < 0:
        _cap_reached(strict, f"elastic net stopped at {max_sweeps} sweeps",
                     coef=z, last_change=change, alpha=alpha)
    return z


def _cap_reached(strict, message, **diag):
    if strict:
        raise ConvergenceError(message, **diag)
    logger.debug("%s (last change %.3g)", message, diag.get("last_change", np.nan))


def sr3_standardized(std: Standardized, lam: float, kappa: float = 1.0, tol: float = 1e-10,
                     max_iter: int = 10_000, w0=None, strict: bool = False) -> np.ndarray:
    """Relaxed regression with an L0 prox (hard threshold at ``sqrt(2 lam / kappa)``)."""
    G, b = std.G, std.b
    p = len(b)
    live = std.live
    A_inv = linalg.cho_solve(linalg.cho_factor(G + kappa * np.eye(p), check_finite=False),
                             np.eye(p), check_finite=False)
    base = A_inv @ b
    K = kappa * A_inv
    thresh = np.sqrt(2 * lam / kappa)
    w = base.copy() if w0 is None else np.array(w0, dtype=float)
    change = np.inf
    for it in range(max_iter):
        z = base + K @ w
        w_new = np.where((np.abs(z) >= thresh) & live, z, 0.0)
        change = float(np.max(np.abs(w_new - w))) if p else 0.0
        w = w_new
        if change < tol:
            return w
    if not np.all(np.isfinite(w)):
        raise ConvergenceError("SR3 iterate became non-finite", coef=w, lam=lam)
    _cap_reached(strict, f"SR3 stopped at {max_iter} iterations", coef=w, last_change=change, lam=lam)
    return w


def _select_by_error(path, errors, err_tol):
    """Sparsest point of a path whose error is within ``err_tol`` of the best."""
    errors = np.asarray(errors)
    ok = np.flatnonzero(errors <= errors.min() + err_tol)
    return int(ok[-1])  # paths run from weakest to strongest penalty


class _GramSolver(RegressorMixin, BaseEstimator):
    """Shared scikit-learn plumbing; subclasses implement ``_solve``."""

    method = "base"

    def fit(self, X, y):
        X = np.asarray(X, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        names = [f"x{i}" for i in range(X.shape[1])]
        return self.fit_gram(GramSystem.from_rows(names, X, y))

    def fit_gram(self, gram: GramSystem):
        std = Standardized.from_gram(gram)
        z, extra = self._solve(std)
        self.coef_standardized_ = z
        self.coef_ = std.unscale(z)
        if not np.all(np.isfinite(self.coef_)):
            raise ConvergenceError(f"{self.method} produced non-finite coefficients", coef=self.coef_)
        self.columns_ = gram.columns
        self.n_features_in_ = gram.p
        self.hyperparameters_ = {**self.get_params(), **extra}
        return self

    def predict(self, X):
        return np.asarray(X, dtype=float) @ self.coef_

    def solution(self) -> SparseSolution:
        return SparseSolution(self.coef_.copy(), tuple(self.columns_), self.method,
                              dict(self.hyperparameters_))


class Ridge(_GramSolver):
    method = "ridge"

    def __init__(self, lam=1e-6):
        self.lam = lam

    def _solve(self, std):
        if self.lam < 0:
            raise ValueError("ridge penalty must be non-negative")
        return ridge_standardized(std, self.lam), {}


class STLSQ(_GramSolver):
    """Sequentially thresholded ridge regression."""

    method = "stlsq"

    def __init__(self, lam=1e-6, threshold=0.1, max_iter=20):
        self.lam = lam
        self.threshold = threshold
        self.max_iter = max_iter

    def _solve(self, std):
        if self.threshold < 0 or self.lam < 0:
            raise ValueError("threshold and ridge penalty must be non-negative")
        return stlsq_standardized(std, self.lam, self.threshold, self.max_iter), {}


class ElasticNet(_GramSolver):
    """Coordinate-descent elastic net.

    ``alpha="auto"`` sweeps ``n_alphas`` log-spaced penalties below the
    all-zero penalty and keeps the strongest one whose relative residual is
    within ``err_tol`` of the best on the path. The tolerance is tighter than
    SR3's because the L1 penalty also shrinks the coefficients it keeps.
    """

    method = "elasticnet"

    def __init__(self, alpha="auto", l1_ratio=0.9, n_alphas=10, alpha_min_ratio=1e-4,
                 err_tol=0.002, tol=1e-10, max_sweeps=10_000, strict=False):
        self.alpha = alpha
        self.l1_ratio = l1_ratio
        self.n_alphas = n_alphas
        self.alpha_min_ratio = alpha_min_ratio
        self.err_tol = err_tol
        self.tol = tol
        self.max_sweeps = max_sweeps
        self.strict = strict

    def _solve(self, std):
        if not 0 < self.l1_ratio <= 1:
            raise ValueError("l1_ratio must lie in (0, 1]")
        if self.alpha != "auto":
            if self.alpha < 0:
                raise ValueError("alpha must be non-negative")
            return elasticnet_standardized(std, float(self.alpha), self.l1_ratio, self.tol,
                                           self.max_sweeps, strict=self.strict), {}
        alpha_max = max(np.max(np.abs(std.b)) / self.l1_ratio, 1e-300)
        alphas = alpha_max * np.logspace(np.log10(self.alpha_min_ratio), 0, self.n_alphas)
        path, errors = [], []
        z = None
        for a in alphas[::-1]:  # strongest first for warm starts
            z = elasticnet_standardized(std, a, self.l1_ratio, self.tol, self.max_sweeps, z0=z,
                                        strict=self.strict)
            path.append(z.copy())
            errors.append(std.rel_error(z))
        path, errors = path[::-1], errors[::-1]
        k = _select_by_error(path, errors, self.err_tol)
        return path[k], {"alpha_selected": float(alphas[k])}


class SR3(_GramSolver):
    """Sparse relaxed regularized regression with an L0 penalty.

    ``lam="auto"`` sweeps ``n_lams`` penalties (thresholds log-spaced between
    ``threshold_range``) and keeps the strongest within ``err_tol`` of the
    best relative residual.
    """

    method = "sr3"

    def __init__(self, lam="auto", kappa=1.0, n_lams=10, threshold_range=(1e-3, 1.0),
                 err_tol=0.01, tol=1e-10, max_iter=10_000, strict=False):
        self.lam = lam
        self.kappa = kappa
        self.n_lams = n_lams
        self.threshold_range = threshold_range
        self.err_tol = err_tol
        self.tol = tol
        self.max_iter = max_iter
        self.strict = strict

    def _solve(self, std):
        if not self.kappa > 0:
            raise ValueError("kappa must be positive")
        if self.lam != "auto":
            if self.lam < 0:
                raise ValueError("lam must be non-negative")
            return sr3_standardized(std, float(self.lam), self.kappa, self.tol, self.max_iter,
                                    strict=self.strict), {}
        lo, hi = self.threshold_range
        thresholds = np.logspace(np.log10(lo), np.log10(hi), self.n_lams)
        lams = 0.5 * self.kappa * thresholds**2
        path, errors = [], []
        for lam in lams:
            w = sr3_standardized(std, lam, self.kappa, self.tol, self.max_iter, strict=self.strict)
            path.append(w)
            errors.append(std.rel_error(w))
        k = _select_by_error(path, errors, self.err_tol)
        return path[k], {"lam_selected": float(lams[k])}


SOLVERS = {cls.method: cls for cls in (Ridge, STLSQ, ElasticNet, SR3)}


def make_solver(method: str, **params) -> _GramSolver:
    try:
        cls = SOLVERS[method]
    except KeyError:
        raise ValueError(f"unknown solver {method!r}; choose from {sorted(SOLVERS)}") from None
    return cls(**params)


def solve(gram: GramSystem, method, **params) -> SparseSolution:
    """Fit ``method`` (a name or an unfitted solver instance) to ``gram``."""
    solver = make_solver(method, **params) if isinstance(method, str) else method
    return solver.fit_gram(gram).solution()
