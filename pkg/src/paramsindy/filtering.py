"""Box filtering, exact subgrid stress and analytic closures for filtered Burgers."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class FilterSpec:
    """Node-centred box window of ``width_cells`` nodes (odd); ``Delta = width_cells * dx``."""

    width_cells: int

    def __post_init__(self):
        k = self.width_cells
        if int(k) != k or k < 1 or k % 2 == 0:
            raise ValueError(f"filter width must be an odd integer >= 1, got {k}")

    def delta(self, dx: float) -> float:
        return self.width_cells * dx


def _as_spec(spec) -> FilterSpec:
    return spec if isinstance(spec, FilterSpec) else FilterSpec(int(spec))


def box_filter(u, spec, closed: bool = False) -> np.ndarray:
    """Periodic moving average over the last axis.

    ``closed=True`` marks data whose last node repeats the first (the storage
    convention of the solver); the duplicate is excluded from the period and
    restored afterwards.
    """
    spec = _as_spec(spec)
    u = np.asarray(u, dtype=float)
    if closed:
        out = box_filter(u[..., :-1], spec)
        return np.concatenate([out, out[..., :1]], axis=-1)
    n = u.shape[-1]
    k = spec.width_cells
    if k > n:
        raise ValueError(f"filter width {k} exceeds {n} nodes")
    if k == 1:
        return u.copy()
    half = k // 2
    acc = u.copy()
    for s in range(1, half + 1):
        acc += np.roll(u, s, axis=-1) + np.roll(u, -s, axis=-1)
    return acc / k


def true_sgs_stress(u, spec, closed: bool = False) -> np.ndarray:
    """``filter(u^2) - filter(u)^2`` on the same window; non-negative up to rounding."""
    ubar = box_filter(u, spec, closed)
    return box_filter(np.asarray(u, dtype=float) ** 2, spec, closed) - ubar**2


CLOSURE_KINDS = ("taylor", "leonard", "smagorinsky", "sindy_signed")


@dataclass(frozen=True)
class ClosureModel:
    """Analytic or discovered subgrid closure.

    ``coefficient`` is ``C_s`` for ``smagorinsky`` and ``C`` (the raw
    ``Delta^2 u_x^2`` coefficient) for ``sindy_signed``; ``order`` is the
    Leonard series truncation.
    """

    kind: str
    coefficient: float | None = None
    order: int = 1

    def __post_init__(self):
        if self.kind not in CLOSURE_KINDS:
            raise ValueError(f"closure kind must be one of {CLOSURE_KINDS}, got {self.kind!r}")
        if self.kind in ("smagorinsky", "sindy_signed"):
            if self.coefficient is None or not self.coefficient > 0:
                raise ValueError(f"{self.kind} needs a positive coefficient")
        if self.kind == "leonard" and self.order not in (1, 2, 3):
            raise ValueError(f"leonard order must be 1, 2 or 3, got {self.order}")

    @property
    def label(self) -> str:
        if self.kind == "smagorinsky":
            return f"smagorinsky(Cs={self.coefficient:g})"
        if self.kind == "sindy_signed":
            return f"sindy(C={self.coefficient:.4f})"
        if self.kind == "leonard":
            return f"leonard(order={self.order})"
        return self.kind

    def required_fields(self) -> tuple[str, ...]:
        if self.kind == "taylor":
            return ("u", "u_x", "u_xx")
        if self.kind == "leonard":
            return ("u_x", "u_xx", "u_xxx")[: self.order]
        return ("u_x",)

    def predict(self, fields: dict, delta) -> np.ndarray:
        return closure_eval(self, fields, delta)


def closure_eval(model: ClosureModel, fields: dict, delta) -> np.ndarray:
    """Evaluate a closure on filtered fields (keys ``u``, ``u_x``, ``u_xx``, ``u_xxx``)."""
    missing = [k for k in model.required_fields() if k not in fields]
    if missing:
        raise KeyError(f"{model.label} needs filtered fields {missing}")
    d2 = np.asarray(delta, dtype=float) ** 2
    if model.kind == "taylor":
        ux, uxx, u = (np.asarray(fields[k], dtype=float) for k in ("u_x", "u_xx", "u"))
        return d2 / 12.0 * (ux**2 - u * uxx)
    if model.kind == "leonard":
        keys = ("u_x", "u_xx", "u_xxx")
        return sum(d2**m / math.factorial(m) * np.asarray(fields[keys[m - 1]], dtype=float) ** 2
                   for m in range(1, model.order + 1))
    ux = np.asarray(fields["u_x"], dtype=float)
    c = model.coefficient**2 if model.kind == "smagorinsky" else model.coefficient
    return -c * d2 * ux * np.abs(ux)


def closure_metrics(predicted, truth) -> dict:
    """MSE, MAE and R^2 of signed stresses."""
    predicted = np.asarray(predicted, dtype=float)
    truth = np.asarray(truth, dtype=float)
    if predicted.shape != truth.shape:
        raise ValueError(f"shape mismatch: {predicted.shape} vs {truth.shape}")
    err = predicted - truth
    ss_tot = float(np.sum((truth - truth.mean()) ** 2))
    if ss_tot == 0:
        raise ValueError("R^2 undefined for a constant truth field")
    return {
        "mse": float(np.mean(err**2)),
        "mae": float(np.mean(np.abs(err))),
        "r2": 1.0 - float(np.sum(err**2)) / ss_tot,
    }
