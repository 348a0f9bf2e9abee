"""Evaluate library terms on a snapshot to produce regression rows."""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .filtering import FilterSpec, box_filter, true_sgs_stress
from .grid import BUFFER_CELLS, FieldSnapshot, SchemeTag, apply_stencil, time_derivative, trim_buffer
from .library import MonomialTerm


def base_columns(u: np.ndarray, dx: float, terms: Sequence[MonomialTerm]) -> dict:
    """Each distinct field/derivative factor of ``terms`` evaluated once."""
    cols = {}
    for term in terms:
        for b, _ in term.fields:
            if b.name in cols:
                continue
            if b.kind == "field":
                cols[b.name] = u
            else:
                advect = u if b.tag is SchemeTag.UW2 else None
                cols[b.name] = apply_stencil(u, dx, b.tag, advect=advect)
    return cols


def term_values(term: MonomialTerm, cols: dict, params: dict, shape) -> np.ndarray:
    scale = 1.0
    for sym, k in term.params:
        if sym not in params:
            raise KeyError(f"term {term.name!r} needs parameter {sym!r}, snapshot has {sorted(params)}")
        scale *= params[sym] ** k
    out = np.full(shape, scale)
    for b, k in term.fields:
        out = out * cols[b.name] ** k
    return out


def sgs_inputs(snapshot: FieldSnapshot, spec: FilterSpec) -> tuple[np.ndarray, np.ndarray, dict]:
    """Filtered field, exact stress and parameters (with ``Delta``) of a periodic snapshot."""
    spec = spec if isinstance(spec, FilterSpec) else FilterSpec(int(spec))
    ubar = box_filter(snapshot.u, spec, closed=True)
    tau = true_sgs_stress(snapshot.u, spec, closed=True)
    params = dict(snapshot.params)
    params["Delta"] = spec.delta(snapshot.grid.dx)
    return ubar, tau, params


def evaluate_features(snapshot: FieldSnapshot, terms: Sequence[MonomialTerm], target="u_t",
                      filter_spec=None, buffer: int = BUFFER_CELLS):
    """Feature rows ``theta`` (rows x p) and target ``y`` for one snapshot.

    ``target`` is ``"u_t"``, ``"tau_sgs"`` (filter ``snapshot.u`` with
    ``filter_spec`` and regress the exact stress on filtered-field terms) or a
    precomputed ``(n_t, n_x)`` array. ``buffer`` columns are trimmed from each
    spatial end before the rows are flattened.
    """
    dx = snapshot.grid.dx
    if isinstance(target, str) and target == "u_t":
        field, params = snapshot.u, snapshot.params
        y = time_derivative(snapshot)
    elif isinstance(target, str) and target == "tau_sgs":
        if filter_spec is None:
            raise ValueError("tau_sgs target needs a filter_spec")
        field, y, params = sgs_inputs(snapshot, filter_spec)
    elif isinstance(target, str):
        raise ValueError(f"unknown target {target!r}")
    else:
        field, params = snapshot.u, snapshot.params
        y = np.asarray(target, dtype=float)
        if y.shape != field.shape:
            raise ValueError(f"target shape {y.shape} does not match field {field.shape}")

    for term in terms:
        missing = [s for s, _ in term.params if s not in params]
        if missing:
            raise KeyError(f"term {term.name!r} needs parameter(s) {missing}; "
                           f"snapshot has {sorted(params)}")

    cols = base_columns(field, dx, terms)
    y = trim_buffer(y, buffer)
    n_rows = y.size
    theta = np.empty((n_rows, len(terms)))
    trimmed = {k: trim_buffer(v, buffer) for k, v in cols.items()}
    for j, term in enumerate(terms):
        theta[:, j] = term_values(term, trimmed, params, y.shape).ravel()
    return theta, y.ravel()
