"""Uniform 1D space-time grids, field snapshots and finite-difference stencils."""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Mapping

import numpy as np

# Widest stencil reaches two cells; boundary rows inside this halo are approximate.
BUFFER_CELLS = 2


class SchemeTag(str, Enum):
    """Finite-difference scheme attached to a derivative base term."""

    CD1 = "cd1"
    CD2 = "cd2"
    CD2_3RD = "cd2_3rd"
    CD2_4TH = "cd2_4th"
    UW2 = "uw2"

    @property
    def order(self) -> int:
        """Derivative order the stencil approximates."""
        return _DERIV_ORDER[self]

    @property
    def halo(self) -> int:
        """Number of boundary nodes on each side without a full stencil."""
        return _HALO[self]


_DERIV_ORDER = {
    SchemeTag.CD1: 1,
    SchemeTag.UW2: 1,
    SchemeTag.CD2: 2,
    SchemeTag.CD2_3RD: 3,
    SchemeTag.CD2_4TH: 4,
}
_HALO = {
    SchemeTag.CD1: 1,
    SchemeTag.CD2: 1,
    SchemeTag.CD2_3RD: 2,
    SchemeTag.CD2_4TH: 2,
    SchemeTag.UW2: 2,
}
_WIDTH = {tag: 2 * h + 1 for tag, h in _HALO.items()}
_WIDTH[SchemeTag.UW2] = 3


@dataclass(frozen=True)
class Grid1D:
    """Node-centred uniform grid; both endpoints are nodes."""

    x_min: float
    x_max: float
    n_x: int
    t_min: float
    t_max: float
    n_t: int

    def __post_init__(self):
        if self.n_x < 7:
            raise ValueError(f"n_x must be >= 7, got {self.n_x}")
        if self.n_t < 2:
            raise ValueError(f"n_t must be >= 2, got {self.n_t}")
        if not self.x_max > self.x_min:
            raise ValueError("x_max must exceed x_min")
        if not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")

    @property
    def dx(self) -> float:
        return (self.x_max - self.x_min) / (self.n_x - 1)

    @property
    def dt(self) -> float:
        return (self.t_max - self.t_min) / (self.n_t - 1)

    @property
    def length(self) -> float:
        return self.x_max - self.x_min

    @property
    def x(self) -> np.ndarray:
        return np.linspace(self.x_min, self.x_max, self.n_x)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.n_t)


@dataclass
class FieldSnapshot:
    """One space-time realization ``u[t, x]`` plus the physical parameters used."""

    grid: Grid1D
    u: np.ndarray
    params: dict[str, float] = field(default_factory=dict)

    def __post_init__(self):
        self.u = np.asarray(self.u, dtype=float)
        expected = (self.grid.n_t, self.grid.n_x)
        if self.u.shape != expected:
            raise ValueError(f"field shape {self.u.shape} does not match grid {expected}")
        if not np.all(np.isfinite(self.u)):
            raise ValueError("field contains non-finite values")
        self.params = {str(k): float(v) for k, v in dict(self.params).items()}

    def require(self, names: Mapping[str, object] | list[str]) -> None:
        missing = [n for n in names if n not in self.params]
        if missing:
            raise KeyError(f"snapshot lacks parameters {missing}; has {sorted(self.params)}")


def _coerce_tag(tag) -> SchemeTag:
    try:
        return SchemeTag(tag)
    except ValueError:
        raise ValueError(f"unknown scheme tag {tag!r}") from None


def _interior(u: np.ndarray, dx: float, tag: SchemeTag, i0: int, i1: int) -> np.ndarray:
    """Central stencils evaluated for centres i0..i1-1 along the last axis."""
    s = lambda k: u[..., i0 + k:i1 + k]  # noqa: E731
    if tag is SchemeTag.CD1:
        return (s(1) - s(-1)) / (2 * dx)
    if tag is SchemeTag.CD2:
        return (s(1) - 2 * s(0) + s(-1)) / dx**2
    if tag is SchemeTag.CD2_3RD:
        return (s(2) - 2 * s(1) + 2 * s(-1) - s(-2)) / (2 * dx**3)
    if tag is SchemeTag.CD2_4TH:
        return (s(2) - 4 * s(1) + 6 * s(0) - 4 * s(-1) + s(-2)) / dx**4
    raise AssertionError(tag)


def _periodic(u: np.ndarray, dx: float, tag: SchemeTag, advect) -> np.ndarray:
    r = lambda k: np.roll(u, -k, axis=-1)  # noqa: E731  (r(k)[i] == u[i+k])
    if tag is SchemeTag.CD1:
        return (r(1) - r(-1)) / (2 * dx)
    if tag is SchemeTag.CD2:
        return (r(1) - 2 * u + r(-1)) / dx**2
    if tag is SchemeTag.CD2_3RD:
        return (r(2) - 2 * r(1) + 2 * r(-1) - r(-2)) / (2 * dx**3)
    if tag is SchemeTag.CD2_4TH:
        return (r(2) - 4 * r(1) + 6 * u - 4 * r(-1) + r(-2)) / dx**4
    back = (3 * u - 4 * r(-1) + r(-2)) / (2 * dx)
    fwd = (-3 * u + 4 * r(1) - r(2)) / (2 * dx)
    return np.where(advect >= 0, back, fwd)


def apply_stencil(u, dx: float, tag, advect=None, periodic: bool = False) -> np.ndarray:
    """Finite-difference derivative along the last axis.

    Parameters
    ----------
    u : array_like
        Samples on a uniform grid; a vector or a ``(n_t, n_x)`` matrix.
    dx : float
        Grid spacing.
    tag : SchemeTag or str
        One of ``cd1``, ``cd2``, ``cd2_3rd``, ``cd2_4th``, ``uw2``.
    advect : array_like, optional
        Advecting velocity, same shape as ``u``; required for ``uw2`` and
        only for ``uw2``. Non-negative entries select the backward stencil.
    periodic : bool
        Wrap stencils around the ends. With ``periodic=False`` the
        ``tag.halo`` outermost nodes get one-sided, lower-order values and
        should be removed with :func:`trim_buffer` before regression.
    """
    tag = _coerce_tag(tag)
    u = np.asarray(u, dtype=float)
    n = u.shape[-1]
    if n < _WIDTH[tag]:
        raise ValueError(f"{tag.value} needs at least {_WIDTH[tag]} points, got {n}")
    if tag is SchemeTag.UW2:
        if advect is None:
            raise ValueError("uw2 requires an advecting velocity")
        advect = np.broadcast_to(np.asarray(advect, dtype=float), u.shape)
    elif advect is not None:
        raise ValueError(f"advect is only meaningful for uw2, not {tag.value}")

    if periodic:
        return _periodic(u, dx, tag, advect)

    out = np.empty_like(u)
    if tag is SchemeTag.UW2:
        back = np.full_like(u, np.nan)
        fwd = np.full_like(u, np.nan)
        back[..., 2:] = (3 * u[..., 2:] - 4 * u[..., 1:-1] + u[..., :-2]) / (2 * dx)
        fwd[..., :-2] = (-3 * u[..., :-2] + 4 * u[..., 1:-1] - u[..., 2:]) / (2 * dx)
        # first-order one-sided fallbacks where the upwind side is missing
        back[..., :2] = (u[..., 1:3] - u[..., 0:2]) / dx
        fwd[..., -2:] = (u[..., -2:] - u[..., -3:-1]) / dx
        return np.where(advect >= 0, back, fwd)

    h = tag.halo
    out[..., h:n - h] = _interior(u, dx, tag, h, n - h)
    if tag is SchemeTag.CD1:
        out[..., 0] = (u[..., 1] - u[..., 0]) / dx
        out[..., -1] = (u[..., -1] - u[..., -2]) / dx
    else:
        # shifted (off-centre) copies of the nearest full stencil
        out[..., :h] = out[..., h:h + 1]
        out[..., n - h:] = out[..., n - h - 1:n - h]
    return out


def time_derivative(snapshot: FieldSnapshot) -> np.ndarray:
    """Second-order time derivative of ``snapshot.u`` (central inside, one-sided at ends)."""
    u = snapshot.u
    if u.shape[0] < 3:
        raise ValueError(f"time derivative needs n_t >= 3, got {u.shape[0]}")
    dt = snapshot.grid.dt
    ut = np.empty_like(u)
    ut[1:-1] = (u[2:] - u[:-2]) / (2 * dt)
    ut[0] = (-3 * u[0] + 4 * u[1] - u[2]) / (2 * dt)
    ut[-1] = (3 * u[-1] - 4 * u[-2] + u[-3]) / (2 * dt)
    return ut


def trim_buffer(values, n_cells: int = BUFFER_CELLS) -> np.ndarray:
    """Drop ``n_cells`` columns from each spatial end."""
    values = np.asarray(values)
    n_x = values.shape[-1]
    if n_cells < 0:
        raise ValueError("n_cells must be non-negative")
    if n_x <= 2 * n_cells:
        raise ValueError(f"cannot trim {n_cells} cells from each end of {n_x} columns")
    if n_cells == 0:
        return values
    return values[..., n_cells:n_x - n_cells]
