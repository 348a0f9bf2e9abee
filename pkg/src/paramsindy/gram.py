"""Normal-equation accumulation ``G = sum Theta_i^T Theta_i``, ``b = sum Theta_i^T y_i``."""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

_MAGIC = b"GRAMSYS1"


@dataclass
class GramSystem:
    """Accumulated Gram pair with enough side information to score any solution.

    Memory is ``O(p^2)`` regardless of how many rows have been absorbed.
    """

    columns: tuple[str, ...]
    G: np.ndarray = None
    b: np.ndarray = None
    n_rows: int = 0
    y_ss: float = 0.0
    y_sum: float = 0.0

    def __post_init__(self):
        self.columns = tuple(self.columns)
        p = len(self.columns)
        self.G = np.zeros((p, p)) if self.G is None else np.asarray(self.G, dtype=float)
        self.b = np.zeros(p) if self.b is None else np.asarray(self.b, dtype=float)
        if self.G.shape != (p, p) or self.b.shape != (p,):
            raise ValueError(f"G {self.G.shape} / b {self.b.shape} do not match {p} columns")

    @classmethod
    def empty(cls, columns: Sequence[str]) -> "GramSystem":
        return cls(tuple(columns))

    @classmethod
    def from_rows(cls, columns, theta, y) -> "GramSystem":
        return cls.empty(columns).accumulate(theta, y)

    @property
    def p(self) -> int:
        return len(self.columns)

    @property
    def nbytes(self) -> int:
        return self.G.nbytes + self.b.nbytes

    def copy(self) -> "GramSystem":
        return GramSystem(self.columns, self.G.copy(), self.b.copy(), self.n_rows, self.y_ss, self.y_sum)

    def accumulate(self, theta, y, columns: Sequence[str] | None = None) -> "GramSystem":
        """Add one batch of rows in place and return ``self``."""
        if columns is not None and tuple(columns) != self.columns:
            raise ValueError("batch columns do not match the Gram system columns")
        theta = np.asarray(theta, dtype=float)
        y = np.asarray(y, dtype=float).ravel()
        if theta.ndim != 2 or theta.shape[1] != self.p:
            raise ValueError(f"batch has shape {theta.shape}, expected (rows, {self.p})")
        if theta.shape[0] != y.shape[0]:
            raise ValueError(f"{theta.shape[0]} feature rows but {y.shape[0]} targets")
        if theta.shape[0] == 0:
            return self
        self.G += theta.T @ theta
        self.b += theta.T @ y
        self.n_rows += theta.shape[0]
        self.y_ss += float(y @ y)
        self.y_sum += float(y.sum())
        return self

    def __add__(self, other: "GramSystem") -> "GramSystem":
        if other.columns != self.columns:
            raise ValueError("cannot merge Gram systems with different columns")
        return GramSystem(self.columns, self.G + other.G, self.b + other.b,
                          self.n_rows + other.n_rows, self.y_ss + other.y_ss,
                          self.y_sum + other.y_sum)

    def subset(self, columns: Sequence[str]) -> "GramSystem":
        """Gram system restricted to ``columns`` (a sub-matrix, no data pass needed)."""
        index = {c: i for i, c in enumerate(self.columns)}
        try:
            idx = [index[c] for c in columns]
        except KeyError as exc:
            raise KeyError(f"column {exc.args[0]!r} not in Gram system") from None
        return GramSystem(tuple(columns), self.G[np.ix_(idx, idx)].copy(), self.b[idx].copy(),
                          self.n_rows, self.y_ss, self.y_sum)

    def rss(self, coef) -> float:
        """Residual sum of squares ``|y - Theta coef|^2`` from the Gram pair alone."""
        coef = np.asarray(coef, dtype=float)
        return float(self.y_ss - 2 * coef @ self.b + coef @ self.G @ coef)

    def r2(self, coef) -> float:
        ss_tot = self.y_ss - self.y_sum**2 / max(self.n_rows, 1)
        if ss_tot <= 0:
            raise ValueError("R^2 undefined for a constant target")
        return 1.0 - self.rss(coef) / ss_tot

    # --- checkpoint -------------------------------------------------------
    def to_bytes(self) -> bytes:
        p = self.p
        names = b"".join(struct.pack("<I", len(n.encode())) + n.encode() for n in self.columns)
        iu = np.triu_indices(p)
        head = _MAGIC + struct.pack("<IQdd", p, self.n_rows, self.y_ss, self.y_sum)
        return (head + names + self.G[iu].astype("<f8").tobytes()
                + self.b.astype("<f8").tobytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "GramSystem":
        if data[:8] != _MAGIC:
            raise ValueError("not a Gram checkpoint (bad magic)")
        off = 8
        p, n_rows, y_ss, y_sum = struct.unpack_from("<IQdd", data, off)
        off += struct.calcsize("<IQdd")
        names = []
        for _ in range(p):
            (ln,) = struct.unpack_from("<I", data, off)
            off += 4
            names.append(data[off:off + ln].decode())
            off += ln
        n_tri = p * (p + 1) // 2
        need = off + 8 * (n_tri + p)
        if len(data) < need:
            raise ValueError(f"truncated Gram checkpoint: {len(data)} bytes, expected {need}")
        tri = np.frombuffer(data, "<f8", n_tri, off)
        b = np.frombuffer(data, "<f8", p, off + 8 * n_tri).astype(float)
        G = np.zeros((p, p))
        G[np.triu_indices(p)] = tri
        G = G + np.triu(G, 1).T
        return cls(tuple(names), G, b, int(n_rows), float(y_ss), float(y_sum))

    def save(self, path) -> None:
        Path(path).write_bytes(self.to_bytes())

    @classmethod
    def load(cls, path) -> "GramSystem":
        return cls.from_bytes(Path(path).read_bytes())


def accumulate(gram: GramSystem, theta, y) -> GramSystem:
    """Functional form: a new system with the batch added."""
    return gram.copy().accumulate(theta, y)
