"""Parameter-aware candidate libraries and the dimensional similarity filter.

Parameter factors are stored as net integer exponents per symbol, so a
parameter next to its inverse cancels (``nu * nu^-1 -> 1``) and ``Delta * Delta``
coincides with a ``Delta^2`` base entry. Monomials without any field or
derivative factor are discarded.
"""

from __future__ import annotations

import itertools
import math
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple, Sequence

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from .grid import SchemeTag


class DimVec(NamedTuple):
    """Length and time exponents ``[L, T]``."""

    L: int
    T: int

    def __add__(self, other):
        return DimVec(self.L + other.L, self.T + other.T)

    def scale(self, k: int) -> "DimVec":
        return DimVec(self.L * k, self.T * k)


PARAM_DIMS = {
    "nu": DimVec(2, -1),
    "C1": DimVec(0, 0),
    "C2": DimVec(3, -1),
    "Delta": DimVec(1, 0),
}
FIELD_DIM = DimVec(1, -1)

TARGET_DIMS = {"u_t": DimVec(1, -2), "tau_sgs": DimVec(2, -2)}


@dataclass(frozen=True)
class BaseTerm:
    """An irreducible library factor.

    ``kind`` is ``"const"``, ``"field"``, ``"param"`` or ``"deriv"``. Parameters
    carry a ``symbol`` and integer ``power`` (``-1`` for an inverse); derivatives
    carry a scheme ``tag``.
    """

    kind: str
    symbol: str = "u"
    power: int = 1
    tag: SchemeTag | None = None
    dim: DimVec = DimVec(0, 0)

    @property
    def name(self) -> str:
        if self.kind == "const":
            return "1"
        if self.kind == "field":
            return self.symbol
        if self.kind == "deriv":
            return f"{self.symbol}_{'x' * self.tag.order}|{self.tag.value}"
        return _power_name(self.symbol, self.power)

    @property
    def is_field(self) -> bool:
        return self.kind in ("field", "deriv")


def _power_name(symbol: str, power: int) -> str:
    return symbol if power == 1 else f"{symbol}^{power}"


def const() -> BaseTerm:
    return BaseTerm("const", symbol="1", dim=DimVec(0, 0))


def field_term(symbol: str = "u") -> BaseTerm:
    return BaseTerm("field", symbol=symbol, dim=FIELD_DIM)


def deriv(tag, symbol: str = "u") -> BaseTerm:
    tag = SchemeTag(tag)
    return BaseTerm("deriv", symbol=symbol, tag=tag, dim=DimVec(1 - tag.order, -1))


def param(symbol: str, power: int = 1, dim: DimVec | None = None) -> BaseTerm:
    if power == 0:
        raise ValueError("parameter power must be non-zero")
    if dim is None:
        if symbol not in PARAM_DIMS:
            raise KeyError(f"no dimension known for parameter {symbol!r}; pass dim=")
        dim = PARAM_DIMS[symbol]
    return BaseTerm("param", symbol=symbol, power=int(power), dim=DimVec(*dim).scale(int(power)))


def param_pair(symbol: str, dim: DimVec | None = None) -> list[BaseTerm]:
    """A parameter and its inverse, as every parameter enters the base set."""
    return [param(symbol, 1, dim), param(symbol, -1, dim)]


@dataclass(frozen=True)
class MonomialTerm:
    """Product of base factors after reduction.

    ``fields`` holds ``(base-name, exponent)`` for field/derivative factors and
    ``params`` holds ``(symbol, net exponent)``; both sorted, so equal
    monomials compare and hash equal.
    """

    fields: tuple[tuple[BaseTerm, int], ...]
    params: tuple[tuple[str, int], ...] = ()
    param_dims: tuple[tuple[str, DimVec], ...] = ()

    @property
    def degree(self) -> int:
        return sum(k for _, k in self.fields) + sum(abs(k) for _, k in self.params)

    @property
    def dim(self) -> DimVec:
        return dim_of(self)

    @property
    def field_name(self) -> str:
        return "*".join(_power_name(b.name, k) for b, k in self.fields) or "1"

    @property
    def param_name(self) -> str:
        return "*".join(_power_name(s, k) for s, k in self.params)

    @property
    def name(self) -> str:
        parts = [p for p in (self.param_name, "*".join(_power_name(b.name, k) for b, k in self.fields)) if p]
        return "*".join(parts) or "1"

    @property
    def sort_key(self):
        return (self.degree, tuple((_field_key(b), k) for b, k in self.fields), self.params)

    def __str__(self):
        return self.name


CONSTANT_TERM = MonomialTerm(fields=())


def _field_key(b: BaseTerm):
    return (0 if b.kind == "field" else 1, b.symbol, b.tag.order if b.tag else 0, b.tag.value if b.tag else "")


def make_monomial(factors: Iterable[BaseTerm]) -> MonomialTerm | None:
    """Reduce a multiset of base terms; ``None`` when nothing but parameters remain."""
    fields: Counter = Counter()
    powers: Counter = Counter()
    dims: dict[str, DimVec] = {}
    for b in factors:
        if b.kind == "const":
            continue
        if b.kind == "param":
            powers[b.symbol] += b.power
            unit = DimVec(b.dim.L // b.power, b.dim.T // b.power)
            dims[b.symbol] = unit
        else:
            fields[b] += 1
    if not fields:
        return None
    params = tuple(sorted((s, k) for s, k in powers.items() if k != 0))
    pdims = tuple(sorted((s, dims[s]) for s, _ in params))
    return MonomialTerm(
        fields=tuple(sorted(fields.items(), key=lambda item: _field_key(item[0]))),
        params=params,
        param_dims=pdims,
    )


def dim_of(term: MonomialTerm) -> DimVec:
    """Sum of factor dimensions weighted by exponent."""
    total = DimVec(0, 0)
    for b, k in term.fields:
        total = total + b.dim.scale(k)
    pd = dict(term.param_dims)
    for s, k in term.params:
        total = total + pd[s].scale(k)
    return total


def raw_count(n_base: int, degree: int) -> int:
    """Number of degree-``degree`` multisets over ``n_base`` base terms."""
    return math.comb(n_base + degree - 1, degree)


@dataclass
class LibrarySpec:
    base_terms: list[BaseTerm]
    max_degree: int = 2
    dsf_mode: str = "off"
    metric: str = "taxicab"
    tolerance: float = 0.5
    target: DimVec = TARGET_DIMS["u_t"]
    include_constant: bool = False

    def __post_init__(self):
        if self.dsf_mode not in ("off", "hard", "soft"):
            raise ValueError(f"dsf_mode must be off/hard/soft, got {self.dsf_mode!r}")
        if self.metric not in ("taxicab", "euclid"):
            raise ValueError(f"metric must be taxicab or euclid, got {self.metric!r}")
        if self.dsf_mode == "soft" and not 0.0 <= self.tolerance <= 1.0:
            raise ValueError(f"soft tolerance must lie in [0, 1], got {self.tolerance}")
        self.target = DimVec(*self.target)


def enumerate_and_reduce(spec: LibrarySpec) -> list[MonomialTerm]:
    """All reduced monomials up to ``spec.max_degree``, sorted by (degree, name)."""
    if spec.max_degree < 1:
        raise ValueError(f"max_degree must be >= 1, got {spec.max_degree}")
    seen: set[MonomialTerm] = set()
    base = [b for b in spec.base_terms if b.kind != "const"]
    for d in range(1, spec.max_degree + 1):
        for combo in itertools.combinations_with_replacement(base, d):
            m = make_monomial(combo)
            if m is not None:
                seen.add(m)
    terms = sorted(seen, key=lambda m: m.sort_key)
    if spec.include_constant:
        terms.insert(0, CONSTANT_TERM)
    return terms


def dsf_distance(dims: Sequence[DimVec], target: DimVec, metric: str = "taxicab") -> np.ndarray:
    """Normalised distance of each dimension vector from ``target``.

    Normalisers are the largest absolute exponents over ``dims``. On an axis
    whose normaliser is zero, a zero difference counts as zero and any other
    difference as infinitely far.
    """
    d = np.array([tuple(v) for v in dims], dtype=float).reshape(-1, 2)
    if len(d) == 0:
        return np.zeros(0)
    diff = np.abs(np.asarray(target, dtype=float) - d)
    scale = np.max(np.abs(d), axis=0)
    norm = np.empty_like(diff)
    for ax in range(2):
        if scale[ax] > 0:
            norm[:, ax] = diff[:, ax] / scale[ax]
        else:
            norm[:, ax] = np.where(diff[:, ax] == 0, 0.0, np.inf)
    if metric == "taxicab":
        return norm.sum(axis=1) / 2
    if metric == "euclid":
        return np.sqrt((norm**2).sum(axis=1) / 2)
    raise ValueError(f"unknown metric {metric!r}")


def dsf_filter(terms: Sequence[MonomialTerm], spec: LibrarySpec) -> list[MonomialTerm]:
    """Keep terms dimensionally close to ``spec.target``; input order is preserved."""
    if spec.dsf_mode == "off":
        raise ValueError("dsf_filter called with dsf_mode='off'")
    dims = [dim_of(t) for t in terms]
    if spec.dsf_mode == "hard":
        return [t for t, d in zip(terms, dims) if d == spec.target]
    delta = dsf_distance(dims, spec.target, spec.metric)
    return [t for t, dd in zip(terms, delta) if dd <= spec.tolerance]


def build_library(spec: LibrarySpec) -> list[MonomialTerm]:
    terms = enumerate_and_reduce(spec)
    if spec.dsf_mode != "off":
        terms = dsf_filter(terms, spec)
    return terms


def library_preset(name: str, **overrides) -> LibrarySpec:
    """Base configurations used by the bundled experiments.

    ``heat``/``burgers``: u, nu^+-1, u_x (cd1, uw2), u_xx, degree 2 (22 terms,
    17 after soft DSF at 0.5). ``kdv_burgers`` adds u_xxx, C1^+-1, C2^+-1 at
    degree 3. ``sgs`` works on filtered fields with nu^+-1, Delta^+-1 and
    Delta^+-2 at degree 3 against the stress dimensions.
    """
    if name in ("heat", "burgers"):
        base = [field_term(), *param_pair("nu"), deriv("cd1"), deriv("uw2"), deriv("cd2")]
        spec = LibrarySpec(base, max_degree=2, dsf_mode="soft", tolerance=0.5)
    elif name == "kdv_burgers":
        base = [field_term(), *param_pair("nu"), *param_pair("C1"), *param_pair("C2"),
                deriv("cd1"), deriv("uw2"), deriv("cd2"), deriv("cd2_3rd")]
        spec = LibrarySpec(base, max_degree=3, dsf_mode="soft", tolerance=0.5)
    elif name == "sgs":
        base = [field_term(), *param_pair("nu"), *param_pair("Delta"),
                param("Delta", 2), param("Delta", -2),
                deriv("cd1"), deriv("uw2"), deriv("cd2")]
        spec = LibrarySpec(base, max_degree=3, dsf_mode="soft", tolerance=0.25,
                           target=TARGET_DIMS["tau_sgs"])
    else:
        raise KeyError(f"unknown library preset {name!r}")
    for key, value in overrides.items():
        if not hasattr(spec, key):
            raise KeyError(f"LibrarySpec has no field {key!r}")
        setattr(spec, key, value)
    spec.__post_init__()
    return spec


def parse_term(name: str, base_terms: Sequence[BaseTerm]) -> MonomialTerm:
    """Inverse of :attr:`MonomialTerm.name` against a known base set."""
    if name == "1":
        return CONSTANT_TERM
    by_name = {b.name: b for b in base_terms if b.kind in ("field", "deriv")}
    dims = {b.symbol: DimVec(b.dim.L // b.power, b.dim.T // b.power)
            for b in base_terms if b.kind == "param"}
    factors = []
    for part in name.split("*"):
        sym, _, exp = part.partition("^")
        k = int(exp) if exp else 1
        if sym in by_name:
            factors.extend([by_name[sym]] * k)
        elif sym in dims:
            factors.append(param(sym, k, dims[sym]))
        else:
            raise KeyError(f"factor {sym!r} of {name!r} is not in the base set")
    term = make_monomial(factors)
    if term is None:
        raise ValueError(f"{name!r} has no field factor")
    return term


def parse_base_term(name: str) -> BaseTerm:
    """``"1"``, ``"u"``, ``"u_xx|cd2"`` or ``"nu^-1"`` to a base term."""
    name = name.strip()
    if name == "1":
        return const()
    if "|" in name:
        head, tag = name.split("|", 1)
        term = deriv(tag)
        if head != term.name.split("|")[0]:
            raise ValueError(f"{name!r}: scheme {tag} approximates {term.name.split('|')[0]}")
        return term
    if name == "u":
        return field_term()
    sym, _, exp = name.partition("^")
    return param(sym, int(exp) if exp else 1)


def manifest(terms: Sequence[MonomialTerm]) -> list[dict]:
    """Serializable ``[{"name", "dim"}]`` listing in library order."""
    return [{"name": t.name, "dim": list(dim_of(t))} for t in terms]


class TermLibrary(TransformerMixin, BaseEstimator):
    """Library builder with the scikit-learn transformer interface.

    ``fit`` enumerates and filters the terms; ``transform`` maps a list of
    snapshots to the stacked, buffer-trimmed feature matrix.
    """

    def __init__(self, base_terms=None, max_degree=2, dsf_mode="soft", metric="taxicab",
                 tolerance=0.5, target=TARGET_DIMS["u_t"], include_constant=False,
                 target_kind="u_t", filter_width=None):
        self.base_terms = base_terms
        self.max_degree = max_degree
        self.dsf_mode = dsf_mode
        self.metric = metric
        self.tolerance = tolerance
        self.target = target
        self.include_constant = include_constant
        self.target_kind = target_kind
        self.filter_width = filter_width

    @classmethod
    def from_spec(cls, spec: LibrarySpec, **kwargs) -> "TermLibrary":
        return cls(base_terms=list(spec.base_terms), max_degree=spec.max_degree,
                   dsf_mode=spec.dsf_mode, metric=spec.metric, tolerance=spec.tolerance,
                   target=spec.target, include_constant=spec.include_constant, **kwargs)

    def spec(self) -> LibrarySpec:
        if not self.base_terms:
            raise ValueError("TermLibrary needs base_terms")
        return LibrarySpec(list(self.base_terms), self.max_degree, self.dsf_mode, self.metric,
                           self.tolerance, self.target, self.include_constant)

    def fit(self, X=None, y=None):
        spec = self.spec()
        raw = enumerate_and_reduce(spec)
        self.n_candidates_ = len(raw)
        self.terms_ = dsf_filter(raw, spec) if spec.dsf_mode != "off" else raw
        self.n_features_out_ = len(self.terms_)
        return self

    def transform(self, X):
        from sklearn.utils.validation import check_is_fitted

        from .features import evaluate_features

        check_is_fitted(self, "terms_")
        blocks = [evaluate_features(s, self.terms_, self.target_kind, self.filter_width)[0]
                  for s in _as_snapshot_list(X)]
        return np.vstack(blocks)

    def get_feature_names_out(self, input_features=None):
        from sklearn.utils.validation import check_is_fitted

        check_is_fitted(self, "terms_")
        return np.array([t.name for t in self.terms_], dtype=object)


def _as_snapshot_list(X):
    from .grid import FieldSnapshot

    if isinstance(X, FieldSnapshot):
        return [X]
    return list(X)
