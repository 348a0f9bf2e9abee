"""Sectioned ``key = value`` run configuration.

Files are read with :mod:`configparser`. Every key is typed by a small
schema, so misspelled keys fail loudly instead of being ignored. Overrides
take the form ``section.key=value`` and win over file values.
"""

from __future__ import annotations

import configparser
import dataclasses
import math
import re
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Sequence

from .ensemble import EnsembleConfig
from .exceptions import ConfigError
from .filtering import ClosureModel
from .library import LibrarySpec, TARGET_DIMS, DimVec, library_preset, parse_base_term
from .sgs import EvalSpec, SgsDatasetSpec
from .simulate import CaseSpec, case_preset
from .solvers import make_solver

EVAL_SEED_OFFSET = 1_000_003


def _bool(s: str) -> bool:
    v = s.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _number(s: str) -> float:
    """Float that also accepts products and quotients with ``pi``, e.g. ``0.01/pi``."""
    text = s.strip()
    tokens = re.split(r"([*/])", text.replace(" ", ""))
    value, op = 1.0, "*"
    for i, tok in enumerate(tokens):
        if i % 2:
            op = tok
            continue
        x = math.pi if tok == "pi" else float(tok)
        value = value * x if op == "*" else value / x
    return value


def _items(s: str) -> list[str]:
    return [p.strip() for p in s.split(",") if p.strip()]


def _floats(s):
    return tuple(_number(p) for p in _items(s))


def _ints(s):
    return tuple(int(p) for p in _items(s))


def _strs(s):
    return tuple(_items(s))


def _pair(parse):
    def f(s):
        v = parse(s)
        if len(v) != 2:
            raise ValueError(f"expected two comma-separated values, got {s!r}")
        return v
    return f


def _opt_int(s):
    return None if s.strip().lower() in ("", "none") else int(s)


def _solver_value(s: str):
    s = s.strip()
    if s == "auto":
        return s
    for parse in (int, _number):
        try:
            return parse(s)
        except ValueError:
            pass
    if "," in s:
        return _floats(s)
    if s.lower() in ("true", "false"):
        return _bool(s)
    return s


SCHEMA: dict[str, dict[str, Callable]] = {
    "run": {"seed": int, "out": str, "threads": int},
    "case": {
        "preset": str, "equation": str, "x_min": _number, "x_max": _number, "n_x": int,
        "t_min": _number, "t_max": _number, "n_t": int, "nu_range": _pair(_floats),
        "c1_range": _pair(_floats), "c2_range": _pair(_floats), "octaves_range": _pair(_ints),
        "frequency_range": _pair(_floats), "n_realizations": int, "seed": int, "dataset": str,
        "advection": str,
    },
    "library": {
        "preset": str, "base": _strs, "max_degree": int, "dsf_mode": str, "metric": str,
        "tolerance": _number, "target": str, "include_constant": _bool,
    },
    "solver": None,  # method-specific keys, checked against the solver signature
    "ensemble": {
        "m": int, "fraction": _number, "f_threshold": _number, "cv_init": _number,
        "cv_decay": _number, "noise_floor": _number, "max_iter": int, "seed": int,
        "enabled": _bool, "refine": _bool,
    },
    "sgs": {"widths": _ints, "n_batches": _opt_int, "max_degree": int, "tolerance": _number,
            "methods": _strs},
    "bench": {"n_cases": int, "nu_range": _pair(_floats), "widths": _ints, "seed": int,
              "n_x": int, "n_t": int, "sindy_c": _number, "smagorinsky_cs": _number,
              "leonard_order": int, "profile_nu": _number, "profile_width": int,
              "profile_time": _number},
    "refine": {"n_x": _ints, "n_realizations": int},
    "ablate": {"dsf": _strs, "gram": _strs, "ensemble": _strs, "batch_rows": int},
}


@dataclass
class RunConfig:
    """Raw string values per section, validated and typed on access."""

    sections: dict = field(default_factory=dict)
    source: str | None = None

    # -- loading -----------------------------------------------------------------
    @classmethod
    def from_text(cls, text: str, source: str | None = None) -> "RunConfig":
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source or "<config>")
        except configparser.Error as exc:
            raise ConfigError(f"cannot parse config: {exc}") from exc
        sections = {s: dict(parser.items(s)) for s in parser.sections()}
        cfg = cls(sections, source)
        cfg.check_keys()
        return cfg

    @classmethod
    def load(cls, path_or_name) -> "RunConfig":
        """A config file, or the name of a bundled config (``burgers``, ``sgs``, ...)."""
        p = Path(path_or_name)
        if p.exists():
            return cls.from_text(p.read_text(), str(p))
        name = str(path_or_name)
        name = name if name.endswith(".ini") else f"{name}.ini"
        bundled = resources.files("paramsindy") / "configs" / name
        if bundled.is_file():
            return cls.from_text(bundled.read_text(), f"bundled:{name}")
        raise ConfigError(f"no config file {path_or_name!r} and no bundled config {name!r} "
                          f"(bundled: {', '.join(bundled_configs())})")

    def with_overrides(self, overrides: Sequence[str]) -> "RunConfig":
        sections = {k: dict(v) for k, v in self.sections.items()}
        for item in overrides:
            key, sep, value = item.partition("=")
            section, dot, name = key.strip().partition(".")
            if not sep or not dot or not name:
                raise ConfigError(f"override {item!r} is not of the form section.key=value")
            sections.setdefault(section, {})[name] = value.strip()
        out = RunConfig(sections, self.source)
        out.check_keys()
        return out

    def check_keys(self) -> None:
        unknown = []
        for section, values in self.sections.items():
            if section not in SCHEMA:
                unknown.append(f"[{section}]")
                continue
            if SCHEMA[section] is None:
                continue
            unknown.extend(f"{section}.{k}" for k in values if k not in SCHEMA[section])
        if unknown:
            raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")

    # -- typed access --------------------------------------------------------------
    def get(self, section: str, key: str, default=None):
        values = self.sections.get(section, {})
        if key not in values:
            return default
        parse = SCHEMA[section][key]
        try:
            return parse(values[key])
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{section}.{key} = {values[key]!r}: {exc}") from None

    def has(self, section: str) -> bool:
        return section in self.sections

    def require(self, *sections: str) -> None:
        missing = [s for s in sections if s not in self.sections]
        if missing:
            raise ConfigError(f"missing config section(s): {', '.join(missing)}")

    def seed(self, cli_seed: int | None = None) -> int:
        if cli_seed is not None:
            return int(cli_seed)
        seed = self.get("run", "seed")
        if seed is None:
            raise ConfigError("a seed is required: set run.seed or pass --seed")
        return seed

    def resolved(self, seed: int) -> dict:
        """Echo of all sections with the effective seed."""
        out = {k: dict(v) for k, v in sorted(self.sections.items())}
        out.setdefault("run", {})["seed"] = str(seed)
        return out

    # -- builders ---------------------------------------------------------------------
    def case_spec(self, seed: int) -> CaseSpec:
        self.require("case")
        sec = self.sections["case"]
        preset = self.get("case", "preset") or self.get("case", "equation")
        if preset is None:
            raise ConfigError("case needs preset or equation")
        overrides = {k: self.get("case", k) for k in sec if k not in ("preset", "dataset")}
        overrides.setdefault("seed", seed)
        if "equation" in overrides and overrides["equation"] != preset:
            raise ConfigError("case.equation differs from case.preset")
        overrides.pop("equation", None)
        try:
            return case_preset(preset, **overrides)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"case: {exc}") from None

    def library_spec(self) -> LibrarySpec:
        self.require("library")
        preset = self.get("library", "preset")
        kwargs = {}
        for key in ("max_degree", "dsf_mode", "metric", "tolerance", "include_constant"):
            if self.get("library", key) is not None:
                kwargs[key] = self.get("library", key)
        target = self.get("library", "target")
        if target is not None:
            if target in TARGET_DIMS:
                kwargs["target"] = TARGET_DIMS[target]
            else:
                try:
                    kwargs["target"] = DimVec(*_pair(_ints)(target))
                except ValueError as exc:
                    raise ConfigError(f"library.target: {exc}") from None
        base = self.get("library", "base")
        try:
            if base is not None:
                kwargs["base_terms"] = [parse_base_term(b) for b in base]
            if preset is not None:
                return library_preset(preset, **kwargs)
            if base is None:
                raise ConfigError("library needs preset or base")
            return LibrarySpec(**kwargs)
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"library: {exc}") from None

    def solver_params(self) -> tuple[str, dict]:
        values = dict(self.sections.get("solver", {}))
        method = values.pop("method", "stlsq").strip()
        params = {k: _solver_value(v) for k, v in values.items()}
        try:
            make_solver(method, **params)
        except TypeError as exc:
            raise ConfigError(f"solver {method}: {exc}") from None
        except ValueError as exc:
            raise ConfigError(f"solver: {exc}") from None
        return method, params

    def ensemble_config(self, seed: int, threads: int = 1, sgs: bool = False) -> EnsembleConfig:
        method, params = self.solver_params()
        opts = dict(seed=seed, threads=threads, method=method, solver_params=params)
        if sgs:
            opts.update(cv_init=0.5, cv_decay=0.5)
        mapping = {"m": "n_estimators", "fraction": "fraction", "f_threshold": "f_threshold",
                   "cv_init": "cv_init", "cv_decay": "cv_decay", "noise_floor": "noise_floor",
                   "max_iter": "max_iter", "seed": "seed"}
        for key, name in mapping.items():
            value = self.get("ensemble", key)
            if value is not None:
                opts[name] = value
        return EnsembleConfig(**opts)

    def sgs_spec(self, seed: int) -> SgsDatasetSpec:
        case = self.case_spec(seed)
        if "advection" not in self.sections["case"]:
            case = dataclasses.replace(case, advection="conservative")
        kwargs = {}
        for key in ("widths", "n_batches", "max_degree", "tolerance"):
            if key in self.sections.get("sgs", {}):
                kwargs[key] = self.get("sgs", key)
        return SgsDatasetSpec(case, **kwargs)

    def sgs_methods(self) -> tuple[str, ...]:
        return self.get("sgs", "methods") or ("elasticnet", "sr3")

    def eval_spec(self, seed: int) -> EvalSpec:
        kwargs = {}
        for key in ("n_cases", "nu_range", "widths", "n_x", "n_t", "seed"):
            if key in self.sections.get("bench", {}):
                kwargs[key] = self.get("bench", key)
        kwargs.setdefault("seed", seed + EVAL_SEED_OFFSET)
        return EvalSpec(**kwargs)

    def baseline_models(self) -> list[ClosureModel]:
        return [ClosureModel("smagorinsky", self.get("bench", "smagorinsky_cs", 0.16)),
                ClosureModel("taylor"),
                ClosureModel("leonard", order=self.get("bench", "leonard_order", 1))]


def bundled_configs() -> list[str]:
    root = resources.files("paramsindy") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".ini"))
