"""Parameter-aware sparse identification of PDEs and subgrid-scale closures."""

__version__ = "0.1.0"

from .exceptions import ConfigError, ConvergenceError, DivergenceError
from .grid import FieldSnapshot, Grid1D, SchemeTag, apply_stencil, time_derivative, trim_buffer
from .simulate import CaseSpec, case_preset, generate_dataset, realization, solve_pde
from .filtering import ClosureModel, FilterSpec, box_filter, closure_metrics, true_sgs_stress
from .library import LibrarySpec, MonomialTerm, TermLibrary, build_library, library_preset
from .gram import GramSystem
from .solvers import SR3, STLSQ, ElasticNet, Ridge, SparseSolution, make_solver, solve
from .ensemble import (EnsembleConfig, EnsembleReport, EnsembleSINDy, iterative_prune,
                       realization_grams, refined_fit)
from .sgs import (SgsDatasetSpec, build_sgs_dataset, discover_closure, benchmark_closures,
                  grid_refinement_study, sgs_case)
from .archive import load_dataset, save_dataset

__all__ = [
    "ConfigError", "ConvergenceError", "DivergenceError",
    "FieldSnapshot", "Grid1D", "SchemeTag", "apply_stencil", "time_derivative", "trim_buffer",
    "CaseSpec", "case_preset", "generate_dataset", "realization", "solve_pde",
    "ClosureModel", "FilterSpec", "box_filter", "closure_metrics", "true_sgs_stress",
    "LibrarySpec", "MonomialTerm", "TermLibrary", "build_library", "library_preset",
    "GramSystem",
    "SR3", "STLSQ", "ElasticNet", "Ridge", "SparseSolution", "make_solver", "solve",
    "EnsembleConfig", "EnsembleReport", "EnsembleSINDy", "iterative_prune", "realization_grams",
    "refined_fit",
    "SgsDatasetSpec", "build_sgs_dataset", "discover_closure", "benchmark_closures",
    "grid_refinement_study", "sgs_case",
    "load_dataset", "save_dataset",
    "__version__",
]
