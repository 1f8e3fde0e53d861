"""Reaction-diffusion on periodically perforated domains and its homogenized limit."""
from .errors import (ConfigError, ConsistencyError, DomainError, GeometryResolutionError,
                     InvariantError, PerfhomError, SolverError)
from .geometry import PerforatedGrid, UnitCellSpec, build_perforated_grid, build_unit_cell
from .cell_problem import EffectiveTensor, compute_effective_tensor
from .physics import BoundaryFlux, PhysicalParams, SpeciesState, reaction_rate
from .micro import MicroSolver, extend_by_zero
from .macro import EffectiveModel, MacroSolver
from .initial_data import assemble_well_prepared, solve_annulus, verify_compatibility
from .harness import Study, TestFunction, run_study

__version__ = "0.1.0"
