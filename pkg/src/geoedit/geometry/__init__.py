"""Riemannian block: learned/analytic fields, adaptive integration, exp map."""

from .christoffel import (
    BoundField,
    ChristoffelModel,
    PointInit,
    RetractionConfig,
    retract,
    retract_tape,
)
from .dopri5 import IntegrationResult, SolverConfig, integrate, replay_steps, rk4_fixed
from .expmap import (
    GeodesicResult,
    arc_length,
    exp_map,
    exp_map_replay,
    exp_map_tape,
    geodesic_offset,
    integrate_geodesic,
)
from .manifolds import ANALYTIC_FIELDS, AnalyticChristoffel, analytic_field
from .selftest import SelftestRow, run_selftest

__all__ = [
    "ANALYTIC_FIELDS",
    "AnalyticChristoffel",
    "BoundField",
    "ChristoffelModel",
    "GeodesicResult",
    "IntegrationResult",
    "PointInit",
    "RetractionConfig",
    "SelftestRow",
    "SolverConfig",
    "analytic_field",
    "arc_length",
    "exp_map",
    "exp_map_replay",
    "exp_map_tape",
    "geodesic_offset",
    "integrate",
    "integrate_geodesic",
    "replay_steps",
    "retract",
    "retract_tape",
    "rk4_fixed",
    "run_selftest",
]
