"""Experiment harnesses: double-integrator grid sweep, highway, quadrotor, timing."""

from .common import RunLog, ScenarioResult, baseline_library, simulate
from .grid_sweep import CoverageMap, GridSweepSpec, run_grid, run_grid_sweep
from .highway import run_highway
from .quadrotor import run_quadrotor
from .viability import viability_oracle

__all__ = ["RunLog", "ScenarioResult", "baseline_library", "simulate", "CoverageMap", "GridSweepSpec",
           "run_grid", "run_grid_sweep", "run_highway", "run_quadrotor", "viability_oracle"]
