"""Double-integrator sweep over a grid of initial positions at a fixed velocity slice."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np

from ..dynamics import DynamicsModel
from ..filter import FilterParams
from ..policies import PolicyLibrary
from ..rollout import evaluate_batch, evaluate_library, select_mode
from .build import build_all
from .common import variants, simulate
from .viability import viability_oracle

SAFE = "safe"
UNSAFE = "unsafe_or_infeasible"


@dataclass(frozen=True)
class GridSweepSpec:
    """Initial positions at the centers of ``resolution``-sized cells over a box.

    ``clear_x``: runs end early once p_x exceeds it with v_x >= 0 (every
    obstacle is behind). Runs also end at rest under an inactive zero control.
    """

    x_range: tuple = (0.0, 20.0)
    y_range: tuple = (-10.0, 10.0)
    resolution: float = 1.0
    velocity: tuple = (2.0, 0.0)
    variant: str = "plcbf"
    duration: float = 12.0
    control_dt: float = 0.05
    clear_x: float | None = None

    def __post_init__(self):
        if not self.resolution > 0:
            raise ValueError("grid resolution must be positive")
        if not (self.x_range[1] > self.x_range[0] and self.y_range[1] > self.y_range[0]):
            raise ValueError("grid box is degenerate")
        if self.duration <= 0 or self.control_dt <= 0:
            raise ValueError("duration and control_dt must be positive")

    @property
    def shape(self):
        nx = int(round((self.x_range[1] - self.x_range[0]) / self.resolution))
        ny = int(round((self.y_range[1] - self.y_range[0]) / self.resolution))
        return nx, ny

    def centers(self):
        """(i, j, px, py) for every cell, x index fastest-varying last."""
        nx, ny = self.shape
        out = []
        for i in range(nx):
            for j in range(ny):
                out.append((i, j, self.x_range[0] + (i + 0.5) * self.resolution,
                            self.y_range[0] + (j + 0.5) * self.resolution))
        return out

    def initial_states(self):
        return np.array([[px, py, self.velocity[0], self.velocity[1]] for _, _, px, py in self.centers()])


@dataclass
class CoverageMap:
    spec: GridSweepSpec
    cells: list            # [i, j, class]
    diagnostics: list = field(default_factory=list)
    logs: list = field(default_factory=list, repr=False)

    @property
    def fraction(self):
        if not self.cells:
            return 0.0
        return sum(1 for c in self.cells if c[2] == SAFE) / len(self.cells)

    def classes(self):
        nx, ny = self.spec.shape
        grid = np.zeros((nx, ny), dtype=bool)
        for i, j, c in self.cells:
            grid[i, j] = c == SAFE
        return grid

    def to_dict(self):
        return {"spec": asdict(self.spec), "cells": [list(c) for c in self.cells],
                "fraction": self.fraction, "diagnostics": self.diagnostics}


def certification_values(model: DynamicsModel, library: PolicyLibrary, schedule, spec: GridSweepSpec,
                         params: FilterParams, workers: int = 1):
    """H of every library policy at every cell's initial state, at t0: shape (cells, |library|)."""
    snap = schedule.snapshots[0]
    values, _ = evaluate_batch(model, library, snap, spec.initial_states(), params.rollout,
                               workers=workers, t=snap.t)
    return values


def _run_cell(model, library, schedule, params, spec, x0):
    clear_x = spec.clear_x

    def stop(x, t, d):
        if clear_x is not None and x[0] > clear_x and x[2] >= 0:
            return "cleared"
        if (abs(x[2]) + abs(x[3]) < 1e-4 and d.qp_status == "inactive"
                and not np.any(d.u_out)):
            return "at_rest"
        return None

    log = simulate(model, library, schedule, params, x0, spec.duration, spec.control_dt, stop=stop)
    safe = log.status != "failed" and not log.violated
    diag = {"status": log.status, "min_margin": float(log.min_margin), "steps": len(log),
            "fallback_steps": sum(1 for s in log.qp_status if s == "fallback_engaged"),
            "final_state": [float(v) for v in log.states[-1]]}
    return (SAFE if safe else UNSAFE), diag, log


def run_grid_sweep(spec: GridSweepSpec, model: DynamicsModel, library: PolicyLibrary, schedule,
                   params: FilterParams, workers: int = 1, keep_logs: bool = False) -> CoverageMap:
    """Closed-loop run from every cell; a cell is safe iff h stays >= -1e-3 throughout."""
    centers = spec.centers()
    x0s = spec.initial_states()

    def job(k):
        return _run_cell(model, library, schedule, params, spec, x0s[k])

    if workers <= 1:
        outcomes = [job(k) for k in range(len(centers))]
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(job, range(len(centers))))
    cells = [[i, j, cls] for (i, j, _, _), (cls, _, _) in zip(centers, outcomes)]
    diags = [{"i": i, "j": j, **d} for (i, j, _, _), (_, d, _) in zip(centers, outcomes)]
    logs = [log for _, _, log in outcomes] if keep_logs else []
    return CoverageMap(spec, cells, diags, logs)


def render_svg(coverage: CoverageMap, cell_px: int = 16) -> str:
    """Coverage map as colored squares (green safe, yellow otherwise), y up."""
    nx, ny = coverage.spec.shape
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{nx * cell_px}" height="{ny * cell_px}">']
    for i, j, cls in coverage.cells:
        color = "#3a3" if cls == SAFE else "#ec3"
        parts.append(f'<rect x="{i * cell_px}" y="{(ny - 1 - j) * cell_px}" width="{cell_px}" '
                     f'height="{cell_px}" fill="{color}" stroke="#444" stroke-width="0.5"/>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def certified_at_start(model, library, schedule, spec: GridSweepSpec, params: FilterParams):
    """Cells where mode selection at t0 finds a certified policy (one library evaluation per cell)."""
    snap = schedule.snapshots[0]
    out = []
    for x0 in spec.initial_states():
        results = evaluate_library(model, library, snap, x0, params.rollout, t=snap.t, retain=False)
        out.append(select_mode(results, library) is not None)
    return np.array(out)


@dataclass
class GridResult:
    coverage: dict            # variant -> CoverageMap
    certification: dict
    viability: dict | None
    summary: dict


def _spec_from_config(gs, variant):
    keys = ("x_range", "y_range", "resolution", "velocity", "duration", "control_dt", "clear_x")
    kw = {k: (tuple(gs[k]) if isinstance(gs[k], list) else gs[k]) for k in keys if k in gs}
    return GridSweepSpec(variant=variant, **kw)


def run_grid(config, workers: int = 1, keep_logs: bool = False) -> GridResult:
    """Full double-integrator experiment: t0 certification sets, closed-loop
    coverage of PL-CBF and each single-fallback filter, and (optionally) the
    viability-oracle cross-check."""
    model, library, schedule, params = build_all(config)
    gs = config["grid_sweep"]
    base = _spec_from_config(gs, "plcbf")
    eps = params.rollout.safety_margin
    values = certification_values(model, library, schedule, base, params, workers)
    per_policy = {p.id: (values[:, i] > eps) for i, p in enumerate(library)}
    union = np.any(values > eps, axis=1)
    selected = certified_at_start(model, library, schedule, base, params)
    certification = {
        "per_policy": {k: v.tolist() for k, v in per_policy.items()},
        "plcbf": selected.tolist(),
        "union_equals_plcbf": bool(np.array_equal(union, selected)),
        "H": values.tolist(),
    }
    coverage = {}
    for name, lib in variants(library, gs.get("baselines", [])):
        coverage[name] = run_grid_sweep(_spec_from_config(gs, name), model, lib, schedule, params,
                                        workers, keep_logs)
    viability = None
    if "viability" in gs:
        viability = viability_check(model, schedule, gs["viability"], base, selected, coverage["plcbf"])
    summary = {"fractions": {k: c.fraction for k, c in coverage.items()},
               "union_equals_plcbf": certification["union_equals_plcbf"],
               "safe_cell_violations": sum(1 for c in coverage.values() for d, cell in zip(c.diagnostics, c.cells)
                                           if cell[2] == SAFE and d["min_margin"] < -1e-3)}
    if viability is not None:
        summary["viability_counterexamples"] = len(viability["counterexamples"])
        summary["certified_not_viable"] = len(viability["certified_not_viable"])
    return GridResult(coverage, certification, viability, summary)


def viability_check(model, schedule, vc, spec: GridSweepSpec, certified, coverage: CoverageMap):
    """Oracle-viable and t0-certified cells must be safe in closed loop.

    Certified cells the oracle marks nonviable are reported, not failed: the
    finite-horizon certificate can accept states outside the infinite-horizon
    kernel near its boundary.
    """
    n = vc.get("nodes", 21)
    axes = [np.linspace(lo, hi, n) for lo, hi in vc["bounds"]]
    levels = np.asarray(vc.get("inputs", [-1.0, 0.0, 1.0]), dtype=float)
    inputs = np.array([[a, b] for a in levels for b in levels])
    grid = viability_oracle(model, schedule.snapshots[0], axes, inputs, vc.get("dt", 0.5), vc.get("n_iter", 200))
    counter, gap, viable_cells = [], [], []
    for k, (x0, cell) in enumerate(zip(spec.initial_states(), coverage.cells)):
        v = bool(grid.lookup(x0))
        viable_cells.append(v)
        if v and certified[k] and cell[2] != SAFE:
            counter.append(cell[:2])
        if certified[k] and not v:
            gap.append(cell[:2])
    return {"nodes": n, "iterations": grid.iterations, "history": list(grid.history),
            "monotone": all(b <= a for a, b in zip(grid.history, grid.history[1:])),
            "viable_cells": viable_cells, "counterexamples": counter, "certified_not_viable": gap}
