"""Quadrotor waypoint flight through moving spherical obstacles."""

from __future__ import annotations

import numpy as np

from .build import build_all
from .common import ScenarioResult, simulate, variants


def _fly(model, library, schedule, params, qc, workers, timing):
    goal = np.asarray(qc["goal"], dtype=float)
    tol = qc.get("goal_tolerance", 0.5)

    def stop(x, t, d):
        return "goal" if np.linalg.norm(x[:3] - goal) < tol else None

    return simulate(model, library, schedule, params, np.asarray(qc["x0"], dtype=float), qc["duration"],
                    qc["control_dt"], workers=workers, stop=stop, substeps=qc.get("substeps", 1),
                    timing=timing)


def completed(log):
    """Reached the goal without a margin violation."""
    return log.status == "goal" and not log.violated


def run_quadrotor(config, workers: int = 1, timing: bool = False) -> ScenarioResult:
    """Fly PL-CBF and the baselines on the configured world; optionally sweep obstacle density.

    Safety is judged against the snapshot current at each step.
    """
    qc = config["quadrotor"]
    model, library, schedule, params = build_all(config)
    logs, per_variant = {}, {}
    for name, lib in variants(library, qc.get("baselines", [])):
        log = _fly(model, lib, schedule, params, qc, workers, timing)
        logs[name] = log
        info = log.summary()
        info["completed"] = completed(log)
        info["certified_throughout"] = log.certified_throughout()
        info["non_nominal_steps"] = sum(1 for m in log.modes if m not in (library.nominal.id, ""))
        per_variant[name] = info
    summary = {"variants": per_variant}
    sweep = qc.get("density_sweep")
    if sweep:
        summary["density_sweep"] = density_sweep(config, sweep["n_obstacles"], sweep["seeds"], workers)
    return ScenarioResult("quadrotor", logs, summary)


def density_sweep(config, counts, seeds, workers: int = 1):
    """Completion rate per variant for each obstacle count over the same seeds."""
    qc = config["quadrotor"]
    out = {}
    for n in counts:
        rows = {}
        for seed in seeds:
            model, library, schedule, params = build_all(config, seed=seed, n_obstacles=n)
            for name, lib in variants(library, qc.get("baselines", [])):
                log = _fly(model, lib, schedule, params, qc, workers, False)
                rows.setdefault(name, []).append(bool(completed(log)))
        out[str(n)] = {name: {"completed": flags, "rate": float(np.mean(flags))} for name, flags in rows.items()}
    return out
