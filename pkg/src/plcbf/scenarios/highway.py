"""Highway driving with a scheduled friction change."""

from __future__ import annotations

import numpy as np

from .build import build_all
from .common import ScenarioResult, simulate, variants


def first_switch_after(log, t_event):
    """Time of the first mode change at or after ``t_event`` (None if there is none)."""
    for t, _, _ in log.mode_switches():
        if t >= t_event - 1e-12:
            return t
    return None


def run_highway(config, workers: int = 1, timing: bool = False) -> ScenarioResult:
    """PL-CBF and each single-fallback baseline through the same friction schedule.

    Friction changes reach the filter's rollout model at the step they occur.
    """
    model, library, schedule, params = build_all(config)
    hw = config["highway"]
    events = [(e["t"], e["params"]) for e in hw.get("events", [])]
    x0 = np.asarray(hw["x0"], dtype=float)
    period = schedule.snapshots[1].t - schedule.snapshots[0].t if len(schedule) > 1 else np.inf
    logs, per_variant = {}, {}
    for name, lib in variants(library, hw.get("baselines", [])):
        log = simulate(model, lib, schedule, params, x0, hw["duration"], hw["control_dt"], workers=workers,
                       model_events=events, substeps=hw.get("substeps", 1), timing=timing)
        logs[name] = log
        info = log.summary()
        info["safe"] = log.status != "failed" and not log.violated
        info["certified_throughout"] = log.certified_throughout()
        if events:
            t_drop = events[0][0]
            ts = first_switch_after(log, t_drop)
            info["first_switch_after_event"] = ts
            info["switch_latency"] = None if ts is None else ts - t_drop
            info["switch_within_period"] = ts is not None and ts - t_drop <= period + 1e-9
        per_variant[name] = info
    return ScenarioResult("highway", logs, {"variants": per_variant, "perception_period": period})
