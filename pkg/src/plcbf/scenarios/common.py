"""Closed-loop simulation under the safety filter, run logs, and artifact writers."""

from __future__ import annotations

import csv
import hashlib
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..dynamics import DynamicsModel, step_rk4
from ..errors import NumericError
from ..filter import FilterParams, filter_step
from ..policies import PolicyLibrary

SCHEMA_VERSION = 1
VIOLATION_TOL = 1e-3


@dataclass
class ScenarioResult:
    name: str
    logs: dict                       # variant -> RunLog
    summary: dict = field(default_factory=dict)


def baseline_library(library: PolicyLibrary, fallback_id: str) -> PolicyLibrary:
    """{nominal, one fallback}: the single-policy filter used as a baseline."""
    return library.subset([library.nominal.id, fallback_id])


def variants(library: PolicyLibrary, baselines):
    """("plcbf", full library) followed by ("<id>_only", baseline) per fallback id."""
    out = [("plcbf", library)]
    for fid in baselines:
        out.append((f"{fid}_only", baseline_library(library, fid)))
    return out


def config_hash(config) -> str:
    """sha256 of the canonical JSON encoding of ``config``."""
    blob = json.dumps(config, sort_keys=True, separators=(",", ":")).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class RunLog:
    """Per-step record of a closed-loop run.

    Row k holds the state at ``t[k]``, the filter decision taken there and
    the control applied until ``t[k + 1]``. A completed run ends with a
    terminal row (control NaN, qp_status ``terminal``).
    """

    state_labels: tuple
    control_labels: tuple
    t: list = field(default_factory=list)
    states: list = field(default_factory=list)
    controls: list = field(default_factory=list)
    modes: list = field(default_factory=list)
    H: list = field(default_factory=list)
    h_margin: list = field(default_factory=list)
    qp_status: list = field(default_factory=list)
    solve_time: list = field(default_factory=list)
    snapshot_index: list = field(default_factory=list)
    engaged: list = field(default_factory=list)
    events: list = field(default_factory=list)
    status: str = "running"
    failure: str = ""

    def append(self, t, x, u, mode, H, h, qp_status, solve_time, k, engaged):
        self.t.append(float(t))
        self.states.append(np.array(x, dtype=float))
        self.controls.append(np.array(u, dtype=float))
        self.modes.append("" if mode is None else mode)
        self.H.append(float(H))
        self.h_margin.append(float(h))
        self.qp_status.append(qp_status)
        self.solve_time.append(float(solve_time))
        self.snapshot_index.append(int(k))
        self.engaged.append("" if engaged is None else engaged)

    def __len__(self):
        return len(self.t)

    @property
    def min_margin(self):
        return min(self.h_margin) if self.h_margin else math.inf

    @property
    def violated(self):
        return self.min_margin < -VIOLATION_TOL

    def mode_switches(self):
        """(t, from, to) for every change of the selected mode."""
        out = []
        for k in range(1, len(self.modes)):
            if self.qp_status[k] == "terminal":
                break
            if self.modes[k] != self.modes[k - 1]:
                out.append((self.t[k], self.modes[k - 1], self.modes[k]))
        return out

    def certified_throughout(self):
        """True when some mode was certified at every filter step."""
        return all(m != "" for m, s in zip(self.modes, self.qp_status) if s != "terminal")

    def summary(self):
        counts = {}
        for s in self.qp_status:
            counts[s] = counts.get(s, 0) + 1
        return {"steps": len(self), "status": self.status, "failure": self.failure,
                "min_margin": _json_float(self.min_margin), "violated": self.violated,
                "qp_status_counts": counts, "mode_switches": len(self.mode_switches())}


def _json_float(v):
    v = float(v)
    return v if math.isfinite(v) else repr(v)


def simulate(model: DynamicsModel, library: PolicyLibrary, schedule, params: FilterParams, x0,
             duration: float, control_dt: float, workers: int = 1, model_events=(), stop=None,
             t0=None, substeps: int = 1, timing: bool = False) -> RunLog:
    """Run the filter in closed loop with zero-order-hold control.

    ``model_events`` is a sequence of ``(time, {param: value})`` changes
    applied to both the plant and the filter's rollout model from that time
    on. ``stop(x, t, decision)`` may return a reason string to end the run
    early. ``timing=False`` records NaN solve times so logs are replayable
    bitwise.
    """
    if control_dt <= 0:
        raise ValueError("control_dt must be positive")
    t0 = schedule.snapshots[0].t if t0 is None else float(t0)
    n_steps = int(round(duration / control_dt))
    log = RunLog(model.state_labels, model.control_labels)
    pending = sorted(model_events, key=lambda e: e[0])
    x = model._check_state(x0)
    h_dt = control_dt / substeps
    prev_mode = object()
    for k in range(n_steps + 1):
        t = t0 + k * control_dt
        while pending and pending[0][0] <= t + 1e-12:
            et, updates = pending.pop(0)
            model = model.with_params(**updates)
            log.events.append({"t": t, "type": "model_change", "params": dict(updates)})
        snap = schedule.snapshot_at(t)
        h = snap.evaluate(x, t - snap.t)
        if k == n_steps:
            log.append(t, x, np.full(model.control_dim, np.nan), None, np.nan, h, "terminal",
                       np.nan, snap.index, None)
            log.status = "completed"
            break
        d = filter_step(model, x, t, library, schedule, params, workers=workers)
        log.append(t, x, d.u_out, d.selected_mode, d.H_selected, h, d.qp_status,
                   d.solve_time if timing else np.nan, snap.index, d.engaged_policy)
        if d.selected_mode != prev_mode:
            log.events.append({"t": t, "type": "mode", "mode": d.selected_mode, "qp_status": d.qp_status})
            prev_mode = d.selected_mode
        if stop is not None:
            reason = stop(x, t, d)
            if reason:
                log.status = reason
                break
        try:
            for _ in range(substeps):
                x = step_rk4(model, x, d.u_out, h_dt)
        except NumericError as exc:
            log.status = "failed"
            log.failure = f"t={t:.6g}: {exc}"
            break
    return log


def write_run_csv(path, log: RunLog, provenance: dict):
    """CSV with columns t, state..., u..., mode, H_selected, h_margin, qp_status, solve_time.

    Provenance lines (schema version, config hash, seed) lead the file as
    ``#`` comments. Floats use repr so values round-trip exactly.
    """
    path = Path(path)
    with path.open("w", newline="") as fh:
        fh.write(f"# schema_version={SCHEMA_VERSION}\n")
        for key in ("config_hash", "seed"):
            fh.write(f"# {key}={provenance[key]}\n")
        fh.write(f"# status={log.status}\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t", *log.state_labels, *log.control_labels, "mode", "H_selected", "h_margin",
                    "qp_status", "solve_time", "snapshot", "engaged"])
        for k in range(len(log)):
            w.writerow([repr(log.t[k]), *map(repr, map(float, log.states[k])),
                        *map(repr, map(float, log.controls[k])), log.modes[k], repr(log.H[k]),
                        repr(log.h_margin[k]), log.qp_status[k], repr(log.solve_time[k]),
                        log.snapshot_index[k], log.engaged[k]])


def read_run_csv(path):
    """Inverse of write_run_csv: (provenance dict, header, rows as string lists)."""
    prov, rows = {}, []
    with Path(path).open() as fh:
        lines = fh.read().splitlines()
    body = []
    for line in lines:
        if line.startswith("# "):
            k, _, v = line[2:].partition("=")
            prov[k] = v
        else:
            body.append(line)
    reader = csv.reader(body)
    header = next(reader)
    rows = list(reader)
    return prov, header, rows


def write_json(path, payload: dict, provenance: dict):
    doc = {"schema_version": SCHEMA_VERSION, "config_hash": provenance["config_hash"],
           "seed": provenance["seed"], **payload}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True, default=_default) + "\n")
    return doc


def _default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer, np.bool_)):
        return o.item()
    raise TypeError(f"cannot serialize {type(o).__name__}")
