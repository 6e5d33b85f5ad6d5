"""Wall-clock timing of the filter step and of parallel library evaluation."""

from __future__ import annotations

import os
import time

import numpy as np

from ..dynamics import step_rk4
from ..filter import filter_step, value_gradient
from ..rollout import evaluate_batch, evaluate_library, select_mode
from .build import build_all


def latency_stats(samples):
    """Median, p95, mean, min and max in milliseconds; None fields when empty."""
    if len(samples) == 0:
        return {"n": 0, "median_ms": None, "p95_ms": None, "mean_ms": None, "min_ms": None, "max_ms": None}
    ms = np.asarray(samples) * 1e3
    return {"n": int(len(ms)), "median_ms": float(np.median(ms)), "p95_ms": float(np.percentile(ms, 95)),
            "mean_ms": float(ms.mean()), "min_ms": float(ms.min()), "max_ms": float(ms.max())}


def _batch_states(x0, n_cells, seed):
    rng = np.random.default_rng(seed)
    states = np.repeat(np.asarray(x0, float)[None, :], n_cells, axis=0)
    states[:, :2] += rng.uniform(-2.0, 2.0, size=(n_cells, 2))
    return states


def parallel_speedup(model, library, snapshot, states, params, workers, repeats=5):
    """Best-of-``repeats`` wall time of evaluate_batch at 1 and ``workers`` threads.

    Returns (speedup, bitwise_equal, t1, tw).
    """
    evaluate_batch(model, library, snapshot, states, params.rollout, workers=1)
    seq = par = None
    t1 = tw = np.inf
    for _ in range(repeats):
        s = time.perf_counter()
        seq = evaluate_batch(model, library, snapshot, states, params.rollout, workers=1)
        t1 = min(t1, time.perf_counter() - s)
        s = time.perf_counter()
        par = evaluate_batch(model, library, snapshot, states, params.rollout, workers=workers)
        tw = min(tw, time.perf_counter() - s)
    equal = (seq[0].tobytes() == par[0].tobytes()) and np.array_equal(seq[1], par[1])
    return t1 / tw, bool(equal), t1, tw


def benchmark_timing(config, n_steps: int, warmup: int = 10, workers=None, batch_cells: int = 100,
                     control_dt=None):
    """Latency of filter_step along a closed-loop run plus a rollout breakdown.

    Warmup steps (which also trigger compilation) are excluded. The
    parallel section compares 1 worker against ``workers`` (default: all
    logical cores) on a batch of perturbed initial states.
    """
    model, library, schedule, params = build_all(config)
    bc = config.get("bench", {})
    x = np.asarray(bc["x0"], dtype=float)
    dt = control_dt or bc.get("control_dt", 0.02)
    workers = workers or bc.get("workers") or os.cpu_count() or 1
    step_t, lib_t, grad_t = [], [], []
    t = schedule.snapshots[0].t
    for k in range(warmup + n_steps):
        s = time.perf_counter()
        d = filter_step(model, x, t, library, schedule, params)
        elapsed = time.perf_counter() - s
        snap = schedule.snapshot_at(t)
        s = time.perf_counter()
        results = evaluate_library(model, library, snap, x, params.rollout, t=t, retain=False)
        lib_elapsed = time.perf_counter() - s
        mode = select_mode(results, library)
        s = time.perf_counter()
        if mode is not None:
            value_gradient(model, library[mode], snap, x, params, t=t)
        grad_elapsed = time.perf_counter() - s
        if k >= warmup:
            step_t.append(elapsed)
            lib_t.append(lib_elapsed)
            grad_t.append(grad_elapsed)
        x = step_rk4(model, x, d.u_out, dt)
        t += dt
    out = {"n_steps": n_steps, "warmup": warmup, "filter_step": latency_stats(step_t),
           "evaluate_library": latency_stats(lib_t), "value_gradient": latency_stats(grad_t),
           "library_size": len(library), "horizon": params.rollout.T, "rollout_dt": params.rollout.dt,
           "cpu_count": os.cpu_count()}
    if batch_cells > 0:
        states = _batch_states(bc["x0"], batch_cells, config.get("seed", 0))
        speedup, equal, t1, tw = parallel_speedup(model, library, schedule.snapshots[0], states, params, workers)
        out["parallel"] = {"workers": int(workers), "cells": batch_cells, "speedup": float(speedup),
                           "bitwise_equal": equal, "t1_ms": t1 * 1e3, "tw_ms": tw * 1e3}
    return out
