"""Finite-horizon policy values H^pi_T(x), batched library evaluation, mode selection."""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ._kernels import engine
from .dynamics import DynamicsModel, Trajectory, flow, time_grid
from .policies import Policy, PolicyLibrary

STATUS_NAMES = {engine.FLOW_OK: "ok", engine.FLOW_GUARD: "guard", engine.FLOW_NONFINITE: "nonfinite"}


@dataclass(frozen=True)
class RolloutParams:
    """Horizon T, rollout step dt and the certification threshold.

    T = 0 is accepted as the degenerate horizon (H reduces to h(x)).
    """

    T: float = 2.0
    dt: float = 0.02
    safety_margin: float = 0.05

    def __post_init__(self):
        if not self.T >= 0:
            raise ValueError("horizon T must be non-negative")
        if not self.dt > 0:
            raise ValueError("rollout dt must be positive")
        if self.T > 0 and self.dt > self.T:
            raise ValueError("rollout dt must not exceed the horizon")
        if self.safety_margin < 0:
            raise ValueError("safety margin must be non-negative")

    def grid(self):
        return time_grid(self.T, self.dt)


@dataclass(frozen=True, eq=False)
class RolloutResult:
    policy_id: str
    value: float
    min_time: float
    safe: bool
    status: str = "ok"
    trajectory: Trajectory | None = None
    tau0: float = 0.0

    @property
    def clearance(self):
        return self.value

    @property
    def H(self):
        return self.value


def clearance(traj: Trajectory, snapshot, tau0: float = 0.0) -> float:
    """Minimum of h over the samples of ``traj`` (look-ahead measured from ``tau0``)."""
    if len(traj.times) == 0:
        raise ValueError("empty trajectory")
    taus = tau0 + traj.times
    return float(np.min(snapshot.evaluate_many(traj.states, taus)))


class _Batch:
    """Raw output buffers of one engine call."""

    def __init__(self, n_tasks, n_samples, model):
        self.states = np.empty((n_tasks, n_samples, model.state_dim))
        self.controls = np.zeros((n_tasks, max(n_samples - 1, 0), model.control_dim))
        self.status = np.empty(n_tasks, dtype=np.int64)
        self.nvalid = np.empty(n_tasks, dtype=np.int64)
        self.values = np.empty(n_tasks)
        self.argmins = np.empty(n_tasks, dtype=np.int64)


def _pack_policies(policies):
    width = max(len(p.params) for p in policies)
    table = np.zeros((len(policies), max(width, 1)))
    for i, p in enumerate(policies):
        table[i, :len(p.params)] = p.params
    kinds = np.array([p.kernel_kind for p in policies], dtype=np.int64)
    return kinds, table


def _run(model, policies, x0s, snapshot, params, t, tau0, out: _Batch, sl=slice(None)):
    times, steps = params.grid()
    kinds, table = _pack_policies(policies)
    engine.rollout_batch(model.kind, model.params, model.input_lower, model.input_upper,
                         kinds, table, np.ascontiguousarray(x0s, dtype=float), float(t),
                         times, steps, *snapshot.kernel_args(), float(tau0),
                         out.states[sl], out.controls[sl], out.status[sl], out.nvalid[sl],
                         out.values[sl], out.argmins[sl])


def _python_rollout(model, policy, snapshot, x0, params, t, tau0, retain):
    from .errors import NumericError
    try:
        traj = flow(model, policy, x0, params.T, params.dt, t0=t)
    except NumericError:
        return RolloutResult(policy.id, -math.inf, 0.0, False, "nonfinite", None, tau0)
    hs = snapshot.evaluate_many(traj.states, tau0 + traj.times)
    k = int(np.argmin(hs))
    value = float(hs[k])
    return RolloutResult(policy.id, value, float(traj.times[k]), value > params.safety_margin,
                         "ok", traj if retain else None, tau0)


def _result(policy, batch, i, times, params, retain, tau0):
    status = int(batch.status[i])
    nv = int(batch.nvalid[i])
    value = float(batch.values[i])
    traj = None
    if retain:
        traj = Trajectory(times=times[:nv], states=batch.states[i, :nv], dt=params.dt,
                          controls=batch.controls[i, :max(nv - 1, 0)])
    safe = status == engine.FLOW_OK and value > params.safety_margin
    return RolloutResult(policy.id, value, float(times[int(batch.argmins[i])]), safe,
                         STATUS_NAMES[status], traj, tau0)


def _tau0(snapshot, t, tau0):
    return float(t - snapshot.t) if tau0 is None else float(tau0)


def rollout_value(model: DynamicsModel, policy: Policy, snapshot, x0, params: RolloutParams,
                  t: float = 0.0, tau0=None, retain=True) -> RolloutResult:
    """H^pi_T(x0): clearance of the closed-loop flow from ``x0`` at absolute time ``t``.

    A flow that blows up yields an unsafe result with H = -inf.
    """
    x0 = model._check_state(x0)
    tau0 = _tau0(snapshot, t, tau0)
    if policy.kernel_kind is None:
        return _python_rollout(model, policy, snapshot, x0, params, t, tau0, retain)
    times, _ = params.grid()
    batch = _Batch(1, len(times), model)
    _run(model, [policy], x0[None, :], snapshot, params, t, tau0, batch)
    return _result(policy, batch, 0, times, params, retain, tau0)


def evaluate_library(model: DynamicsModel, library: PolicyLibrary, snapshot, x0,
                     params: RolloutParams, workers: int = 1, t: float = 0.0, tau0=None,
                     retain=True) -> list:
    """Roll out every library policy from ``x0``; results in library order.

    Output is bitwise identical for any ``workers``: each rollout runs the
    same compiled code and writes to its own slot.
    """
    x0 = model._check_state(x0)
    tau0 = _tau0(snapshot, t, tau0)
    policies = list(library)
    if any(p.kernel_kind is None for p in policies):
        return [rollout_value(model, p, snapshot, x0, params, t, tau0, retain) for p in policies]
    times, _ = params.grid()
    n = len(policies)
    batch = _Batch(n, len(times), model)
    x0s = np.repeat(x0[None, :], n, axis=0)
    if workers <= 1 or n == 1:
        _run(model, policies, x0s, snapshot, params, t, tau0, batch)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            futures = [pool.submit(_run, model, [p], x0s[i:i + 1], snapshot, params, t, tau0,
                                   batch, slice(i, i + 1)) for i, p in enumerate(policies)]
            for fut in futures:
                fut.result()
    return [_result(p, batch, i, times, params, retain, tau0) for i, p in enumerate(policies)]


def evaluate_batch(model: DynamicsModel, library: PolicyLibrary, snapshot, states,
                   params: RolloutParams, workers: int = 1, t: float = 0.0, tau0=None):
    """H values for many initial states: returns (values, status) of shape (B, |library|).

    Tasks (state x policy) are split into ``workers`` contiguous chunks, each
    one compiled call that releases the GIL.
    """
    states = np.ascontiguousarray(states, dtype=float)
    policies = list(library)
    tau0 = _tau0(snapshot, t, tau0)
    B, P = len(states), len(policies)
    task_states = np.repeat(states, P, axis=0)
    task_policies = policies * B
    times, _ = params.grid()
    batch = _Batch(B * P, len(times), model)
    n_tasks = B * P
    if n_tasks == 0:
        return np.zeros((B, P)), np.zeros((B, P), dtype=np.int64)
    workers = max(1, min(int(workers), n_tasks))
    bounds = np.linspace(0, n_tasks, workers + 1).astype(int)
    chunks = [(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]

    def job(a, b):
        _run(model, task_policies[a:b], task_states[a:b], snapshot, params, t, tau0, batch, slice(a, b))

    if len(chunks) == 1:
        job(*chunks[0])
    else:
        with ThreadPoolExecutor(max_workers=len(chunks)) as pool:
            for fut in [pool.submit(job, a, b) for a, b in chunks]:
                fut.result()
    return batch.values.reshape(B, P), batch.status.reshape(B, P)


def select_mode(results, library: PolicyLibrary):
    """Id of the least invasive safe policy, or None when nothing is certified."""
    best = None
    for res, pol in zip(results, library):
        if res.policy_id != pol.id:
            raise ValueError("results are not aligned with the library order")
        if res.safe and (best is None or pol.rank < best.rank):
            best = pol
    return None if best is None else best.id
