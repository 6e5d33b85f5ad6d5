"""The policy-library safety filter.

Each step looks up the current perception snapshot, rolls out the whole
library, picks the least invasive certified policy, and projects the nominal
control onto the half-space where that policy's finite-horizon value H
decays no faster than alpha * H.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import qp
from .dynamics import DynamicsModel
from .errors import GradientError, InfeasibleQP, NumericError
from .policies import Policy, PolicyLibrary
from .rollout import RolloutParams, RolloutResult, _Batch, _run, _tau0, evaluate_library, select_mode
from ._kernels import engine

INACTIVE = "inactive"
ACTIVE = "active"
RELAXED = "relaxed"
FALLBACK = "fallback_engaged"


@dataclass(frozen=True)
class FilterParams:
    rollout: RolloutParams = field(default_factory=RolloutParams)
    alpha: float = 1.0
    grad_eps: float = 1e-4
    relaxation_weight: float | None = None
    row_offset: float = 0.0
    time_derivative: bool = False

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("class-K gain alpha must be positive")
        if not self.grad_eps > 0:
            raise ValueError("grad_eps must be positive")
        if self.relaxation_weight is not None and not self.relaxation_weight > 0:
            raise ValueError("relaxation_weight must be positive when given")
        if not self.row_offset >= 0:
            raise ValueError("row_offset must be non-negative")


@dataclass(frozen=True, eq=False)
class FilterDecision:
    selected_mode: str | None
    u_out: np.ndarray
    qp_status: str
    H_selected: float
    solve_time: float
    u_nom: np.ndarray = None
    engaged_policy: str | None = None
    snapshot_index: int = 0
    results: tuple = ()
    row: tuple | None = None
    kkt_residual: float = 0.0


def value_gradient(model: DynamicsModel, policy: Policy, snapshot, x, params, t: float = 0.0,
                   tau0=None, eps=None) -> np.ndarray:
    """Central-difference gradient of H^pi_T at ``x`` (2 * state_dim rollouts)."""
    rp = params.rollout if isinstance(params, FilterParams) else params
    eps = (params.grad_eps if isinstance(params, FilterParams) else 1e-4) if eps is None else eps
    x = model._check_state(x)
    n = model.state_dim
    tau0 = _tau0(snapshot, t, tau0)
    offsets = np.vstack([np.eye(n) * eps, -np.eye(n) * eps])
    x0s = x[None, :] + offsets
    if policy.kernel_kind is None:
        from .rollout import rollout_value
        vals = np.array([rollout_value(model, policy, snapshot, xi, rp, t, tau0, retain=False).value
                         for xi in x0s])
        status = np.where(vals == -np.inf, engine.FLOW_NONFINITE, engine.FLOW_OK)
    else:
        times, _ = rp.grid()
        batch = _Batch(2 * n, len(times), model)
        _run(model, [policy] * (2 * n), x0s, snapshot, rp, t, tau0, batch)
        vals, status = batch.values, batch.status
    if np.any(status != engine.FLOW_OK):
        raise GradientError(f"perturbed rollout of {policy.id!r} blew up", time=t, last_state=x)
    hp, hm = vals[:n], vals[n:]
    same = hp == hm
    with np.errstate(invalid="ignore"):
        grad = np.where(same, 0.0, (hp - hm) / (2.0 * eps))
    if not np.all(np.isfinite(grad)):
        raise GradientError(f"non-finite value gradient for {policy.id!r}", time=t, last_state=x)
    return grad


def value_time_derivative(model: DynamicsModel, policy: Policy, snapshot, x, params, t: float = 0.0,
                          tau0=None, eps=1e-3) -> float:
    """Central difference of H in time at fixed state.

    H depends on time through the look-ahead of moving obstacles in the
    snapshot and through time-varying policies.
    """
    from .rollout import rollout_value
    rp = params.rollout if isinstance(params, FilterParams) else params
    tau0 = _tau0(snapshot, t, tau0)
    hp = rollout_value(model, policy, snapshot, x, rp, t + eps, tau0 + eps, retain=False)
    hm = rollout_value(model, policy, snapshot, x, rp, t - eps, tau0 - eps, retain=False)
    if hp.status != "ok" or hm.status != "ok":
        raise GradientError(f"time-perturbed rollout of {policy.id!r} blew up", time=t, last_state=x)
    if hp.value == hm.value:
        return 0.0
    return (hp.value - hm.value) / (2.0 * eps)


def _argmax_policy(results, library):
    best = 0
    for i, res in enumerate(results):
        if res.value > results[best].value:
            best = i
    return library[best]


def barrier_row(model, x, grad, H, alpha, offset=0.0, dH_dt=0.0):
    """(a, b) with a . u >= b  <=>  dH_dt + grad . (f(x) + g(x) u) >= -alpha (H - offset)."""
    f = model.f(x)
    G = model.g(x)
    return grad @ G, -alpha * (H - offset) - grad @ f - dH_dt


def filter_step(model: DynamicsModel, x, t: float, library: PolicyLibrary, schedule,
                params: FilterParams, workers: int = 1) -> FilterDecision:
    start = time.perf_counter()
    x = model._check_state(x)
    snapshot = schedule.snapshot_at(t)
    nominal = library.nominal
    u_nom = nominal.action(x, t)

    def done(mode, u, status, H, **kw):
        return FilterDecision(selected_mode=mode, u_out=np.asarray(u, dtype=float), qp_status=status,
                              H_selected=float(H), solve_time=time.perf_counter() - start,
                              u_nom=u_nom, snapshot_index=snapshot.index, **kw)

    results = tuple(evaluate_library(model, library, snapshot, x, params.rollout, workers=workers, t=t))
    mode = select_mode(results, library)

    def fallback(mode_id):
        pol = _argmax_policy(results, library)
        res = results[library.index(pol.id)]
        return done(mode_id, pol.action(x, t), FALLBACK, res.value, engaged_policy=pol.id,
                    results=results)

    if mode is None:
        return fallback(None)
    policy = library[mode]
    res = results[library.index(mode)]
    H = res.value
    if math.isinf(H):
        return done(mode, u_nom, INACTIVE, H, results=results)
    try:
        grad = value_gradient(model, policy, snapshot, x, params, t=t)
        dH_dt = value_time_derivative(model, policy, snapshot, x, params, t) if params.time_derivative else 0.0
        a, b = barrier_row(model, x, grad, H, params.alpha, params.row_offset, dH_dt)
    except NumericError:
        return fallback(mode)
    row = (a, float(b))
    if a @ u_nom >= b:
        return done(mode, u_nom, INACTIVE, H, results=results, row=row)
    if np.linalg.norm(a) < 1e-9:
        return done(mode, policy.action(x, t), FALLBACK, H, engaged_policy=policy.id,
                    results=results, row=row)
    box = (model.input_lower, model.input_upper)
    try:
        sol = qp.qp_min_norm(u_nom, [row], box)
    except InfeasibleQP:
        if params.relaxation_weight is None:
            return fallback(mode)
        u = _relaxed(u_nom, a, b, box, params.relaxation_weight)
        return done(mode, u, RELAXED, H, results=results, row=row)
    u = np.minimum(np.maximum(sol.u, model.input_lower), model.input_upper)
    return done(mode, u, ACTIVE, H, results=results, row=row, kkt_residual=sol.kkt_residual)


def _relaxed(u_nom, a, b, box, weight):
    # slack s = s' / sqrt(weight) keeps the Hessian at identity in (u, s')
    m = len(u_nom)
    z0 = np.concatenate([u_nom, [0.0]])
    row = np.concatenate([a, [1.0 / math.sqrt(weight)]])
    lo = np.concatenate([box[0], [0.0]])
    hi = np.concatenate([box[1], [np.inf]])
    C, d = qp.stack_constraints([(row, b)], (lo, np.where(np.isinf(hi), 1e300, hi)), m + 1)
    return qp.solve(z0, C, d).u[:m]
