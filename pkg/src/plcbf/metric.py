"""Finite-horizon language metric between policies and the library coverage certificate.

d_x(a, b) is the largest Euclidean gap between the two closed-loop flows
from x over the horizon. The library's approximation precision is estimated
against a finite-dimensional family of admissible open-loop policies, and the
coverage test ``delta < gamma* / L_h`` guarantees some library member keeps a
positive clearance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import policies as pol
from .constraints import lipschitz_estimate
from .dynamics import DynamicsModel, time_grid
from .errors import NumericError
from .rollout import RolloutParams, _Batch, _run


class CompletenessViolation(AssertionError):
    """The coverage condition held but no library policy had positive clearance."""


@dataclass(frozen=True, eq=False)
class AdmissiblePolicyFamily:
    """Open-loop policies parameterized by a flat vector.

    ``piecewise_constant``: ``segments`` control values held on equal
    sub-intervals of the horizon, each drawn uniformly from the input box.
    ``fixed``: the explicit parameter vectors in ``members`` (sampling cycles
    through them).
    """

    model: DynamicsModel
    horizon: float
    segments: int = 5
    kind: str = "piecewise_constant"
    members: tuple = ()
    lower: np.ndarray = None
    upper: np.ndarray = None

    def __post_init__(self):
        if self.kind not in ("piecewise_constant", "fixed"):
            raise ValueError(f"unknown family kind {self.kind!r}")
        if self.kind == "fixed" and not self.members:
            raise ValueError("a fixed family needs at least one member")
        lo = self.model.input_lower if self.lower is None else np.asarray(self.lower, float)
        hi = self.model.input_upper if self.upper is None else np.asarray(self.upper, float)
        if np.any(lo < self.model.input_lower) or np.any(hi > self.model.input_upper):
            raise ValueError("family bounds must lie inside the model input box")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if self.kind == "fixed":
            members = tuple(np.asarray(m, float).reshape(-1, self.model.control_dim) for m in self.members)
            object.__setattr__(self, "members", members)

    @property
    def parameter_dim(self):
        if self.kind == "fixed":
            return self.members[0].size
        return self.segments * self.model.control_dim

    def policy(self, values, id="family") -> pol.Policy:
        values = np.asarray(values, float).reshape(-1, self.model.control_dim)
        segment = self.horizon / len(values) if self.horizon > 0 else 1.0
        return pol.piecewise_constant(id, self.model, values, segment)

    def sample_parameters(self, seed, n):
        if self.kind == "fixed":
            return [self.members[i % len(self.members)] for i in range(n)]
        out = []
        for i in range(n):
            rng = np.random.default_rng([int(seed), i])
            out.append(rng.uniform(self.lower, self.upper, size=(self.segments, self.model.control_dim)))
        return out

    def sample(self, seed, n):
        return [self.policy(v, id=f"sample{i}") for i, v in enumerate(self.sample_parameters(seed, n))]


def _sup_distance(a, b):
    return float(np.max(np.sqrt(np.sum((a - b) ** 2, axis=1))))


def _flows(model, policies, x, T, dt, t0=0.0):
    """States of every policy's flow from ``x``: array (P, N, n)."""
    from .constraints import ConstraintSnapshot

    params = RolloutParams(T=T, dt=dt, safety_margin=0.0)
    times, _ = time_grid(T, dt)
    batch = _Batch(len(policies), len(times), model)
    x = model._check_state(x)
    if any(p.kernel_kind is None for p in policies):
        from .dynamics import flow
        for i, p in enumerate(policies):
            batch.states[i] = flow(model, p, x, T, dt, t0=t0).states
        return times, batch.states
    empty = ConstraintSnapshot(0, 0.0, ())
    _run(model, list(policies), np.repeat(x[None, :], len(policies), axis=0), empty, params, t0, 0.0, batch)
    bad = np.flatnonzero(batch.status != 0)
    if len(bad):
        p = policies[int(bad[0])]
        k = int(batch.nvalid[bad[0]])
        raise NumericError(f"flow of {p.id!r} blew up in the metric evaluation",
                           time=float(times[k - 1]), last_state=batch.states[bad[0], k - 1])
    return times, batch.states


def language_metric(model: DynamicsModel, policy_a, policy_b, x, T, dt) -> float:
    """sup over the sampling grid of ||phi_a(tau) - phi_b(tau)||_2."""
    _, states = _flows(model, [policy_a, policy_b], x, T, dt)
    return _sup_distance(states[0], states[1])


def distance_matrix(states_a, states_b):
    return np.array([[_sup_distance(a, b) for b in states_b] for a in states_a]).reshape(len(states_a), len(states_b))


def approximation_precision(model, library, family: AdmissiblePolicyFamily, x, T, dt,
                            n_samples, seed) -> float:
    """max over sampled family policies of the distance to the nearest library policy.

    A lower estimate of the library's precision restricted to ``family``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be at least 1")
    samples = family.sample(seed, n_samples)
    _, s_states = _flows(model, samples, x, T, dt)
    _, l_states = _flows(model, list(library), x, T, dt)
    D = distance_matrix(s_states, l_states)
    return float(D.min(axis=1).max())


def certify(delta_hat, gamma_star, L_h):
    """Threshold gamma*/L_h and the strict coverage test delta < threshold."""
    threshold = gamma_star / L_h if L_h > 0 else math.inf
    return threshold, bool(delta_hat < threshold)


@dataclass
class CompletenessReport:
    delta_hat: float
    gamma_star: float
    L_h: float
    threshold: float
    certified: bool
    witness: dict = field(default_factory=dict)
    reason: str = ""
    sampling_band: float = 0.0
    n_samples: int = 0
    seed: int = 0
    family: str = ""

    def to_dict(self):
        def clean(v):
            if isinstance(v, float) and not math.isfinite(v):
                return str(v)
            if isinstance(v, np.ndarray):
                return v.tolist()
            if isinstance(v, dict):
                return {k: clean(w) for k, w in v.items()}
            return v
        return {k: clean(v) for k, v in self.__dict__.items()}


def completeness_check(model, library, family: AdmissiblePolicyFamily, snapshot, x, T, dt,
                       n_samples, seed, L_h=None, region=None, lipschitz_samples=4000) -> CompletenessReport:
    """Evaluate the coverage certificate at ``x`` against sampled family policies.

    When certified, the conclusion (some library policy has H > 0) is checked
    and a failure raises CompletenessViolation.
    """
    samples = family.sample(seed, n_samples)
    params = family.sample_parameters(seed, n_samples)
    times, s_states = _flows(model, samples, x, T, dt)
    _, l_states = _flows(model, list(library), x, T, dt)
    gammas = np.array([float(np.min(snapshot.evaluate_many(s, times))) for s in s_states])
    lib_H = np.array([float(np.min(snapshot.evaluate_many(s, times))) for s in l_states])
    D = distance_matrix(s_states, l_states)
    delta_hat = float(D.min(axis=1).max())
    allstates = np.concatenate([s_states.reshape(-1, model.state_dim), l_states.reshape(-1, model.state_dim)])
    if L_h is None:
        if region is None:
            lo, hi = allstates.min(axis=0), allstates.max(axis=0)
            pad = 1e-6 + 0.05 * (hi - lo)
            region = (lo - pad, hi + pad)
        L_h = lipschitz_estimate(snapshot, region, lipschitz_samples, seed=seed)
    speeds = np.sqrt((np.diff(np.concatenate([s_states, l_states]), axis=1) ** 2).sum(axis=2))
    steps = np.diff(times)
    band = float(L_h * np.max(speeds / steps) * dt) if len(steps) else 0.0
    i_star = int(np.argmax(gammas))
    gamma_star = float(gammas[i_star])
    threshold, certified = certify(delta_hat, gamma_star, L_h)
    report = CompletenessReport(delta_hat=delta_hat, gamma_star=gamma_star, L_h=float(L_h),
                                threshold=float(threshold), certified=certified, sampling_band=band,
                                n_samples=n_samples, seed=seed, family=family.kind)
    if not gamma_star > 0:
        report.certified = False
        report.reason = "no_safe_policy_sampled"
        return report
    k = int(np.argmin(D[i_star]))
    report.witness = {
        "pi_star": samples[i_star].id,
        "pi_star_parameters": params[i_star].ravel().tolist(),
        "pi_k": library[k].id,
        "distance": float(D[i_star, k]),
        "H_pi_k": float(lib_H[k]),
        "library_H": {p.id: float(h) for p, h in zip(library, lib_H)},
    }
    if not certified:
        report.reason = "delta_not_below_threshold"
        return report
    if not lib_H[k] > 0:
        raise CompletenessViolation(
            f"coverage certified (delta={delta_hat:.6g} < {threshold:.6g}) but H({library[k].id})={lib_H[k]:.6g}")
    report.reason = "certified"
    return report
