"""Policies, the nominal controllers, and the fallback policy library."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from ._kernels import models as mk
from ._kernels import policies as pk
from .dynamics import DynamicsModel
from .errors import ConfigError

KERNEL_KINDS = {
    "constant": pk.CONSTANT,
    "piecewise_constant": pk.PIECEWISE,
    "sinusoid": pk.SINUSOID,
    "di_pd": pk.DI_PD,
    "di_stop": pk.DI_STOP,
    "vehicle_lane": pk.VEH_LANE,
    "vehicle_brake": pk.VEH_BRAKE,
    "quad_waypoint": pk.QUAD_WAYPOINT,
    "quad_velocity": pk.QUAD_VELOCITY,
}


@dataclass(frozen=True, eq=False)
class Policy:
    """A deterministic feedback law (state, time) -> control.

    Built-in laws carry a compiled ``kernel_kind`` and a flat parameter vector
    so rollouts never re-enter Python. A policy built from a plain callable
    (``fn``) works everywhere but rolls out through the slow Python path.
    """

    id: str
    lower: np.ndarray
    upper: np.ndarray
    kind: str = "callable"
    params: np.ndarray = field(default_factory=lambda: np.zeros(0))
    rank: int = 0
    fn: Callable | None = None

    def __post_init__(self):
        for name in ("lower", "upper", "params"):
            arr = np.ascontiguousarray(getattr(self, name), dtype=float)
            arr.flags.writeable = False
            object.__setattr__(self, name, arr)
        if self.fn is None and self.kind not in KERNEL_KINDS:
            raise ConfigError(f"unknown policy kind {self.kind!r}", field="type")

    @property
    def kernel_kind(self):
        if self.fn is not None:
            return None
        return KERNEL_KINDS[self.kind]

    def raw_action(self, x, t=0.0):
        x = np.ascontiguousarray(x, dtype=float)
        if self.fn is not None:
            return np.asarray(self.fn(x, t), dtype=float)
        out = np.empty(len(self.lower))
        pk.action(self.kernel_kind, x, float(t), self.params, out)
        return out

    def action(self, x, t=0.0):
        """Clamped control at (x, t)."""
        u = self.raw_action(x, t)
        return np.minimum(np.maximum(u, self.lower), self.upper)

    def with_rank(self, rank, id=None):
        return Policy(id=id or self.id, lower=self.lower, upper=self.upper, kind=self.kind,
                      params=self.params, rank=rank, fn=self.fn)


def action(policy: Policy, x, t=0.0):
    return policy.action(x, t)


def _bounds(model):
    return model.input_lower, model.input_upper


def from_callable(id, model: DynamicsModel, fn, rank=0) -> Policy:
    lo, hi = _bounds(model)
    return Policy(id=id, lower=lo, upper=hi, fn=fn, rank=rank)


def constant(id, model: DynamicsModel, u, rank=0) -> Policy:
    lo, hi = _bounds(model)
    u = np.asarray(u, dtype=float).reshape(model.control_dim)
    return Policy(id=id, lower=lo, upper=hi, kind="constant", params=u, rank=rank)


def piecewise_constant(id, model: DynamicsModel, values, segment, rank=0) -> Policy:
    """Open-loop control holding ``values[i]`` on [i*segment, (i+1)*segment)."""
    lo, hi = _bounds(model)
    values = np.asarray(values, dtype=float).reshape(-1, model.control_dim)
    params = np.concatenate([[float(segment), float(len(values))], values.ravel()])
    return Policy(id=id, lower=lo, upper=hi, kind="piecewise_constant", params=params, rank=rank)


def sinusoid(id, model: DynamicsModel, offset, amplitude, omega, phase=None, rank=0) -> Policy:
    lo, hi = _bounds(model)
    nu = model.control_dim
    phase = np.zeros(nu) if phase is None else phase
    parts = [np.broadcast_to(np.asarray(a, dtype=float), (nu,)) for a in (offset, amplitude, omega, phase)]
    return Policy(id=id, lower=lo, upper=hi, kind="sinusoid", params=np.concatenate(parts), rank=rank)


def pd_goal(id, model: DynamicsModel, goal, kp=1.0, kd=2.0, rank=0) -> Policy:
    """Double-integrator goal tracking: u = kp (goal - p) - kd v."""
    _require(model, mk.DOUBLE_INTEGRATOR, "pd_goal")
    lo, hi = _bounds(model)
    return Policy(id=id, lower=lo, upper=hi, kind="di_pd",
                  params=np.array([kp, kd, goal[0], goal[1]], dtype=float), rank=rank)


def stop(id, model: DynamicsModel, rank=1, **kw) -> Policy:
    """Decelerate to rest.

    Double integrator: u = -K_v v. Vehicle: hold heading and brake the driven
    wheel. Quadrotor: track zero velocity (brake to hover).
    """
    lo, hi = _bounds(model)
    if model.kind == mk.DOUBLE_INTEGRATOR:
        _check_keys(kw, ("kv",), "stop")
        params = [kw.get("kv", 10.0)]
        kind = "di_stop"
    elif model.kind == mk.VEHICLE:
        _check_keys(kw, ("k_psi", "k_r", "torque", "speed_scale"), "stop")
        torque = kw.get("torque", -float(model.input_lower[1]))
        params = [kw.get("k_psi", 1.0), kw.get("k_r", 0.1), torque,
                  model.param("wheel_radius"), kw.get("speed_scale", 1.0)]
        kind = "vehicle_brake"
    else:
        return quad_velocity(id, model, (0.0, 0.0, 0.0), rank=rank, **kw)
    return Policy(id=id, lower=lo, upper=hi, kind=kind, params=np.array(params, dtype=float), rank=rank)


def evade(id, model: DynamicsModel, direction="up", rank=2, **kw) -> Policy:
    """Evasive maneuver toward +y ("up") or -y ("down").

    Double integrator: maximal lateral acceleration with zero longitudinal
    command. Vehicle: lane change to ``y_target`` at full steering authority.
    Quadrotor: velocity hold along ``velocity`` (climb or lateral dodge).
    """
    if direction not in ("up", "down"):
        raise ValueError(f"evade direction must be 'up' or 'down', got {direction!r}")
    sign = 1.0 if direction == "up" else -1.0
    if model.kind == mk.DOUBLE_INTEGRATOR:
        _check_keys(kw, (), "evade")
        u = np.zeros(2)
        u[1] = model.input_upper[1] if sign > 0 else model.input_lower[1]
        return constant(id, model, u, rank=rank)
    if model.kind == mk.VEHICLE:
        return lane_keep(id, model, y_ref=kw.get("y_target", sign * 3.5),
                         v_ref=kw.get("v_ref", 20.0), rank=rank,
                         **{k: v for k, v in kw.items() if k not in ("y_target", "v_ref")})
    vel = kw.pop("velocity", (0.0, sign * 3.0, 0.0))
    return quad_velocity(id, model, vel, rank=rank, **kw)


def lane_keep(id, model: DynamicsModel, y_ref=0.0, v_ref=20.0, k_y=1.0, k_psi=1.0, k_r=0.1,
              k_v=1.0, x_stop=math.inf, a_comf=3.0, rank=0) -> Policy:
    """Vehicle lane tracking with cruise speed; slows to stop before ``x_stop``."""
    _require(model, mk.VEHICLE, "lane_keep")
    lo, hi = _bounds(model)
    params = [y_ref, v_ref, k_y, k_psi, k_r, k_v, x_stop, a_comf,
              model.param("mass"), model.param("wheel_radius")]
    return Policy(id=id, lower=lo, upper=hi, kind="vehicle_lane", params=np.array(params, dtype=float), rank=rank)


def _quad_tail(model, a_max, k_att, k_rate):
    return [a_max, k_att, k_rate, model.param("mass"), model.param("gravity"),
            model.param("Jx"), model.param("Jy"), model.param("Jz")]


def waypoint(id, model: DynamicsModel, goal, kp=1.0, kd=1.8, a_max=6.0, k_att=100.0, k_rate=20.0, rank=0) -> Policy:
    """Quadrotor PD toward a waypoint with hover-thrust feedforward."""
    _require(model, mk.QUADROTOR, "waypoint")
    lo, hi = _bounds(model)
    params = list(goal) + [kp, kd] + _quad_tail(model, a_max, k_att, k_rate)
    return Policy(id=id, lower=lo, upper=hi, kind="quad_waypoint", params=np.array(params, dtype=float), rank=rank)


def quad_velocity(id, model: DynamicsModel, velocity, kv=3.0, a_max=6.0, k_att=100.0, k_rate=20.0, rank=1) -> Policy:
    _require(model, mk.QUADROTOR, "velocity_hold")
    lo, hi = _bounds(model)
    params = list(velocity) + [kv] + _quad_tail(model, a_max, k_att, k_rate)
    return Policy(id=id, lower=lo, upper=hi, kind="quad_velocity", params=np.array(params, dtype=float), rank=rank)


def _check_keys(kw, allowed, what):
    extra = sorted(set(kw) - set(allowed))
    if extra:
        raise TypeError(f"{what}() got unexpected parameters {extra}")


def _require(model, kind, what):
    if model.kind != kind:
        raise ConfigError(f"policy type {what!r} is not available for model {model.name!r}", field="type")


class PolicyLibrary:
    """Ordered fallback library; position 0 is always the nominal policy."""

    def __init__(self, policies):
        policies = sorted(policies, key=lambda p: p.rank)
        if not policies:
            raise ConfigError("policy library is empty", field="library")
        ids = [p.id for p in policies]
        ranks = [p.rank for p in policies]
        if len(set(ids)) != len(ids):
            raise ConfigError(f"duplicate policy ids in {ids}", field="library")
        if len(set(ranks)) != len(ranks):
            raise ConfigError(f"duplicate invasiveness ranks in {ranks}", field="library")
        if ranks[0] != 0:
            raise ConfigError("library has no nominal policy (rank 0)", field="library")
        self.policies = tuple(policies)
        self._index = {p.id: i for i, p in enumerate(self.policies)}

    @property
    def nominal(self) -> Policy:
        return self.policies[0]

    def __len__(self):
        return len(self.policies)

    def __iter__(self):
        return iter(self.policies)

    def __getitem__(self, key):
        if isinstance(key, str):
            return self.policies[self._index[key]]
        return self.policies[key]

    def index(self, policy_id):
        return self._index[policy_id]

    @property
    def ids(self):
        return tuple(p.id for p in self.policies)

    def subset(self, ids):
        return PolicyLibrary([self[i] for i in ids])

    def __repr__(self):
        return f"PolicyLibrary({', '.join(f'{p.id}:{p.rank}' for p in self.policies)})"


_CONSTRUCTORS = {
    "pd_goal": pd_goal,
    "stop": stop,
    "evade": evade,
    "lane_keep": lane_keep,
    "waypoint": waypoint,
    "velocity_hold": quad_velocity,
    "constant": constant,
    "piecewise_constant": piecewise_constant,
    "sinusoid": sinusoid,
}


def library_from_config(spec, model: DynamicsModel) -> PolicyLibrary:
    """Build a library from ``[{id, type, params, rank}, ...]``.

    Ranks default to list position. Exactly one entry must have rank 0.
    """
    if not spec:
        raise ConfigError("policy library is empty", field="library")
    policies = []
    for i, entry in enumerate(spec):
        kind = entry.get("type")
        if kind not in _CONSTRUCTORS:
            raise ConfigError(f"unknown policy type {kind!r}", field=f"library[{i}].type")
        rank = entry.get("rank", i)
        try:
            policies.append(_CONSTRUCTORS[kind](entry["id"], model, rank=rank, **entry.get("params", {})))
        except ConfigError as exc:
            raise ConfigError(exc.message, field=f"library[{i}].{exc.field}") from exc
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc), field=f"library[{i}].params") from exc
    if not any(p.rank == 0 for p in policies):
        raise ConfigError("library has no nominal policy (rank 0)", field="library")
    return PolicyLibrary(policies)
