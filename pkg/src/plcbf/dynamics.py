"""Control-affine models, the RK4 integrator, and closed-loop flows."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from ._kernels import constraints as ck
from ._kernels import engine
from ._kernels import models as mk
from .errors import NumericError

_EMPTY_KINDS = np.zeros(0, dtype=np.int64)
_EMPTY_TABLE = np.zeros((0, ck.WIDTH))
_NO_POS = np.zeros(0, dtype=np.int64)

VEHICLE_DEFAULTS = {
    "mass": 1500.0,
    "yaw_inertia": 2500.0,
    "lf": 1.2,
    "lr": 1.4,
    "mu": 1.0,
    "tire_B": 10.0,
    "tire_C": 1.9,
    "steer_tau": 0.1,
    "wheel_radius": 0.3,
    "wheel_inertia": 50.0,
    "long_B": 10.0,
    "long_C": 1.6,
    "gravity": 9.81,
    "v_reg": 2.0,
}
_VEHICLE_ORDER = ("mass", "yaw_inertia", "lf", "lr", "mu", "tire_B", "tire_C", "steer_tau",
                  "wheel_radius", "wheel_inertia", "long_B", "long_C", "gravity", "v_reg")

QUAD_DEFAULTS = {
    "mass": 1.0,
    "gravity": 9.81,
    "Jx": 0.01,
    "Jy": 0.01,
    "Jz": 0.02,
    "pitch_limit_deg": 85.0,
}


@dataclass(frozen=True, eq=False)
class DynamicsModel:
    """A control-affine system xdot = f(x) + g(x) u backed by a compiled kernel.

    Instances are immutable; ``with_params`` returns a modified copy (used to
    switch the tire friction coefficient at runtime).
    """

    name: str
    kind: int
    state_dim: int
    control_dim: int
    input_lower: np.ndarray
    input_upper: np.ndarray
    params: np.ndarray
    param_names: tuple = ()
    position_indices: tuple = ()
    velocity_indices: tuple = ()
    state_labels: tuple = ()
    control_labels: tuple = ()

    def __post_init__(self):
        lo = np.ascontiguousarray(self.input_lower, dtype=float)
        hi = np.ascontiguousarray(self.input_upper, dtype=float)
        if lo.shape != (self.control_dim,) or hi.shape != (self.control_dim,):
            raise ValueError("input bounds must have length control_dim")
        if not np.all(lo < hi):
            raise ValueError("input_lower must be strictly below input_upper")
        lo.flags.writeable = False
        hi.flags.writeable = False
        p = np.ascontiguousarray(self.params, dtype=float)
        p.flags.writeable = False
        object.__setattr__(self, "input_lower", lo)
        object.__setattr__(self, "input_upper", hi)
        object.__setattr__(self, "params", p)

    def param(self, name):
        return float(self.params[self.param_names.index(name)])

    def with_params(self, **updates):
        p = self.params.copy()
        for key, value in updates.items():
            if key not in self.param_names:
                raise KeyError(f"{self.name} has no parameter {key!r}")
            p[self.param_names.index(key)] = float(value)
        return replace(self, params=p)

    def with_bounds(self, lower, upper):
        return replace(self, input_lower=np.asarray(lower, float), input_upper=np.asarray(upper, float))

    def clamp(self, u):
        return np.minimum(np.maximum(np.asarray(u, dtype=float), self.input_lower), self.input_upper)

    def _check_state(self, x):
        x = np.ascontiguousarray(x, dtype=float)
        if x.shape != (self.state_dim,):
            raise ValueError(f"{self.name}: expected state of length {self.state_dim}, got {x.shape}")
        if not np.all(np.isfinite(x)):
            raise NumericError(f"{self.name}: non-finite state {x}")
        return x

    def _check_control(self, u):
        u = np.ascontiguousarray(u, dtype=float)
        if u.shape != (self.control_dim,):
            raise ValueError(f"{self.name}: expected control of length {self.control_dim}, got {u.shape}")
        if not np.all(np.isfinite(u)):
            raise NumericError(f"{self.name}: non-finite control {u}")
        return u

    def f(self, x):
        x = self._check_state(x)
        out = np.empty(self.state_dim)
        if mk.drift(self.kind, x, self.params, out) != mk.OK:
            raise NumericError(f"{self.name}: state outside the valid attitude chart")
        return out

    def g(self, x):
        x = self._check_state(x)
        out = np.empty((self.state_dim, self.control_dim))
        if mk.actuation(self.kind, x, self.params, out) != mk.OK:
            raise NumericError(f"{self.name}: state outside the valid attitude chart")
        return out

    def derivative(self, x, u):
        return derivative(self, x, u)


def derivative(model: DynamicsModel, x, u) -> np.ndarray:
    """Return f(x) + g(x) u."""
    x = model._check_state(x)
    u = model._check_control(u)
    out = np.empty(model.state_dim)
    if mk.derivative(model.kind, x, u, model.params, out) != mk.OK:
        raise NumericError(f"{model.name}: state outside the valid attitude chart")
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{model.name}: non-finite derivative")
    return out


def step_rk4(model: DynamicsModel, x, u, dt: float) -> np.ndarray:
    """One classical RK4 step.

    ``u`` is either a control vector held over the step or a callable
    ``u(s)`` evaluated at the stage times s in {0, dt/2, dt}.
    """
    if dt < 0:
        raise ValueError("dt must be non-negative")
    x = model._check_state(x)
    if callable(u):
        k1 = derivative(model, x, u(0.0))
        k2 = derivative(model, x + 0.5 * dt * k1, u(0.5 * dt))
        k3 = derivative(model, x + 0.5 * dt * k2, u(0.5 * dt))
        k4 = derivative(model, x + dt * k3, u(dt))
        out = x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    else:
        u = model._check_control(u)
        status, out = engine.single_step(model.kind, x, u, model.params, float(dt))
        if status != mk.OK:
            raise NumericError(f"{model.name}: state outside the valid attitude chart",
                               time=dt, last_state=x)
    if not np.all(np.isfinite(out)):
        raise NumericError(f"{model.name}: integration blew up", time=dt, last_state=x)
    return out


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Sampled flow: ``states[i]`` is the state at ``times[i]`` after the start."""

    times: np.ndarray
    states: np.ndarray
    dt: float
    controls: np.ndarray = field(default=None)

    def __len__(self):
        return len(self.times)

    @property
    def terminal(self):
        return self.states[-1]


def time_grid(T: float, dt: float):
    """Sample times and step lengths covering [0, T].

    When ``dt`` does not divide ``T`` the final step is shortened so the last
    sample lands exactly on ``T``.
    """
    if T < 0:
        raise ValueError("horizon must be non-negative")
    if dt <= 0:
        raise ValueError("dt must be positive")
    ratio = T / dt
    n = int(round(ratio))
    if abs(ratio - n) <= 1e-9 * max(1.0, ratio):
        steps = np.full(n, float(dt))
        times = np.arange(n + 1) * float(dt)
    else:
        n = int(math.floor(ratio))
        steps = np.full(n + 1, float(dt))
        steps[-1] = T - n * dt
        times = np.empty(n + 2)
        times[:-1] = np.arange(n + 1) * float(dt)
        times[-1] = T
    return times, steps


def flow(model: DynamicsModel, policy, x0, T: float, dt: float, t0: float = 0.0) -> Trajectory:
    """Closed-loop flow under ``policy`` with zero-order-hold, clamped control."""
    x0 = model._check_state(x0)
    times, steps = time_grid(T, dt)
    kernel_kind = getattr(policy, "kernel_kind", None)
    if kernel_kind is None:
        return _flow_python(model, policy, x0, times, steps, t0, dt)
    n = len(times)
    states = np.empty((1, n, model.state_dim))
    controls = np.zeros((1, max(n - 1, 0), model.control_dim))
    status = np.empty(1, dtype=np.int64)
    nvalid = np.empty(1, dtype=np.int64)
    values = np.empty(1)
    argmins = np.empty(1, dtype=np.int64)
    engine.rollout_batch(model.kind, model.params, model.input_lower, model.input_upper,
                         np.array([kernel_kind], dtype=np.int64), policy.params[None, :],
                         x0[None, :], float(t0), times, steps,
                         _EMPTY_KINDS, _EMPTY_TABLE, _NO_POS, 0, 1.0, False, 0.0,
                         states, controls, status, nvalid, values, argmins)
    if status[0] != engine.FLOW_OK:
        k = int(nvalid[0])
        raise NumericError(f"{model.name}: flow blew up under policy {policy.id!r}",
                           time=float(times[k - 1]), last_state=states[0, k - 1])
    return Trajectory(times=times, states=states[0], dt=float(dt), controls=controls[0])


def _flow_python(model, policy, x0, times, steps, t0, dt):
    states = np.empty((len(times), model.state_dim))
    controls = np.empty((len(steps), model.control_dim))
    states[0] = x0
    for i, h in enumerate(steps):
        u = model.clamp(policy.action(states[i], t0 + times[i]))
        controls[i] = u
        try:
            states[i + 1] = step_rk4(model, states[i], u, h)
        except NumericError as exc:
            raise NumericError(f"{model.name}: flow blew up under policy {getattr(policy, 'id', '?')!r}",
                               time=float(times[i]), last_state=states[i]) from exc
    return Trajectory(times=times, states=states, dt=float(dt), controls=controls)


def double_integrator(u_max=1.0, name="double_integrator") -> DynamicsModel:
    u_max = np.broadcast_to(np.asarray(u_max, dtype=float), (2,))
    return DynamicsModel(
        name=name, kind=mk.DOUBLE_INTEGRATOR, state_dim=4, control_dim=2,
        input_lower=-u_max, input_upper=u_max.copy(), params=np.zeros(0),
        position_indices=(0, 1), velocity_indices=(2, 3),
        state_labels=("px", "py", "vx", "vy"), control_labels=("ax", "ay"),
    )


def vehicle8(name="vehicle8", max_steer=0.5, torque_bounds=(-3000.0, 1500.0), **params) -> DynamicsModel:
    """Dynamic single-track model with Pacejka-style tires.

    State (px, py, psi, vx, vy, r, delta, omega); control (steer command,
    driven-axle wheel torque). ``mu`` scales every tire force.
    """
    unknown = set(params) - set(VEHICLE_DEFAULTS)
    if unknown:
        raise KeyError(f"unknown vehicle parameters: {sorted(unknown)}")
    merged = {**VEHICLE_DEFAULTS, **params}
    return DynamicsModel(
        name=name, kind=mk.VEHICLE, state_dim=8, control_dim=2,
        input_lower=np.array([-max_steer, torque_bounds[0]]),
        input_upper=np.array([max_steer, torque_bounds[1]]),
        params=np.array([merged[k] for k in _VEHICLE_ORDER]), param_names=_VEHICLE_ORDER,
        position_indices=(0, 1), velocity_indices=(3, 4),
        state_labels=("px", "py", "psi", "vx", "vy", "r", "delta", "omega"),
        control_labels=("steer_cmd", "torque"),
    )


def quadrotor12(name="quadrotor12", max_thrust_ratio=2.0, max_torque=(0.5, 0.5, 0.2), **params) -> DynamicsModel:
    """Rigid-body quadrotor with Z-Y-X Euler angles.

    State (p(3), v(3), roll, pitch, yaw, body rates(3)); control (collective
    thrust, three body torques). Derivatives beyond the pitch limit raise.
    """
    unknown = set(params) - set(QUAD_DEFAULTS)
    if unknown:
        raise KeyError(f"unknown quadrotor parameters: {sorted(unknown)}")
    merged = {**QUAD_DEFAULTS, **params}
    order = ("mass", "gravity", "Jx", "Jy", "Jz", "pitch_limit")
    values = [merged["mass"], merged["gravity"], merged["Jx"], merged["Jy"], merged["Jz"],
              math.radians(merged["pitch_limit_deg"])]
    tmax = max_thrust_ratio * merged["mass"] * merged["gravity"]
    torque = np.asarray(max_torque, dtype=float)
    return DynamicsModel(
        name=name, kind=mk.QUADROTOR, state_dim=12, control_dim=4,
        input_lower=np.concatenate([[0.0], -torque]),
        input_upper=np.concatenate([[tmax], torque]),
        params=np.array(values), param_names=order,
        position_indices=(0, 1, 2), velocity_indices=(3, 4, 5),
        state_labels=("px", "py", "pz", "vx", "vy", "vz", "roll", "pitch", "yaw", "p", "q", "r"),
        control_labels=("thrust", "tau_x", "tau_y", "tau_z"),
    )


MODEL_FACTORIES: dict[str, Callable[..., DynamicsModel]] = {
    "double_integrator": double_integrator,
    "vehicle8": vehicle8,
    "quadrotor12": quadrotor12,
}


def model_from_config(spec: dict) -> DynamicsModel:
    kind = spec["type"]
    if kind not in MODEL_FACTORIES:
        raise KeyError(f"unknown model type {kind!r}")
    kwargs = dict(spec.get("params", {}))
    if kind == "double_integrator" and "u_max" in spec:
        kwargs["u_max"] = spec["u_max"]
    model = MODEL_FACTORIES[kind](**kwargs)
    if "input_lower" in spec or "input_upper" in spec:
        model = model.with_bounds(spec.get("input_lower", model.input_lower),
                                  spec.get("input_upper", model.input_upper))
    return model
