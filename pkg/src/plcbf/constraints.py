"""Perceived safe sets: margin functions h_k, update schedules, Lipschitz bounds."""

from __future__ import annotations

import bisect
import math
from dataclasses import dataclass, field

import numpy as np

from ._kernels import constraints as ck
from .errors import ConfigError, DegenerateGradientError

_KIND_NAMES = {
    "ball": ck.BALL,
    "disk": ck.BALL,
    "sphere": ck.BALL,
    "halfspace": ck.HALFSPACE,
    "box": ck.BOX,
    "constant": ck.CONSTANT,
    "state_halfspace": ck.STATE_HALFSPACE,
}


@dataclass(frozen=True)
class Primitive:
    """One constraint term.

    ``ball``: distance to a (moving) disk/sphere minus its radius.
    ``halfspace``: ``normal . p + offset`` over position coordinates.
    ``box``: signed distance to a (moving) axis-aligned box.
    ``constant``: a fixed margin ``value``.
    ``state_halfspace``: ``weights . x + offset`` over the full state.
    Every term is multiplied by ``scale``.
    """

    type: str
    center: tuple = ()
    radius: float = 0.0
    velocity: tuple = ()
    normal: tuple = ()
    offset: float = 0.0
    half_extents: tuple = ()
    weights: tuple = ()
    value: float = 0.0
    scale: float = 1.0

    def __post_init__(self):
        if self.type not in _KIND_NAMES:
            raise ConfigError(f"unknown primitive type {self.type!r}", field="primitives.type")
        if _KIND_NAMES[self.type] == ck.BALL and not self.radius > 0:
            raise ConfigError("obstacle radius must be positive", field="primitives.radius")
        if _KIND_NAMES[self.type] == ck.BOX and any(h <= 0 for h in self.half_extents):
            raise ConfigError("box half extents must be positive", field="primitives.half_extents")
        if len(self.weights) > ck.WIDTH - ck.EXTRA:
            raise ConfigError("state_halfspace supports at most 16 weights", field="primitives.weights")

    @property
    def kind(self):
        return _KIND_NAMES[self.type]

    def packed(self):
        row = np.zeros(ck.WIDTH)
        kind = self.kind
        if kind in (ck.BALL, ck.BOX):
            row[ck.C0:ck.C0 + len(self.center)] = self.center
            row[ck.VEL:ck.VEL + len(self.velocity)] = self.velocity
            row[ck.RAD] = self.radius
            row[ck.EXTRA:ck.EXTRA + len(self.half_extents)] = self.half_extents
        elif kind == ck.HALFSPACE:
            row[ck.C0:ck.C0 + len(self.normal)] = self.normal
            row[ck.RAD] = self.offset
        elif kind == ck.CONSTANT:
            row[ck.RAD] = self.value
        else:
            row[ck.RAD] = self.offset
            row[ck.EXTRA:ck.EXTRA + len(self.weights)] = self.weights
        row[ck.SCALE] = self.scale
        return row

    def lipschitz(self):
        kind = self.kind
        if kind in (ck.BALL, ck.BOX):
            return abs(self.scale)
        if kind == ck.HALFSPACE:
            return abs(self.scale) * float(np.linalg.norm(self.normal))
        if kind == ck.STATE_HALFSPACE:
            return abs(self.scale) * float(np.linalg.norm(self.weights))
        return 0.0

    def to_dict(self):
        out = {"type": self.type}
        defaults = Primitive(type="constant")
        for name in ("center", "radius", "velocity", "normal", "offset", "half_extents",
                     "weights", "value", "scale"):
            value = getattr(self, name)
            if value != getattr(defaults, name):
                out[name] = list(value) if isinstance(value, tuple) else value
        return out

    @classmethod
    def from_dict(cls, spec):
        kw = dict(spec)
        for name in ("center", "velocity", "normal", "half_extents", "weights"):
            if name in kw:
                kw[name] = tuple(float(v) for v in kw[name])
        try:
            return cls(**kw)
        except TypeError as exc:
            raise ConfigError(str(exc), field="primitives") from exc


@dataclass(frozen=True, eq=False)
class ConstraintSnapshot:
    """The margin function h_k valid from ``t`` until the next update.

    Moving primitives are extrapolated at constant velocity over the
    look-ahead time ``tau`` measured from ``t`` (disabled with
    ``predict_motion=False``).
    """

    index: int
    t: float
    primitives: tuple
    position_indices: tuple = (0, 1)
    combiner: str = "min"
    temperature: float = 10.0
    predict_motion: bool = True
    _kinds: np.ndarray = field(init=False, repr=False)
    _table: np.ndarray = field(init=False, repr=False)
    _pos: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        if self.combiner not in ("min", "smooth_min"):
            raise ConfigError(f"unknown combiner {self.combiner!r}", field="combiner")
        if self.temperature <= 0:
            raise ConfigError("smooth-min temperature must be positive", field="temperature")
        prims = tuple(self.primitives)
        object.__setattr__(self, "primitives", prims)
        d = len(self.position_indices)
        for p in prims:
            for name in ("center", "velocity", "normal", "half_extents"):
                v = getattr(p, name)
                if v and len(v) != d:
                    raise ConfigError(f"{p.type} {name} has {len(v)} components, expected {d}",
                                      field=f"primitives.{name}")
        kinds = np.array([p.kind for p in prims], dtype=np.int64)
        table = np.array([p.packed() for p in prims]).reshape(len(prims), ck.WIDTH)
        object.__setattr__(self, "_kinds", kinds)
        object.__setattr__(self, "_table", np.ascontiguousarray(table))
        object.__setattr__(self, "_pos", np.array(self.position_indices, dtype=np.int64))

    @property
    def combiner_code(self):
        return ck.COMBINE_MIN if self.combiner == "min" else ck.COMBINE_SMOOTH

    def kernel_args(self):
        return (self._kinds, self._table, self._pos, self.combiner_code,
                float(self.temperature), bool(self.predict_motion))

    def evaluate(self, x, tau=0.0):
        return evaluate(self, x, tau)

    def gradient(self, x, tau=0.0):
        return gradient(self, x, tau)

    def evaluate_many(self, states, taus):
        states = np.ascontiguousarray(states, dtype=float)
        taus = np.ascontiguousarray(np.broadcast_to(np.asarray(taus, dtype=float), (len(states),)))
        return ck.margin_many(states, taus, *self.kernel_args())

    def margins_each(self, x, tau=0.0):
        x = np.ascontiguousarray(x, dtype=float)
        return ck.margins_each(x, float(tau), self._kinds, self._table, self._pos, bool(self.predict_motion))

    def scaled(self, factor):
        prims = [Primitive(**{**p.__dict__, "scale": p.scale * factor}) for p in self.primitives]
        return ConstraintSnapshot(self.index, self.t, tuple(prims), self.position_indices,
                                  self.combiner, self.temperature, self.predict_motion)

    def to_dict(self):
        return {"t": self.t, "primitives": [p.to_dict() for p in self.primitives]}


def evaluate(snapshot: ConstraintSnapshot, x, tau=0.0) -> float:
    """Combined margin h_k(x) at look-ahead ``tau``; >= 0 inside C_k."""
    x = np.ascontiguousarray(x, dtype=float)
    return float(ck.margin(x, float(tau), *snapshot.kernel_args()))


def _primitive_gradient(prim: Primitive, x, tau, pos, predict):
    grad = np.zeros(len(x))
    kind = prim.kind
    if kind == ck.BALL:
        c = np.asarray(prim.center, float)
        if predict and prim.velocity:
            c = c + np.asarray(prim.velocity, float) * tau
        e = x[pos] - c
        r = float(np.linalg.norm(e))
        if r == 0.0:
            raise DegenerateGradientError("margin gradient undefined at an obstacle center")
        grad[pos] = e / r
    elif kind == ck.HALFSPACE:
        grad[pos] = prim.normal
    elif kind == ck.BOX:
        c = np.asarray(prim.center, float)
        if predict and prim.velocity:
            c = c + np.asarray(prim.velocity, float) * tau
        e = x[pos] - c
        q = np.abs(e) - np.asarray(prim.half_extents, float)
        outside = np.maximum(q, 0.0)
        norm = float(np.linalg.norm(outside))
        local = np.zeros(len(pos))
        if norm > 0.0:
            local = outside / norm
        else:
            i = int(np.argmax(q))
            local[i] = 1.0
        if np.any(e[local != 0] == 0.0):
            raise DegenerateGradientError("margin gradient undefined on a box symmetry plane")
        grad[pos] = local * np.sign(e)
    elif kind == ck.STATE_HALFSPACE:
        w = np.asarray(prim.weights, float)
        grad[:len(w)] = w[:len(x)]
    return prim.scale * grad


def gradient(snapshot: ConstraintSnapshot, x, tau=0.0) -> np.ndarray:
    """Gradient of h_k: the active primitive (hard-min) or the smooth-min blend."""
    x = np.ascontiguousarray(x, dtype=float)
    prims = snapshot.primitives
    if not prims:
        return np.zeros(len(x))
    pos = list(snapshot.position_indices)
    vals = snapshot.margins_each(x, tau)
    if snapshot.combiner == "min" or len(prims) == 1:
        k = int(np.argmin(vals))
        return _primitive_gradient(prims[k], x, tau, pos, snapshot.predict_motion)
    w = np.exp(-snapshot.temperature * (vals - vals.min()))
    w /= w.sum()
    grad = np.zeros(len(x))
    for wk, prim in zip(w, prims):
        grad += wk * _primitive_gradient(prim, x, tau, pos, snapshot.predict_motion)
    return grad


class PerceptionSchedule:
    """Time-ordered snapshots; ``snapshot_at(t)`` returns the latest update at or before t."""

    def __init__(self, snapshots):
        snapshots = list(snapshots)
        if not snapshots:
            raise ConfigError("perception schedule is empty", field="perception.snapshots")
        times = [s.t for s in snapshots]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ConfigError("update times must be strictly increasing", field="perception.snapshots")
        self.snapshots = tuple(snapshots)
        self.times = tuple(times)

    def __len__(self):
        return len(self.snapshots)

    def index_at(self, t):
        """kappa(t): k such that t_k <= t < t_{k+1}."""
        if t < self.times[0]:
            raise ValueError(f"t={t} precedes the first perception update at t={self.times[0]}")
        return bisect.bisect_right(self.times, t) - 1

    def snapshot_at(self, t) -> ConstraintSnapshot:
        return self.snapshots[self.index_at(t)]

    @classmethod
    def static(cls, primitives, **kw):
        return cls([ConstraintSnapshot(0, 0.0, tuple(primitives), **kw)])


def snapshot_at(schedule: PerceptionSchedule, t) -> ConstraintSnapshot:
    return schedule.snapshot_at(t)


def schedule_from_config(spec, position_indices=(0, 1)) -> PerceptionSchedule:
    snaps = []
    for k, entry in enumerate(spec["snapshots"]):
        prims = tuple(Primitive.from_dict(p) for p in entry.get("primitives", []))
        snaps.append(ConstraintSnapshot(
            index=k, t=float(entry["t"]), primitives=prims,
            position_indices=tuple(position_indices),
            combiner=spec.get("combiner", "min"),
            temperature=spec.get("temperature", 10.0),
            predict_motion=spec.get("predict_motion", True)))
    return PerceptionSchedule(snaps)


def schedule_to_config(schedule: PerceptionSchedule):
    first = schedule.snapshots[0]
    return {"combiner": first.combiner, "temperature": first.temperature,
            "predict_motion": first.predict_motion,
            "snapshots": [s.to_dict() for s in schedule.snapshots]}


def lipschitz_estimate(snapshot: ConstraintSnapshot, region, n_samples=1000, seed=0, tau=0.0) -> float:
    """Lipschitz constant of h_k over a state box: max(analytic, sampled).

    ``region`` is a pair (lower, upper) of state vectors. The sampled bound
    is the largest |h(x) - h(y)| / ||x - y|| over random pairs in the box.
    """
    if n_samples < 2:
        raise ValueError("n_samples must be at least 2")
    lo, hi = (np.asarray(b, dtype=float) for b in region)
    if lo.shape != hi.shape or lo.size == 0 or np.any(hi < lo) or np.all(hi == lo):
        raise ValueError("region must be a non-degenerate state box")
    analytic = max((p.lipschitz() for p in snapshot.primitives), default=0.0)
    rng = np.random.default_rng(seed)
    a = rng.uniform(lo, hi, size=(n_samples, lo.size))
    b = rng.uniform(lo, hi, size=(n_samples, lo.size))
    ha = snapshot.evaluate_many(a, tau)
    hb = snapshot.evaluate_many(b, tau)
    dist = np.sqrt(((a - b) ** 2).sum(axis=1))
    ok = (dist > 0) & np.isfinite(ha) & np.isfinite(hb)
    sampled = float(np.max(np.abs(ha[ok] - hb[ok]) / dist[ok])) if ok.any() else 0.0
    return max(analytic, sampled)
