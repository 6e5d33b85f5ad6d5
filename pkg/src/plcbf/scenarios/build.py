"""Turn a validated scenario config into models, libraries, schedules and filter parameters."""

from __future__ import annotations

import numpy as np

from ..constraints import ConstraintSnapshot, PerceptionSchedule, Primitive, schedule_from_config
from ..dynamics import model_from_config
from ..errors import ConfigError
from ..filter import FilterParams
from ..policies import library_from_config
from ..rollout import RolloutParams


def build_model(config):
    try:
        return model_from_config(config["model"])
    except (KeyError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc), field="model") from exc


def build_library(config, model):
    return library_from_config(config["library"], model)


def build_filter_params(config):
    f = config.get("filter", {})
    try:
        rollout = RolloutParams(T=f.get("T", 2.0), dt=f.get("dt", 0.02),
                                safety_margin=f.get("safety_margin", 0.05))
        return FilterParams(rollout=rollout, alpha=f.get("alpha", 1.0), grad_eps=f.get("grad_eps", 1e-4),
                            relaxation_weight=f.get("relaxation_weight"),
                            row_offset=f.get("row_offset", 0.0),
                            time_derivative=f.get("time_derivative", False))
    except ValueError as exc:
        raise ConfigError(str(exc), field="filter") from exc


def random_obstacles(n, seed, path_length=20.0, altitude=2.0, cruise_speed=4.0):
    """Seeded mix of crossing and oncoming spheres around a straight path along +x.

    Even-indexed obstacles cross the path laterally near the time the
    vehicle is expected there; odd-indexed ones fly head-on toward it.
    """
    rng = np.random.default_rng([int(seed), int(n)])
    out = []
    for i in range(n):
        if i % 2 == 0:
            xc = rng.uniform(0.2, 0.8) * path_length
            tc = xc / cruise_speed + rng.uniform(-0.5, 0.5)
            speed = rng.choice([-1.0, 1.0]) * rng.uniform(0.5, 1.5)
            vel = [0.0, speed, 0.0]
            center = [xc, -speed * tc, altitude + rng.uniform(-0.5, 0.5)]
        else:
            vel = [-rng.uniform(1.5, 2.5), 0.0, 0.0]
            center = [rng.uniform(0.6, 1.25) * path_length, rng.uniform(-0.5, 0.5),
                      altitude + rng.uniform(-0.25, 0.25)]
        out.append({"type": "ball", "center": center, "velocity": vel, "radius": float(rng.uniform(0.5, 1.0))})
    return out


def build_schedule(config, model, seed=None, n_obstacles=None):
    """Explicit snapshot list, or periodic re-observation of a constant-velocity world.

    Periodic: snapshot k at t_k = k * period holds every moving obstacle at
    its true position c + v t_k (with its velocity) plus the static terms.
    """
    spec = config["perception"]
    pos = tuple(model.position_indices)
    if "snapshots" in spec:
        return schedule_from_config(spec, pos)
    period = spec["period"]
    count = int(np.floor(spec["until"] / period)) + 1
    moving = list(spec.get("moving", []))
    rand = spec.get("random_obstacles")
    if rand is not None:
        n = rand["n"] if n_obstacles is None else n_obstacles
        s = config.get("seed", 0) if seed is None else seed
        moving += random_obstacles(n, s, **rand.get("layout", {}))
    static = tuple(Primitive.from_dict(p) for p in spec.get("static", []))
    snaps = []
    for k in range(count):
        t = k * period
        prims = []
        for ob in moving:
            c = np.asarray(ob["center"], float) + np.asarray(ob["velocity"], float) * t
            prims.append(Primitive.from_dict({**ob, "center": c.tolist()}))
        snaps.append(ConstraintSnapshot(index=k, t=t, primitives=tuple(prims) + static, position_indices=pos,
                                        combiner=spec.get("combiner", "min"),
                                        temperature=spec.get("temperature", 10.0),
                                        predict_motion=spec.get("predict_motion", True)))
    return PerceptionSchedule(snaps)


def build_all(config, seed=None, n_obstacles=None):
    model = build_model(config)
    library = build_library(config, model)
    schedule = build_schedule(config, model, seed=seed, n_obstacles=n_obstacles)
    return model, library, schedule, build_filter_params(config)
