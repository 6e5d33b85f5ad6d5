"""Grid dynamic-programming approximation of the double-integrator viability kernel.

A node stays viable while h >= 0 there and some gridded input sends it, in
one RK4 step, to a point whose multilinearly interpolated viability flag is
at least 1/2. Successors outside the grid are projected onto its boundary.
This is a coarse surrogate for a reachability computation, not a proof.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numba import njit

from .._kernels import engine
from .._kernels import models as mk
from ..dynamics import DynamicsModel


class ViabilityNotConverged(RuntimeError):
    def __init__(self, msg, changed):
        super().__init__(msg)
        self.changed = changed


@dataclass(frozen=True)
class ViabilityGrid:
    axes: tuple          # four 1-D arrays: px, py, vx, vy
    viable: np.ndarray   # bool, shape (len(ax) for ax in axes)
    iterations: int
    history: tuple       # viable-node count after each sweep

    def lookup(self, x):
        """Interpolated flag at ``x`` (after projection onto the grid box) >= 1/2."""
        flags = self.viable.astype(np.float64)
        lo = np.array([a[0] for a in self.axes])
        step = np.array([a[1] - a[0] for a in self.axes])
        shape = np.array(self.viable.shape, dtype=np.int64)
        return _interp(flags, np.asarray(x, dtype=float), lo, step, shape) >= 0.5


@njit(cache=True, nogil=True)
def _interp(flags, x, lo, step, shape):
    idx = np.empty(4, dtype=np.int64)
    frac = np.empty(4)
    for d in range(4):
        s = (x[d] - lo[d]) / step[d]
        top = shape[d] - 1
        if s <= 0.0:
            s = 0.0
        elif s >= top:
            s = float(top)
        i = int(np.floor(s))
        if i >= top:
            i = top - 1
        idx[d] = i
        frac[d] = s - i
    total = 0.0
    for corner in range(16):
        w = 1.0
        a = idx[0] + (corner & 1)
        b = idx[1] + ((corner >> 1) & 1)
        c = idx[2] + ((corner >> 2) & 1)
        e = idx[3] + ((corner >> 3) & 1)
        for d in range(4):
            bit = (corner >> d) & 1
            w *= frac[d] if bit else 1.0 - frac[d]
        if w > 0.0:
            total += w * flags[a, b, c, e]
    return total


@njit(cache=True, nogil=True)
def _sweep(kind, mp, flags, out, h_ok, ax0, ax1, ax2, ax3, inputs, dt, lo, step, shape):
    n = 4
    x = np.empty(n)
    nxt = np.empty(n)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    changed = 0
    for a in range(ax0.shape[0]):
        for b in range(ax1.shape[0]):
            for c in range(ax2.shape[0]):
                for e in range(ax3.shape[0]):
                    if flags[a, b, c, e] < 0.5:
                        out[a, b, c, e] = 0.0
                        continue
                    keep = False
                    if h_ok[a, b, c, e]:
                        x[0] = ax0[a]
                        x[1] = ax1[b]
                        x[2] = ax2[c]
                        x[3] = ax3[e]
                        for j in range(inputs.shape[0]):
                            engine.rk4_step(kind, x, inputs[j], mp, dt, nxt, k1, k2, k3, k4, tmp)
                            if _interp(flags, nxt, lo, step, shape) >= 0.5:
                                keep = True
                                break
                    if keep:
                        out[a, b, c, e] = 1.0
                    else:
                        out[a, b, c, e] = 0.0
                        changed += 1
    return changed


def viability_oracle(model: DynamicsModel, snapshot, axes, inputs, dt: float, n_iter: int = 200) -> ViabilityGrid:
    """Fixed-point iteration of the discrete viability operator on a 4-D grid.

    Args:
        axes: four increasing, uniformly spaced 1-D arrays (px, py, vx, vy).
        inputs: (K, 2) array of candidate controls, each inside the input box.
        dt: step of the one-step successor map.

    Raises ViabilityNotConverged (carrying the changed-node count of the last
    sweep) after ``n_iter`` sweeps without a fixed point.
    """
    if model.kind != mk.DOUBLE_INTEGRATOR:
        raise ValueError("the viability oracle is defined for the double integrator")
    axes = tuple(np.ascontiguousarray(a, dtype=float) for a in axes)
    if len(axes) != 4 or any(len(a) < 2 for a in axes):
        raise ValueError("need four axes with at least two nodes each")
    for a in axes:
        d = np.diff(a)
        if not np.allclose(d, d[0], rtol=1e-9, atol=0) or d[0] <= 0:
            raise ValueError("grid axes must be uniformly spaced and increasing")
    inputs = np.ascontiguousarray(inputs, dtype=float).reshape(-1, model.control_dim)
    if np.any(inputs < model.input_lower) or np.any(inputs > model.input_upper):
        raise ValueError("gridded inputs must lie in the input box")
    mesh = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, 4)
    h = snapshot.evaluate_many(mesh, np.zeros(len(mesh))).reshape(tuple(len(a) for a in axes))
    h_ok = h >= 0.0
    flags = h_ok.astype(np.float64)
    out = np.empty_like(flags)
    lo = np.array([a[0] for a in axes])
    step = np.array([a[1] - a[0] for a in axes])
    shape = np.array(flags.shape, dtype=np.int64)
    history = [int(flags.sum())]
    for it in range(1, n_iter + 1):
        changed = _sweep(model.kind, model.params, flags, out, h_ok, *axes, inputs, float(dt),
                         lo, step, shape)
        if np.any(out > flags):
            raise AssertionError("viable set grew during a sweep")
        flags, out = out, flags
        history.append(int(flags.sum()))
        if changed == 0:
            return ViabilityGrid(axes, flags > 0.5, it, tuple(history))
    raise ViabilityNotConverged(f"no fixed point after {n_iter} sweeps ({changed} nodes changed in the last)",
                                changed)
