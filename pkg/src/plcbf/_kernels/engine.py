"""Batched fixed-step RK4 rollouts with in-loop clearance evaluation.

Each task in a batch has its own initial state and policy; the model and
constraint table are shared. Every task is computed by the same scalar code
path, so a task's result does not depend on which batch it was placed in.
"""

import math

import numpy as np
from numba import njit

from . import constraints as ck
from . import models as mk
from . import policies as pk

FLOW_OK = 0
FLOW_GUARD = 1
FLOW_NONFINITE = 2


@njit(cache=True, nogil=True)
def rk4_step(kind, x, u, p, dt, out, k1, k2, k3, k4, tmp):
    n = x.shape[0]
    s = mk.derivative(kind, x, u, p, k1)
    if s != mk.OK:
        return s
    for j in range(n):
        tmp[j] = x[j] + 0.5 * dt * k1[j]
    s = mk.derivative(kind, tmp, u, p, k2)
    if s != mk.OK:
        return s
    for j in range(n):
        tmp[j] = x[j] + 0.5 * dt * k2[j]
    s = mk.derivative(kind, tmp, u, p, k3)
    if s != mk.OK:
        return s
    for j in range(n):
        tmp[j] = x[j] + dt * k3[j]
    s = mk.derivative(kind, tmp, u, p, k4)
    if s != mk.OK:
        return s
    for j in range(n):
        out[j] = x[j] + dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
    return mk.OK


@njit(cache=True, nogil=True)
def single_step(kind, x, u, p, dt):
    n = x.shape[0]
    out = np.empty(n)
    s = rk4_step(kind, x, u, p, dt, out, np.empty(n), np.empty(n), np.empty(n),
                 np.empty(n), np.empty(n))
    return s, out


@njit(cache=True, nogil=True)
def _rollout_one(kind, mp, lo, hi, pkind, pp, x0, t0, times, steps, states,
                 controls, ckinds, ctable, pos, combiner, temperature, predict, tau0):
    n = x0.shape[0]
    nu = lo.shape[0]
    u = np.empty(nu)
    k1 = np.empty(n)
    k2 = np.empty(n)
    k3 = np.empty(n)
    k4 = np.empty(n)
    tmp = np.empty(n)
    for j in range(n):
        states[0, j] = x0[j]
    best = ck.margin(states[0], tau0 + times[0], ckinds, ctable, pos, combiner,
                     temperature, predict)
    arg = 0
    for i in range(steps.shape[0]):
        pk.action(pkind, states[i], t0 + times[i], pp, u)
        pk.clamp(u, lo, hi)
        for j in range(nu):
            controls[i, j] = u[j]
        s = rk4_step(kind, states[i], u, mp, steps[i], states[i + 1], k1, k2, k3, k4, tmp)
        if s != mk.OK:
            return FLOW_GUARD, i + 1, -math.inf, arg
        for j in range(n):
            if not math.isfinite(states[i + 1, j]):
                return FLOW_NONFINITE, i + 1, -math.inf, arg
        h = ck.margin(states[i + 1], tau0 + times[i + 1], ckinds, ctable, pos, combiner,
                      temperature, predict)
        if h < best:
            best = h
            arg = i + 1
    return FLOW_OK, steps.shape[0] + 1, best, arg


@njit(cache=True, nogil=True)
def rollout_batch(kind, mp, lo, hi, pkinds, pparams, x0s, t0, times, steps,
                  ckinds, ctable, pos, combiner, temperature, predict, tau0,
                  states, controls, status, nvalid, values, argmins):
    for b in range(x0s.shape[0]):
        s, nv, v, a = _rollout_one(kind, mp, lo, hi, pkinds[b], pparams[b], x0s[b], t0,
                                   times, steps, states[b], controls[b], ckinds, ctable,
                                   pos, combiner, temperature, predict, tau0)
        status[b] = s
        nvalid[b] = nv
        values[b] = v
        argmins[b] = a
