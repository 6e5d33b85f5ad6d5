"""Compiled constraint margins h(x, tau) over packed primitive tables."""

import math

import numpy as np
from numba import njit

BALL = 0
HALFSPACE = 1
BOX = 2
CONSTANT = 3
STATE_HALFSPACE = 4

COMBINE_MIN = 0
COMBINE_SMOOTH = 1

# column layout of the primitive table
C0 = 0          # center / normal (3)
VEL = 3         # velocity (3)
RAD = 6         # radius / offset / constant value
SCALE = 7
EXTRA = 8       # box half-extents (3) or state weights (up to 16)
WIDTH = 24


@njit(cache=True, nogil=True)
def primitive_margin(kind, row, x, tau, pos, predict):
    d = pos.shape[0]
    if kind == BALL:
        s = 0.0
        for i in range(d):
            c = row[C0 + i]
            if predict:
                c += row[VEL + i] * tau
            e = x[pos[i]] - c
            s += e * e
        return row[SCALE] * (math.sqrt(s) - row[RAD])
    elif kind == HALFSPACE:
        s = row[RAD]
        for i in range(d):
            s += row[C0 + i] * x[pos[i]]
        return row[SCALE] * s
    elif kind == BOX:
        outside = 0.0
        inside = -math.inf
        for i in range(d):
            c = row[C0 + i]
            if predict:
                c += row[VEL + i] * tau
            q = abs(x[pos[i]] - c) - row[EXTRA + i]
            if q > 0.0:
                outside += q * q
            if q > inside:
                inside = q
        return row[SCALE] * (math.sqrt(outside) + min(inside, 0.0))
    elif kind == CONSTANT:
        return row[SCALE] * row[RAD]
    else:
        s = row[RAD]
        for i in range(min(x.shape[0], WIDTH - EXTRA)):
            s += row[EXTRA + i] * x[i]
        return row[SCALE] * s


@njit(cache=True, nogil=True)
def margin(x, tau, kinds, table, pos, combiner, temperature, predict):
    n = kinds.shape[0]
    if n == 0:
        return math.inf
    hmin = math.inf
    for k in range(n):
        v = primitive_margin(kinds[k], table[k], x, tau, pos, predict)
        if v < hmin:
            hmin = v
    if combiner == COMBINE_MIN or n == 1:
        return hmin
    acc = 0.0
    for k in range(n):
        v = primitive_margin(kinds[k], table[k], x, tau, pos, predict)
        acc += math.exp(-temperature * (v - hmin))
    return hmin - math.log(acc) / temperature


@njit(cache=True, nogil=True)
def margins_each(x, tau, kinds, table, pos, predict):
    out = np.empty(kinds.shape[0])
    for k in range(kinds.shape[0]):
        out[k] = primitive_margin(kinds[k], table[k], x, tau, pos, predict)
    return out


@njit(cache=True, nogil=True)
def margin_many(states, taus, kinds, table, pos, combiner, temperature, predict):
    out = np.empty(states.shape[0])
    for i in range(states.shape[0]):
        out[i] = margin(states[i], taus[i], kinds, table, pos, combiner, temperature, predict)
    return out
