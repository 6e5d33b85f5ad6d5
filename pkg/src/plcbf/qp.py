"""Dense dual active-set solver for min ||u - u_nom||^2 s.t. A u >= b, lo <= u <= hi.

The objective has identity Hessian, so the iteration starts from the
unconstrained minimizer u_nom and adds the most violated constraint at each
outer step (Goldfarb-Idnani). Infeasibility shows up as a violated
constraint whose normal lies in the span of the active set with no
multiplier left to release.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InfeasibleQP


@dataclass(frozen=True)
class QPSolution:
    u: np.ndarray
    multipliers: np.ndarray      # one per row of the stacked constraint matrix
    active: tuple
    iterations: int
    kkt_residual: float


def stack_constraints(rows, box, dim):
    """Stack barrier rows and the input box into C u >= d."""
    A = np.zeros((0, dim)) if rows is None else np.asarray([r[0] for r in rows], dtype=float).reshape(-1, dim)
    b = np.zeros(0) if rows is None else np.asarray([r[1] for r in rows], dtype=float)
    if box is None:
        return A, b
    lo, hi = (np.asarray(v, dtype=float) for v in box)
    if np.any(lo > hi):
        raise ValueError("input box is empty")
    eye = np.eye(dim)
    return np.vstack([A, eye, -eye]), np.concatenate([b, lo, -hi])


def kkt_residual(u, u_nom, C, d, lam):
    """Largest violation among stationarity, primal/dual feasibility, complementarity."""
    slack = C @ u - d
    stat = np.max(np.abs(u - u_nom - C.T @ lam)) if len(u) else 0.0
    primal = np.max(np.maximum(-slack, 0.0), initial=0.0)
    dual = np.max(np.maximum(-lam, 0.0), initial=0.0)
    comp = np.max(np.abs(lam * slack), initial=0.0)
    return float(max(stat, primal, dual, comp))


def solve(u_nom, C, d, max_iter=200, tol=1e-12) -> QPSolution:
    u_nom = np.asarray(u_nom, dtype=float)
    C = np.asarray(C, dtype=float).reshape(-1, len(u_nom))
    d = np.asarray(d, dtype=float)
    m = len(d)
    x = u_nom.copy()
    active: list[int] = []
    lam_active: list[float] = []
    scale = 1.0 + np.abs(d) + np.linalg.norm(C, axis=1) * (1.0 + np.linalg.norm(u_nom))
    it = 0
    while True:
        slack = C @ x - d
        viol = slack / scale
        if active:
            viol[active] = np.inf
        p = int(np.argmin(viol)) if m else -1
        if m == 0 or viol[p] >= -tol:
            break
        n_p = C[p]
        lam_p = 0.0
        while True:
            it += 1
            if it > max_iter:
                raise RuntimeError("active-set iteration limit reached")
            if active:
                N = C[active].T
                r = np.linalg.solve(N.T @ N, N.T @ n_p)
                z = n_p - N @ r
            else:
                r = np.zeros(0)
                z = n_p.copy()
            t1, k = np.inf, -1
            for j, rj in enumerate(r):
                if rj > 1e-14:
                    ratio = lam_active[j] / rj
                    if ratio < t1:
                        t1, k = ratio, j
            znorm = np.linalg.norm(z)
            if znorm <= 1e-12 * max(np.linalg.norm(n_p), 1e-300):
                if k < 0:
                    raise InfeasibleQP(f"constraint {p} cannot be satisfied with the active set",
                                       row=p, violation=float(-slack[p]))
                lam_active = [lj - t1 * rj for lj, rj in zip(lam_active, r)]
                lam_p += t1
                del active[k], lam_active[k]
                continue
            s_p = n_p @ x - d[p]
            t2 = -s_p / (z @ n_p)
            t = min(t1, t2)
            x = x + t * z
            lam_active = [lj - t * rj for lj, rj in zip(lam_active, r)]
            lam_p += t
            if t2 <= t1:
                active.append(p)
                lam_active.append(lam_p)
                break
            del active[k], lam_active[k]
    lam = np.zeros(m)
    lam[active] = lam_active
    return QPSolution(u=x, multipliers=lam, active=tuple(sorted(active)), iterations=it,
                      kkt_residual=kkt_residual(x, u_nom, C, d, lam))


def qp_min_norm(u_nom, rows, box) -> QPSolution:
    """Project ``u_nom`` onto {u : a_i . u >= b_i for (a_i, b_i) in rows} within the box.

    Raises InfeasibleQP when empty. Its ``row`` indexes ``rows``: the row the
    solver could not add, or, when that was a box face, the row most violated
    at the box projection of ``u_nom``.
    """
    u_nom = np.asarray(u_nom, dtype=float)
    C, d = stack_constraints(rows, box, len(u_nom))
    try:
        return solve(u_nom, C, d)
    except InfeasibleQP as exc:
        n_rows = 0 if rows is None else len(rows)
        if exc.row is None or exc.row < n_rows or n_rows == 0:
            raise
        u_box = u_nom if box is None else np.clip(u_nom, box[0], box[1])
        viol = d[:n_rows] - C[:n_rows] @ u_box
        k = int(np.argmax(viol))
        raise InfeasibleQP(f"barrier row {k} cannot be met inside the input box", row=k,
                           violation=float(viol[k])) from exc
