"""End-to-end acceptance checks, one test per criterion.

The terminal summary (see conftest.py) prints one PASS/FAIL line per criterion.
"""

import json
import math
import time
from importlib import resources

import numpy as np
import pytest

from plcbf import policies as pol
from plcbf.cli import main
from plcbf.constraints import ConstraintSnapshot, PerceptionSchedule, Primitive
from plcbf.dynamics import double_integrator, flow
from plcbf.filter import INACTIVE, FilterParams, filter_step
from plcbf.metric import AdmissiblePolicyFamily, completeness_check, language_metric
from plcbf.qp import qp_min_norm
from plcbf.rollout import RolloutParams, rollout_value
from plcbf.scenarios import run_grid, run_highway, run_quadrotor
from plcbf.scenarios.bench import benchmark_timing

from oracles import di_exact, qp_exhaustive, random_feasible_qp
from test_dynamics import _quad_sine_run


def shipped(name):
    return json.loads(resources.files("plcbf").joinpath(f"configs/{name}").read_text())


def shipped_path(name):
    return str(resources.files("plcbf").joinpath(f"configs/{name}"))


@pytest.fixture(scope="module")
def di_grid():
    t0 = time.perf_counter()
    res = run_grid(shipped("di_grid.json"), keep_logs=True)
    return res, time.perf_counter() - t0


# ---------------------------------------------------------------- 1

def _scalar_margin(x, balls, halfspaces):
    # same operation order as the kernel so the comparison can be bitwise
    best = math.inf
    for (cx, cy), r in balls:
        ex, ey = x[0] - cx, x[1] - cy
        best = min(best, math.sqrt(ex * ex + ey * ey) - r)
    for (nx, ny), off in halfspaces:
        best = min(best, off + nx * x[0] + ny * x[1])
    return best


def test_criterion_01_clearance_identity():
    t0 = time.perf_counter()
    m = double_integrator()
    rng = np.random.default_rng(1)
    balls = [((1.5, 0.5), 0.8), ((-2.0, -1.0), 0.6)]
    halfspaces = [((0.0, 1.0), 4.0), ((-1.0, 0.0), 5.0)]
    snap = ConstraintSnapshot(0, 0.0, tuple([Primitive("ball", center=c, radius=r) for c, r in balls]
                                            + [Primitive("halfspace", normal=n, offset=o) for n, o in halfspaces]))
    fam = AdmissiblePolicyFamily(m, 2.0, segments=4)
    pool = [pol.pd_goal("nom", m, (3.0, 1.0)), pol.stop("stop", m), pol.evade("up", m, "up"),
            pol.evade("down", m, "down"), *fam.sample(1, 16)]
    params = RolloutParams(T=2.0, dt=0.02)
    for _ in range(1000):
        p = pool[int(rng.integers(len(pool)))]
        x = np.concatenate([rng.uniform(-4, 4, 2), rng.uniform(-2, 2, 2)])
        res = rollout_value(m, p, snap, x, params)
        ref = min(_scalar_margin(s, balls, halfspaces) for s in res.trajectory.states)
        assert np.float64(res.H).tobytes() == np.float64(ref).tobytes()
    assert time.perf_counter() - t0 < 10.0


# ---------------------------------------------------------------- 2

def _exact_piecewise(x0, values, T, dt):
    """Closed-form double-integrator flow of a piecewise-constant input, on the dt grid."""
    seg = T / len(values)
    n = int(round(T / dt))
    out = np.empty((n + 1, 4))
    x, k0 = np.asarray(x0, float), 0
    for k in range(n + 1):
        t = k * dt
        i = min(int(t / seg + 1e-9), len(values) - 1)
        while k0 < i:
            x = di_exact(x, values[k0], seg)
            k0 += 1
        out[k] = di_exact(x, values[i], t - i * seg)
    return out


def _disk_clearance(states, center, radius):
    return float(np.min(np.hypot(states[:, 0] - center[0], states[:, 1] - center[1]) - radius))


def _constructive_instance(seed, T=2.0, dt=0.02, n_samples=3):
    m = double_integrator()
    fam = AdmissiblePolicyFamily(m, T, segments=4)
    rng = np.random.default_rng([seed, 99])
    x0 = np.concatenate([[0.0, 0.0], rng.uniform(-1, 1, 2)])
    samples = fam.sample_parameters(seed, n_samples)
    exact = [_exact_piecewise(x0, v, T, dt) for v in samples]
    while True:
        center = rng.uniform(-3, 3, 2)
        radius = rng.uniform(0.3, 1.0)
        if np.hypot(*center) <= radius + 0.5:
            continue
        gammas = [_disk_clearance(s, center, radius) for s in exact]
        if max(gammas) >= 0.1:
            break
    gamma_star = max(gammas)
    eta = 0.3
    while True:
        near = [np.clip(v + eta * rng.normal(size=v.shape), -1.0, 1.0) for v in samples]
        delta = max(np.max(np.linalg.norm(_exact_piecewise(x0, w, T, dt) - s, axis=1))
                    for w, s in zip(near, exact))
        # L_h = 1 for a disk margin in the full-state Euclidean norm
        if delta <= 0.5 * gamma_star:
            break
        eta /= 2
    library = pol.PolicyLibrary([fam.policy(w, id=f"near{i}").with_rank(i, id=f"near{i}")
                                 for i, w in enumerate(near)])
    snap = ConstraintSnapshot(0, 0.0, (Primitive("ball", center=tuple(center), radius=radius),))
    return m, library, fam, snap, x0, near, center, radius, delta, gamma_star


def test_criterion_02_constructive_soundness():
    t0 = time.perf_counter()
    T, dt = 2.0, 0.02
    for seed in range(100):
        m, lib, fam, snap, x0, near, center, radius, delta, gamma_star = _constructive_instance(seed, T, dt)
        assert delta < gamma_star / 1.0
        rep = completeness_check(m, lib, fam, snap, x0, T, dt, 3, seed, L_h=1.0)
        assert rep.certified, (seed, rep.delta_hat, rep.threshold)
        assert rep.delta_hat <= delta + 1e-9
        assert rep.witness["H_pi_k"] > 0
        k = lib.ids.index(rep.witness["pi_k"])
        assert _disk_clearance(_exact_piecewise(x0, near[k], T, dt), center, radius) > 0
    # strict boundary: delta equals gamma*/L_h exactly
    cfg = shipped("di_analyze_boundary.json")
    m = double_integrator()
    lib = pol.PolicyLibrary([pol.constant("plus", m, [1, 0], rank=0), pol.constant("minus", m, [-1, 0], rank=1)])
    fam = AdmissiblePolicyFamily(m, 1.5, kind="fixed", members=([[0.0, 0.0]],))
    snap = ConstraintSnapshot(0, 0.0, (Primitive("halfspace", normal=(1, 0), offset=1.875),))
    a = cfg["analyze"]
    rep = completeness_check(m, lib, fam, snap, np.zeros(4), a["T"], a["dt"], 1, 0, L_h=a["L_h"])
    assert rep.delta_hat == rep.threshold == 1.875
    assert rep.certified is False
    assert time.perf_counter() - t0 < 60.0


# ---------------------------------------------------------------- 3

def test_criterion_03_lipschitz_transfer():
    m = double_integrator()
    snap = ConstraintSnapshot(0, 0.0, (Primitive("ball", center=(2.0, 0.5), radius=0.7),
                                       Primitive("box", center=(-1.5, 2.0), half_extents=(0.6, 0.4)),
                                       Primitive("halfspace", normal=(0.6, 0.8), offset=6.0)))
    L_h = 1.0  # each term is 1-Lipschitz in position, hence in the state norm, and so is their min
    T, dt = 2.0, 0.02
    fam = AdmissiblePolicyFamily(m, T, segments=5)
    pis = fam.sample(3, 2000)
    rng = np.random.default_rng(3)
    worst = math.inf
    for a, b in zip(pis[:1000], pis[1000:]):
        x = np.concatenate([rng.uniform(-3, 3, 2), rng.uniform(-1.5, 1.5, 2)])
        delta = language_metric(m, a, b, x, T, dt)
        ta, tb = flow(m, a, x, T, dt), flow(m, b, x, T, dt)
        ha = snap.evaluate_many(ta.states, ta.times)
        hb = snap.evaluate_many(tb.states, tb.times)
        worst = min(worst, float(np.min(hb - (ha - L_h * delta))))
    assert worst >= -1e-9, worst


# ---------------------------------------------------------------- 4

def test_criterion_04_qp_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    for _ in range(10_000):
        u0, rows, lo, hi = random_feasible_qp(rng)
        sol = qp_min_norm(u0, rows, (lo, hi))
        ref = qp_exhaustive(u0, rows, lo, hi)
        assert np.max(np.abs(sol.u - ref)) <= 1e-8
        assert sol.kkt_residual <= 1e-8
    # instances where every constraint is inactive at u_nom
    for _ in range(1000):
        n = int(rng.integers(1, 5))
        lo, hi = -np.ones(n) * 2, np.ones(n) * 2
        u0 = rng.uniform(-1, 1, n)
        rows = [(a, float(a @ u0 - rng.uniform(0.01, 1.0))) for a in rng.normal(size=(int(rng.integers(0, 4)), n))]
        sol = qp_min_norm(u0, rows, (lo, hi))
        assert sol.u.tobytes() == u0.tobytes() and sol.kkt_residual <= 1e-8
    assert time.perf_counter() - t0 < 30.0


# ---------------------------------------------------------------- 5

def test_criterion_05_zero_horizon_is_plain_cbf_qp():
    m = double_integrator()
    rng = np.random.default_rng(5)
    params = FilterParams(rollout=RolloutParams(T=0.0, safety_margin=0.0), alpha=1.5, row_offset=0.0)
    checked = active = 0
    while checked < 1000:
        w = np.concatenate([rng.normal(size=2), rng.normal(size=2)])
        c = rng.uniform(-1, 3)
        x = np.concatenate([rng.uniform(-2, 2, 2), rng.uniform(-1, 1, 2)])
        h = float(w @ x + c)
        if h <= 0:
            continue
        # h(x) = w.x + c, hdot = w_p.v + w_v.u >= -alpha h
        a, b = w[2:], -params.alpha * h - w[:2] @ x[2:]
        u_nom = rng.uniform(-1.5, 1.5, 2)
        if checked % 2:
            u_nom -= 2.0 * a / np.linalg.norm(a)  # push the nominal against the constraint
        lo, hi = m.input_lower, m.input_upper
        direct = qp_exhaustive(np.clip(u_nom, lo, hi), [(a, b)], lo, hi)
        if direct is None:
            continue
        snap = (Primitive("state_halfspace", weights=tuple(w), offset=c),)
        lib = pol.PolicyLibrary([pol.constant("nom", m, u_nom), pol.stop("stop", m)])
        d = filter_step(m, x, 0.0, lib, PerceptionSchedule.static(snap), params)
        assert d.selected_mode == "nom"
        assert np.max(np.abs(d.u_out - direct)) <= 1e-8, (x, w, c, d.u_out, direct)
        if d.qp_status == INACTIVE:
            assert d.u_out.tobytes() == m.clamp(u_nom).tobytes()
        else:
            active += 1
        checked += 1
    print(f"{active} of {checked} states needed a correction")
    assert active >= 100


# ---------------------------------------------------------------- 6

def test_criterion_06_wall_with_gap_coverage(di_grid):
    res, elapsed = di_grid
    cert = res.certification
    union = np.any([np.asarray(v) for v in cert["per_policy"].values()], axis=0)
    assert np.array_equal(union, np.asarray(cert["plcbf"]))
    fr = res.summary["fractions"]
    assert fr["plcbf"] >= fr["stop_only"] - 0.02
    assert fr["plcbf"] >= fr["up_only"] - 0.02
    assert res.summary["safe_cell_violations"] == 0
    assert len(res.coverage["plcbf"].cells) == 400
    assert elapsed < 300.0


# ---------------------------------------------------------------- 7

def test_criterion_07_viability_consistency(di_grid):
    res, elapsed = di_grid
    v = res.viability
    assert v["nodes"] == 21
    assert v["counterexamples"] == []
    assert v["monotone"]
    assert elapsed < 600.0


# ---------------------------------------------------------------- 8

def test_criterion_08_pseudometric_axioms():
    m = double_integrator()
    T, dt = 2.0, 0.02
    fam = AdmissiblePolicyFamily(m, T, segments=4)
    pis = fam.sample(8, 3000)
    rng = np.random.default_rng(8)
    for i in range(1000):
        a, b, c = pis[3 * i:3 * i + 3]
        x = np.concatenate([rng.uniform(-3, 3, 2), rng.uniform(-1, 1, 2)])
        dab, dba = language_metric(m, a, b, x, T, dt), language_metric(m, b, a, x, T, dt)
        dbc, dac = language_metric(m, b, c, x, T, dt), language_metric(m, a, c, x, T, dt)
        assert language_metric(m, a, a, x, T, dt) == 0.0
        assert dab == dba
        assert dac <= dab + dbc + 1e-12


# ---------------------------------------------------------------- 9

def test_criterion_09_rk4_order_on_quadrotor():
    ref = _quad_sine_run(1e-5)
    e1 = np.linalg.norm(_quad_sine_run(1e-2) - ref)
    e2 = np.linalg.norm(_quad_sine_run(5e-3) - ref)
    print(f"RK4 error ratio {e1 / e2:.2f}")
    assert e1 / e2 >= 12.0


# ---------------------------------------------------------------- 10

def test_criterion_10_runtime_and_parallel_speedup():
    stats = benchmark_timing(shipped("di_bench.json"), 200, warmup=10, workers=4, batch_cells=100)
    fs, par = stats["filter_step"], stats["parallel"]
    print(f"median filter_step {fs['median_ms']:.3f} ms, speedup {par['speedup']:.2f}x at 4 workers")
    assert fs["median_ms"] < 5.0
    assert par["bitwise_equal"]
    assert par["speedup"] >= 1.5, f"speedup {par['speedup']:.2f}x on {stats.get('cpu_count', '?')} cpu(s)"


# ---------------------------------------------------------------- 11

def _check_closed_loop(log, where):
    if log.certified_throughout():
        assert min(log.h_margin) >= -1e-3, where
        return 1
    return 0


def test_criterion_11_closed_loop_safety(di_grid):
    res, _ = di_grid
    certified = sum(_check_closed_loop(log, ("di_grid", cell[:2]))
                    for cell, log in zip(res.coverage["plcbf"].cells, res.coverage["plcbf"].logs))
    assert certified > 0
    for name, fn in (("highway.json", run_highway), ("quadrotor.json", run_quadrotor)):
        out = fn(shipped(name))
        assert _check_closed_loop(out.logs["plcbf"], name) == 1


# ---------------------------------------------------------------- 12

def _artifacts(out):
    return {p.relative_to(out).as_posix(): p.read_bytes() for p in sorted(out.rglob("*")) if p.is_file()}


@pytest.mark.parametrize("name,extra", [("di_grid_small.json", ["--retain-trajectories"]),
                                        ("highway.json", []), ("quadrotor.json", [])])
def test_criterion_12_replay_determinism(tmp_path, name, extra):
    runs = []
    for workers in ("1", "2"):
        out = tmp_path / f"w{workers}"
        code = main(["run", "--config", shipped_path(name), "--out", str(out), "--workers", workers,
                     "--seed", "11", *extra])
        assert code == 0
        runs.append(_artifacts(out))
    assert runs[0].keys() == runs[1].keys() and len(runs[0]) > 0
    for k in runs[0]:
        assert runs[0][k] == runs[1][k], k
