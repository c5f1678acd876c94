"""Acceptance suite: every criterion at its stated tolerance.

Each test prints one PASS line (visible with `pytest -s` or on failure)
after asserting the criterion, including its runtime budget.
"""

import time

import numpy as np
import pytest

from socialzone.controller import (
    STATUS_OPTIMAL,
    MpcConfig,
    build_ocp,
    build_step_barriers,
    solve_ocp,
)
from socialzone.dynamics import HumanState
from socialzone.geometry import Ellipse, Segment, barrier_gradient, barrier_value, Barrier, ellipse_distance, segment_distance, trim
from socialzone.simulator import BUILTIN_NAMES, builtin_scenarios, check_cbf_condition, run_scenario
from socialzone.zonelearn import (
    build_zone_model,
    convex_hull_3d,
    lof_scores,
    min_enclosing_ellipse,
)

from oracles import batch_lq_controls, brute_lof, exact_segment_distance, fd_gradient, fd_kkt_residual
import synthgen


@pytest.fixture(scope="module")
def scenario_runs():
    t0 = time.perf_counter()
    scs = builtin_scenarios()
    logs = {name: run_scenario(scs[name]) for name in BUILTIN_NAMES}
    elapsed = time.perf_counter() - t0
    return scs, logs, elapsed


def test_c1_segment_distance_exactness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    checked = 0
    while checked < 10_000:
        n = 2000
        a = rng.uniform(-5, 5, size=(n, 2))
        b = rng.uniform(-5, 5, size=(n, 2))
        keep = np.linalg.norm(a - b, axis=1) > 0.1
        a, b = a[keep], b[keep]
        mid = 0.5 * (a + b)
        half = 0.5 * np.linalg.norm(b - a, axis=1)
        # sample inside the trim disk, where t(x) >= 0 and d is exact
        r = half * np.sqrt(rng.uniform(size=len(a)))
        phi = rng.uniform(0, 2 * np.pi, len(a))
        p = mid + np.stack([r * np.cos(phi), r * np.sin(phi)], axis=1)
        for i in range(len(a)):
            seg = Segment(a[i], b[i])
            assert trim(p[i], seg) >= -1e-12
            d = segment_distance(p[i], seg)
            exact = exact_segment_distance(p[i], a[i], b[i])
            assert abs(d - exact) <= 1e-12
            checked += 1
            if checked == 10_000:
                break
    # conservativeness on dense grids around 50 segments
    grid = np.stack(np.meshgrid(np.linspace(-6, 6, 81), np.linspace(-6, 6, 81)), -1).reshape(-1, 2)
    for _ in range(50):
        a = rng.uniform(-4, 4, 2)
        b = rng.uniform(-4, 4, 2)
        if np.linalg.norm(a - b) < 0.2:
            continue
        seg = Segment(a, b)
        d = segment_distance(grid, seg)
        exact = exact_segment_distance(grid, a, b)
        assert (d >= exact - 1e-12).all()
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    print(f"\nACCEPTANCE 1 segment-distance exactness: PASS ({elapsed:.1f} s)")


def test_c2_ellipse_barrier_correctness():
    t0 = time.perf_counter()
    rng = np.random.default_rng(102)
    n_boundary = 0
    while n_boundary < 1000:
        a = rng.uniform(0.5, 2.5)
        b = rng.uniform(0.4, 1.0) * a
        ell = Ellipse(rng.uniform(-2, 2, 2), a, b, rng.uniform(-np.pi, np.pi))
        pts = ell.boundary_points(50)
        d = ellipse_distance(pts, ell)
        assert np.abs(d).max() <= 1e-9
        inner = ell.center + 0.6 * (pts - ell.center)
        outer = ell.center + 1.5 * (pts - ell.center)
        assert (ellipse_distance(inner, ell) < 0).all()
        assert (ellipse_distance(outer, ell) > 0).all()
        n_boundary += 50
    checked = 0
    while checked < 1000:
        a = rng.uniform(0.5, 2.5)
        b = rng.uniform(0.4, 1.0) * a
        ell = Ellipse(rng.uniform(-2, 2, 2), a, b, rng.uniform(-np.pi, np.pi))
        bar = Barrier(ell, 0.5, 0.05)
        p = rng.uniform(-4, 4, 2)
        if abs(ellipse_distance(p, ell)) < 1e-3:
            continue
        g = barrier_gradient(p, bar)
        g_fd = fd_gradient(lambda x: barrier_value(x, bar), p)
        assert np.abs(g - g_fd).max() <= 1e-6 * max(1.0, np.abs(g_fd).max())
        checked += 1
    elapsed = time.perf_counter() - t0
    assert elapsed < 5.0
    print(f"\nACCEPTANCE 2 ellipse barrier correctness: PASS ({elapsed:.1f} s)")


def test_c3_lof_oracle_equivalence():
    t0 = time.perf_counter()
    rng = np.random.default_rng(103)
    for trial in range(100):
        n = int(rng.integers(15, 201))
        dim = int(rng.integers(2, 4))
        pts = rng.normal(size=(n, dim)) * rng.uniform(0.5, 3.0)
        if trial % 3 == 0:
            q = n // 5
            pts[:q] = pts[q:2 * q]  # exact duplicates
        if trial % 4 == 0:
            pts = np.round(pts)  # integer grid forces k-distance ties
        k = int(rng.integers(1, min(21, n)))
        lib = lof_scores(pts, k=k)
        ref = brute_lof(pts, k=k)
        assert (np.isinf(lib) == np.isinf(ref)).all()
        finite = ~np.isinf(lib)
        assert np.allclose(lib[finite], ref[finite], rtol=1e-9, atol=0)
    elapsed = time.perf_counter() - t0
    assert elapsed < 30.0
    print(f"\nACCEPTANCE 3 LOF oracle equivalence: PASS ({elapsed:.1f} s)")


def test_c4_hull_and_ellipse_fit_oracles():
    t0 = time.perf_counter()
    rng = np.random.default_rng(104)
    for _ in range(10):
        pts = rng.normal(size=(400, 3)) * rng.uniform(0.5, 4.0, size=3)
        hull = convex_hull_3d(pts)
        scale = np.linalg.norm(pts.max(axis=0) - pts.min(axis=0))
        assert hull.max_signed_distance(pts) <= 1e-9 * scale
        assert len(hull.vertices) - hull.edge_count + len(hull.faces) == 2

    square = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
    z = min_enclosing_ellipse(square)
    assert abs(z.a - np.sqrt(2)) <= 1e-6
    assert abs(z.b - np.sqrt(2)) <= 1e-6

    phi = np.linspace(0, 2 * np.pi, 720, endpoint=False)
    a0, b0, th0 = 1.7, 0.9, -0.42
    center0 = np.array([-0.3, 0.85])
    ct, st = np.cos(th0), np.sin(th0)
    pts = np.stack([
        center0[0] + ct * a0 * np.cos(phi) - st * b0 * np.sin(phi),
        center0[1] + st * a0 * np.cos(phi) + ct * b0 * np.sin(phi),
    ], axis=1)
    z = min_enclosing_ellipse(pts)
    assert abs(z.a - a0) / a0 <= 0.01
    assert abs(z.b - b0) / b0 <= 0.01
    assert abs((z.theta - th0 + np.pi / 2) % np.pi - np.pi / 2) <= 0.01
    assert np.abs(z.center - center0).max() <= 0.01 * a0
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 4 hull and ellipse-fit oracles: PASS ({elapsed:.1f} s)")


def test_c5_pipeline_end_to_end_synthetic():
    t0 = time.perf_counter()
    rng = np.random.default_rng(105)
    recs = synthgen.circle_records(100_000, rng)
    model = build_zone_model(recs)
    assert len(model) == 7
    for zone in model.zones:
        pts = zone.as_ellipse().boundary_points(512)
        r = np.linalg.norm(pts, axis=1)
        assert np.abs(r - 0.6).max() <= 0.02

    rng2 = np.random.default_rng(106)
    recs2 = synthgen.anisotropic_records(100_000, rng2)
    model2 = build_zone_model(recs2)
    assert len(model2) == 7
    assert all(zone.center[0] > 0 for zone in model2.zones)
    elapsed = time.perf_counter() - t0
    assert elapsed < 120.0
    print(f"\nACCEPTANCE 5 pipeline end-to-end on synthetic oracle: PASS ({elapsed:.1f} s)")


def test_c6_controller_safety_all_scenarios(scenario_runs):
    scs, logs, elapsed = scenario_runs
    for name in BUILTIN_NAMES:
        sc = scs[name]
        assert sc.mpc.dt == 0.1 and sc.mpc.horizon == 8 and sc.mpc.cbf_horizon == 2
        assert sc.mpc.v_max == 1.0 and sc.mpc.robot_radius == 0.5 and sc.mpc.margin == 0.05
        summary = logs[name].summary()
        assert summary["min_h_overall"] >= -1e-6, name
        assert summary["goal_reach_time_s"] is not None, name
        speeds = np.linalg.norm(logs[name].states[:, 2:], axis=1)
        assert speeds.max() <= sc.mpc.v_max + 1e-6, name
    assert elapsed < 60.0
    print(f"\nACCEPTANCE 6 controller safety on all scenarios: PASS ({elapsed:.1f} s)")


def test_c7_behavioral_markers(scenario_runs):
    scs, logs, _ = scenario_runs

    # s1: lateral deviation beyond 0.3 m, consistent side
    log = logs["s1"]
    lateral = log.states[:, 1]  # start-goal line is y = 0
    assert np.abs(lateral).max() > 0.3
    significant = lateral[np.abs(lateral) > 0.05]
    assert (np.sign(significant) == np.sign(significant[0])).all()

    # s2: slow-down below 0.7 v_max while the walker is within 3 m
    sc, log = scs["s2"], logs["s2"]
    hum = sc.humans[0]
    hum_pos = hum.position[None, :] + log.times[:, None] * hum.velocity[None, :]
    dist = np.linalg.norm(log.states[:, :2] - hum_pos, axis=1)
    speeds = np.linalg.norm(log.states[:, 2:], axis=1)
    encounter = dist <= 3.0
    assert encounter.any()
    assert speeds[encounter].min() < 0.7 * sc.mpc.v_max

    # s3a/s3b: a >= 0.5 s standstill before the walker clears the doorway
    for name in ("s3a", "s3b"):
        sc, log = scs[name], logs[name]
        hum = sc.humans[0]
        hum_y = hum.position[1] + log.times * hum.velocity[1]
        start_side = np.sign(hum.position[1])
        cleared = (np.abs(hum_y) > 0.9) & (np.sign(hum_y) == -start_side)
        assert cleared.any(), name
        until = int(np.argmax(cleared))
        speeds = np.linalg.norm(log.states[:until, 2:], axis=1)
        slow = speeds < 0.1
        best = run = 0
        for flag in slow:
            run = run + 1 if flag else 0
            best = max(best, run)
        assert (best - 1) * sc.mpc.dt >= 0.5, name
    print("\nACCEPTANCE 7 behavioral markers (s1 deviation, s2 slow-down, s3 yielding): PASS")


def test_c8_solver_contract():
    t0 = time.perf_counter()
    rng = np.random.default_rng(108)
    cfg_free = MpcConfig(v_max=1e9, u_max=1e9)
    for _ in range(10):
        ocp = build_ocp(rng.normal(size=4), rng.normal(size=2), [], cfg_free)
        sol = solve_ocp(ocp)
        assert sol.status == STATUS_OPTIMAL
        assert np.abs(sol.controls - batch_lq_controls(ocp)).max() <= 1e-6

    cfg = MpcConfig()
    from socialzone.zonelearn import SocialZone, ZoneModel
    model = ZoneModel(np.array([1.2]), (SocialZone(np.array([0.1, 0.0]), 0.8, 0.6, 0.0),))
    n_checked = 0
    for trial in range(12):
        x0 = np.concatenate([rng.uniform(-1, 1, 2), rng.uniform(-0.6, 0.6, 2)])
        goal = rng.uniform(2, 6, 2)
        humans = [HumanState(rng.uniform(1.5, 4, 2), rng.uniform(-0.4, 0.4, 2))]
        walls = [Segment([5.5, -4.0], [5.5, 4.0])]
        bars = build_step_barriers(humans, walls, model, cfg, cfg.cbf_horizon)
        h0 = np.array([barrier_value(x0[:2], b) for b in bars[0]])
        if (h0 <= 0.05).any():
            continue
        sol = solve_ocp(build_ocp(x0, goal, bars, cfg))
        if sol.status != STATUS_OPTIMAL:
            continue
        assert sol.max_violation <= 1e-6
        assert fd_kkt_residual(build_ocp(x0, goal, bars, cfg), sol.controls.reshape(-1),
                               sol.multipliers) <= 1e-6
        n_checked += 1
    assert n_checked >= 5
    elapsed = time.perf_counter() - t0
    assert elapsed < 10.0
    print(f"\nACCEPTANCE 8 solver contract (LQ oracle + independent KKT): PASS ({elapsed:.1f} s)")


def test_c9_discrete_cbf_inequality(scenario_runs):
    scs, logs, _ = scenario_runs
    for name in BUILTIN_NAMES:
        margin = check_cbf_condition(logs[name], scs[name])
        assert margin >= -1e-6, (name, margin)
    print("\nACCEPTANCE 9 discrete decay inequality on all logs: PASS")
