"""Acceptance criteria 1-10, each printed as one pass/fail line.

Criteria 4-6 share one set of memoized planner runs (the ``desk_suite``
fixture), so the expensive suite is planned once per session.
"""
import json
import math
import time

import numpy as np
import pytest

from reachgrasp.experiments import curve_rows, summarize
from reachgrasp.geometry import Pose6
from reachgrasp.grasp import GraspConfig, combine_cp, combine_ours, contact_energy, energy_sa_cp, potential_energy
from reachgrasp.kinematics import forward_kinematics, solve_ik
from reachgrasp.obstacles import embed_and_regenerate, mask_obstacles
from reachgrasp.reachability import generate_reachability, uniform_sample_workspace
from reachgrasp.sdf import (
    MetricParams,
    brute_force_sdf,
    compute_sdf,
    evaluate_sdf_quality,
    metric_distance,
    query_sdf_batch,
    sample_box_poses,
    step_metric_length,
)
from reachgrasp.shapes import Box, Obstacle, Scene

from test_sdf import _check_sign_and_lipschitz, random_grid
from test_reachability import _small_desk_spec


def test_1_sdf_oracle_equivalence(acceptance):
    rng = np.random.default_rng(2024)
    m = MetricParams(10.0, math.pi / 4, 1.0)
    t = time.perf_counter()
    worst, cells, n_grids, n_cyclic = 0.0, 0, 50, 0
    for _ in range(n_grids):
        g = random_grid(rng)
        n_cyclic += any(a.cyclic for a in g.spec.axes) and not all(a.cyclic for a in g.spec.axes)
        dev = np.abs(compute_sdf(g, m).values - brute_force_sdf(g, m).values)
        worst = max(worst, float(dev.max() / step_metric_length(g.spec, m)))
        cells += g.spec.size
    dt = time.perf_counter() - t
    ok = worst <= 1.0 + 1e-9 and dt < 60
    acceptance(1, ok, f"{n_grids} grids ({n_cyclic} mixed cyclic), {cells} cells, worst deviation "
                      f"{worst:.3f} steps, {dt:.1f}s")
    assert ok


def test_2_metric_equidistance(acceptance):
    m = MetricParams(10.0, math.pi / 4, 1.0)
    a = metric_distance(Pose6(), Pose6(0.10, 0, 0), m)
    b = metric_distance(Pose6(), Pose6(0, 0, 0, math.pi / 4, 0, 0), m)
    ok = abs(a - b) <= 1e-12
    acceptance(2, ok, f"10 cm -> {a!r}, pi/4 rad -> {b!r}")
    assert ok


def test_3_sdf_classification_quality(acceptance, desk_cfg, desk_sdf):
    t = time.perf_counter()
    q = evaluate_sdf_quality(desk_sdf, desk_cfg.arm, desk_cfg.scene, 10000, 3, desk_cfg.ik)
    dt = time.perf_counter() - t
    ok = q["accuracy"] >= 0.95 and q["precision"] >= 0.88
    acceptance(3, ok, f"accuracy {q['accuracy']:.4f} (>= 0.95), precision {q['precision']:.4f} (>= 0.88), "
                      f"recall {q['recall']:.4f}, 10000 poses, {dt:.0f}s")
    assert ok


@pytest.fixture(scope="module")
def summary(desk_suite):
    return summarize(desk_suite)


def test_4_reachable_fraction_improvement(acceptance, desk_suite, summary):
    rf = summary["reachable_fraction"]
    gain = summary["improvement_ours_minus_cp"]
    rows = curve_rows(desk_suite)
    by = {(r["budget"], r["method"]): r["mean"] for r in rows}
    every = all(by[(b, "sa-ours")] >= by[(b, "sa-cp")] for b in desk_suite.budgets)
    curve = ", ".join(f"{b}: {by[(b, 'sa-cp')]:.2f}/{by[(b, 'sa-ours')]:.2f}" for b in desk_suite.budgets)
    ok = summary["runs_per_method"] >= 30 and gain >= 0.25 and every
    acceptance(4, ok, f"{summary['runs_per_method']} runs/method, SA-CP {rf['sa-cp']['mean']:.3f}, "
                      f"SA-OURS {rf['sa-ours']['mean']:.3f}, gain {gain:+.3f} (>= 0.25); "
                      f"curve cp/ours {curve}")
    assert ok


def test_curve_embedded_series_at_largest_budget(desk_suite):
    rows = curve_rows(desk_suite)
    top = max(desk_suite.budgets)
    by = {r["method"]: r["mean"] for r in rows if r["budget"] == top}
    assert by["sa-ours-embedded"] >= by["sa-ours"]


def test_5_obstacle_embedding_gain(acceptance, summary):
    n, strict = summary["obstacle_scenes"], summary["embedded_strictly_better_scenes"]
    u, e = summary["obstacle_mean_unembedded"], summary["obstacle_mean_embedded"]
    ok = n > 0 and e >= u and strict >= math.ceil(2 * n / 3)
    acceptance(5, ok, f"{n} obstacle scenes: embedded {e:.3f} vs unembedded {u:.3f}, "
                      f"strictly better in {strict}/{n} (need {math.ceil(2 * n / 3)})")
    assert ok


def test_6_plan_attempts_reduction(acceptance, summary):
    att = summary["attempts"]
    st = summary["attempts_sign_test"]
    ok = att["sa-ours"]["mean"] < att["sa-cp"]["mean"] and st["p_value"] < 0.05
    acceptance(6, ok, f"attempts SA-OURS {att['sa-ours']['mean']:.2f} vs SA-CP {att['sa-cp']['mean']:.2f} "
                      f"('none' = 21); sign test {st['wins']}-{st['losses']} ({st['ties']} ties), "
                      f"p = {st['p_value']:.2g}")
    assert ok


def test_7_energy_branch_audit(acceptance, desk_cfg):
    rng = np.random.default_rng(7)
    alphas = (-0.1, -10.0, -10.0)
    bad = 0
    n = 10000
    e_p = rng.normal(scale=50, size=n)
    e_c = rng.exponential(100, size=n)
    e_r = rng.normal(scale=3, size=n)
    e_r[:500] = 0.0  # the tie-break
    e_p[500:700] = 0.0
    for i in range(n):
        b = combine_ours(e_p[i], e_c[i], e_r[i], alphas)
        if e_r[i] >= 0 and e_p[i] < 0:
            want = e_p[i] + alphas[0] * e_r[i]
        elif e_r[i] >= 0:
            want = e_c[i] + alphas[1] * e_r[i]
        else:
            want = e_c[i] + alphas[2] * e_r[i]
        cp = combine_cp(e_p[i], e_c[i])
        bad += abs(b.total - want) > 1e-12 or cp != (e_p[i] if e_p[i] < 0 else e_c[i])
        bad += b.stable != (e_p[i] < 0) or b.reachable != (e_r[i] >= 0)
    # the composed SA-CP energy on real hand configurations
    hand = desk_cfg.gripper
    from reachgrasp.grasp import GraspObject

    obj = GraspObject("sphere", {"radius": 0.035}, Pose6(0.4, 0.0, 0.035))
    real = 300
    for _ in range(real):
        x = np.concatenate([obj.center + rng.uniform(-0.1, 0.1, 3), rng.uniform(-math.pi, math.pi, 3),
                            [rng.uniform(0, 0.11)]])
        g = GraspConfig.from_array(x)
        ep = potential_energy(g, obj, hand)
        want = ep if ep < 0 else contact_energy(g, obj, hand)
        bad += energy_sa_cp(g, obj, hand) != want
    ok = bad == 0
    acceptance(7, ok, f"{n} random breakdowns (500 with e_reach = 0) and {real} SA-CP evaluations, {bad} mismatches")
    assert ok


def _run(*argv):
    from reachgrasp.cli import main

    return main([str(a) for a in argv])


def test_8_cli_determinism(acceptance, tmp_path, desk_grid):
    cmds = [
        ["gen-reach", "--config", "planar2"],
        ["gen-sdf", "--config", "planar2", "--evaluate", 300],
        ["sweep", "--config", "planar2", "--n", 300, "--triple", "4,pi/4,1"],
        ["embed", "--scene", "can@2/shelf"],
        ["plan", "--scene", "ball@1/shelf", "--energy", "sa-ours-embedded", "--steps", 200, "--seed", 5],
        ["plan", "--scene", "box@0/clear", "--energy", "sa-cp", "--steps", 200],
        ["curve", "--scene", "box@3/shelf", "--budgets", "100,200", "--seeds", 1],
    ]
    checked, mismatched = 0, []
    for i, c in enumerate(cmds):
        a = tmp_path / f"a{i}"
        if c[0] == "gen-sdf":
            c = c + ["--grid", tmp_path / "a0" / "reach.rgrd"]
        assert _run(*c, "--out", a) == 0
        b = tmp_path / f"b{i}"
        assert _run("replay", a / "manifest.json", "--out", b) == 0
        ma = json.loads((a / "manifest.json").read_text())
        for name in ma["outputs"]:
            checked += 1
            if (a / name).read_bytes() != (b / name).read_bytes():
                mismatched.append(f"{c[0]}:{name}")
    ok = not mismatched
    acceptance(8, ok, f"{len(cmds)} invocations replayed, {checked} output files compared, "
                      f"mismatches: {mismatched or 'none'}")
    assert ok


def test_9_property_suites(acceptance, desk_cfg, desk_grid, desk_sdf, planar_grid):
    rng = np.random.default_rng(9)
    results = {}
    # grid monotonicity under obstacles
    spec = _small_desk_spec()
    base = generate_reachability(desk_cfg.arm, spec, desk_cfg.scene, desk_cfg.ik)
    wall = Obstacle(Box(Pose6(0.35, 0.0, 0.2), size=(0.05, 0.4, 0.4)), "wall")
    more = generate_reachability(desk_cfg.arm, spec, desk_cfg.scene.with_obstacles([wall]), desk_cfg.ik)
    results["grid monotone under obstacles"] = not np.any(more.labels & ~base.labels)
    # masking idempotence
    clutter = Scene((wall,))
    once, _ = mask_obstacles(desk_grid, clutter, 0.03)
    twice, _ = mask_obstacles(once, clutter, 0.03)
    results["masking idempotent"] = np.array_equal(once.labels, twice.labels)
    # SDF sign agreement and 1-Lipschitz bound
    try:
        _check_sign_and_lipschitz(desk_grid, desk_cfg.metric, desk_cfg.neighbourhood)
        results["sdf sign + Lipschitz"] = True
    except AssertionError:
        results["sdf sign + Lipschitz"] = False
    # corner exactness and interpolation bounds
    P = uniform_sample_workspace(desk_sdf.spec)
    idx = rng.choice(len(P), 2000, replace=False)
    results["corner exactness"] = np.array_equal(query_sdf_batch(desk_sdf, P[idx]),
                                                 desk_sdf.values.ravel()[idx].astype(float))
    Q = sample_box_poses(desk_sdf.spec, 2000, rng)
    v = query_sdf_batch(desk_sdf, Q)
    lo, hi = float(desk_sdf.values.min()), float(desk_sdf.values.max())
    from test_sdf import _recursive_lerp

    ref = np.array([_recursive_lerp(desk_sdf, q) for q in Q[:200]])
    results["interpolation bounds"] = bool(np.all((v >= lo) & (v <= hi)) and np.allclose(v[:200], ref, atol=1e-9))
    # seam continuity
    a, b = Q.copy(), Q.copy()
    a[:, 5], b[:, 5] = math.pi - 1e-12, -math.pi + 1e-12
    results["seam continuity"] = float(np.max(np.abs(query_sdf_batch(desk_sdf, a) - query_sdf_batch(desk_sdf, b)))) < 1e-9
    # FK/IK round trip
    arm, par = desk_cfg.arm, desk_cfg.ik
    lo = np.array([j.lower for j in arm.joints])
    hi = np.array([j.upper for j in arm.joints])
    q = rng.uniform(0.9 * lo, 0.9 * hi, size=(50, arm.n_joints))
    ok_rt = 0
    for k in range(50):
        target = forward_kinematics(arm, q[k])
        sol = solve_ik(arm, target, params=par, rng_seed=k)
        ok_rt += sol is not None and metric_distance(forward_kinematics(arm, sol), target,
                                                     MetricParams(0.5, 0.05, 1.0)) < 1.0
    results["FK/IK round trip"] = ok_rt >= 48
    # annulus-oracle agreement
    Pp = uniform_sample_workspace(planar_grid.spec)
    truth = np.hypot(Pp[:, 0], Pp[:, 1]) <= 1.0
    agree = float(np.mean(planar_grid.labels.ravel() == truth))
    results[f"annulus agreement {agree:.4f}"] = agree >= 0.98
    ok = all(results.values())
    acceptance(9, ok, ", ".join(f"{k}: {'ok' if v else 'FAIL'}" for k, v in results.items())
               + f" (IK round trip {ok_rt}/50)")
    assert ok


def test_10_soft_timing(acceptance, desk_cfg, desk_grid):
    clutter = Scene((Obstacle(Box(Pose6(0.3, 0.1, 0.1), size=(0.1, 0.1, 0.2)), "block"),))
    times = []
    for hood in ("full", "face"):
        _, rep = embed_and_regenerate(desk_grid, clutter, desk_cfg.metric, 0.03, hood)
        times.append((hood, rep.regeneration_seconds))
    full = times[0][1]
    ok = full <= 30.0
    acceptance(10, ok, f"{desk_grid.spec.size}-cell regeneration: "
               + ", ".join(f"{h} {t:.2f}s" for h, t in times) + " (target <= 30s, 10x a 2-3s reference)", gating=False)
