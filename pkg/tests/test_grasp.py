import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from reachgrasp.geometry import Pose6
from reachgrasp.grasp import (
    EnergyParams,
    GraspConfig,
    GraspObject,
    Gripper,
    close_fingers,
    combine_cp,
    combine_ours,
    contact_energy,
    energy_sa_cp,
    energy_sa_ours,
    force_closure_lp,
    hull_quality,
    planar_contact_wrenches,
    potential_energy,
    rank_grasp_list,
    reachability_energy,
)
from reachgrasp.reachability import Axis, GridSpec6, uniform_sample_workspace
from reachgrasp.sdf import MetricParams, SdfGrid, box_diagonal

HAND = Gripper()
UNSCALED = EnergyParams(contact_scale=1.0, potential_scale=1.0)
PAD = HAND.pad_depth


def _at_pad(shape, dims, offset=(0.0, 0.0, 0.0), mu=0.5):
    """Object centred between the pads of a hand sitting at the origin."""
    return GraspObject(shape, dims, Pose6(PAD + offset[0], offset[1], offset[2]), mu)


def _synthetic_sdf():
    """Linear field ``5 - 10 x`` (metric units): reachable for x <= 0.5."""
    flat = {n: Axis(n, 0.0, 1.0, 1, angular=True) for n in ("roll", "pitch", "yaw")}
    spec = GridSpec6(x=Axis("x", 0.0, 0.1, 11), y=Axis("y", -0.5, 0.1, 11), z=Axis("z", -0.5, 0.1, 11), **flat)
    P = uniform_sample_workspace(spec)
    return SdfGrid(spec, MetricParams(10, math.pi / 4, 1), 5.0 - 10.0 * P[:, 0], {"synthetic": True})


def test_perfect_contact_is_zero():
    box = _at_pad("box", {"size": [0.04, 0.04, 0.04]})
    assert contact_energy(GraspConfig(Pose6(), (0.04,)), box, HAND) == pytest.approx(0.0, abs=1e-9)


def test_translated_hand_contact_lower_bound():
    box = _at_pad("box", {"size": [0.04, 0.04, 0.04]})
    g = GraspConfig(Pose6(-0.2, 0, 0), (0.04,))
    n_sites = len(HAND.sites(g.dof)[0])
    assert contact_energy(g, box, HAND, UNSCALED) >= 0.2 * n_sites


def test_contact_scale_is_linear():
    obj = _at_pad("sphere", {"radius": 0.03})
    g = GraspConfig(Pose6(-0.05, 0.01, 0, 0.2, 0, 0), (0.09,))
    assert contact_energy(g, obj, HAND) == pytest.approx(1000 * contact_energy(g, obj, HAND, UNSCALED))


def _sampled_contact(g, obj, hand, beta, samples):
    pts, dirs = hand.sites(g.dof)
    R = g.pose.rotation()
    total = 0.0
    for s, d in zip(pts @ R.T + g.pose.position, dirs @ R.T):
        diff = samples - s
        dist = np.linalg.norm(diff, axis=1)
        i = int(np.argmin(dist))
        total += dist[i] + beta * (1 - float(d @ diff[i]) / dist[i])
    return total


@pytest.mark.parametrize("shape,dims", [("sphere", {"radius": 0.035}),
                                        ("box", {"size": [0.04, 0.05, 0.1]}),
                                        ("cylinder", {"radius": 0.03, "height": 0.1})])
def test_contact_matches_sampled_surface(shape, dims, rng):
    obj = GraspObject(shape, dims, Pose6(0.4, 0.1, 0.2, 0.3, -0.2, 0.5))
    samples = obj.solid.sample_surface(200_000, rng)
    done = 0
    while done < 15:
        x = np.concatenate([obj.center + rng.uniform(-0.15, 0.15, 3), rng.uniform(-math.pi, math.pi, 3)])
        g = GraspConfig(Pose6.from_array(x), (rng.uniform(0, 0.11),))
        pts, _ = HAND.sites(g.dof)
        w = pts @ g.pose.rotation().T + g.pose.position
        if np.min(obj.solid.signed_distance(w)) < 0.02:
            continue  # keep sites clear of the surface so the sampled normal is well defined
        ref = _sampled_contact(g, obj, HAND, UNSCALED.beta, samples)
        assert contact_energy(g, obj, HAND, UNSCALED) == pytest.approx(ref, rel=0.02, abs=2e-3)
        done += 1


def test_antipodal_sphere_is_stable():
    sphere = _at_pad("sphere", {"radius": 0.035})
    g = GraspConfig(Pose6(), (0.09,))
    pts, normals = close_fingers(g, sphere, HAND)
    assert len(pts) == 2
    assert np.allclose(np.abs(pts[:, 1]), 0.035, atol=1e-9)
    assert potential_energy(g, sphere, HAND) < 0


def test_single_contact_is_unstable():
    ball = _at_pad("sphere", {"radius": 0.01}, offset=(0, 0.02, 0))
    g = GraspConfig(Pose6(), (0.11,))
    assert len(close_fingers(g, ball, HAND)[0]) == 1
    assert potential_energy(g, ball, HAND) > 0


def test_no_contact_is_large_positive():
    far = _at_pad("sphere", {"radius": 0.02}, offset=(0.5, 0, 0))
    assert potential_energy(GraspConfig(Pose6(), (0.05,)), far, HAND, UNSCALED) == UNSCALED.missing_contact


def test_three_finger_pinch_on_cylinder():
    hand = Gripper(name="three", kind="three_finger", aperture=(0.0, 0.12))
    cyl = GraspObject("cylinder", {"radius": 0.03, "height": 0.1}, Pose6(PAD, 0, 0, 0, math.pi / 2, 0))
    g = GraspConfig(Pose6(), (0.1, 2 * math.pi / 3 - math.pi / 3))
    assert len(close_fingers(g, cyl, hand)[0]) == 3
    assert potential_energy(g, cyl, hand) < 0


def _positively_spans(W):
    """Exhaustive check that the cone edges positively span R^3.

    With W spanning R^3 the polar cone is pointed, so if it is non-trivial one
    of its extreme rays, each some +-(w_i x w_j), separates the origin.
    """
    if np.linalg.matrix_rank(W) < 3:
        return False
    for i in range(len(W)):
        for j in range(i + 1, len(W)):
            u = np.cross(W[i], W[j])
            nu = np.linalg.norm(u)
            if nu < 1e-12:
                continue
            for v in (u, -u):
                if np.all(W @ v <= 1e-9 * nu):
                    return False
    return True


def test_planar_closure_matches_span_oracle():
    rng = np.random.default_rng(8)
    closed_count = 0
    for _ in range(300):
        ang = rng.uniform(0, 2 * math.pi, 3)
        pts = np.stack([np.cos(ang), np.sin(ang)], axis=1) * 0.05
        jitter = rng.normal(scale=0.6, size=3)
        normals = -np.stack([np.cos(ang + jitter), np.sin(ang + jitter)], axis=1)
        W = planar_contact_wrenches(pts, normals, rng.uniform(0.1, 0.8), np.zeros(2), 0.05)
        closed, q = hull_quality(W)
        if q < 1e-9:
            continue  # origin on the hull boundary: verdict is numerically arbitrary
        assert closed == _positively_spans(W)
        assert force_closure_lp(W) == closed
        closed_count += closed
    assert 0 < closed_count < 300  # both verdicts exercised


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2 ** 31 - 1), st.integers(7, 30))
def test_hull_matches_lp(seed, m):
    rng = np.random.default_rng(seed)
    W = rng.normal(size=(m, 6)) + rng.normal(scale=0.7, size=6)
    closed, q = hull_quality(W)
    assert closed == force_closure_lp(W) or q < 1e-6
    assert q >= 0


def test_rank_deficient_wrenches_not_closed():
    W = np.random.default_rng(1).normal(size=(20, 6))
    W[:, 5] = 0.0
    assert hull_quality(W) == (False, 1.0)
    assert not force_closure_lp(W)


def test_branch_arithmetic():
    b = combine_ours(-0.3, 5.0, 2.0)
    assert b.branch == "reachable_stable" and b.total == pytest.approx(-0.5)
    b = combine_ours(3.0, 1.0, -1.0)
    assert b.branch == "unreachable" and b.total == pytest.approx(11.0)
    b = combine_ours(3.0, 1.0, 0.5)
    assert b.branch == "reachable_unstable" and b.total == pytest.approx(1.0 - 5.0)
    b = combine_ours(-1.0, 1.0, 0.0)
    assert b.reachable and b.branch == "reachable_stable"


def test_sa_cp_branches():
    assert combine_cp(-0.3, 9.0) == -0.3
    assert combine_cp(0.4, 1.7) == 1.7


def test_sa_cp_trace_is_branchwise():
    sphere = _at_pad("sphere", {"radius": 0.035})
    trace, pieces = [], []
    for dx in np.linspace(-0.1, 0.0, 21):
        g = GraspConfig(Pose6(dx, 0, 0), (0.09,))
        trace.append(energy_sa_cp(g, sphere, HAND))
        e_p = potential_energy(g, sphere, HAND)
        pieces.append(e_p if e_p < 0 else contact_energy(g, sphere, HAND))
    assert trace == pieces
    trace = np.array(trace)
    first_stable = int(np.argmax(trace < 0))
    assert first_stable > 0
    assert np.all(np.diff(trace[:first_stable]) <= 1e-9)  # contact descent while approaching
    assert np.all(trace[first_stable:] < 0)


def test_reachability_energy():
    sdf = _synthetic_sdf()
    assert reachability_energy(sdf, Pose6(0.1, 0, 0)) == pytest.approx(4.0)
    assert reachability_energy(sdf, Pose6(2.0, 0, 0)) == -box_diagonal(sdf.spec, sdf.metric)
    P = uniform_sample_workspace(sdf.spec)
    for i in (0, 17, 500, len(P) - 1):
        assert reachability_energy(sdf, Pose6.from_array(P[i])) == float(sdf.values.ravel()[i])


def test_reachability_energy_on_desk(desk_sdf):
    base = desk_sdf.values.ravel()
    i = int(np.argmax(base))
    P = uniform_sample_workspace(desk_sdf.spec)
    assert reachability_energy(desk_sdf, Pose6.from_array(P[i])) > 0


def test_sa_ours_breakdown():
    sdf = _synthetic_sdf()
    sphere = GraspObject("sphere", {"radius": 0.035}, Pose6(0.2 + PAD, 0, 0))
    g = GraspConfig(Pose6(0.2, 0, 0), (0.09,))
    b = energy_sa_ours(g, sphere, HAND, sdf)
    assert b.stable and b.reachable and b.branch == "reachable_stable"
    assert b.total == pytest.approx(b.e_p - 0.1 * b.e_reach)
    assert b.e_reach == pytest.approx(3.0)


def test_rank_dominance_and_singleton():
    sdf = _synthetic_sdf()
    near = GraspObject("sphere", {"radius": 0.035}, Pose6(0.2 + PAD, 0, 0))
    g_ok = GraspConfig(Pose6(0.2, 0, 0), (0.09,))
    g_far = GraspConfig(Pose6(0.8, 0, 0), (0.09,))
    far_obj = near.moved(Pose6(0.8 + PAD, 0, 0))
    # same relative grasp; rank both against one object each by shifting the object along
    r = rank_grasp_list([g_far, g_ok], near, HAND, sdf)
    assert r[0].config == g_ok
    assert energy_sa_ours(g_far, far_obj, HAND, sdf).total > energy_sa_ours(g_ok, near, HAND, sdf).total
    single = rank_grasp_list([g_ok], near, HAND, sdf)
    assert len(single) == 1 and single[0].config == g_ok
    with pytest.raises(ValueError):
        rank_grasp_list([], near, HAND, sdf)


def test_rank_matches_recomputed_sort(rng):
    sdf = _synthetic_sdf()
    obj = GraspObject("box", {"size": [0.04, 0.04, 0.1]}, Pose6(0.35, 0.0, 0.0))
    grasps = [GraspConfig(Pose6.from_array(np.concatenate([obj.center + rng.uniform(-0.12, 0.12, 3),
                                                           rng.uniform(-math.pi, math.pi, 3)])),
                          (rng.uniform(0, 0.11),)) for _ in range(25)]
    grasps.append(grasps[3])  # an exact tie keeps input order
    totals = [energy_sa_ours(g, obj, HAND, sdf) for g in grasps]
    expect = sorted(range(len(grasps)), key=lambda i: (totals[i].total, -totals[i].e_reach, i))
    got = [r.index for r in rank_grasp_list(grasps, obj, HAND, sdf)]
    assert got == expect
    assert got.index(3) < got.index(len(grasps) - 1)


def test_gripper_validation():
    with pytest.raises(ValueError):
        Gripper(kind="suction")
    with pytest.raises(ValueError):
        HAND.check_dof([0.2])
    with pytest.raises(ValueError):
        HAND.check_dof([0.05, 0.1])
    with pytest.raises(ValueError):
        GraspObject("sphere", {"radius": 0.02}, mu=0.0)
