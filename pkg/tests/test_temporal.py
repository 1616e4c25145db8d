import numpy as np
import pytest
from hypothesis import given, strategies as st

from elastictree import (
    PcaTrajectory,
    TrajectorySrvf,
    ValidationError,
    cross_sequence_register,
    geodesic_4d,
    inverse_trajectory_srvf,
    optimal_time_warp,
    trajectory_srvf,
    validate_tree,
)
from elastictree.curves import apply_warp, identity_warp
from elastictree.synth import GrowthSpec, TreeSpec, synth_growth, synth_time_warp
from elastictree.temporal import retime, trajectory_distance, warp_trajectory

from oracles import brute_force_warp, lattice_paths, smooth_warp

seeds = st.integers(0, 2**32 - 1)


def smooth_traj(rng, m, k=4):
    t = np.linspace(0, 1, m)
    freq = rng.uniform(0.5, 2.0, size=k)
    phase = rng.uniform(0, 2 * np.pi, size=k)
    coords = np.sin(2 * np.pi * np.outer(t, freq) + phase) + np.outer(t, rng.normal(size=k))
    return PcaTrajectory(t, coords)


def as_w(values):
    return TrajectorySrvf(np.asarray(values, float), np.zeros(np.shape(values)[1]))


# ---------------------------------------------------------------- trajectory SRVF


def test_constant_trajectory_has_zero_srvf():
    w = trajectory_srvf(PcaTrajectory(np.linspace(0, 1, 9), np.ones((9, 3))))
    assert not np.any(w.values)


def test_unit_speed_line_has_constant_srvf():
    t = np.linspace(0, 1, 11)
    w = trajectory_srvf(PcaTrajectory(t, np.outer(t, [0.6, 0.8, 0.0])))
    np.testing.assert_allclose(w.values, np.tile([0.6, 0.8, 0.0], (11, 1)), atol=1e-12)


@given(seeds)
def test_trajectory_round_trip(seed):
    traj = smooth_traj(np.random.default_rng(seed), 200)
    back = inverse_trajectory_srvf(trajectory_srvf(traj))
    assert np.abs(back.coords - traj.coords).max() <= 1e-3 * np.ptp(traj.coords)


def test_trajectory_srvf_needs_uniform_grid():
    with pytest.raises(ValidationError, match="uniform"):
        trajectory_srvf(PcaTrajectory(np.array([0, 0.1, 1.0]), np.zeros((3, 2))))


# ---------------------------------------------------------------- time warps


def test_identical_trajectories_identity_warp():
    w = trajectory_srvf(smooth_traj(np.random.default_rng(0), 30))
    xi, d = optimal_time_warp(w, w)
    np.testing.assert_allclose(xi, identity_warp(30), atol=1e-15)
    assert d == 0.0


@pytest.mark.parametrize("seed", range(5))
def test_known_time_warp_recovered(seed):
    rng = np.random.default_rng(seed)
    m = 30
    w1 = trajectory_srvf(smooth_traj(rng, m))
    xi0 = smooth_warp(rng, m, 0.4)
    w2 = warp_trajectory(w1, xi0)
    before = trajectory_distance(w1, w2)
    xi, after = optimal_time_warp(w1, w2, refine=True)
    inv = np.interp(identity_warp(m), xi0, identity_warp(m))
    assert after <= 0.1 * before
    assert np.abs(xi - inv).max() <= 2 / m


@pytest.mark.parametrize("m", [5, 8])
def test_time_warp_equals_path_enumeration(m):
    rng = np.random.default_rng(m)
    paths = lattice_paths(m)
    for _ in range(5):
        w1, w2 = as_w(rng.normal(size=(m, 4))), as_w(rng.normal(size=(m, 4)))
        xi, d = optimal_time_warp(w1, w2)
        xi_ref, d_ref = brute_force_warp(w1.values, w2.values, paths=paths)
        np.testing.assert_array_equal(xi, xi_ref)
        assert d ** 2 == pytest.approx(d_ref, rel=1e-12, abs=1e-14)


@given(seeds)
def test_time_warp_never_increases_and_is_monotone(seed):
    rng = np.random.default_rng(seed)
    w1, w2 = as_w(rng.normal(size=(20, 3))), as_w(rng.normal(size=(20, 3)))
    for refine in (False, True):
        xi, d = optimal_time_warp(w1, w2, refine=refine)
        assert d <= trajectory_distance(w1, w2) + 1e-12
        assert xi[0] == 0 and xi[-1] == 1 and np.all(np.diff(xi) >= 0)


@given(seeds)
def test_rate_invariance(seed):
    # a pair whose optimal warp stays inside the stencil's slope range
    rng = np.random.default_rng(seed)
    m = 40
    a, b = smooth_traj(rng, m), smooth_traj(rng, m)
    w1 = trajectory_srvf(a)
    w2 = trajectory_srvf(PcaTrajectory(a.times, a.coords + 0.3 * b.coords))
    w2 = warp_trajectory(w2, smooth_warp(rng, m, 0.3))
    w2_warped = warp_trajectory(w2, smooth_warp(rng, m, 0.3))
    _, d = optimal_time_warp(w1, w2, refine=True)
    _, d_warped = optimal_time_warp(w1, w2_warped, refine=True)
    scale = np.sqrt(np.sum(w2.values ** 2) / m)
    assert abs(d - d_warped) <= 2 / m * scale


def test_literal_variant_differs_from_isometric():
    rng = np.random.default_rng(1)
    w1 = trajectory_srvf(smooth_traj(rng, 20))
    w2 = warp_trajectory(w1, smooth_warp(rng, 20, 0.5))
    xi, d = optimal_time_warp(w1, w2, literal=True)
    assert np.all(np.diff(xi) >= 0) and np.isfinite(d)
    xi_iso = smooth_warp(rng, 20, 0.5)
    assert not np.allclose(warp_trajectory(w1, xi_iso, literal=True).values, apply_warp(w1.values, xi_iso))


def test_time_warp_rejects_grid_mismatch():
    with pytest.raises(ValidationError, match="grid"):
        optimal_time_warp(as_w(np.zeros((10, 2))), as_w(np.zeros((11, 2))))


def test_retime_identity_and_endpoints():
    traj = smooth_traj(np.random.default_rng(3), 15)
    assert np.array_equal(retime(traj, identity_warp(15)).coords, traj.coords)
    out = retime(traj, synth_time_warp(4, 0.5, 15))
    np.testing.assert_array_equal(out.coords[[0, -1]], traj.coords[[0, -1]])


# ---------------------------------------------------------------- cross-sequence


SPEC = TreeSpec(depth=2, children=(1, 3))


def growth(seed, times=None, frames=8):
    return synth_growth(seed, SPEC, frames, GrowthSpec(start_fraction=0.02), times=times).frames


def test_same_sequence_aligns_to_zero():
    H = growth(1)
    res = cross_sequence_register(H, H, m=20, decode=False)
    assert res.after == pytest.approx(0.0, abs=1e-12)


def test_rate_changed_sequence_realigns():
    grid = np.linspace(0, 1, 30)
    xi = synth_time_warp([3, 0, 50], 0.5, 200)
    H1 = growth(3, frames=30)
    H2 = growth(3, times=np.interp(grid, np.linspace(0, 1, 200), xi))
    res = cross_sequence_register(H1, H2, grid, grid, decode=False)
    assert res.after <= 0.1 * res.before
    assert np.all(np.diff(res.xi) >= 0)
    assert {"within_sequence_1", "cross_sequence", "pca", "temporal"} <= set(res.timings)


def test_different_plants_improve_but_differ():
    res = cross_sequence_register(growth(5), growth(6), m=20)
    assert 0 < res.after <= res.before
    assert len(res.frames2_aligned) == 20
    for T in res.frames2_aligned:
        validate_tree(T)
    report = res.report()
    assert report["after"] == res.after and len(report["xi"]) == 20


def test_cross_sequence_stage_labels_errors():
    H = growth(1)
    with pytest.raises(ValidationError, match="sequence 1"):
        cross_sequence_register(H, H[:1])


# ---------------------------------------------------------------- 4D geodesics


def aligned_pair():
    res = cross_sequence_register(growth(5), growth(6), m=20, decode=False)
    return res.w1, res.w2_aligned


def test_geodesic_4d_endpoints_and_spacing():
    w1, w2 = aligned_pair()
    geo = geodesic_4d(w1, w2, steps=6)
    assert geo.steps[0] is w1 and geo.steps[-1] is w2
    total = trajectory_distance(w1, w2)
    gaps = [trajectory_distance(a, b) for a, b in zip(geo.steps, geo.steps[1:])]
    np.testing.assert_allclose(gaps, total / 5, rtol=0, atol=1e-9)


def test_geodesic_4d_midpoint_decodes_to_valid_trees():
    w1, w2 = aligned_pair()
    geo = geodesic_4d(w1, w2, steps=3)
    frames = geo.decode(1)
    assert len(frames) == 20
    for T in frames:
        validate_tree(T)
    d0 = trajectory_distance(geo.steps[0], geo.steps[1])
    d1 = trajectory_distance(geo.steps[1], geo.steps[2])
    assert abs(d0 - d1) <= 1e-9


def test_geodesic_4d_rejects_mismatch():
    with pytest.raises(ValidationError):
        geodesic_4d(as_w(np.zeros((5, 2))), as_w(np.zeros((5, 3))))
    with pytest.raises(ValidationError, match="2 steps"):
        geodesic_4d(as_w(np.zeros((5, 2))), as_w(np.zeros((5, 2))), steps=1)
