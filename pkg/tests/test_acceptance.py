"""Exit criteria of the package, one test per criterion.

Run ``pytest tests/test_acceptance.py`` to get a PASS/FAIL line per criterion
in the terminal summary.
"""
import time
from dataclasses import replace

import numpy as np
import pytest

from elastictree import (
    MetricWeights,
    SrvfNode,
    TrajectorySrvf,
    cross_sequence_register,
    devectorize,
    fit_modes_4d,
    fit_pca,
    generate_4d,
    geodesic_3d,
    geodesic_4d,
    inverse_trajectory_srvf,
    karcher_mean_4d,
    karcher_mean_trees,
    match_subtrees,
    normalize,
    optimal_time_warp,
    project,
    reconstruct,
    register_pair,
    to_srvft,
    trajectory_srvf,
    validate_tree,
    vectorize,
)
from elastictree.atlas import decode_4d
from elastictree.cli import main
from elastictree.config import RunConfig
from elastictree.curves import (
    apply_warp,
    curve_length,
    inverse_srvf,
    l2_distance,
    optimal_branch_warp,
    resample_arclength,
    srvf,
)
from elastictree.evaluation import evaluate_corpus, write_corpus
from elastictree.registration import naive_distance, tree_norm_sq
from elastictree.subspace import PcaTrajectory
from elastictree.synth import GrowthSpec, TreeSpec, synth_growth, synth_tree
from elastictree.temporal import embed_collection, trajectory_distance, warp_trajectory

from oracles import brute_force_assignment, brute_force_warp, helix_arc, lattice_paths, random_rotation, \
    scramble, smooth_warp

EPSILONS = [0.1, 0.05, 0.02, 0.01]


def smooth_traj(rng, m, k=4):
    t = np.linspace(0, 1, m)
    freq = rng.uniform(0.5, 2.0, size=k)
    phase = rng.uniform(0, 2 * np.pi, size=k)
    return PcaTrajectory(t, np.sin(2 * np.pi * np.outer(t, freq) + phase) + np.outer(t, rng.normal(size=k)))


def unit_length(traj):
    return PcaTrajectory(traj.times, traj.coords / curve_length(traj.coords))


def smooth_srvf(rng, n=200):
    return srvf(resample_arclength(helix_arc(rng, 3 * n // 2), n))


@pytest.fixture(scope="module")
def four_d():
    """Trajectory SRVFs of five growth sequences sharing one PCA basis."""
    spec = TreeSpec(depth=2, children=(1, 3))
    seqs = [synth_growth(s, spec, 6, GrowthSpec(start_fraction=0.05)).frames for s in range(5)]
    _, trajs, _ = embed_collection(seqs, n=30, m=20, variance_target=1.0)
    return [trajectory_srvf(t) for t in trajs]


@pytest.fixture(scope="module")
def atlas(four_d):
    return fit_modes_4d(karcher_mean_4d(four_d, max_iter=5))


# ---------------------------------------------------------------- 1


@pytest.mark.acceptance(1, "SRVF round trip of curves and trajectories")
def test_criterion_01_round_trip():
    rng = np.random.default_rng(1)
    start = time.perf_counter()
    worst = 0.0
    for _ in range(100):
        pts = resample_arclength(3.0 * helix_arc(rng, 400), 200)
        back = inverse_srvf(srvf(pts), pts[0])
        worst = max(worst, np.abs(back - pts).max() / curve_length(pts))
    for _ in range(100):
        traj = smooth_traj(rng, 200)
        back = inverse_trajectory_srvf(trajectory_srvf(traj))
        worst = max(worst, np.abs(back.coords - traj.coords).max() / curve_length(traj.coords))
    elapsed = time.perf_counter() - start
    assert worst <= 1e-3
    assert elapsed < 1.0


# ---------------------------------------------------------------- 2


@pytest.mark.acceptance(2, "warp action is an isometry")
def test_criterion_02_isometry():
    rng = np.random.default_rng(2)
    for _ in range(100):
        q1, q2 = smooth_srvf(rng), smooth_srvf(rng)
        g = smooth_warp(rng, 200)
        assert abs(l2_distance(apply_warp(q1, g), apply_warp(q2, g)) - l2_distance(q1, q2)) <= 1e-3
    for _ in range(100):
        # unit arc length, the same scale convention as unit-scale trees
        w1, w2 = (trajectory_srvf(unit_length(smooth_traj(rng, 200))) for _ in range(2))
        xi = smooth_warp(rng, 200)
        gap = trajectory_distance(warp_trajectory(w1, xi), warp_trajectory(w2, xi)) - trajectory_distance(w1, w2)
        assert abs(gap) <= 1e-3


# ---------------------------------------------------------------- 3


@pytest.mark.acceptance(3, "lattice search equals exhaustive monotone-path search")
def test_criterion_03_dp_oracle():
    rng = np.random.default_rng(3)
    start = time.perf_counter()
    for m in range(2, 9):
        paths = lattice_paths(m)
        instances = [rng.normal(size=(2, m, 3)) for _ in range(6)]
        # degenerate instances where many paths tie
        instances += [np.zeros((2, m, 3)), rng.integers(0, 2, size=(2, m, 3)).astype(float)]
        same = rng.normal(size=(m, 3))
        instances.append(np.stack([same, same]))
        for q1, q2 in instances:
            g, d = optimal_branch_warp(q1, q2)
            g_ref, d_ref = brute_force_warp(q1, q2, paths=paths)
            np.testing.assert_array_equal(g, g_ref)
            assert d == pytest.approx(d_ref, rel=1e-12, abs=1e-14)
            w1, w2 = TrajectorySrvf(q1, np.zeros(3)), TrajectorySrvf(q2, np.zeros(3))
            xi, dt = optimal_time_warp(w1, w2)
            np.testing.assert_array_equal(xi, g_ref)
            assert dt ** 2 == pytest.approx(d_ref, rel=1e-12, abs=1e-14)
    assert time.perf_counter() - start < 5.0


# ---------------------------------------------------------------- 4


@pytest.mark.acceptance(4, "registration undoes rotation, permutation and branch warps")
def test_criterion_04_spatial_invariance():
    for seed in range(50):
        rng = np.random.default_rng([4, seed])
        Q = to_srvft(normalize(synth_tree(seed)), 40)
        R = random_rotation(rng)
        r = register_pair(Q, scramble(Q, rng, R))
        assert np.sqrt(r.distance) <= 1e-3 * np.sqrt(tree_norm_sq(Q.root)), seed
        np.testing.assert_allclose(r.rotation, R.T, rtol=0, atol=1e-6)
        warped = scramble(Q, rng, R, warp_strength=0.3)
        assert register_pair(Q, warped).distance <= 0.05 * naive_distance(Q, warped), seed


# ---------------------------------------------------------------- 5


@pytest.mark.acceptance(5, "child assignment equals brute force")
def test_criterion_05_assignment_oracle():
    rng = np.random.default_rng(5)
    w = MetricWeights(1.0, 0.7, 1.3)
    for _ in range(200):
        k1, k2 = rng.integers(0, 6, size=2)
        n1 = SrvfNode(np.zeros((5, 3)), tuple(SrvfNode(rng.normal(size=(5, 3)), (), s) for s in rng.uniform(size=k1)))
        n2 = SrvfNode(np.zeros((5, 3)), tuple(SrvfNode(rng.normal(size=(5, 3)), (), s) for s in rng.uniform(size=k2)))
        sub = rng.uniform(0, 3, size=(k1, k2))
        _, total = match_subtrees(n1, n2, w, lambda i, j: sub[i, j])
        real = np.array([[w.position * (a.attach_s - b.attach_s) ** 2 + w.subtree * sub[i, j]
                          for j, b in enumerate(n2.children)] for i, a in enumerate(n1.children)]).reshape(k1, k2)
        null1 = [w.subtree * tree_norm_sq(c, w) for c in n1.children]
        null2 = [w.subtree * tree_norm_sq(c, w) for c in n2.children]
        assert total == pytest.approx(brute_force_assignment(real, null1, null2), rel=1e-12, abs=1e-12)


# ---------------------------------------------------------------- 6


@pytest.mark.acceptance(6, "cycle consistency of corresponded pairs")
def test_criterion_06_cycle_consistency(tmp_path):
    write_corpus(tmp_path, "corresponded", count=5, seed=6)
    rows, _ = evaluate_corpus("cycle", tmp_path, RunConfig())
    errs = [np.mean([r[f"eps={e:g}"] for r in rows]) for e in EPSILONS]
    assert errs[0] <= 1.0  # percent
    assert all(b >= a for a, b in zip(errs, errs[1:]))


# ---------------------------------------------------------------- 7


def perturbed(Q, rng, amp):
    def walk(node):
        noise = amp * rng.normal(size=node.q.shape).cumsum(axis=0) / 10
        return replace(node, q=node.q + noise, children=tuple(walk(c) for c in node.children))

    return replace(Q, root=walk(Q.root))


@pytest.mark.acceptance(7, "Karcher means in 3D and 4D")
def test_criterion_07_karcher(four_d):
    rng = np.random.default_rng(7)
    Q = to_srvft(normalize(synth_tree(9, TreeSpec(depth=2, children=(2, 3)))), 20)
    res = karcher_mean_trees([perturbed(Q, rng, 0.2) for _ in range(7)], max_iter=6)
    assert all(b <= a for a, b in zip(res.objective, res.objective[1:]))
    assert np.array_equal(vectorize(karcher_mean_trees([Q, Q]).mean), vectorize(Q))
    two = karcher_mean_trees([perturbed(Q, rng, 0.1), perturbed(Q, rng, 0.1)], max_iter=5)
    mid = geodesic_3d(*two.registered, steps=3, srvf=True)[1]
    assert np.abs(vectorize(mid) - vectorize(two.mean)).max() <= 1e-6

    items = [warp_trajectory(TrajectorySrvf(c * w.values, w.origin, w.basis), smooth_warp(rng, w.m, 0.3))
             for w, c in zip(four_d + four_d[:2], rng.uniform(0.8, 1.2, size=7))]
    res4 = karcher_mean_4d(items, max_iter=6)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(res4.objective, res4.objective[1:]))
    w = four_d[0]
    assert np.array_equal(karcher_mean_4d([w, w]).mean.values, w.values)
    two4 = karcher_mean_4d(four_d[1:3], max_iter=5)
    mid4 = geodesic_4d(*two4.registered, steps=3).steps[1]
    assert np.abs(mid4.values - two4.mean.values).max() <= 1e-6


# ---------------------------------------------------------------- 8


@pytest.mark.acceptance(8, "PCA exactness")
def test_criterion_08_pca():
    for seed in range(5):
        rng = np.random.default_rng([8, seed])
        Q = to_srvft(normalize(synth_tree(seed, TreeSpec(depth=2, children=(2, 3)))), 6)
        v = vectorize(Q)
        items = [devectorize(v + rng.normal(size=v.size), Q) for _ in range(5)]
        basis = fit_pca(items, variance_target=1.0)
        X = np.array([vectorize(T) for T in items])
        dense = np.sort(np.linalg.eigvalsh(np.cov(X, rowvar=False)))[::-1][:basis.k]
        np.testing.assert_allclose(basis.eigvals, dense, rtol=0, atol=1e-8)
        for T in items:
            assert np.abs(vectorize(reconstruct(project(T, basis), basis)) - vectorize(T)).max() <= 1e-6
        a = rng.normal(size=basis.k)
        assert np.abs(project(reconstruct(a, basis), basis) - a).max() <= 1e-9


# ---------------------------------------------------------------- 9


@pytest.mark.acceptance(9, "temporal registration of rate-changed pairs")
def test_criterion_09_temporal(tmp_path):
    write_corpus(tmp_path, "warped", count=10, seed=9)
    rows, _ = evaluate_corpus("temporal", tmp_path, RunConfig())
    before = np.mean([r["before"] for r in rows])
    after = np.mean([r["after"] for r in rows])
    assert after <= 0.1 * before


# ---------------------------------------------------------------- 10


@pytest.mark.acceptance(10, "4D geodesics")
def test_criterion_10_geodesic_4d(four_d):
    for w1, w2 in [(four_d[0], four_d[1]), (four_d[2], four_d[4])]:
        w2 = TrajectorySrvf(apply_warp(w2.values, optimal_time_warp(w1, w2)[0]), w2.origin, w2.basis)
        geo = geodesic_4d(w1, w2, steps=7)
        assert np.array_equal(geo.steps[0].values, w1.values)
        assert np.array_equal(geo.steps[-1].values, w2.values)
        total = trajectory_distance(w1, w2)
        gaps = [trajectory_distance(a, b) for a, b in zip(geo.steps, geo.steps[1:])]
        assert max(abs(g - total / 6) for g in gaps) <= 1e-9
        for w in geo.steps:
            for T in decode_4d(w)[0]:
                validate_tree(T)


# ---------------------------------------------------------------- 11


@pytest.mark.acceptance(11, "generation from the 4D atlas")
def test_criterion_11_generation(atlas):
    a, b = generate_4d(atlas, seed=11), generate_4d(atlas, seed=11)
    assert a.record() == b.record() and a.taus.tobytes() == b.taus.tobytes()
    zero = generate_4d(atlas, taus=np.zeros(atlas.n_modes))
    mean = decode_4d(atlas.compose(np.zeros(atlas.n_modes)), atlas.basis)[0]
    for x, y in zip(zero.frames, mean):
        for u, v in zip(x.nodes(), y.nodes()):
            assert np.array_equal(u.curve, v.curve)
    for seed in range(100):
        gen = generate_4d(atlas, seed=seed, clamp=3.0)
        assert np.all(np.abs(gen.taus) <= 3.0)
        for T in gen.frames:
            validate_tree(T)


# ---------------------------------------------------------------- 12


def best_of(fn, repeat=3):
    fn()
    times = []
    for _ in range(repeat):
        start = time.perf_counter()
        fn()
        times.append(time.perf_counter() - start)
    return min(times)


@pytest.mark.acceptance(12, "desk-scale runtime budget")
def test_criterion_12_runtime(atlas):
    spec = TreeSpec(depth=3, children=(4, 5))
    T1, T2 = synth_tree(14, spec), synth_tree(16, spec)
    assert T1.n_branches == T2.n_branches == 30
    Q1, Q2 = to_srvft(normalize(T1), 50), to_srvft(normalize(T2), 50)
    start = time.perf_counter()
    register_pair(Q1, Q2)
    assert time.perf_counter() - start < 5.0

    spec4 = TreeSpec(depth=2, children=(1, 3))
    grid = np.linspace(0, 1, 30)
    growth = GrowthSpec(start_fraction=0.02)
    H1 = synth_growth(12, spec4, 30, growth).frames
    H2 = synth_growth(12, spec4, growth=growth, times=grid ** 1.3).frames
    res = cross_sequence_register(H1, H2, grid, grid, m=30, k_max=20, decode=False)
    assert res.basis.k <= 20
    assert best_of(lambda: optimal_time_warp(res.w1, res.w2, refine=True)) < 0.1
    w1, w2 = res.w1, res.w2_aligned
    assert best_of(lambda: [decode_4d(w) for w in geodesic_4d(w1, w2, steps=5).steps]) < 0.1
    assert best_of(lambda: generate_4d(atlas, seed=0)) < 0.01


# ---------------------------------------------------------------- 13


def files_of(directory):
    return {p.relative_to(directory): p.read_bytes() for p in sorted(directory.rglob("*")) if p.is_file()}


@pytest.mark.acceptance(13, "eval CSVs regenerate bitwise at --jobs 1 and --jobs 8")
def test_criterion_13_reproducibility(tmp_path):
    def run(*argv):
        assert main([str(a) for a in argv]) == 0

    small = ("--depth", 2, "--max-children", 2, "--count", 3)
    for suite, kind, frames in (("spatial", "different", 3), ("cycle", "corresponded", 3),
                                ("temporal", "warped", 10)):
        run("synth", "--kind", kind, "--frames", frames, "--seed", 13, *small, "--out", tmp_path / kind)
        run("synth", "--kind", kind, "--frames", frames, "--seed", 13, *small, "--out", tmp_path / f"{kind}2")
        corpus = files_of(tmp_path / kind)
        assert corpus == files_of(tmp_path / f"{kind}2")

        first = tmp_path / f"{suite}_first"
        run("eval", suite, tmp_path / kind, "--samples", 20, "--grid", 12, "--jobs", 1, "--out", first)
        csv = (first / f"eval_{suite}.csv").read_bytes()
        recorded = first / "run_config.json"
        for jobs in (1, 8):
            again = tmp_path / f"{suite}_jobs{jobs}"
            run("eval", suite, tmp_path / f"{kind}2", "--config", recorded, "--jobs", jobs, "--out", again)
            assert (again / f"eval_{suite}.csv").read_bytes() == csv
