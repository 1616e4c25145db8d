"""Rate-invariant comparison of 4D trees.

A 4D tree embedded in a PCA basis is a curve ``alpha(t)`` in R^k. Its SRVF
``w`` turns the elastic (rate-invariant) trajectory metric into the plain L2
metric, and the optimal time warp is found with the same lattice DP that
aligns branches.
"""
from __future__ import annotations

import math
import time as _time
from dataclasses import dataclass, field

import numpy as np

from .curves import (
    _interp_rows,
    apply_warp,
    check_warp,
    identity_warp,
    inverse_srvf,
    lattice_search_plain,
    optimal_branch_warp,
    squared_l2,
    srvf,
)
from .errors import ValidationError
from .registration import MetricWeights, register_fixed, register_pair, register_sequence
from .subspace import (
    DEFAULT_GRID,
    PcaBasis,
    PcaTrajectory,
    embed_sequence,
    fit_pca,
    normalize_times,
    project,
    reconstruct,
)
from .tree import DEFAULT_SAMPLES, from_srvft

__all__ = [
    "TrajectorySrvf",
    "Geodesic4D",
    "CrossSequenceResult",
    "trajectory_srvf",
    "inverse_trajectory_srvf",
    "warp_trajectory",
    "trajectory_distance",
    "optimal_time_warp",
    "retime",
    "decode_trajectory",
    "shared_hierarchy",
    "embed_collection",
    "cross_sequence_register",
    "geodesic_4d",
]


@dataclass(frozen=True, eq=False)
class TrajectorySrvf:
    """SRVF ``w`` of a PCA trajectory, with the starting coordinates needed to invert it."""

    values: np.ndarray  # (M, k)
    origin: np.ndarray  # (k,)
    basis: PcaBasis = field(repr=False, default=None)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or len(v) < 2 or not np.all(np.isfinite(v)):
            raise ValidationError("a trajectory SRVF needs at least 2 finite samples")
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(v.shape[1]))

    @property
    def m(self):
        return len(self.values)


def trajectory_srvf(traj: PcaTrajectory) -> TrajectorySrvf:
    t = np.asarray(traj.times, dtype=float)
    if not np.allclose(np.diff(t), (t[-1] - t[0]) / (len(t) - 1), rtol=1e-9, atol=1e-12):
        raise ValidationError("trajectory must be sampled on a uniform time grid")
    coords = np.asarray(traj.coords, dtype=float)
    return TrajectorySrvf(srvf(coords), coords[0], traj.basis)


def inverse_trajectory_srvf(w: TrajectorySrvf, origin=None) -> PcaTrajectory:
    origin = w.origin if origin is None else origin
    return PcaTrajectory(identity_warp(w.m), inverse_srvf(w.values, origin), w.basis)


def _check_pair(w1, w2):
    if w1.values.shape != w2.values.shape:
        raise ValidationError(
            f"trajectories differ in grid or dimension: {w1.values.shape} vs {w2.values.shape}"
        )
    b1, b2 = w1.basis, w2.basis
    if b1 is not None and b2 is not None and b1 is not b2:
        if b1.topology_id != b2.topology_id or not np.array_equal(b1.eigvecs, b2.eigvecs):
            raise ValidationError("trajectories are expressed in different PCA bases")


def warp_trajectory(w: TrajectorySrvf, xi, literal=False) -> TrajectorySrvf:
    """``(w o xi) sqrt(xi')``, or ``w o xi`` with ``literal=True``."""
    values = _interp_rows(w.values, check_warp(xi)) if literal else apply_warp(w.values, xi)
    return TrajectorySrvf(values, w.origin, w.basis)


def trajectory_distance(w1: TrajectorySrvf, w2: TrajectorySrvf) -> float:
    _check_pair(w1, w2)
    return math.sqrt(squared_l2(w1.values, w2.values))


def optimal_time_warp(w1: TrajectorySrvf, w2: TrajectorySrvf, refine=False, init=None, literal=False):
    """Time warp ``xi`` bringing ``w2`` closest to ``w1`` and the distance it leaves.

    Exact over lattice paths (the branch-warp stencil). ``refine=True`` adds
    the continuous polish of :func:`elastictree.curves.refine_warp`.
    ``literal=True`` drops the square-root-slope factor from the action; that
    variant is not an isometry and exists only for comparison.
    """
    _check_pair(w1, w2)
    if literal:
        xi, cost = lattice_search_plain(w1.values, w2.values)
    else:
        xi, cost = optimal_branch_warp(w1.values, w2.values, refine=refine, init=init)
    return xi, math.sqrt(max(cost, 0.0))


def retime(traj: PcaTrajectory, xi) -> PcaTrajectory:
    """Trajectory ``alpha o xi`` on the same grid."""
    xi = check_warp(xi)
    grid = np.asarray(traj.times, dtype=float)
    s = grid[0] + xi * (grid[-1] - grid[0])
    coords = np.column_stack([np.interp(s, grid, traj.coords[:, c]) for c in range(traj.coords.shape[1])])
    return PcaTrajectory(grid, coords, traj.basis)


def decode_trajectory(traj: PcaTrajectory, units=""):
    """Tree shapes at every time sample of a PCA trajectory."""
    if traj.basis is None:
        raise ValidationError("trajectory carries no basis to decode with")
    return [from_srvft(reconstruct(a, traj.basis, time=float(t)), units)
            for t, a in zip(traj.times, traj.coords)]


@dataclass(frozen=True, eq=False)
class CrossSequenceResult:
    basis: PcaBasis
    traj1: PcaTrajectory
    traj2: PcaTrajectory
    traj2_aligned: PcaTrajectory
    w1: TrajectorySrvf
    w2: TrajectorySrvf
    w2_aligned: TrajectorySrvf
    xi: np.ndarray
    before: float
    after: float
    timings: dict
    frames2_aligned: list = field(default_factory=list, repr=False)

    def report(self):
        return {
            "schema": "elastictree/alignment-report@1",
            "before": self.before,
            "after": self.after,
            "xi": self.xi.tolist(),
            "grid": len(self.xi),
            "k": self.basis.k,
            "variance_captured": self.basis.variance_captured,
            "timings": dict(self.timings),
        }


def _times_of(H, t):
    if t is not None:
        return np.asarray(t, dtype=float)
    got = [getattr(f, "time", None) for f in H]
    if any(g is None for g in got):
        return np.linspace(0.0, 1.0, len(H))
    return np.asarray(got, dtype=float)


def _staged(timings, name, fn):
    start = _time.perf_counter()
    try:
        out = fn()
    except ValidationError as exc:
        raise ValidationError(f"{name}: {exc}", exc.branch_id, exc.pointer) from exc
    timings[name] = timings.get(name, 0.0) + _time.perf_counter() - start
    return out


def shared_hierarchy(chains, w=MetricWeights()):
    """Bring within-sequence-registered chains onto one hierarchy and pose.

    The last frame of every chain is registered onto the last frame of the
    first chain (padded as more sequences join); padding, rotation and branch
    warps found there are applied to every frame of that chain.
    """
    chains = [list(c) for c in chains]
    for j in range(1, len(chains)):
        res = register_pair(chains[0][-1], chains[j][-1], w)
        for i in range(j):
            chains[i] = [res.pad_source_like(Q) for Q in chains[i]]
        chains[j] = [res.transform_target_like(Q) for Q in chains[j]]
    return chains


def embed_collection(sequences, times=None, w=MetricWeights(), n=DEFAULT_SAMPLES, m=DEFAULT_GRID,
                     variance_target=0.99, k_max=20, unit_scale=False, basis: PcaBasis = None,
                     timings=None):
    """Embed several 4D trees in one pooled PCA space.

    Returns ``(basis, trajectories, chains)`` where ``chains`` are the
    registered SRVF frames on the shared hierarchy.
    """
    sequences = [list(H) for H in sequences]
    if not sequences:
        raise ValidationError("no sequences given")
    times = [None] * len(sequences) if times is None else list(times)
    timings = {} if timings is None else timings
    norm_times = []
    for j, (H, t) in enumerate(zip(sequences, times)):
        if len(H) < 2:
            raise ValidationError(f"sequence {j} needs at least 2 frames")
        norm_times.append(normalize_times(_times_of(H, t)))
    chains = [
        _staged(timings, f"within_sequence_{j + 1}", lambda H=H: register_sequence(H, w, n, unit_scale))
        for j, H in enumerate(sequences)
    ]
    chains = _staged(timings, "cross_sequence", lambda: shared_hierarchy(chains, w))
    if basis is None:
        pooled = [Q for c in chains for Q in c]
        basis = _staged(timings, "pca", lambda: fit_pca(pooled, variance_target, k_max))
    elif basis.topology_id != chains[0][0].topology_id:
        raise ValidationError("pca: supplied basis does not match the union hierarchy of the sequences")
    trajs = [embed_sequence(c, t, basis, m) for c, t in zip(chains, norm_times)]
    return basis, trajs, chains


def cross_sequence_register(H1, H2, times1=None, times2=None, w=MetricWeights(), n=DEFAULT_SAMPLES,
                            m=DEFAULT_GRID, variance_target=0.99, k_max=20, per_time=False,
                            refine=True, literal=False, unit_scale=False, decode=True,
                            basis: PcaBasis = None):
    """Spatially then temporally align sequence ``H2`` to ``H1``.

    1. Each sequence is registered frame to frame onto its own union hierarchy.
    2. The last frames are registered across sequences; the resulting padding,
       rotation and branch warps are applied to every frame so both sequences
       share one hierarchy and pose.
    3. A pooled PCA basis is fitted (unless ``basis`` is given) and both
       sequences are embedded on an ``m``-point time grid.
    4. With ``per_time``, each time sample of ``H2`` is re-registered onto the
       matching sample of ``H1`` (rotation and branch warps only, so the
       hierarchy stays fixed) and projected back.
    5. The trajectory SRVFs are aligned by :func:`optimal_time_warp` and ``H2``
       is re-timed.

    ``before`` and ``after`` are trajectory-SRVF distances before and after
    the time warp.
    """
    timings = {}
    basis, (traj1, traj2), _ = embed_collection([H1, H2], [times1, times2], w, n, m, variance_target,
                                                 k_max, unit_scale, basis, timings)
    if per_time and basis.k:
        def per_time_step():
            coords = traj2.coords.copy()
            for j in range(m):
                Qa = reconstruct(traj1.coords[j], basis)
                Qb = reconstruct(traj2.coords[j], basis)
                coords[j] = project(register_fixed(Qa, Qb, w, max_iter=3)[0], basis)
            return PcaTrajectory(traj2.times, coords, basis)

        traj2 = _staged(timings, "per_time", per_time_step)

    def temporal():
        w1, w2 = trajectory_srvf(traj1), trajectory_srvf(traj2)
        before = trajectory_distance(w1, w2)
        xi, after = optimal_time_warp(w1, w2, refine=refine, literal=literal)
        if not literal and after >= before:
            xi, after = identity_warp(m), before
        return w1, w2, xi, before, after

    w1, w2, xi, before, after = _staged(timings, "temporal", temporal)
    aligned = retime(traj2, xi)
    w2_aligned = warp_trajectory(w2, xi, literal)
    frames = decode_trajectory(aligned) if decode else []
    return CrossSequenceResult(basis, traj1, traj2, aligned, w1, w2, w2_aligned, xi, before, after,
                               timings, frames)


@dataclass(frozen=True, eq=False)
class Geodesic4D:
    taus: np.ndarray
    steps: list  # TrajectorySrvf per tau

    def decode(self, j, units=""):
        return decode_trajectory(inverse_trajectory_srvf(self.steps[j]), units)


def geodesic_4d(w1: TrajectorySrvf, w2_registered: TrajectorySrvf, steps=5) -> Geodesic4D:
    """Straight line ``(1 - tau) w1 + tau w2`` between two aligned trajectory SRVFs.

    The starting coordinates are interpolated the same way, so every step
    decodes to a full 4D tree.
    """
    _check_pair(w1, w2_registered)
    if steps < 2:
        raise ValidationError("a geodesic needs at least 2 steps")
    taus = np.linspace(0.0, 1.0, steps)
    out = []
    for j, tau in enumerate(taus):
        if j == 0:
            out.append(w1)
        elif j == steps - 1:
            out.append(w2_registered)
        else:
            out.append(TrajectorySrvf((1 - tau) * w1.values + tau * w2_registered.values,
                                      (1 - tau) * w1.origin + tau * w2_registered.origin,
                                      w1.basis))
    return Geodesic4D(taus, out)
