"""Invariant elastic distance between SRVF trees and pairwise registration.

The distance between two trees that already share a hierarchy is

    main * ||q1 - q2||^2 + sum_i [position * (s1_i - s2_i)^2 + subtree * d(child1_i, child2_i)]

applied recursively. Registration minimizes it over a global rotation, one
warp per branch and the pairing of lateral subtrees (with null branches
filling in for unmatched ones) by alternating between the three.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import linear_sum_assignment

from .curves import (
    apply_warp,
    optimal_branch_warp,
    optimal_rotation,
    resample_arclength,
    rotate,
    squared_l2,
)
from .errors import TopologyMismatchError, ValidationError
from .tree import (
    DEFAULT_SAMPLES,
    NodeMatch,
    SrvfTree,
    TreeShape,
    _complete_pairs,
    apply_padding,
    devectorize,
    from_srvft,
    iter_nodes,
    iter_with_depth,
    normalize,
    pad_to_union,
    point_at,
    to_srvft,
    vectorize,
)

__all__ = [
    "MetricWeights",
    "RegistrationResult",
    "tree_norm_sq",
    "tree_distance_fixed",
    "distance_terms",
    "naive_distance",
    "solve_assignment",
    "match_subtrees",
    "register_pair",
    "apply_registration",
    "register_fixed",
    "register_sequence",
    "interpolate_srvft",
    "geodesic_3d",
    "cycle_consistency_error",
    "CYCLE_EPSILONS",
]

CYCLE_EPSILONS = (0.1, 0.05, 0.02, 0.01)


@dataclass(frozen=True)
class MetricWeights:
    """Weights of the main-branch, attachment-position and subtree terms."""

    main: float = 1.0
    position: float = 1.0
    subtree: float = 1.0

    def __post_init__(self):
        vals = (self.main, self.position, self.subtree)
        if any(v < 0 or not math.isfinite(v) for v in vals) or not any(vals):
            raise ValidationError(f"weights must be nonnegative and not all zero, got {vals}")

    @classmethod
    def parse(cls, text):
        parts = [float(p) for p in str(text).split(",")]
        if len(parts) != 3:
            raise ValidationError(f"expected three comma-separated weights, got {text!r}")
        return cls(*parts)

    def as_tuple(self):
        return (self.main, self.position, self.subtree)


def tree_norm_sq(node, w=MetricWeights()):
    """Squared distance from a subtree to an all-null subtree of the same shape."""
    return w.main * squared_l2(node.q) + w.subtree * sum(tree_norm_sq(c, w) for c in node.children)


def _check_same_topology(Q1, Q2):
    if Q1.topology_id != Q2.topology_id or Q1.n_samples != Q2.n_samples:
        raise TopologyMismatchError(
            "trees do not share a branch hierarchy; pad them to their union first"
        )


def _fixed(u, v, w):
    total = w.main * squared_l2(u.q, v.q)
    for cu, cv in zip(u.children, v.children):
        total += w.position * (cu.attach_s - cv.attach_s) ** 2 + w.subtree * _fixed(cu, cv, w)
    return total


def tree_distance_fixed(Q1: SrvfTree, Q2: SrvfTree, w=MetricWeights()):
    """Elastic tree distance for trees already padded, permuted and aligned."""
    _check_same_topology(Q1, Q2)
    return _fixed(Q1.root, Q2.root, w)


def distance_terms(Q1: SrvfTree, Q2: SrvfTree, w=MetricWeights()):
    """Top-level breakdown of :func:`tree_distance_fixed` into its three terms."""
    _check_same_topology(Q1, Q2)
    u, v = Q1.root, Q2.root
    main = w.main * squared_l2(u.q, v.q)
    position = w.position * sum((a.attach_s - b.attach_s) ** 2 for a, b in zip(u.children, v.children))
    subtree = w.subtree * sum(_fixed(a, b, w) for a, b in zip(u.children, v.children))
    return {"main": main, "position": position, "subtree": subtree, "total": main + position + subtree}


def _index_matching(u, v):
    k = min(len(u.children), len(v.children))
    return NodeMatch(tuple((i, i, _index_matching(u.children[i], v.children[i])) for i in range(k)))


def naive_distance(Q1: SrvfTree, Q2: SrvfTree, w=MetricWeights()):
    """Distance with no registration: children paired by position, nothing moved."""
    p1, p2 = pad_to_union(Q1, Q2, _index_matching(Q1.root, Q2.root))
    return tree_distance_fixed(p1, p2, w)


# ---------------------------------------------------------------- assignment


def solve_assignment(cost):
    """Minimum-cost perfect matching of a square cost matrix.

    Returns ``(assignment, total)`` where ``assignment[r]`` is the column
    given to row ``r``.
    """
    cost = np.asarray(cost, dtype=float)
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(len(rows), dtype=int)
    assignment[rows] = cols
    return assignment, float(cost[rows, cols].sum())


def _child_cost_matrix(u, v, w, pair_cost):
    k1, k2 = len(u.children), len(v.children)
    size = k1 + k2
    cost = np.full((size, size), np.inf)
    for i, cu in enumerate(u.children):
        for j, cv in enumerate(v.children):
            # a null branch takes its partner's attach_s, so no position cost
            ds = 0.0 if (cu.is_null or cv.is_null) else cu.attach_s - cv.attach_s
            cost[i, j] = w.position * ds * ds + w.subtree * pair_cost(i, j)
        cost[i, k2 + i] = w.subtree * tree_norm_sq(cu, w)
    for j, cv in enumerate(v.children):
        cost[k1 + j, j] = w.subtree * tree_norm_sq(cv, w)
    cost[k1:, k2:] = 0.0
    return cost


def match_subtrees(node1, node2, w=MetricWeights(), pair_cost=None):
    """Optimal pairing of the lateral subtrees of two nodes.

    ``pair_cost(i, j)`` is the subtree distance between child ``i`` of
    ``node1`` and child ``j`` of ``node2``; by default it is the fixed-pose
    distance of the two subtrees after recursive matching. Children may pair
    with a null branch at the cost of their own squared norm. Returns the
    ``(i, j)`` pairs (``None`` marking a null partner) and the total cost.
    """
    if pair_cost is None:
        def pair_cost(i, j):
            return _static_match(node1.children[i], node2.children[j], w)[0]
    k1, k2 = len(node1.children), len(node2.children)
    if k1 + k2 == 0:
        return [], 0.0
    cost = _child_cost_matrix(node1, node2, w, pair_cost)
    assignment, total = solve_assignment(cost)
    pairs = []
    for r, c in enumerate(assignment):
        if r < k1:
            pairs.append((r, c if c < k2 else None))
        elif c < k2:
            pairs.append((None, c))
    return pairs, total


def _static_match(u, v, w):
    """Recursive matching of two subtrees in their current pose (no warps)."""
    cache = {}

    def rec(a, b):
        key = (id(a), id(b))
        if key not in cache:
            pairs, total = match_subtrees(a, b, w, lambda i, j: rec(a.children[i], b.children[j])[0])
            cache[key] = (w.main * squared_l2(a.q, b.q) + total, pairs)
        return cache[key]

    return rec(u, v)


# ---------------------------------------------------------------- registration


@dataclass(frozen=True, eq=False)
class RegistrationResult:
    """Outcome of :func:`register_pair`.

    ``registered_target`` is the target padded, permuted into the source's
    child order, warped branch by branch and rotated; ``source_padded`` is the
    source with the matching null branches. ``distance`` equals
    ``tree_distance_fixed(source_padded, registered_target, weights)``.
    """

    matching: NodeMatch
    rotation: np.ndarray
    source_padded: SrvfTree
    registered_target: SrvfTree
    distance: float
    terms: dict
    iterations: int
    history: tuple
    weights: MetricWeights
    source: SrvfTree = field(repr=False, default=None)
    target: SrvfTree = field(repr=False, default=None)

    def correspondences(self):
        """``(source_label, target_label, gamma)`` for every matched real branch pair."""
        out = []

        def walk(u, v, match):
            if not (u.is_null or v.is_null):
                out.append((u.label, v.label, match.gamma))
            for i, j, sub in match.pairs:
                if i is not None and j is not None:
                    walk(u.children[i], v.children[j], sub or NodeMatch())

        walk(self.source.root, self.target.root, self.matching)
        return out

    def pad_source_like(self, Q: SrvfTree) -> SrvfTree:
        """Pad a tree with the source's hierarchy the way the source was padded."""
        return apply_padding(Q, self.source, self.target, self.matching, 0)

    def transform_target_like(self, Q: SrvfTree) -> SrvfTree:
        """Pad, permute, warp and rotate a tree with the target's hierarchy like the target."""
        padded = apply_padding(Q, self.source, self.target, self.matching, 1)
        return replace(padded, root=_transform(padded.root, self.matching, self.rotation))


class _Registrar:
    def __init__(self, Q1, Q2, w, refine):
        self.Q1, self.Q2, self.w, self.refine = Q1, Q2, w, refine

    # one matching pass for a fixed rotation and fixed warps of current pairs
    def match(self, rotation, warps):
        w = self.w
        rotated = {id(n): rotate(n.q, rotation) for n in iter_nodes(self.Q2.root)}
        cache = {}

        def rec(u, v):
            key = (id(u), id(v))
            if key in cache:
                return cache[key]
            gamma = warps.get(key)
            q2 = rotated[id(v)]
            if gamma is not None:
                q2 = apply_warp(q2, gamma)
            main = w.main * squared_l2(u.q, q2)
            pairs, total = match_subtrees(u, v, w, lambda i, j: rec(u.children[i], v.children[j])[0])
            subs = {}
            for i, j in pairs:
                if i is not None and j is not None:
                    subs[(i, j)] = rec(u.children[i], v.children[j])[1]
            full = NodeMatch(tuple((i, j, subs.get((i, j))) for i, j in pairs), gamma)
            ordered = NodeMatch(tuple(_complete_pairs(u, v, full)), gamma)
            cache[key] = (main + total, ordered)
            return cache[key]

        return rec(self.Q1.root, self.Q2.root)

    def matched_nodes(self, match):
        out = []

        def walk(u, v, m, depth):
            out.append((u, v, m, depth))
            for i, j, sub in m.pairs:
                if i is not None and j is not None:
                    walk(u.children[i], v.children[j], sub or NodeMatch(), depth + 1)

        walk(self.Q1.root, self.Q2.root, match, 0)
        return out

    def best_rotation(self, match):
        w = self.w
        pairs, weights = [], []
        for u, v, m, depth in self.matched_nodes(match):
            if u.is_null or v.is_null:
                continue
            q2 = v.q if m.gamma is None else apply_warp(v.q, m.gamma)
            pairs.append((u.q, q2))
            weights.append(w.main * w.subtree ** depth)
        if not pairs:
            return np.eye(3)
        return optimal_rotation(pairs, weights)

    def with_warps(self, match, rotation, previous=None):
        """Re-solve every matched branch warp for the given rotation.

        A pair's previous warp seeds the refinement, so no pair gets worse.
        """
        previous = previous or {}
        warps = {}

        def walk(u, v, m):
            gamma = None
            if not (u.is_null or v.is_null):
                key = (id(u), id(v))
                gamma = optimal_branch_warp(u.q, rotate(v.q, rotation), self.refine,
                                            previous.get(key))[0]
                warps[key] = gamma
            pairs = []
            for i, j, sub in m.pairs:
                if i is not None and j is not None:
                    sub = walk(u.children[i], v.children[j], sub or NodeMatch())
                pairs.append((i, j, sub))
            return NodeMatch(tuple(pairs), gamma)

        return walk(self.Q1.root, self.Q2.root, match), warps

    def build(self, match, rotation):
        return apply_registration(self.Q1, self.Q2, match, rotation, self.w)


def apply_registration(Q1: SrvfTree, Q2: SrvfTree, matching: NodeMatch, rotation, w=MetricWeights()):
    """Pad both trees along ``matching`` and move ``Q2`` by ``rotation`` and its warps.

    ``matching`` must list every child pair in padded order, as produced by
    :func:`register_pair`. Returns ``(source_padded, registered_target, distance)``.
    """
    p1, p2 = pad_to_union(Q1, Q2, matching)
    p2 = replace(p2, root=_transform(p2.root, matching, np.asarray(rotation, dtype=float)))
    return p1, p2, tree_distance_fixed(p1, p2, w)


def _transform(node, match, rotation):
    """Rotate a padded target subtree and warp it along a complete matching."""
    q = rotate(node.q, rotation)
    if match is not None and match.gamma is not None:
        q = apply_warp(q, match.gamma)
    kids = tuple(
        _transform(c, match.pairs[k][2] if match is not None else None, rotation)
        for k, c in enumerate(node.children)
    )
    return replace(node, q=q, children=kids)


def _axis_rotation(axis, angle):
    axis = axis / np.linalg.norm(axis)
    k = np.array([[0, -axis[2], axis[1]], [axis[2], 0, -axis[0]], [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle) * k + (1 - math.cos(angle)) * (k @ k)


def _initial_rotations(Q1, Q2, spins):
    q1, q2 = Q1.root.q, Q2.root.q
    out = [np.eye(3)]
    if not (np.any(q1) and np.any(q2)):
        return out
    base = optimal_rotation([(q1, q2)])
    out.append(base)
    axis = (q1 * np.linalg.norm(q1, axis=1)[:, None]).sum(axis=0)
    if np.linalg.norm(axis) > 0:
        for k in range(1, spins):
            out.append(_axis_rotation(axis, 2 * math.pi * k / spins) @ base)
    return out


def register_pair(Q1: SrvfTree, Q2: SrvfTree, w=MetricWeights(), max_iter=10, rel_tol=1e-6,
                  spins=8, refine_warps=True) -> RegistrationResult:
    """Register ``Q2`` onto ``Q1`` over rotation, branch warps and subtree pairings.

    Alternates (a) recursive subtree matching, (b) null padding, (c) a single
    global rotation fitted to every matched branch pair and (d) one DP warp per
    matched pair, until the objective drops by less than ``rel_tol`` (relative)
    or ``max_iter`` rounds have run. Each step minimizes the objective with the
    others held fixed, so the recorded history never increases. The first
    round is started from several rotations (identity, the main-branch
    Procrustes fit and ``spins - 1`` turns of it about the main axis) and the
    best is kept. ``refine_warps`` polishes each lattice warp with a
    continuous descent (see :func:`elastictree.curves.refine_warp`).
    """
    for Q in (Q1, Q2):
        if not any(not n.is_null for n in Q.nodes()):
            raise ValidationError(f"cannot register an empty tree {Q.name!r}")
    if Q1.n_samples != Q2.n_samples:
        raise ValidationError("trees use different samples per branch; convert both with the same n")
    reg = _Registrar(Q1, Q2, w, refine_warps)

    # (a)-(c) from every starting rotation, keep the best
    best = None
    for start in _initial_rotations(Q1, Q2, spins):
        _, match = reg.match(start, {})
        # the refit only replaces the start when it actually helps
        for rotation in (start, reg.best_rotation(match)):
            value = reg.build(match, rotation)[2]
            if best is None or value < best[0]:
                best = (value, match, rotation)
    value, match, rotation = best
    # (d), kept only if the warps lower the objective
    warped, warps = reg.with_warps(match, rotation)
    p1, p2, warped_value = reg.build(warped, rotation)
    if warped_value < value:
        match, value = warped, warped_value
    else:
        warps = {}
        p1, p2, value = reg.build(match, rotation)
    history = [value]
    iterations = 1
    while iterations < max_iter and value > 0:
        _, new_match = reg.match(rotation, warps)
        new_rotation = reg.best_rotation(new_match)
        new_match, new_warps = reg.with_warps(new_match, new_rotation, warps)
        n1, n2, new_value = reg.build(new_match, new_rotation)
        iterations += 1
        if new_value > value:  # rounding-level uptick; keep the previous state
            history.append(value)
            break
        improvement = value - new_value
        match, rotation, warps, p1, p2, value = new_match, new_rotation, new_warps, n1, n2, new_value
        history.append(value)
        if improvement <= rel_tol * history[-2]:
            break
    return RegistrationResult(
        matching=match,
        rotation=rotation,
        source_padded=p1,
        registered_target=p2,
        distance=value,
        terms=distance_terms(p1, p2, w),
        iterations=iterations,
        history=tuple(history),
        weights=w,
        source=Q1,
        target=Q2,
    )


def register_fixed(Q1: SrvfTree, Q2: SrvfTree, w=MetricWeights(), max_iter=10, rel_tol=1e-6,
                   refine_warps=True):
    """Align ``Q2`` to ``Q1`` by rotation and branch warps only, nodes paired in place.

    Both trees must share one hierarchy; child order is left untouched, so
    the output keeps ``Q2``'s flat-vector layout. Returns
    ``(aligned, rotation, distance)``.
    """
    _check_same_topology(Q1, Q2)
    pairs = [(u, v, d) for (u, d), v in zip(iter_with_depth(Q1.root), iter_nodes(Q2.root))]
    live = [(u, v, w.main * w.subtree ** d) for u, v, d in pairs if not (u.is_null or v.is_null)]
    gammas = [None] * len(live)

    def rotation_for(gs):
        return optimal_rotation(
            [(u.q, v.q if g is None else apply_warp(v.q, g)) for (u, v, _), g in zip(live, gs)],
            [c for _, _, c in live]) if live else np.eye(3)

    def build(rotation, gs):
        warp_of = {id(v): g for (_, v, _), g in zip(live, gs)}

        def walk(node):
            q = rotate(node.q, rotation)
            g = warp_of.get(id(node))
            if g is not None:
                q = apply_warp(q, g)
            return replace(node, q=q, children=tuple(walk(c) for c in node.children))

        out = replace(Q2, root=walk(Q2.root))
        return out, tree_distance_fixed(Q1, out, w)

    rotation = np.eye(3)
    best = build(rotation, gammas)
    candidate = rotation_for(gammas)
    trial = build(candidate, gammas)
    if trial[1] < best[1]:
        rotation, best = candidate, trial
    for _ in range(max_iter):
        new_g = [optimal_branch_warp(u.q, rotate(v.q, rotation), refine_warps, g)[0]
                 for (u, v, _), g in zip(live, gammas)]
        new_r = rotation_for(new_g)
        trial = build(new_r, new_g)
        if not trial[1] < best[1]:
            break
        improvement = best[1] - trial[1]
        rotation, gammas, previous, best = new_r, new_g, best, trial
        if improvement <= rel_tol * previous[1]:
            break
    return best[0], rotation, best[1]


def register_sequence(frames, w=MetricWeights(), n=DEFAULT_SAMPLES, unit_scale=False,
                      details=False, **opts):
    """Chain-register a sequence and bring every frame to one union hierarchy.

    Frame ``t + 1`` is registered onto (already registered) frame ``t``;
    padding found at each step is pushed back to all earlier frames. Accepts
    :class:`TreeShape` frames (normalized and converted with ``n`` samples) or
    :class:`SrvfTree` frames. With ``details=True`` the pairwise results are
    returned as well.
    """
    frames = list(frames)
    if len(frames) < 2:
        raise ValidationError("a sequence needs at least 2 frames")
    srvfs = [f if isinstance(f, SrvfTree) else to_srvft(normalize(f, unit_scale), n) for f in frames]
    chain = [srvfs[0]]
    results = []
    for t in range(1, len(srvfs)):
        try:
            res = register_pair(chain[-1], srvfs[t], w, **opts)
        except ValidationError as exc:
            raise ValidationError(f"frames {t - 1} -> {t}: {exc}") from exc
        previous = chain[-1]
        chain = [apply_padding(f, previous, srvfs[t], res.matching, 0) for f in chain[:-1]]
        chain += [res.source_padded, res.registered_target]
        results.append(res)
    return (chain, results) if details else chain


# ---------------------------------------------------------------- geodesics


def interpolate_srvft(Q1: SrvfTree, Q2: SrvfTree, t):
    """Point ``(1 - t) Q1 + t Q2`` on the straight line between two SRVF trees."""
    _check_same_topology(Q1, Q2)
    v = (1.0 - t) * vectorize(Q1) + t * vectorize(Q2)
    return devectorize(v, Q1 if t < 0.5 else Q2)


def geodesic_3d(Q1: SrvfTree, Q2_registered: SrvfTree, steps=5, srvf=False):
    """Frames along the geodesic between a source and its registered target.

    Returns ``steps`` trees at ``t = 0, 1/(steps-1), ..., 1``, decoded to 3D
    unless ``srvf=True``. The end frames are exact copies of the inputs.
    """
    _check_same_topology(Q1, Q2_registered)
    if steps < 2:
        raise ValidationError("a geodesic needs at least 2 steps")
    out = []
    for k in range(steps):
        if k == 0:
            Q = Q1
        elif k == steps - 1:
            Q = Q2_registered
        else:
            Q = interpolate_srvft(Q1, Q2_registered, k / (steps - 1))
        out.append(Q if srvf else from_srvft(Q))
    return out


# ---------------------------------------------------------------- evaluation


def _branch_points(tree: TreeShape, n):
    pts = {}
    for node in tree.nodes():
        if node.is_null or node.label is None:
            continue
        pts[node.label] = resample_arclength(node.curve, n)
    return pts


def cycle_consistency_error(T1: TreeShape, T2: TreeShape, reg_12: RegistrationResult,
                            reg_21: RegistrationResult, eps, n=None):
    """Percentage of points of ``T1`` that do not return within ``eps``.

    Every branch sample ``x`` of ``T1`` is carried to ``T2`` by the matched
    branch and warp of ``reg_12`` and back by ``reg_21``, giving ``x'``.
    Points whose branch is matched to a null branch at either step count as
    failures. ``eps`` may be a scalar or a sequence (one percentage each).
    """
    n = reg_12.source.n_samples if n is None else n
    grid = np.linspace(0.0, 1.0, n)
    forward = {a: (b, g) for a, b, g in reg_12.correspondences()}
    backward = {a: (b, g) for a, b, g in reg_21.correspondences()}
    pts1 = _branch_points(T1, n)
    gaps = []
    for label, x in pts1.items():
        if label not in forward or forward[label][0] not in backward:
            gaps.append(np.full(n, np.inf))
            continue
        label2, g12 = forward[label]
        back_label, g21 = backward[label2]
        if back_label not in pts1:
            gaps.append(np.full(n, np.inf))
            continue
        u = grid if g12 is None else np.interp(grid, grid, g12)
        t_back = u if g21 is None else np.interp(u, grid, g21)
        curve = pts1[back_label]
        x_back = np.array([point_at(curve, t) for t in t_back])
        gaps.append(np.linalg.norm(x - x_back, axis=1))
    gaps = np.concatenate(gaps) if gaps else np.zeros(0)
    scalar = np.ndim(eps) == 0
    values = [100.0 * float(np.mean(gaps > e)) if gaps.size else 0.0 for e in np.atleast_1d(eps)]
    return values[0] if scalar else values
