"""Seeded synthetic trees, growth sequences and time warps."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .curves import curve_length
from .errors import ValidationError
from .tree import TreeShape, build_tree, point_at

__all__ = [
    "TreeSpec",
    "GrowthSpec",
    "SyntheticSequence",
    "synth_tree",
    "synth_growth",
    "synth_time_warp",
    "truncate_curve",
]


@dataclass(frozen=True)
class TreeSpec:
    """Shape of a random tree.

    ``depth`` counts branch layers (1 is a lone main branch); each branch
    above the last layer gets a uniform number of children from ``children``;
    lengths are uniform in ``length`` (the main branch gets twice that);
    ``curvature`` is the sideways bend relative to branch length.
    """

    depth: int = 3
    children: tuple = (1, 3)
    length: tuple = (1.0, 3.0)
    curvature: float = 0.2
    points: int = 20

    def __post_init__(self):
        lo, hi = self.children
        if self.depth < 1 or lo < 0 or hi < lo:
            raise ValidationError(f"invalid tree spec {self}")
        if not 0 < self.length[0] <= self.length[1] or self.points < 2 or self.curvature < 0:
            raise ValidationError(f"invalid tree spec {self}")


@dataclass(frozen=True)
class GrowthSpec:
    """How a tree appears over time.

    With ``rate`` 0 every frame is the full tree; with ``rate`` 1 the first
    frame holds only the youngest part. Branches are born at uniform times in
    ``[0, max_birth]`` (never before their parent) and reach full length
    ``1 / ramp`` time units after birth.
    """

    rate: float = 1.0
    max_birth: float = 0.6
    ramp: float = 2.5
    start_fraction: float = 0.2


@dataclass(frozen=True, eq=False)
class SyntheticSequence:
    frames: list
    times: np.ndarray
    # correspondence[t] maps branch ids of frame t to branch ids of frame t+1
    correspondence: list = field(default_factory=list)

    def __iter__(self):
        return iter((self.frames, self.times))


def _perpendicular(d, rng):
    v = rng.normal(size=3)
    v -= v.dot(d) * d
    n = np.linalg.norm(v)
    return v / n if n > 1e-12 else _perpendicular(d, rng)


def _branch(origin, direction, length, curvature, n, rng):
    t = np.linspace(0.0, 1.0, n)[:, None]
    side = _perpendicular(direction, rng)
    bend = curvature * rng.uniform(0.5, 1.0)
    return origin + length * (t * direction + bend * np.sin(np.pi * t) * side)


def _tilt(axis, rng, lo, hi):
    angle = rng.uniform(lo, hi)
    side = _perpendicular(axis, rng)
    d = np.cos(angle) * axis + np.sin(angle) * side
    return d / np.linalg.norm(d)


def synth_tree(seed, spec: TreeSpec = TreeSpec(), name=None) -> TreeShape:
    """Random tree, identical for identical ``seed`` and ``spec``."""
    rng = np.random.default_rng(seed)
    records = []
    up = np.array([0.0, 0.0, 1.0])
    root_dir = _tilt(up, rng, 0.0, 0.2)
    trunk = _branch(np.zeros(3), root_dir, 2 * rng.uniform(*spec.length), spec.curvature,
                    spec.points, rng)
    records.append({"id": "b0", "parent": None, "attach_s": None, "points": trunk})
    frontier = [("b0", trunk, 1)]
    counter = 1
    while frontier:
        pid, pcurve, layer = frontier.pop(0)
        if layer >= spec.depth:
            continue
        k = int(rng.integers(spec.children[0], spec.children[1] + 1))
        for s in np.sort(rng.uniform(0.1, 0.9, size=k)):
            origin = point_at(pcurve, s)
            idx = min(int(s * (len(pcurve) - 1)), len(pcurve) - 2)
            axis = pcurve[idx + 1] - pcurve[idx]
            axis /= np.linalg.norm(axis)
            d = _tilt(axis, rng, 0.5, 1.3)
            curve = _branch(origin, d, rng.uniform(*spec.length), spec.curvature, spec.points, rng)
            bid = f"b{counter}"
            counter += 1
            records.append({"id": bid, "parent": pid, "attach_s": float(s), "points": curve})
            frontier.append((bid, curve, layer + 1))
    return build_tree(records, name=name or f"synth-{seed}", units="mm")


def truncate_curve(points, fraction):
    """Initial part of a polyline holding ``fraction`` of its arc length."""
    points = np.asarray(points, dtype=float)
    if fraction >= 1.0:
        return points.copy()
    seg = np.linalg.norm(np.diff(points, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    target = fraction * cum[-1]
    k = int(np.searchsorted(cum, target, side="right"))
    k = min(max(k, 1), len(points) - 1)
    a = (target - cum[k - 1]) / seg[k - 1] if seg[k - 1] > 0 else 0.0
    end = points[k - 1] + a * (points[k] - points[k - 1])
    out = np.vstack([points[:k], end[None, :]])
    if len(out) < 2 or curve_length(out) == 0.0:
        out = np.vstack([points[0], end])
    return out


def synth_growth(seed, base: TreeSpec = TreeSpec(), frames=5, growth: GrowthSpec = GrowthSpec(),
                 times=None) -> SyntheticSequence:
    """Growth sequence ending in ``synth_tree(seed, base)``.

    Frames are taken at ``times`` (default ``linspace(0, 1, frames)``) of the
    growth clock; pass warped times to get the same plant captured at another
    rate. Branches only elongate and appear, so the hierarchy of frame ``t`` is
    contained in frame ``t + 1`` and total length never decreases. Branch ids
    are shared across frames, which is the ground-truth correspondence.
    """
    if times is None:
        if frames < 2:
            raise ValidationError("a growth sequence needs at least 2 frames")
        times = np.linspace(0.0, 1.0, frames)
    times = np.asarray(times, dtype=float)
    if times.size < 2 or np.any(np.diff(times) < 0):
        raise ValidationError("growth times must be nondecreasing with at least 2 entries")
    full = synth_tree(seed, base)
    rng = np.random.default_rng([seed, 1])
    birth = {full.root.label: 0.0}

    # children are never born before their parent
    def assign(node, t0):
        for child in node.children:
            birth[child.label] = max(t0, rng.uniform(0.0, growth.max_birth))
            assign(child, birth[child.label])

    assign(full.root, 0.0)

    out = []
    for f, tau in enumerate(times):
        clock = 1.0 - growth.rate * (1.0 - tau)
        records = []

        def grow(node, parent_id, parent_fraction):
            b = birth[node.label]
            if b > clock:
                return
            if parent_id is not None and node.attach_s > parent_fraction:
                return
            frac = min(1.0, growth.start_fraction + growth.ramp * (clock - b))
            s = None if parent_id is None else min(1.0, node.attach_s / parent_fraction)
            records.append({"id": node.label, "parent": parent_id, "attach_s": s,
                            "points": truncate_curve(node.curve, frac)})
            for child in node.children:
                grow(child, node.label, frac)

        grow(full.root, None, 1.0)
        out.append(build_tree(records, name=f"{full.name}-t{f}", time=float(tau), units=full.units))
    corr = []
    for a, b in zip(out[:-1], out[1:]):
        ids_b = {n.label for n in b.nodes()}
        corr.append({n.label: n.label for n in a.nodes() if n.label in ids_b})
    return SyntheticSequence(out, times, corr)


def synth_time_warp(seed, strength, m=100, modes=3):
    """Random smooth warp of [0, 1] sampled at ``m`` points.

    ``xi(t) = t + strength * sum_k a_k sin(pi k t) / (pi k)`` with
    ``sum |a_k| = 1``, so ``xi' >= 1 - strength > 0``.
    """
    if not 0.0 <= strength < 1.0:
        raise ValidationError(f"warp strength must lie in [0, 1), got {strength}")
    t = np.linspace(0.0, 1.0, m)
    if strength == 0.0:
        return t
    rng = np.random.default_rng(seed)
    k = np.arange(1, modes + 1)
    a = rng.normal(size=modes) / k
    a /= np.abs(a).sum()
    xi = t + strength * (np.sin(np.pi * np.outer(t, k)) / (np.pi * k)) @ a
    xi[0], xi[-1] = 0.0, 1.0
    return xi
