"""Sampled curves, square-root velocity functions and single-curve alignment.

Curves and SRVFs are plain ``(N, d)`` float arrays sampled on the uniform
parameter grid ``s_j = j / (N - 1)``. Warps (diffeomorphisms of [0, 1]) are
``(M,)`` arrays of their values on the same kind of grid, and rotations are
``(3, 3)`` arrays. Everything here works for any ambient dimension ``d``, so
the same code serves branch curves in R^3 and trajectories in PCA space.
"""
import math

import numpy as np
from numba import njit
from scipy.integrate import cumulative_trapezoid
from scipy.optimize import brentq

__all__ = [
    "STENCIL",
    "curve_length",
    "is_null_curve",
    "resample_arclength",
    "srvf",
    "inverse_srvf",
    "l2_norm",
    "l2_distance",
    "squared_l2",
    "identity_warp",
    "check_warp",
    "apply_warp",
    "warp_cost",
    "optimal_branch_warp",
    "refine_warp",
    "optimal_rotation",
    "rotate",
]

# DP step stencil in (t-steps, gamma-steps), listed in tie-break priority:
# closest to slope 1 first (|log slope|), then the lexicographically smallest
# predecessor (larger t-step first).
STENCIL = ((1, 1), (3, 2), (2, 3), (2, 1), (1, 2), (3, 1), (1, 3))

_STEP_A = np.array([a for a, _ in STENCIL], dtype=np.int64)
_STEP_B = np.array([b for _, b in STENCIL], dtype=np.int64)


def curve_length(points):
    points = np.asarray(points, dtype=float)
    if len(points) < 2:
        return 0.0
    return float(np.linalg.norm(np.diff(points, axis=0), axis=1).sum())


def is_null_curve(points):
    """True if every sample coincides with the first one."""
    points = np.asarray(points, dtype=float)
    return bool(np.all(points == points[0]))


@njit(cache=True)
def _compass_walk(poly, chord, n):
    """Place ``n`` points along ``poly`` with equal Euclidean steps ``chord``.

    The last polyline segment is extended as a ray so the walk always
    completes. Returns the points and the arc-length position of the final one.
    """
    dim = poly.shape[1]
    nseg = poly.shape[0] - 1
    out = np.empty((n, dim))
    out[0] = poly[0]
    cur = poly[0].copy()
    seg = 0
    u = 0.0
    arc_before = 0.0
    for k in range(1, n):
        while True:
            dd = 0.0
            ed = 0.0
            ee = 0.0
            for c in range(dim):
                d = poly[seg + 1, c] - poly[seg, c]
                e = poly[seg, c] - cur[c]
                dd += d * d
                ed += e * d
                ee += e * e
            if dd == 0.0:
                if seg < nseg - 1:
                    seg += 1
                    u = 0.0
                    continue
                # degenerate final segment: nothing to extend along
                for c in range(dim):
                    cur[c] = poly[seg + 1, c]
                u = 1.0
                break
            disc = ed * ed - dd * (ee - chord * chord)
            if disc < 0.0:
                disc = 0.0
            root = (-ed + math.sqrt(disc)) / dd
            if root < u:
                root = u
            if root <= 1.0 or seg == nseg - 1:
                u = root
                for c in range(dim):
                    cur[c] = poly[seg, c] + u * (poly[seg + 1, c] - poly[seg, c])
                break
            arc_before += math.sqrt(dd)
            seg += 1
            u = 0.0
        out[k] = cur
    seglen = 0.0
    for c in range(dim):
        d = poly[seg + 1, c] - poly[seg, c]
        seglen += d * d
    return out, arc_before + u * math.sqrt(seglen)


def resample_arclength(points, n):
    """Resample a polyline to ``n`` points with equal chord lengths.

    Endpoints are kept exactly. A zero-length curve comes back as ``n``
    copies of its single point (a null curve). When the sampling is too coarse
    for the curve's folds to admit an equal-chord walk ending at the last
    point, the samples are spaced evenly in arc length along the polyline.
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or len(points) < 2:
        raise ValueError("a curve needs at least 2 points")
    if n < 2:
        raise ValueError(f"need n >= 2 samples, got {n}")
    total = curve_length(points)
    if total == 0.0:
        return np.repeat(points[:1], n, axis=0)
    # drop repeated vertices so every segment has a direction
    keep = np.ones(len(points), dtype=bool)
    keep[1:] = np.linalg.norm(np.diff(points, axis=0), axis=1) > 0
    poly = np.ascontiguousarray(points[keep])
    if len(poly) == 2:
        t = np.linspace(0.0, 1.0, n)[:, None]
        out = poly[0] + t * (poly[1] - poly[0])
        out[-1] = poly[1]
        return out

    def overshoot(chord):
        return _compass_walk(poly, chord, n)[1] - total

    hi = total / (n - 1)
    lo = hi * 1e-3
    if overshoot(lo) >= 0.0:  # pathological folding; fall back to linear
        return _linear_resample(poly, n)
    # On curves that fold back the walk can jump between strands as the chord
    # grows, so a bracketed root must be checked; scan for a genuine one if not.
    tol = 1e-9 * total
    f_hi = overshoot(hi)
    if abs(f_hi) <= tol:  # polyline already straight between the samples
        chord = hi
    elif f_hi < 0.0:
        return _linear_resample(poly, n)
    else:
        chord = brentq(overshoot, lo, hi, xtol=hi * 1e-15, rtol=1e-15, maxiter=200)
    if abs(overshoot(chord)) > tol:
        chord = None
        grid = np.linspace(lo, hi, 257)
        vals = [overshoot(c) for c in grid]
        for a, b, fa, fb in zip(grid[:-1], grid[1:], vals[:-1], vals[1:]):
            if fa < 0.0 <= fb:
                c = brentq(overshoot, a, b, xtol=hi * 1e-15, rtol=1e-15, maxiter=200)
                if abs(overshoot(c)) <= tol:
                    chord = c
                    break
        if chord is None:
            return _linear_resample(poly, n)
    out = _compass_walk(poly, chord, n)[0]
    out[-1] = poly[-1]
    return out


def _linear_resample(poly, n):
    cum = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(poly, axis=0), axis=1))])
    target = np.linspace(0.0, cum[-1], n)
    out = np.column_stack([np.interp(target, cum, poly[:, c]) for c in range(poly.shape[1])])
    out[-1] = poly[-1]
    return out


def srvf(points):
    """SRVF of a curve sampled on the uniform grid over [0, 1].

    Derivatives use central differences (one-sided at the ends). Samples whose
    speed falls below ``1e-12 * length`` map to zero.
    """
    points = np.asarray(points, dtype=float)
    n = len(points)
    if n < 2:
        raise ValueError("a curve needs at least 2 points")
    total = curve_length(points)
    q = np.zeros_like(points)
    if total == 0.0:
        return q
    h = 1.0 / (n - 1)
    vel = np.gradient(points, h, axis=0)
    speed = np.linalg.norm(vel, axis=1)
    ok = speed >= 1e-12 * total
    q[ok] = vel[ok] / np.sqrt(speed[ok])[:, None]
    return q


def inverse_srvf(q, origin=None):
    """Integrate ``q |q|`` back to a curve starting at ``origin``."""
    q = np.asarray(q, dtype=float)
    n, dim = q.shape
    if origin is None:
        origin = np.zeros(dim)
    vel = q * np.linalg.norm(q, axis=1)[:, None]
    h = 1.0 / (n - 1)
    return np.asarray(origin, dtype=float) + cumulative_trapezoid(vel, dx=h, axis=0, initial=0.0)


def squared_l2(q1, q2=None):
    """Trapezoidal integral of ``|q1 - q2|^2`` over [0, 1]."""
    q1 = np.asarray(q1, dtype=float)
    diff = q1 if q2 is None else q1 - _same_grid(q1, q2)
    h = 1.0 / (len(q1) - 1)
    return float(np.trapezoid(np.einsum("ij,ij->i", diff, diff), dx=h))


def l2_norm(q):
    return math.sqrt(squared_l2(q))


def l2_distance(q1, q2):
    return math.sqrt(squared_l2(q1, q2))


def _same_grid(q1, q2):
    q2 = np.asarray(q2, dtype=float)
    if q2.shape != np.shape(q1):
        raise ValueError(
            f"sample mismatch {np.shape(q1)} vs {q2.shape}; resample both to a common grid first"
        )
    return q2


def identity_warp(m):
    return np.linspace(0.0, 1.0, m)


def check_warp(gamma, tol=1e-9):
    gamma = np.asarray(gamma, dtype=float)
    if gamma.ndim != 1 or len(gamma) < 2 or not np.all(np.isfinite(gamma)):
        raise ValueError("a warp is a finite 1-D array with at least 2 samples")
    if abs(gamma[0]) > tol or abs(gamma[-1] - 1.0) > tol:
        raise ValueError("a warp must satisfy gamma(0) = 0 and gamma(1) = 1")
    if np.any(np.diff(gamma) < -tol):
        raise ValueError("warp is not monotone")
    return gamma


def _interp_rows(values, gamma):
    """Linearly interpolate sampled rows of ``values`` at parameters ``gamma``."""
    m = len(values)
    pos = np.clip(gamma, 0.0, 1.0) * (m - 1)
    i0 = np.minimum(np.floor(pos).astype(int), m - 2)
    frac = (pos - i0)[:, None]
    return values[i0] * (1.0 - frac) + values[i0 + 1] * frac


def apply_warp(q, gamma):
    """Group action ``(q o gamma) sqrt(gamma')``.

    ``gamma'`` uses central differences (one-sided at the ends), floored at 0.
    A warp sampled on a different grid is first resampled onto ``q``'s grid.
    A warp within a few ulps of the identity leaves ``q`` unchanged.
    """
    q = np.asarray(q, dtype=float)
    gamma = check_warp(gamma)
    m = len(q)
    if len(gamma) != m:
        gamma = np.interp(identity_warp(m), identity_warp(len(gamma)), gamma)
    if np.abs(gamma - identity_warp(m)).max() <= 4 * np.finfo(float).eps:
        return q.copy()
    slope = np.maximum(np.gradient(gamma, 1.0 / (m - 1)), 0.0)
    return _interp_rows(q, gamma) * np.sqrt(slope)[:, None]


def warp_cost(q1, q2, gamma):
    """``||q1 - (q2, gamma)||^2``, the objective minimized by the DP."""
    return squared_l2(q1, apply_warp(q2, gamma))


@njit(cache=True)
def _sample_cost(q1, q2, t, g, slope):
    m = q2.shape[0]
    i0 = int(math.floor(g))
    if i0 > m - 2:
        i0 = m - 2
    if i0 < 0:
        i0 = 0
    f = g - i0
    root = math.sqrt(slope)
    s = 0.0
    for c in range(q1.shape[1]):
        v = q2[i0, c] * (1.0 - f) + q2[i0 + 1, c] * f
        d = q1[t, c] - root * v
        s += d * d
    return s


@njit(cache=True)
def _interior_cost(q1, q2, k, l, a, b, use_factor):
    slope = b / a if use_factor else 1.0
    s = 0.0
    for r in range(1, a):
        s += _sample_cost(q1, q2, k + r, l + b * r / a, slope)
    return s


@njit(cache=True)
def _dp_core(q1, q2, step_a, step_b, use_factor):
    # State (i, j, s): best partial path reaching lattice node (i, j) through
    # step s. The sample at the node itself is charged on leaving it, because
    # its central-difference slope averages the incoming and outgoing steps.
    m = q1.shape[0]
    ns = step_a.shape[0]
    h = 1.0 / (m - 1)
    inf = np.inf
    cost = np.full((m, m, ns), inf)
    back = np.full((m, m, ns), -1, dtype=np.int64)
    slopes = step_b / step_a if use_factor else np.ones(ns)
    for s in range(ns):
        a = step_a[s]
        b = step_b[s]
        if a < m and b < m:
            c = 0.5 * _sample_cost(q1, q2, 0, 0.0, slopes[s])
            c += _interior_cost(q1, q2, 0, 0, a, b, use_factor)
            cost[a, b, s] = h * c
    interior = np.empty(ns)
    for k in range(1, m):
        for l in range(1, m):
            live = False
            for sp in range(ns):
                if cost[k, l, sp] < inf:
                    live = True
                    break
            if not live:
                continue
            # |q1_k - sqrt(mu) q2_l|^2 expanded so every slope average is O(1)
            aa = 0.0
            ab = 0.0
            bb = 0.0
            for c in range(q1.shape[1]):
                aa += q1[k, c] * q1[k, c]
                ab += q1[k, c] * q2[l, c]
                bb += q2[l, c] * q2[l, c]
            for s in range(ns):
                if k + step_a[s] < m and l + step_b[s] < m:
                    interior[s] = _interior_cost(q1, q2, k, l, step_a[s], step_b[s], use_factor)
            for sp in range(ns):
                base = cost[k, l, sp]
                if base == inf:
                    continue
                for s in range(ns):
                    i = k + step_a[s]
                    j = l + step_b[s]
                    if i >= m or j >= m:
                        continue
                    mu = 0.5 * (slopes[sp] + slopes[s])
                    vertex = aa - 2.0 * math.sqrt(mu) * ab + mu * bb
                    c = base + h * (vertex + interior[s])
                    if c < cost[i, j, s]:
                        cost[i, j, s] = c
                        back[i, j, s] = sp
    best = inf
    best_s = -1
    for s in range(ns):
        if cost[m - 1, m - 1, s] == inf:
            continue
        c = cost[m - 1, m - 1, s] + h * 0.5 * _sample_cost(q1, q2, m - 1, float(m - 1), slopes[s])
        if c < best:
            best = c
            best_s = s
    # backtrack lattice vertices
    ti = np.empty(m, dtype=np.int64)
    gi = np.empty(m, dtype=np.int64)
    count = 0
    i = m - 1
    j = m - 1
    s = best_s
    while s >= 0:
        ti[count] = i
        gi[count] = j
        count += 1
        sp = back[i, j, s]
        i -= step_a[s]
        j -= step_b[s]
        s = sp
    ti[count] = 0
    gi[count] = 0
    count += 1
    return ti[:count][::-1].copy(), gi[:count][::-1].copy(), best


def lattice_warp(t_vertices, g_vertices, m):
    """Piecewise-linear warp through lattice vertices, sampled on ``m`` points."""
    grid = np.arange(m, dtype=float)
    return np.interp(grid, t_vertices, g_vertices) / (m - 1)


def optimal_branch_warp(q1, q2, refine=False, init=None):
    """Warp ``gamma`` minimizing ``||q1 - (q2, gamma)||^2`` over lattice paths.

    Returns the warp sampled on the common grid and the squared distance it
    achieves. The search is exact over piecewise-linear paths built from
    :data:`STENCIL` steps, so the result never exceeds the unwarped distance.
    With ``refine=True`` the better of the lattice optimum and ``init`` is
    polished by :func:`refine_warp`.
    """
    q1 = np.ascontiguousarray(q1, dtype=float)
    q2 = np.ascontiguousarray(_same_grid(q1, q2))
    m = len(q1)
    if m < 2:
        raise ValueError("need at least 2 samples")
    ti, gi, cost = _dp_core(q1, q2, _STEP_A, _STEP_B, True)
    gamma, cost = lattice_warp(ti, gi, m), float(cost)
    if not refine:
        return gamma, cost
    if init is not None:
        alt = warp_cost(q1, q2, init)
        if alt < cost:
            gamma, cost = check_warp(init), alt
    return refine_warp(q1, q2, gamma)


def lattice_search_plain(q1, q2):
    """Lattice-path minimizer of ``||q1 - q2 o gamma||^2`` (no square-root-slope factor)."""
    q1 = np.ascontiguousarray(q1, dtype=float)
    q2 = np.ascontiguousarray(_same_grid(q1, q2))
    ti, gi, cost = _dp_core(q1, q2, _STEP_A, _STEP_B, False)
    return lattice_warp(ti, gi, len(q1)), float(cost)


def _warp_objective(theta, q1, q2, tw, h):
    """Objective and gradient of ``||q1 - (q2, gamma)||^2`` in log-increment coordinates."""
    m = len(q1)
    e = np.exp(theta - theta.max())
    d = e / e.sum()
    gamma = np.minimum(np.concatenate([[0.0], np.cumsum(d)]), 1.0)
    gamma[-1] = 1.0
    pos = np.clip(gamma, 0.0, 1.0) * (m - 1)
    i0 = np.minimum(np.floor(pos).astype(int), m - 2)
    frac = (pos - i0)[:, None]
    dq = q2[i0 + 1] - q2[i0]
    p = q2[i0] + frac * dq
    slope = np.maximum(np.gradient(gamma, h), 0.0)
    root = np.sqrt(slope)
    r = q1 - p * root[:, None]
    value = float(tw @ np.einsum("ij,ij->i", r, r))

    g_gamma = -2.0 * tw * root * np.einsum("ij,ij->i", r, dq) * (m - 1)
    g_slope = -tw * np.einsum("ij,ij->i", r, p) / np.maximum(root, 1e-12)
    # adjoint of np.gradient: one-sided at the ends, central inside
    g_gamma[0] -= g_slope[0] / h
    g_gamma[1] += g_slope[0] / h
    g_gamma[-1] += g_slope[-1] / h
    g_gamma[-2] -= g_slope[-1] / h
    inner = g_slope[1:-1] / (2 * h)
    g_gamma[2:] += inner
    g_gamma[:-2] -= inner
    g_d = np.cumsum(g_gamma[::-1])[::-1][1:]
    return value, d * (g_d - d @ g_d)


def refine_warp(q1, q2, gamma, max_iter=200):
    """Continuous local descent on ``||q1 - (q2, gamma)||^2`` started at ``gamma``.

    Lattice warps can only take a handful of slopes, which limits how well
    the square-root-slope factor can be matched; this lifts that limit. The
    result is strictly increasing and never worse than the start.
    """
    from scipy.optimize import minimize

    q1 = np.asarray(q1, dtype=float)
    q2 = np.asarray(_same_grid(q1, q2), dtype=float)
    gamma = check_warp(gamma)
    m = len(q1)
    if len(gamma) != m:
        gamma = np.interp(identity_warp(m), identity_warp(len(gamma)), gamma)
    start_cost = warp_cost(q1, q2, gamma)
    if m < 3:
        return gamma, start_cost
    h = 1.0 / (m - 1)
    tw = np.full(m, h)
    tw[[0, -1]] *= 0.5
    inc = np.maximum(np.diff(gamma), 1e-6)
    theta0 = np.log(inc / inc.sum())
    res = minimize(_warp_objective, theta0, args=(q1, q2, tw, h), jac=True, method="L-BFGS-B",
                   options={"maxiter": max_iter})
    e = np.exp(res.x - res.x.max())
    out = np.minimum(np.concatenate([[0.0], np.cumsum(e / e.sum())]), 1.0)
    out[-1] = 1.0
    cost = warp_cost(q1, q2, out)
    if not cost < start_cost:
        return gamma, start_cost
    return out, cost


def optimal_rotation(pairs, weights=None):
    """Rotation ``O`` minimizing ``sum_i w_i ||q1_i - O q2_i||^2``.

    Solved in closed form from the SVD of the weighted cross-covariance, with
    the sign of the last singular direction flipped when needed to stay in
    SO(3). All-zero input gives the identity.
    """
    pairs = list(pairs)
    if weights is None:
        weights = np.ones(len(pairs))
    dim = np.shape(pairs[0][0])[1] if pairs else 3
    cross = np.zeros((dim, dim))
    for (q1, q2), w in zip(pairs, weights):
        if w == 0:
            continue
        q1 = np.asarray(q1, dtype=float)
        q2 = np.asarray(q2, dtype=float)
        h = 1.0 / (len(q1) - 1)
        tw = np.full(len(q1), h)
        tw[[0, -1]] *= 0.5
        cross += w * (q1 * tw[:, None]).T @ q2
    if not np.any(cross):
        return np.eye(dim)
    u, _, vt = np.linalg.svd(cross)
    fix = np.eye(dim)
    fix[-1, -1] = np.sign(np.linalg.det(u @ vt)) or 1.0
    return u @ fix @ vt


def rotate(q, rotation):
    """Apply a rotation to every sample of ``q``."""
    return np.asarray(q, dtype=float) @ np.asarray(rotation).T
