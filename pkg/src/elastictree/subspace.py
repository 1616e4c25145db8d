"""Mean tree shapes, linear PCA over SRVF-tree vectors, and sequence embedding."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, TopologyMismatchError, ValidationError
from .registration import MetricWeights, register_pair, tree_distance_fixed
from .tree import SrvfTree, apply_padding, devectorize, vectorize

__all__ = [
    "KarcherResult",
    "PcaBasis",
    "PcaTrajectory",
    "karcher_mean_trees",
    "eigen_from_samples",
    "fit_pca",
    "project",
    "reconstruct",
    "embed_sequence",
    "normalize_times",
    "decode_vectors",
    "DEFAULT_GRID",
]

DEFAULT_GRID = 30


@dataclass(frozen=True, eq=False)
class KarcherResult:
    mean: SrvfTree
    registered: list
    objective: tuple  # sum of squared registered distances, one entry per iteration
    iterations: int
    converged: bool

    def __iter__(self):
        return iter((self.mean, self.registered))


def karcher_mean_trees(trees, w=MetricWeights(), max_iter=20, tol=1e-6, strict=False,
                       **reg_opts) -> KarcherResult:
    """Mean shape of a tree collection by alternating registration and averaging.

    Starts from the first tree. Each round registers every input tree onto
    the current mean (padding the mean, and the trees registered before it,
    as new branches show up), then replaces the mean by the average of the
    registered flat vectors. Registration always starts from the original
    tree, since re-warping an already warped tree compounds discretization
    error; a tree keeps its previous registered pose when that is at least as
    close to the new mean, so the summed objective never increases. Stops
    when the mean moves by less than ``tol * ||mean||``; ``strict=True``
    raises :class:`NumericalError` if that does not happen within
    ``max_iter`` rounds.
    """
    trees = list(trees)
    if not trees:
        raise ValidationError("cannot average an empty collection")
    mean = trees[0]
    previous = None
    history = []
    converged = False
    it = 0
    registered = []
    while it < max_iter:
        it += 1
        registered, total = [], 0.0
        pending = list(previous) if previous is not None else None
        for i, Q in enumerate(trees):
            kept = tree_distance_fixed(mean, pending[i], w) if pending is not None else math.inf
            res = register_pair(mean, Q, w, **reg_opts)
            if kept <= res.distance:
                registered.append(pending[i])
                total += kept
                continue
            registered = [apply_padding(R, mean, Q, res.matching, 0) for R in registered]
            if pending is not None:
                pending = [apply_padding(R, mean, Q, res.matching, 0) for R in pending]
            registered.append(res.registered_target)
            mean = res.source_padded
            total += res.distance
        history.append(total)
        old = vectorize(mean)
        new = np.mean([vectorize(R) for R in registered], axis=0)
        mean = devectorize(new, mean, name="mean")
        previous = registered
        if np.linalg.norm(new - old) <= tol * max(np.linalg.norm(new), 1e-300):
            converged = True
            break
    if strict and not converged:
        raise NumericalError(f"tree mean did not converge in {max_iter} iterations")
    return KarcherResult(mean, registered, tuple(history), it, converged)


def eigen_from_samples(X, variance_target=0.99, k_max=20):
    """Leading principal directions of the rows of ``X``.

    Returns ``(mean, eigvecs, eigvals, captured, total)`` where ``eigvecs``
    holds one unit vector per row, ``eigvals`` are the sample-covariance
    eigenvalues (``m - 1`` denominator) in descending order, ``captured`` is
    the fraction of total variance they explain and ``total`` is the total
    variance. Uses the ``m x m`` Gram matrix when samples are fewer than
    dimensions.
    """
    X = np.asarray(X, dtype=float)
    m, d = X.shape
    if m < 2:
        raise ValidationError(f"need at least 2 samples for PCA, got {m}")
    if not 0.0 < variance_target <= 1.0 or k_max < 1:
        raise ValidationError("variance target must lie in (0, 1] and k_max be positive")
    mean = X.mean(axis=0)
    C = X - mean
    if m <= d:
        vals, vecs = np.linalg.eigh(C @ C.T / (m - 1))
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        keep = vals > max(vals[0], 0.0) * 1e-12
        vals, vecs = vals[keep], vecs[:, keep]
        dirs = (C.T @ vecs) / np.sqrt((m - 1) * vals)
        # one Gram-Schmidt pass removes the rounding of the lift
        dirs, r = np.linalg.qr(dirs)
        dirs *= np.sign(np.diag(r))
        dirs = dirs.T
    else:
        vals, vecs = np.linalg.eigh(C.T @ C / (m - 1))
        order = np.argsort(vals)[::-1]
        vals, vecs = vals[order], vecs[:, order]
        keep = vals > max(vals[0], 0.0) * 1e-12
        vals, dirs = vals[keep], vecs[:, keep].T
    total = float(np.sum(C * C) / (m - 1))
    if vals.size == 0:
        return mean, np.zeros((0, d)), np.zeros(0), 1.0, total
    frac = np.cumsum(vals) / total
    k = int(np.searchsorted(frac, variance_target - 1e-12) + 1)
    k = min(k, k_max, vals.size)
    # a consistent sign: largest-magnitude entry positive
    idx = np.argmax(np.abs(dirs[:k]), axis=1)
    signs = np.sign(dirs[np.arange(k), idx])
    return mean, dirs[:k] * signs[:, None], vals[:k].copy(), float(frac[k - 1]), total


@dataclass(frozen=True, eq=False)
class PcaBasis:
    """Principal directions of a registered tree collection.

    ``template`` is an SRVF tree fixing the hierarchy (and branch labels) of
    the flat vectors; ``eigvecs`` has one orthonormal direction per row.
    """

    mean: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    variance_captured: float
    template: SrvfTree = field(repr=False)
    total_variance: float = float("nan")

    @property
    def k(self):
        return len(self.eigvals)

    @property
    def topology_id(self):
        return self.template.topology_id

    @property
    def dimension(self):
        return self.mean.size

    def project_vector(self, v):
        return (np.asarray(v) - self.mean) @ self.eigvecs.T / np.sqrt(self.eigvals)

    def reconstruct_vector(self, a):
        a = np.asarray(a, dtype=float)
        return self.mean + (a * np.sqrt(self.eigvals)) @ self.eigvecs

    def to_dict(self):
        return {
            "schema": "elastictree/pca-basis@1",
            "topology_id": self.topology_id,
            "n_samples": self.template.n_samples,
            "mean": self.mean.tolist(),
            "eigvals": self.eigvals.tolist(),
            "eigvecs": self.eigvecs.tolist(),
            "variance_captured": self.variance_captured,
            "total_variance": self.total_variance,
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("schema") != "elastictree/pca-basis@1":
            raise ValidationError("not a PCA basis document", pointer="/schema")
        mean = np.asarray(data["mean"], dtype=float)
        template = devectorize(mean, data["topology_id"])
        eigvecs = np.asarray(data["eigvecs"], dtype=float).reshape(-1, mean.size)
        return cls(mean, eigvecs, np.asarray(data["eigvals"], dtype=float),
                   float(data["variance_captured"]), template,
                   float(data.get("total_variance", "nan")))


def fit_pca(registered, variance_target=0.99, k_max=20) -> PcaBasis:
    """PCA of co-registered SRVF trees sharing one hierarchy."""
    registered = list(registered)
    if len(registered) < 2:
        raise ValidationError(f"need at least 2 trees for PCA, got {len(registered)}")
    topo = registered[0].topology_id
    if any(R.topology_id != topo for R in registered):
        raise TopologyMismatchError("trees must be registered to one hierarchy before PCA")
    X = np.array([vectorize(R) for R in registered])
    mean, vecs, vals, captured, total = eigen_from_samples(X, variance_target, k_max)
    template = devectorize(mean, registered[0], name="pca-mean")
    return PcaBasis(mean, vecs, vals, captured, template, total)


def _check_basis_topology(Q, basis):
    if Q.topology_id != basis.topology_id or vectorize(Q).size != basis.dimension:
        raise TopologyMismatchError(
            "tree hierarchy differs from the basis; register and pad it to the basis mean first"
        )


def project(Q: SrvfTree, basis: PcaBasis) -> np.ndarray:
    """Coefficients ``a_i = <v - mean, e_i> / sqrt(lambda_i)``."""
    _check_basis_topology(Q, basis)
    return basis.project_vector(vectorize(Q))


def reconstruct(a, basis: PcaBasis, name="", time=None) -> SrvfTree:
    """SRVF tree ``mean + sum_i a_i sqrt(lambda_i) e_i``."""
    a = np.asarray(a, dtype=float)
    if a.shape != (basis.k,):
        raise ValidationError(f"expected {basis.k} coefficients, got shape {a.shape}")
    return devectorize(basis.reconstruct_vector(a), basis.template, name=name, time=time)


@dataclass(frozen=True, eq=False)
class PcaTrajectory:
    """A 4D tree as a path in PCA coefficient space on a uniform time grid."""

    times: np.ndarray
    coords: np.ndarray  # (M, k)
    basis: PcaBasis = field(repr=False, default=None)

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) < 2 or np.any(np.diff(t) <= 0):
            raise ValidationError("trajectory times must be strictly increasing with at least 2 entries")
        if np.shape(self.coords)[0] != len(t) or not np.all(np.isfinite(self.coords)):
            raise ValidationError("trajectory coordinates must be finite, one row per time")


def normalize_times(times):
    times = np.asarray(times, dtype=float)
    if times.ndim != 1 or len(times) < 2:
        raise ValidationError("need at least 2 frame times")
    if np.any(np.diff(times) <= 0):
        raise ValidationError("frame times must be strictly increasing")
    return (times - times[0]) / (times[-1] - times[0])


def embed_sequence(frames, times, basis: PcaBasis, m=DEFAULT_GRID) -> PcaTrajectory:
    """Project frames, rescale their times to [0, 1] and resample on ``m`` points."""
    frames = list(frames)
    if len(frames) < 2:
        raise ValidationError("a sequence needs at least 2 frames")
    if len(times) != len(frames):
        raise ValidationError("one time per frame is required")
    t = normalize_times(times)
    coords = np.array([project(F, basis) for F in frames])
    grid = np.linspace(0.0, 1.0, m)
    resampled = np.column_stack([np.interp(grid, t, coords[:, c]) for c in range(coords.shape[1])]) \
        if coords.shape[1] else np.zeros((m, 0))
    return PcaTrajectory(grid, resampled, basis)


def decode_vectors(V, template: SrvfTree, times=None, units="", name=""):
    """Tree shapes for many flat vectors sharing ``template``'s hierarchy at once.

    Equivalent to ``from_srvft(devectorize(v, template))`` per row, except that
    ``attach_s`` values that drift outside [0, 1] are clipped. Returns the
    trees and the number of clipped values.
    """
    V = np.atleast_2d(np.asarray(V, dtype=float))
    frames = V.shape[0]
    nodes = list(template.nodes())
    n = template.n_samples
    per = 3 * n + 1
    if V.shape[1] != per * len(nodes):
        raise ValidationError(f"vectors of length {V.shape[1]} do not fit the template")
    blocks = V.reshape(frames, len(nodes), per)
    q = blocks[:, :, :3 * n].reshape(frames, len(nodes), n, 3)
    raw_s = blocks[:, :, 3 * n]
    s = np.clip(raw_s, 0.0, 1.0)
    clipped = int(np.count_nonzero(s != raw_s))
    vel = q * np.linalg.norm(q, axis=3, keepdims=True)
    h = 1.0 / (n - 1)
    steps = 0.5 * h * (vel[:, :, 1:] + vel[:, :, :-1])
    curves = np.concatenate([np.zeros((frames, len(nodes), 1, 3)), np.cumsum(steps, axis=2)], axis=2)

    index = {id(node): k for k, node in enumerate(nodes)}
    parent = np.full(len(nodes), -1)
    for k, node in enumerate(nodes):
        for c in node.children:
            parent[index[id(c)]] = k
    rows = np.arange(frames)
    for k in range(1, len(nodes)):  # pre-order: parents are placed first
        p = parent[k]
        pos = s[:, k] * (n - 1)
        i0 = np.minimum(np.floor(pos).astype(int), n - 2)
        f = (pos - i0)[:, None]
        origin = curves[rows, p, i0] * (1.0 - f) + curves[rows, p, i0 + 1] * f
        curves[:, k] += origin[:, None, :]
    # zero-length branches (and everything below them) decode as null
    null = np.linalg.norm(np.diff(curves, axis=2), axis=3).sum(axis=2) == 0.0
    for k in range(1, len(nodes)):
        null[:, k] |= null[:, parent[k]]
    curves[null] = curves[null][:, :1, :]

    from .tree import BranchNode, TreeShape

    out = []
    for fr in range(frames):
        def build(node, layer):
            k = index[id(node)]
            kids = tuple(build(c, layer + 1) for c in node.children)
            return BranchNode(curves[fr, k], kids, float(s[fr, k]), layer, bool(null[fr, k]), node.label)

        t = None if times is None else float(times[fr])
        out.append(TreeShape(build(template.root, 0), name=name, time=t, units=units))
    return out, clipped
