"""4D atlases: mean growth trajectory, modes of variation and random 4D trees."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import truncnorm

from .curves import apply_warp, identity_warp, inverse_srvf, squared_l2
from .errors import NumericalError, ValidationError
from .subspace import PcaBasis, decode_vectors, eigen_from_samples
from .temporal import TrajectorySrvf, optimal_time_warp

__all__ = [
    "Atlas4D",
    "Karcher4DResult",
    "Generated4D",
    "karcher_mean_4d",
    "fit_modes_4d",
    "mode_srvf",
    "mode_trajectory",
    "decode_4d",
    "generate_4d",
    "basis_hash",
]


@dataclass(frozen=True, eq=False)
class Karcher4DResult:
    mean: TrajectorySrvf
    warps: list
    registered: list
    objective: tuple
    iterations: int
    converged: bool

    def __iter__(self):
        return iter((self.mean, self.warps, self.registered))


def karcher_mean_4d(ws, max_iter=20, tol=1e-6, refine=True, strict=False) -> Karcher4DResult:
    """Mean trajectory SRVF under time warping.

    Starts at the first trajectory. Every round warps each original ``w_i``
    onto the current mean (the previous warp is offered as a starting point,
    so no trajectory gets farther from the mean) and averages the results.
    The objective ``sum_i min_xi ||mean - (w_i, xi)||^2`` is recorded per round
    and never increases.
    """
    ws = list(ws)
    if not ws:
        raise ValidationError("cannot average an empty collection")
    shape = ws[0].values.shape
    if any(w.values.shape != shape for w in ws):
        raise ValidationError("trajectories must share grid and dimension")
    mean = ws[0].values
    origin = np.mean([w.origin for w in ws], axis=0)
    basis = ws[0].basis
    warps = [None] * len(ws)
    history = []
    converged = False
    it = 0
    registered = []
    while it < max_iter:
        it += 1
        target = TrajectorySrvf(mean, origin, basis)
        total = 0.0
        registered = []
        for i, w in enumerate(ws):
            xi, dist = optimal_time_warp(target, w, refine=refine, init=warps[i])
            warps[i] = xi
            registered.append(apply_warp(w.values, xi))
            total += dist * dist
        history.append(total)
        new = np.mean(registered, axis=0)
        moved = np.sqrt(squared_l2(new, mean))
        mean = new
        if moved <= tol * max(np.sqrt(squared_l2(new)), 1e-300):
            converged = True
            break
    if strict and not converged:
        raise NumericalError(f"4D mean did not converge in {max_iter} iterations")
    regs = [TrajectorySrvf(v, w.origin, basis) for v, w in zip(registered, ws)]
    return Karcher4DResult(TrajectorySrvf(mean, origin, basis), warps, regs, tuple(history), it,
                           converged)


def basis_hash(basis: PcaBasis):
    """Content hash identifying a PCA basis."""
    payload = json.dumps([basis.topology_id, basis.mean.tolist(), basis.eigvecs.tolist(),
                          basis.eigvals.tolist()]).encode()
    return "sha256:" + hashlib.sha256(payload).hexdigest()


@dataclass(frozen=True, eq=False)
class Atlas4D:
    """Mean trajectory SRVF plus principal modes of the registered set.

    ``eigvecs`` has one orthonormal direction per row over the flattened
    ``(M, k)`` trajectory SRVF; ``origin`` is the mean starting coordinate
    used to integrate any trajectory SRVF back to PCA coordinates.
    """

    mean: np.ndarray
    origin: np.ndarray
    eigvecs: np.ndarray
    eigvals: np.ndarray
    variance_captured: float
    basis: PcaBasis = field(repr=False, default=None)
    warps: list = field(default_factory=list, repr=False)

    @property
    def n_modes(self):
        return len(self.eigvals)

    @property
    def grid(self):
        return self.mean.shape[0]

    def compose(self, taus):
        """``mean + sum_i tau_i sqrt(u_i) delta_i`` as a trajectory SRVF."""
        taus = np.asarray(taus, dtype=float)
        if taus.shape != (self.n_modes,):
            raise ValidationError(f"expected {self.n_modes} coefficients, got shape {taus.shape}")
        flat = self.mean.ravel() + (taus * np.sqrt(self.eigvals)) @ self.eigvecs
        return TrajectorySrvf(flat.reshape(self.mean.shape), self.origin, self.basis)

    def to_dict(self):
        return {
            "schema": "elastictree/atlas4d@1",
            "grid": int(self.mean.shape[0]),
            "k": int(self.mean.shape[1]),
            "mean": self.mean.tolist(),
            "origin": self.origin.tolist(),
            "eigvals": self.eigvals.tolist(),
            "eigvecs": self.eigvecs.tolist(),
            "variance_captured": self.variance_captured,
            "warps": [np.asarray(x).tolist() for x in self.warps],
            "basis_hash": None if self.basis is None else basis_hash(self.basis),
            "basis": None if self.basis is None else self.basis.to_dict(),
        }

    @classmethod
    def from_dict(cls, data):
        if data.get("schema") != "elastictree/atlas4d@1":
            raise ValidationError("not a 4D atlas document", pointer="/schema")
        basis = PcaBasis.from_dict(data["basis"]) if data.get("basis") else None
        if basis is not None and data.get("basis_hash") not in (None, basis_hash(basis)):
            raise ValidationError("atlas basis does not match its recorded hash", pointer="/basis_hash")
        mean = np.asarray(data["mean"], dtype=float).reshape(data["grid"], data["k"])
        eigvecs = np.asarray(data["eigvecs"], dtype=float).reshape(-1, mean.size)
        return cls(mean, np.asarray(data["origin"], dtype=float), eigvecs,
                   np.asarray(data["eigvals"], dtype=float), float(data["variance_captured"]),
                   basis, [np.asarray(x) for x in data.get("warps", [])])


def fit_modes_4d(registered, variance_target=0.99, k_max=20, warps=None) -> Atlas4D:
    """Principal modes of spatiotemporally registered trajectory SRVFs."""
    if isinstance(registered, Karcher4DResult):
        warps = registered.warps if warps is None else warps
        registered = registered.registered
    registered = list(registered)
    if len(registered) < 2:
        raise ValidationError(f"need at least 2 trajectories for modes, got {len(registered)}")
    shape = registered[0].values.shape
    if any(w.values.shape != shape for w in registered):
        raise ValidationError("trajectories must share grid and dimension")
    X = np.array([w.values.ravel() for w in registered])
    mean, vecs, vals, captured, _ = eigen_from_samples(X, variance_target, k_max)
    origin = np.mean([w.origin for w in registered], axis=0)
    return Atlas4D(mean.reshape(shape), origin, vecs, vals, captured, registered[0].basis,
                   list(warps) if warps is not None else [])


def _check_mode(atlas, i):
    if not 1 <= i <= atlas.n_modes:
        raise ValidationError(f"mode index {i} outside 1..{atlas.n_modes}")


def mode_srvf(atlas: Atlas4D, i, tau) -> TrajectorySrvf:
    """``mean + tau sqrt(u_i) delta_i`` for the 1-based mode ``i``."""
    _check_mode(atlas, i)
    taus = np.zeros(atlas.n_modes)
    taus[i - 1] = tau
    return atlas.compose(taus)


def decode_4d(w: TrajectorySrvf, basis: PcaBasis = None, units="", name=""):
    """4D tree (one shape per grid time) from a trajectory SRVF.

    Returns the frames and the number of ``attach_s`` values clipped to [0, 1].
    """
    basis = basis if basis is not None else w.basis
    if basis is None:
        raise ValidationError("no PCA basis to decode with")
    coords = inverse_srvf(w.values, w.origin)
    V = basis.mean + (coords * np.sqrt(basis.eigvals)) @ basis.eigvecs
    return decode_vectors(V, basis.template, identity_warp(len(coords)), units, name)


def mode_trajectory(atlas: Atlas4D, i, tau, units=""):
    """Decoded 4D tree along mode ``i`` (1-based) at ``tau`` standard deviations."""
    return decode_4d(mode_srvf(atlas, i, tau), atlas.basis, units, name=f"mode{i}:{tau:g}")[0]


@dataclass(frozen=True, eq=False)
class Generated4D:
    frames: list
    taus: np.ndarray
    seed: object
    clamp: float
    w: TrajectorySrvf = field(repr=False, default=None)
    clipped: int = 0

    def record(self):
        return {"seed": self.seed, "clamp": self.clamp, "tau": self.taus.tolist(),
                "clipped_attach_s": self.clipped}


def generate_4d(atlas: Atlas4D, seed=None, clamp=3.0, taus=None, decode=True) -> Generated4D:
    """Random 4D tree ``mean + sum_i tau_i sqrt(u_i) delta_i``.

    ``tau_i`` are independent standard normals truncated to ``[-clamp, clamp]``
    drawn from a generator seeded with ``seed``; pass ``taus`` to fix them.
    """
    if taus is None:
        if not clamp > 0:
            raise ValidationError(f"clamp must be positive, got {clamp}")
        rng = np.random.default_rng(seed)
        taus = truncnorm.rvs(-clamp, clamp, size=atlas.n_modes, random_state=rng) \
            if atlas.n_modes else np.zeros(0)
    taus = np.asarray(taus, dtype=float)
    w = atlas.compose(taus)
    frames, clipped = decode_4d(w, atlas.basis, name="generated") if decode else ([], 0)
    return Generated4D(frames, taus, seed, float(clamp), w, clipped)
