"""Structural knowledge sharing: spectral-energy subspaces and filter bounds.

Each client summarizes its propagation behavior as a spectral-energy matrix
S whose k-th column is the feature-wise mean of the k-hop term of its
filter. The orthonormal frame Q of S spans a subspace on the Stiefel
manifold; clients are compared by the chordal distance between those
subspaces and grouped by k-means on the Grassmann projection embedding
Q Q^T, which is an isometry of chordal distance up to a factor sqrt(2) and
is invariant to the basis chosen for each frame.

The filter bounds quantify how coefficient perturbations move the filter:
a Lipschitz bound on the polynomial derivative over the Laplacian spectral
range [0, 2], and a Frobenius bound on the propagated-feature change.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import tape as tp
from .cluster import kmeans
from .errors import ConfigError, ContractError, ShapeError
from .rng import stream


@dataclass(frozen=True)
class SpectralEnergy:
    """Per-client spectral summary: energy matrix S and orthonormal frame Q."""

    client_id: int
    s: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        s = np.ascontiguousarray(np.asarray(self.s, dtype=np.float64))
        q = np.ascontiguousarray(np.asarray(self.q, dtype=np.float64))
        if s.ndim != 2 or q.ndim != 2 or s.shape != q.shape:
            raise ShapeError(f"S and Q must be matching matrices, got {s.shape} and {q.shape}")
        gram = q.T @ q
        err = float(np.max(np.abs(gram - np.eye(q.shape[1]))))
        if err > 1e-8:
            raise ContractError(f"Q columns are not orthonormal (deviation {err:.3e})")
        s.setflags(write=False)
        q.setflags(write=False)
        object.__setattr__(self, "s", s)
        object.__setattr__(self, "q", q)

    @property
    def order(self) -> int:
        return self.q.shape[1] - 1


@dataclass(frozen=True)
class StructuralClusterMap:
    """Cluster assignment over clients plus per-cluster mean coefficients."""

    assignments: dict
    mean_coefficients: dict

    def cluster_of(self, client_id: int) -> int:
        return self.assignments[client_id]

    def coefficients_for(self, client_id: int) -> np.ndarray:
        return self.mean_coefficients[self.assignments[client_id]]


def chordal_distance(a: SpectralEnergy, b: SpectralEnergy) -> float:
    """Chordal distance sqrt(K+1 - ||Qa^T Qb||_F^2) between client subspaces."""
    if a.q.shape != b.q.shape:
        raise ShapeError(f"frame shapes differ: {a.q.shape} vs {b.q.shape}")
    overlap = float(np.sum(np.square(a.q.T @ b.q)))
    k_plus_1 = a.q.shape[1]
    return float(np.sqrt(max(0.0, k_plus_1 - overlap)))


def pairwise_chordal(energies: list) -> tuple[list, np.ndarray]:
    """Full symmetric chordal distance matrix over clients sorted by id."""
    ordered = sorted(energies, key=lambda e: e.client_id)
    ids = [e.client_id for e in ordered]
    m = len(ordered)
    dist = np.zeros((m, m))
    for i in range(m):
        for j in range(i + 1, m):
            d = chordal_distance(ordered[i], ordered[j])
            dist[i, j] = d
            dist[j, i] = d
    return ids, dist


def projection_embedding(e: SpectralEnergy) -> np.ndarray:
    """Flattened projection matrix Q Q^T; basis-invariant subspace embedding."""
    p = e.q @ e.q.T
    return p.ravel()


def structural_cluster(energies: list, k_struct: int, seed: int) -> dict:
    """Group clients by subspace proximity; returns {client_id: cluster}.

    Clients are canonicalized by ascending id before clustering, so the
    result is invariant to the order energies are supplied in.
    """
    if not energies:
        raise ContractError("structural_cluster needs at least one client")
    if k_struct < 1:
        raise ConfigError(f"k_struct must be >= 1, got {k_struct}")
    ordered = sorted(energies, key=lambda e: e.client_id)
    ids = [e.client_id for e in ordered]
    if len(set(ids)) != len(ids):
        raise ContractError("duplicate client ids in structural_cluster")
    shape = ordered[0].q.shape
    for e in ordered:
        if e.q.shape != shape:
            raise ShapeError(f"client {e.client_id} frame shape {e.q.shape} != {shape}")
    points = np.stack([projection_embedding(e) for e in ordered])
    labels = kmeans(points, k_struct, stream(seed, "kmeans-struct"))
    return {cid: int(lab) for cid, lab in zip(ids, labels)}


def cluster_coeff_mean(coefficients: list) -> np.ndarray:
    """Elementwise mean of member coefficient vectors."""
    if not coefficients:
        raise ContractError("cluster_coeff_mean needs at least one member")
    arrs = [np.asarray(c, dtype=np.float64).reshape(-1) for c in coefficients]
    length = arrs[0].size
    for a in arrs:
        if a.size != length:
            raise ShapeError(f"coefficient length mismatch: {a.size} vs {length}")
    return np.mean(np.stack(arrs), axis=0)


def build_structural_map(energies: list, coefficients: dict, k_struct: int,
                         seed: int) -> StructuralClusterMap:
    """Cluster clients and average coefficients within each cluster."""
    assignments = structural_cluster(energies, k_struct, seed)
    mean_coeffs = {}
    for cluster in sorted(set(assignments.values())):
        members = [cid for cid in sorted(assignments) if assignments[cid] == cluster]
        mean_coeffs[cluster] = cluster_coeff_mean([coefficients[cid] for cid in members])
    return StructuralClusterMap(assignments, mean_coeffs)


def coefficient_alignment_loss(w, w_bar) -> float:
    """L1 pull of local coefficients toward the cluster mean."""
    wv = np.asarray(w, dtype=np.float64).reshape(-1)
    bv = np.asarray(w_bar, dtype=np.float64).reshape(-1)
    if wv.size != bv.size:
        raise ShapeError(f"coefficient length mismatch: {wv.size} vs {bv.size}")
    return float(np.sum(np.abs(wv - bv)))


def coefficient_regularizer(w, lam1: float, lam2: float) -> float:
    """Elastic-net style penalty lam1*||w||_1 + lam2/2*||w||_2^2."""
    if lam1 < 0 or lam2 < 0:
        raise ConfigError(f"regularizer weights must be >= 0, got {lam1}, {lam2}")
    wv = np.asarray(w, dtype=np.float64).reshape(-1)
    return float(lam1 * np.sum(np.abs(wv)) + 0.5 * lam2 * np.sum(np.square(wv)))


def alignment_loss_var(w_var: tp.Var, w_bar: np.ndarray) -> tp.Var:
    """Tape node for the L1 alignment loss; subgradient 0 at exact matches."""
    target = np.asarray(w_bar, dtype=np.float64).reshape(w_var.value.shape)
    return tp.sum_all(tp.absval(tp.add(w_var, -target)))


def regularizer_var(w_var: tp.Var, lam1: float, lam2: float) -> tp.Var:
    """Tape node for the coefficient regularizer."""
    if lam1 < 0 or lam2 < 0:
        raise ConfigError(f"regularizer weights must be >= 0, got {lam1}, {lam2}")
    l1 = tp.scale(tp.sum_all(tp.absval(w_var)), lam1)
    l2 = tp.scale(tp.sum_all(tp.square(w_var)), 0.5 * lam2)
    return tp.add(l1, l2)


def filter_lipschitz_bound(w) -> float:
    """Upper bound sum_k k*|w_k|*2^(k-1) on |h'(lambda)| over [0, 2]."""
    wv = np.asarray(w, dtype=np.float64).reshape(-1)
    k = np.arange(wv.size, dtype=np.float64)
    powers = np.concatenate([[0.0], 2.0 ** (k[1:] - 1.0)]) if wv.size > 1 else np.zeros(1)
    return float(np.sum(k * np.abs(wv) * powers))


def filter_derivative_sup(w, grid_points: int = 2001) -> float:
    """Max |h'(lambda)| on a uniform grid over the spectral range [0, 2]."""
    wv = np.asarray(w, dtype=np.float64).reshape(-1)
    if wv.size <= 1:
        return 0.0
    lam = np.linspace(0.0, 2.0, grid_points)
    k = np.arange(1, wv.size, dtype=np.float64)
    deriv = (k * wv[1:]) @ np.power(lam[None, :], (k - 1)[:, None])
    return float(np.max(np.abs(deriv)))


def coeff_perturb_bound(w_a, w_b, powers: list) -> tuple[float, float]:
    """(actual, bound) for the propagated-feature shift under w_a -> w_b.

    actual is ||sum_k (w_a-w_b)_k H^k||_F; bound is sum_k |dw_k| * ||H^k||_F.
    """
    wa = np.asarray(w_a, dtype=np.float64).reshape(-1)
    wb = np.asarray(w_b, dtype=np.float64).reshape(-1)
    if wa.size != wb.size or wa.size != len(powers):
        raise ShapeError(f"need matching coefficients and {len(powers)} powers,"
                         f" got {wa.size} and {wb.size}")
    delta = wa - wb
    shift = np.zeros_like(powers[0])
    bound = 0.0
    for k, h in enumerate(powers):
        shift = shift + delta[k] * h
        bound += abs(float(delta[k])) * float(np.linalg.norm(h))
    actual = float(np.linalg.norm(shift))
    return actual, bound
