"""Normalized spectral clustering of a correlation-derived affinity graph.

Ng, Jordan & Weiss construction: ``L = D^-1/2 A D^-1/2``, the eigenvectors of
the k largest eigenvalues as columns, rows scaled to unit length, then
k-means on the rows.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg

from .connectivity import ConnectivityMatrix, Space, expand, triu_indices
from .errors import DegenerateAffinity, DimensionMismatch, EigensolverFailure

DEGREE_EPS = 1e-10
MAX_DENSE_VOXELS = 2000


@dataclass(frozen=True)
class Parcellation:
    labels: np.ndarray
    k: int

    def __post_init__(self):
        labels = np.asarray(self.labels)
        if labels.ndim != 1:
            raise DimensionMismatch("labels must be a vector")
        labels = labels.astype(np.int64)
        if labels.size and (labels.min() < 0 or labels.max() >= self.k):
            raise ValueError(f"labels must lie in [0, {self.k})")
        labels.setflags(write=False)
        object.__setattr__(self, "labels", labels)

    @property
    def n_voxels(self) -> int:
        return self.labels.size

    def adjacency(self) -> np.ndarray:
        return self.labels[:, None] == self.labels[None, :]

    def same_pairs(self) -> np.ndarray:
        """Co-membership of every unique pair, condensed."""
        rows, cols = triu_indices(self.n_voxels)
        return self.labels[rows] == self.labels[cols]

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.k)


def canonical_labels(labels: np.ndarray) -> np.ndarray:
    """Relabel clusters in order of first appearance."""
    labels = np.asarray(labels)
    _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
    order = np.argsort(np.argsort(first))
    return order[inverse.ravel()]


def build_affinity(c) -> np.ndarray:
    """max(r, 0) off the diagonal, 0 on it."""
    if isinstance(c, ConnectivityMatrix):
        if c.space is not Space.CORRELATION:
            raise ValueError("affinity needs a correlation matrix")
        return expand(np.maximum(c.values, 0.0), 0.0)
    dense = np.array(c, dtype=float)
    if dense.ndim == 1:
        return expand(np.maximum(dense, 0.0), 0.0)
    if dense.ndim != 2 or dense.shape[0] != dense.shape[1]:
        raise DimensionMismatch(f"expected a square matrix, got {dense.shape}")
    dense = np.maximum(dense, 0.0)
    np.fill_diagonal(dense, 0.0)
    return dense


def spectral_embedding(affinity: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Top-k eigenpairs of the normalized affinity.

    Returns (eigenvalues, eigenvectors, normalized matrix).
    """
    affinity = np.asarray(affinity, dtype=float)
    v = affinity.shape[0]
    if v > MAX_DENSE_VOXELS:
        raise ValueError(f"dense eigensolver limited to {MAX_DENSE_VOXELS} voxels")
    deg = affinity.sum(axis=1) + DEGREE_EPS
    inv_sqrt = 1.0 / np.sqrt(deg)
    norm = affinity * inv_sqrt[:, None] * inv_sqrt[None, :]
    norm = 0.5 * (norm + norm.T)
    try:
        vals, vecs = scipy.linalg.eigh(norm)
    except (np.linalg.LinAlgError, scipy.linalg.LinAlgError) as exc:
        raise EigensolverFailure(str(exc)) from exc
    if not np.all(np.isfinite(vals)):
        raise EigensolverFailure("non-finite eigenvalues")
    return vals[v - k:][::-1], vecs[:, v - k:][:, ::-1], norm


def _kmeanspp(x: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = x.shape[0]
    centers = np.empty((k, x.shape[1]))
    centers[0] = x[rng.integers(n)]
    d2 = np.sum((x - centers[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            idx = rng.integers(n)
        else:
            idx = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            idx = min(idx, n - 1)
        centers[j] = x[idx]
        d2 = np.minimum(d2, np.sum((x - centers[j]) ** 2, axis=1))
    return centers


def _sq_dist(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    # x (n, d), centers (k, d) or (r, k, d) -> (n, k) or (r, n, k)
    if centers.ndim == 3:
        diff = x[None, :, None, :] - centers[:, None, :, :]
    else:
        diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("...d,...d->...", diff, diff)


def kmeans(x: np.ndarray, k: int, rng: np.random.Generator, n_init: int = 10,
           max_iter: int = 300, tol: float = 1e-9) -> tuple[np.ndarray, float]:
    """Lloyd's algorithm with k-means++ seeding; all restarts advance together.

    Returns labels of the restart with the lowest within-cluster sum of squares
    (earliest restart on ties). Nearest-centroid ties go to the lowest index;
    an emptied cluster keeps its previous centroid.
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[0]
    if k > n:
        raise ValueError(f"cannot form {k} clusters from {n} points")
    centers = np.stack([_kmeanspp(x, k, rng) for _ in range(n_init)])
    active = np.ones(n_init, dtype=bool)
    arange_k = np.arange(k)
    for _ in range(max_iter):
        labels = _sq_dist(x, centers).argmin(axis=2)
        onehot = (labels[:, :, None] == arange_k).astype(float)
        counts = onehot.sum(axis=1)
        sums = np.einsum("rnk,nd->rkd", onehot, x)
        new = np.where(counts[:, :, None] > 0, sums / np.maximum(counts, 1.0)[:, :, None], centers)
        shift = np.sqrt(np.max(np.sum((new - centers) ** 2, axis=2), axis=1))
        centers = np.where(active[:, None, None], new, centers)
        active &= shift >= tol
        if not active.any():
            break
    d2 = _sq_dist(x, centers)
    labels = d2.argmin(axis=2)
    inertia = np.take_along_axis(d2, labels[:, :, None], axis=2)[:, :, 0].sum(axis=1)
    best = int(np.argmin(inertia))
    return labels[best], float(inertia[best])


def spectral_cluster(affinity, k: int, seed: int = 0, n_init: int = 10,
                     max_iter: int = 300, tol: float = 1e-9) -> Parcellation:
    affinity = np.asarray(affinity, dtype=float)
    if affinity.ndim != 2 or affinity.shape[0] != affinity.shape[1]:
        raise DimensionMismatch("affinity must be square")
    v = affinity.shape[0]
    if not 2 <= k <= v:
        raise ValueError(f"k must satisfy 2 <= k <= {v}")
    if np.any(affinity < 0) or not np.all(np.isfinite(affinity)):
        raise ValueError("affinity must be finite and nonnegative")
    degree = affinity.sum(axis=1)
    connected = degree > DEGREE_EPS
    if connected.sum() < k:
        raise DegenerateAffinity(
            f"only {int(connected.sum())} voxel(s) have nonzero affinity; need at least {k}")

    _, vecs, _ = spectral_embedding(affinity, k)
    norms = np.linalg.norm(vecs, axis=1)
    usable = connected & (norms > 1e-12)
    if usable.sum() < k:
        raise DegenerateAffinity("spectral embedding collapsed")
    emb = vecs[usable] / norms[usable, None]

    rng = np.random.default_rng(seed)
    sub_labels, _ = kmeans(emb, k, rng, n_init=n_init, max_iter=max_iter, tol=tol)
    labels = np.empty(v, dtype=np.int64)
    labels[usable] = sub_labels
    for idx in np.flatnonzero(~usable):
        # Isolated voxel: affinity-weighted vote over placed voxels.
        votes = np.bincount(sub_labels, weights=affinity[idx, usable], minlength=k)
        labels[idx] = int(np.argmax(votes))
    return Parcellation(canonical_labels(labels), k)


def cluster_correlation(c, k: int, seed: int = 0, n_init: int = 10) -> Parcellation:
    """Affinity construction followed by spectral clustering."""
    return spectral_cluster(build_affinity(c), k, seed=seed, n_init=n_init)
