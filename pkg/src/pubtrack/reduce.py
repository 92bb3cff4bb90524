"""Neighborhood-preserving dimensionality reduction.

Implements the UMAP procedure: exact k-NN graph, smooth-kNN bandwidth
calibration, fuzzy simplicial set construction, and cross-entropy layout
optimization with negative-sampling SGD. The SGD loop runs single-worker
and is fully deterministic for a fixed seed. A PCA reduction is provided
behind the same contract as a fast test double.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, replace

import numba
import numpy as np
import scipy.sparse
from scipy.optimize import curve_fit
from scipy.sparse.csgraph import connected_components

from .embed import EmbeddingMatrix
from .errors import IdSetMismatch, NonFiniteInput, TooFewPoints

logger = logging.getLogger(__name__)

_SMOOTH_K_TOLERANCE = 1e-5
_MIN_K_DIST_SCALE = 1e-3


@dataclass(frozen=True)
class ReductionConfig:
    target_dim: int
    n_neighbors: int = 15
    min_dist: float = 0.1
    n_epochs: int = 200
    seed: int = 42
    metric: str = "euclidean"  # or "cosine"
    method: str = "umap"  # or "pca"


def pairwise_distances(points: np.ndarray, metric: str) -> np.ndarray:
    """Dense pairwise distance matrix with an exactly-zero diagonal."""
    if metric == "cosine":
        norms = np.linalg.norm(points, axis=1, keepdims=True)
        safe = np.where(norms > 0, norms, 1.0)
        unit = points / safe
        dist = 1.0 - unit @ unit.T
        np.clip(dist, 0.0, 2.0, out=dist)
    elif metric == "euclidean":
        sq = np.sum(points**2, axis=1)
        dist = sq[:, None] + sq[None, :] - 2.0 * (points @ points.T)
        np.maximum(dist, 0.0, out=dist)
        np.sqrt(dist, out=dist)
    else:
        raise ValueError(f"unsupported metric {metric!r}")
    np.fill_diagonal(dist, 0.0)
    return dist


def _knn_from_distances(dist: np.ndarray, n_neighbors: int) -> tuple[np.ndarray, np.ndarray]:
    """k-NN indices and distances, self first, ties broken by point index."""
    n = dist.shape[0]
    indices = np.empty((n, n_neighbors), dtype=np.int64)
    distances = np.empty((n, n_neighbors), dtype=np.float64)
    for i in range(n):
        row = dist[i].copy()
        row[i] = -np.inf  # guarantee self comes first even among duplicates
        order = np.argsort(row, kind="stable")[:n_neighbors]
        indices[i] = order
        distances[i] = dist[i, order]
    return indices, distances


@numba.njit(cache=True)
def _smooth_knn(knn_dists, k, n_iter=64, local_connectivity=1.0, bandwidth=1.0):
    """Per-point bandwidth (sigma) and connectivity offset (rho) such that
    the fuzzy set cardinality is log2(k)."""
    target = np.log2(k) * bandwidth
    n = knn_dists.shape[0]
    rho = np.zeros(n, dtype=np.float64)
    sigma = np.zeros(n, dtype=np.float64)
    mean_distances = np.mean(knn_dists)

    for i in range(n):
        lo = 0.0
        hi = np.inf
        mid = 1.0

        ith = knn_dists[i]
        non_zero = ith[ith > 0.0]
        if non_zero.shape[0] >= local_connectivity:
            index = int(np.floor(local_connectivity))
            interpolation = local_connectivity - index
            if index > 0:
                rho[i] = non_zero[index - 1]
                if interpolation > _SMOOTH_K_TOLERANCE:
                    rho[i] += interpolation * (non_zero[index] - non_zero[index - 1])
            else:
                rho[i] = interpolation * non_zero[0]
        elif non_zero.shape[0] > 0:
            rho[i] = np.max(non_zero)

        for _ in range(n_iter):
            psum = 0.0
            for j in range(1, knn_dists.shape[1]):
                d = knn_dists[i, j] - rho[i]
                if d > 0:
                    psum += np.exp(-(d / mid))
                else:
                    psum += 1.0
            if np.fabs(psum - target) < _SMOOTH_K_TOLERANCE:
                break
            if psum > target:
                hi = mid
                mid = (lo + hi) / 2.0
            else:
                lo = mid
                if hi == np.inf:
                    mid *= 2
                else:
                    mid = (lo + hi) / 2.0
        sigma[i] = mid

        if rho[i] > 0.0:
            mean_ith = np.mean(ith)
            if sigma[i] < _MIN_K_DIST_SCALE * mean_ith:
                sigma[i] = _MIN_K_DIST_SCALE * mean_ith
        else:
            if sigma[i] < _MIN_K_DIST_SCALE * mean_distances:
                sigma[i] = _MIN_K_DIST_SCALE * mean_distances
    return sigma, rho


def fuzzy_simplicial_set(
    knn_indices: np.ndarray, knn_dists: np.ndarray
) -> scipy.sparse.coo_matrix:
    """Symmetrized fuzzy neighborhood graph from a k-NN structure."""
    n, k = knn_indices.shape
    sigma, rho = _smooth_knn(knn_dists.astype(np.float64), float(k))

    rows = np.repeat(np.arange(n), k)
    cols = knn_indices.ravel()
    vals = np.zeros(n * k, dtype=np.float64)
    for i in range(n):
        for j in range(k):
            if knn_indices[i, j] == i:
                val = 0.0
            elif knn_dists[i, j] - rho[i] <= 0.0 or sigma[i] == 0.0:
                val = 1.0
            else:
                val = np.exp(-((knn_dists[i, j] - rho[i]) / sigma[i]))
            vals[i * k + j] = val

    graph = scipy.sparse.coo_matrix((vals, (rows, cols)), shape=(n, n))
    graph.sum_duplicates()
    transpose = graph.transpose()
    product = graph.multiply(transpose)
    graph = graph + transpose - product  # probabilistic t-conorm
    graph = graph.tocoo()
    graph.eliminate_zeros()
    return graph


def find_ab_params(spread: float, min_dist: float) -> tuple[float, float]:
    """Fit the low-dimensional similarity curve 1/(1 + a d^{2b})."""

    def curve(x, a, b):
        return 1.0 / (1.0 + a * x ** (2 * b))

    xv = np.linspace(0, spread * 3, 300)
    yv = np.zeros(xv.shape)
    yv[xv < min_dist] = 1.0
    yv[xv >= min_dist] = np.exp(-(xv[xv >= min_dist] - min_dist) / spread)
    params, _ = curve_fit(curve, xv, yv)
    return float(params[0]), float(params[1])


def make_epochs_per_sample(weights: np.ndarray, n_epochs: int) -> np.ndarray:
    result = -1.0 * np.ones(weights.shape[0], dtype=np.float64)
    n_samples = n_epochs * (weights / weights.max())
    result[n_samples > 0] = float(n_epochs) / n_samples[n_samples > 0]
    return result


@numba.njit(cache=True, inline="always")
def _clip(val):
    if val > 4.0:
        return 4.0
    if val < -4.0:
        return -4.0
    return val


@numba.njit(cache=True)
def _tau_rand_int(state):
    state[0] = (((state[0] & 4294967294) << 12) & 0xFFFFFFFF) ^ (
        (((state[0] << 13) & 0xFFFFFFFF) ^ state[0]) >> 19
    )
    state[1] = (((state[1] & 4294967288) << 4) & 0xFFFFFFFF) ^ (
        (((state[1] << 2) & 0xFFFFFFFF) ^ state[1]) >> 25
    )
    state[2] = (((state[2] & 4294967280) << 17) & 0xFFFFFFFF) ^ (
        (((state[2] << 3) & 0xFFFFFFFF) ^ state[2]) >> 11
    )
    return state[0] ^ state[1] ^ state[2]


@numba.njit(cache=True)
def _optimize_layout(
    embedding,
    head,
    tail,
    n_epochs,
    epochs_per_sample,
    a,
    b,
    rng_state,
    gamma,
    initial_alpha,
    negative_sample_rate,
):
    """Sequential negative-sampling SGD on the cross-entropy objective."""
    dim = embedding.shape[1]
    n_vertices = embedding.shape[0]
    alpha = initial_alpha

    epochs_per_negative_sample = epochs_per_sample / negative_sample_rate
    epoch_of_next_negative_sample = epochs_per_negative_sample.copy()
    epoch_of_next_sample = epochs_per_sample.copy()

    for epoch in range(n_epochs):
        for i in range(epochs_per_sample.shape[0]):
            if epoch_of_next_sample[i] > epoch:
                continue
            j = head[i]
            k = tail[i]
            dist_squared = 0.0
            for d in range(dim):
                diff = embedding[j, d] - embedding[k, d]
                dist_squared += diff * diff

            if dist_squared > 0.0:
                grad_coeff = -2.0 * a * b * dist_squared ** (b - 1.0)
                grad_coeff /= a * dist_squared**b + 1.0
            else:
                grad_coeff = 0.0
            for d in range(dim):
                grad_d = _clip(grad_coeff * (embedding[j, d] - embedding[k, d]))
                embedding[j, d] += grad_d * alpha
                embedding[k, d] -= grad_d * alpha

            epoch_of_next_sample[i] += epochs_per_sample[i]

            n_neg_samples = int(
                (epoch - epoch_of_next_negative_sample[i]) / epochs_per_negative_sample[i]
            )
            for _ in range(n_neg_samples):
                k = _tau_rand_int(rng_state) % n_vertices
                dist_squared = 0.0
                for d in range(dim):
                    diff = embedding[j, d] - embedding[k, d]
                    dist_squared += diff * diff
                if dist_squared > 0.0:
                    grad_coeff = 2.0 * gamma * b
                    grad_coeff /= (0.001 + dist_squared) * (a * dist_squared**b + 1.0)
                elif j == k:
                    continue
                else:
                    grad_coeff = 0.0
                for d in range(dim):
                    if grad_coeff > 0.0:
                        grad_d = _clip(grad_coeff * (embedding[j, d] - embedding[k, d]))
                    else:
                        grad_d = 4.0
                    embedding[j, d] += grad_d * alpha
            epoch_of_next_negative_sample[i] += n_neg_samples * epochs_per_negative_sample[i]

        alpha = initial_alpha * (1.0 - float(epoch + 1) / float(n_epochs))
    return embedding


def _spectral_init(graph: scipy.sparse.spmatrix, dim: int, rng: np.random.RandomState) -> np.ndarray:
    """Normalized-Laplacian eigenvector initialization; None if unusable."""
    n = graph.shape[0]
    n_components, _ = connected_components(graph, directed=False)
    if n_components > 1 or n <= dim + 2:
        return None
    adjacency = scipy.sparse.csr_matrix(graph)
    degrees = np.asarray(adjacency.sum(axis=1)).ravel()
    inv_sqrt = 1.0 / np.sqrt(np.maximum(degrees, 1e-12))
    d_mat = scipy.sparse.diags(inv_sqrt)
    laplacian = scipy.sparse.identity(n) - d_mat @ adjacency @ d_mat
    k = dim + 1
    ncv = max(2 * k + 1, int(np.sqrt(n)))
    try:
        eigenvalues, eigenvectors = scipy.sparse.linalg.eigsh(
            laplacian,
            k,
            which="SM",
            ncv=ncv,
            tol=1e-4,
            v0=np.ones(n),
            maxiter=n * 5,
        )
    except (scipy.sparse.linalg.ArpackError, scipy.sparse.linalg.ArpackNoConvergence):
        return None
    order = np.argsort(eigenvalues)[1 : k]
    return eigenvectors[:, order]


def umap_embed(
    points: np.ndarray,
    config: ReductionConfig,
) -> np.ndarray:
    """Embed points into config.target_dim dimensions via the UMAP procedure."""
    n = points.shape[0]
    n_neighbors = min(config.n_neighbors, n - 1)
    if n_neighbors != config.n_neighbors:
        logger.warning("n_neighbors reduced to %d for %d points", n_neighbors, n)

    dist = pairwise_distances(points, config.metric)
    knn_indices, knn_dists = _knn_from_distances(dist, n_neighbors + 1)
    graph = fuzzy_simplicial_set(knn_indices, knn_dists)

    rng = np.random.RandomState(config.seed)
    init = _spectral_init(graph, config.target_dim, rng)
    if init is None:
        embedding = rng.uniform(-10.0, 10.0, (n, config.target_dim))
    else:
        expansion = 10.0 / max(np.abs(init).max(), 1e-12)
        embedding = init * expansion + rng.normal(scale=1e-4, size=init.shape)
    embedding = np.ascontiguousarray(embedding, dtype=np.float64)

    # prune edges too weak to ever be sampled
    data = graph.data.copy()
    data[data < data.max() / float(config.n_epochs)] = 0.0
    graph = scipy.sparse.coo_matrix((data, (graph.row, graph.col)), shape=graph.shape)
    graph.eliminate_zeros()

    epochs_per_sample = make_epochs_per_sample(graph.data, config.n_epochs)
    a, b = find_ab_params(1.0, config.min_dist)
    rng_state = rng.randint(1, np.iinfo(np.int32).max, 3).astype(np.int64)

    return _optimize_layout(
        embedding,
        graph.row.astype(np.int64),
        graph.col.astype(np.int64),
        config.n_epochs,
        epochs_per_sample,
        a,
        b,
        rng_state,
        1.0,  # repulsion strength
        1.0,  # initial learning rate
        5,  # negative samples per positive
    )


def pca_embed(points: np.ndarray, config: ReductionConfig) -> np.ndarray:
    """Deterministic PCA projection (sign-fixed SVD), same contract as UMAP."""
    centered = points - points.mean(axis=0)
    _, s, vt = np.linalg.svd(centered, full_matrices=False)
    components = vt[: config.target_dim]
    # fix signs so the largest-magnitude loading of each component is positive
    signs = np.sign(components[np.arange(components.shape[0]), np.argmax(np.abs(components), axis=1)])
    signs[signs == 0] = 1.0
    components = components * signs[:, None]
    return centered @ components.T


def reduce(matrix: EmbeddingMatrix, config: ReductionConfig) -> EmbeddingMatrix:
    """Reduce an embedding matrix to config.target_dim dimensions."""
    ids = matrix.ids()
    n = len(ids)
    if n < config.n_neighbors + 1 and config.method == "umap" and n < 3:
        raise TooFewPoints(f"{n} points is too few to reduce")
    points = matrix.as_array(ids)
    if not np.all(np.isfinite(points)):
        raise NonFiniteInput("input embeddings contain non-finite values")
    if config.target_dim >= matrix.dim:
        raise ValueError(f"target_dim {config.target_dim} must be < input dim {matrix.dim}")

    if config.method == "pca":
        output = pca_embed(points, config)
    else:
        output = umap_embed(points, config)
    if not np.all(np.isfinite(output)):
        raise NonFiniteInput("reduction produced non-finite values")

    return EmbeddingMatrix(
        dim=config.target_dim,
        vectors={pid: output[i] for i, pid in enumerate(ids)},
        provider_tag=f"{matrix.provider_tag}|{config.method}{config.target_dim}",
    )


def trustworthiness(high: EmbeddingMatrix, low: EmbeddingMatrix, k: int) -> float:
    """Fraction-style statistic in [0, 1] penalizing low-dimensional
    neighbors that were not neighbors in the original space."""
    ids = high.ids()
    if ids != low.ids():
        raise IdSetMismatch("high and low matrices hold different id sets")
    n = len(ids)
    if k >= n:
        raise ValueError(f"k={k} must be below the point count {n}")
    if 2 * n - 3 * k - 1 <= 0:
        raise ValueError(f"k={k} too large for n={n} (statistic undefined)")

    dist_high = pairwise_distances(high.as_array(ids), "euclidean")
    dist_low = pairwise_distances(low.as_array(ids), "euclidean")

    penalty = 0.0
    for i in range(n):
        order_high = _neighbor_order(dist_high[i], i)
        rank_high = np.empty(n, dtype=np.int64)
        rank_high[order_high] = np.arange(1, n)  # rank among others, from 1
        high_set = set(order_high[:k].tolist())
        low_neighbors = _neighbor_order(dist_low[i], i)[:k]
        for j in low_neighbors:
            if int(j) not in high_set:
                penalty += rank_high[j] - k
    return 1.0 - 2.0 * penalty / (n * k * (2.0 * n - 3.0 * k - 1.0))


def _neighbor_order(row: np.ndarray, exclude: int) -> np.ndarray:
    """Indices sorted by (distance, index), excluding the point itself."""
    order = np.argsort(row, kind="stable")
    return order[order != exclude]
