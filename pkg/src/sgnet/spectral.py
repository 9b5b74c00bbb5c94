"""Graph matrices, Laplacians, Jacobi eigendecomposition and eigenvalue scaling."""
from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from . import kernels
from .errors import ConfigError, NumericError, ShapeError
from .sggraph import PatchGrid, SignatureGraph, connect

COMBINATORIAL, NORMALIZED = "combinatorial", "normalized"


def _graph_parts(graph):
    """Accept a SignatureGraph or a plain ``(node_count, edges)`` pair."""
    if isinstance(graph, SignatureGraph):
        return graph.node_count, graph.edges
    n, edges = graph
    return int(n), [tuple(e) for e in edges]


def degree_vector(graph) -> np.ndarray:
    n, edges = _graph_parts(graph)
    deg = np.zeros(n, dtype=np.int64)
    for i, j in edges:
        deg[i] += 1
        deg[j] += 1
    return deg


def degree_matrix(graph) -> np.ndarray:
    return np.diag(degree_vector(graph))


def adjacency_matrix(graph) -> np.ndarray:
    n, edges = _graph_parts(graph)
    a = np.zeros((n, n), dtype=np.int64)
    for i, j in edges:
        if i == j:
            raise ConfigError(f"self-loop on node {i}")
        a[i, j] = a[j, i] = 1
    return a


def incidence_matrix(graph) -> np.ndarray:
    """Signed (edges x nodes) incidence: +1 at the lower endpoint, -1 at the higher."""
    n, edges = _graph_parts(graph)
    m = np.zeros((len(edges), n), dtype=np.int64)
    for e, (i, j) in enumerate(edges):
        lo, hi = min(i, j), max(i, j)
        m[e, lo] = 1
        m[e, hi] = -1
    return m


def laplacian(graph, kind: str = NORMALIZED) -> np.ndarray:
    """``D - A`` (combinatorial) or the symmetric normalised (Kirchhoff) form.

    The normalised form has 1 on the diagonal of non-isolated nodes,
    ``-1/sqrt(d_i d_j)`` between neighbours and 0 elsewhere, so isolated
    nodes get an all-zero row.
    """
    a = adjacency_matrix(graph)
    deg = a.sum(axis=1)
    if kind == COMBINATORIAL:
        return np.diag(deg) - a
    if kind != NORMALIZED:
        raise ConfigError(f"unknown Laplacian kind {kind!r}")
    d = deg.astype(np.float64)
    inv_sqrt = np.zeros_like(d)
    nz = d > 0
    inv_sqrt[nz] = 1.0 / np.sqrt(d[nz])
    lap = -a * np.outer(inv_sqrt, inv_sqrt)
    lap[np.diag_indices_from(lap)] = nz.astype(np.float64)
    return lap


@dataclass(frozen=True)
class SpectralDecomposition:
    laplacian: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray
    sweeps: int = 0


def eigendecompose(lap: np.ndarray, max_sweeps: int = 100, rel_tol: float = 1e-12) -> SpectralDecomposition:
    """Full symmetric eigendecomposition by cyclic Jacobi rotations.

    Eigenpairs are sorted ascending and each eigenvector is sign-fixed so its
    first non-negligible component is positive.
    """
    lap = np.asarray(lap, dtype=np.float64)
    if lap.ndim != 2 or lap.shape[0] != lap.shape[1]:
        raise ShapeError(f"expected a square matrix, got {lap.shape}")
    if lap.size and np.max(np.abs(lap - lap.T)) > 1e-10:
        raise ConfigError("matrix is not symmetric")
    n = lap.shape[0]
    norm = np.linalg.norm(lap)
    tol = max(rel_tol * norm, np.finfo(np.float64).tiny)
    w, v, sweeps = kernels.jacobi_eigh(lap, tol, max_sweeps)
    if sweeps > max_sweeps:
        raise NumericError(f"Jacobi did not converge in {max_sweeps} sweeps")
    order = np.argsort(w, kind="stable")
    w, v = w[order], v[:, order]
    for k in range(n):
        col = v[:, k]
        nz = np.flatnonzero(np.abs(col) > 1e-12)
        if nz.size and col[nz[0]] < 0:
            v[:, k] = -col
    w.flags.writeable = False
    v.flags.writeable = False
    return SpectralDecomposition(lap, w, v, sweeps)


@lru_cache(maxsize=256)
def grid_spectrum(grid: PatchGrid, mode: str, link_chains: bool = False) -> SpectralDecomposition:
    """Decomposition of the normalised Laplacian of a grid's signature graph.

    Edges depend only on grid geometry and mode, never on node coordinates,
    so every map sharing a grid shares this decomposition.
    """
    edges = connect(grid, mode, link_chains)
    return eigendecompose(laplacian((grid.node_count, edges), NORMALIZED))


def scale_embeddings(graph: SignatureGraph, dec: SpectralDecomposition, eig_offset: float = 0.0) -> np.ndarray:
    """Row ``i`` of the attributes times the ``i``-th ascending eigenvalue."""
    lam = dec.eigenvalues + eig_offset
    if len(lam) != graph.node_count:
        raise ShapeError(f"{len(lam)} eigenvalues for {graph.node_count} nodes")
    return lam[:, None] * graph.attributes


def flatten_signature_vector(scaled: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(scaled).reshape(-1)


def signature_vector(graph: SignatureGraph, eig_offset: float = 0.0) -> np.ndarray:
    """Graph -> normalised Laplacian -> spectrum -> scaled, flattened embedding."""
    dec = eigendecompose(laplacian(graph, NORMALIZED))
    return flatten_signature_vector(scale_embeddings(graph, dec, eig_offset))


def connected_components(graph) -> int:
    n, edges = _graph_parts(graph)
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in edges:
        ri, rj = find(i), find(j)
        if ri != rj:
            parent[ri] = rj
    return len({find(i) for i in range(n)})
