"""
Superpixel graph construction

Spatial adjacency between superpixels, multi-hop top-k spectral neighbour
selection summed over hop scales 1..o, and the renormalised adjacency
D^-1/2 (A + I) D^-1/2 fed to the graph convolutions.

Adjacency relations are `scipy.sparse` CSR matrices with sorted indices.
"""

import logging
from dataclasses import dataclass
from typing import List, Tuple

import numpy as np
import scipy.sparse as sp

from hgc import utils
from hgc.superpixel import SuperpixelMap


@dataclass(frozen=True)
class SuperpixelGraph:
    """Node attributes, integer multi-scale adjacency and node weights."""

    X: np.ndarray
    A: sp.csr_matrix
    o: int
    k: int
    node_weights: np.ndarray

    @property
    def N(self) -> int:  # pylint: disable=invalid-name
        return self.X.shape[0]

    @property
    def num_edges(self) -> int:
        return int(sp.triu(self.A, k=1).nnz)


def _canonical(matrix: sp.spmatrix, dtype=None) -> sp.csr_matrix:
    out = sp.csr_matrix(matrix, dtype=dtype)
    out.eliminate_zeros()
    out.sort_indices()
    return out


def spatial_adjacency(smap: SuperpixelMap) -> sp.csr_matrix:
    """Superpixels sharing a 4-neighbour pixel boundary (boolean, symmetric).

    Args:
        smap (SuperpixelMap): Segmentation.

    Returns:
        sp.csr_matrix: p x p boolean relation, zero diagonal.
    """
    a = smap.assignment
    pairs = [
        (a[:, :-1].ravel(), a[:, 1:].ravel()),
        (a[:-1, :].ravel(), a[1:, :].ravel()),
    ]
    rows = np.concatenate([p[0] for p in pairs])
    cols = np.concatenate([p[1] for p in pairs])
    differ = rows != cols
    rows, cols = rows[differ], cols[differ]
    n = smap.p
    relation = sp.coo_matrix(
        (np.ones(rows.size, dtype=bool), (rows, cols)), shape=(n, n)
    )
    return _canonical((relation + relation.T) > 0, dtype=bool)


def reachability(adj: sp.csr_matrix, h: int) -> sp.csr_matrix:
    """Nodes within 1..h hops of each node, the node itself excluded.

    Raises:
        ValueError: If h < 1.
    """
    if h < 1:
        raise ValueError(f"Hop count must be >= 1, got {h}")
    step = _canonical(adj, dtype=np.int64)
    reach = step.copy()
    frontier = step.copy()
    for _ in range(h - 1):
        frontier = _canonical((frontier @ step) > 0, dtype=np.int64)
        reach = _canonical((reach + frontier) > 0, dtype=np.int64)
    reach = reach.tolil()
    reach.setdiag(0)
    return _canonical(reach, dtype=bool)


def hop_neighborhood(adj: sp.csr_matrix, j: int, h: int) -> np.ndarray:
    """Sorted ids of the nodes at shortest-path distance 1..h from j."""
    reach = reachability(adj, h)
    return reach.indices[reach.indptr[j] : reach.indptr[j + 1]].copy()


def pairwise_distance(X: np.ndarray, i: int, j: int) -> float:
    """Euclidean spectral distance between node attribute rows i and j."""
    return float(np.linalg.norm(X[i] - X[j]))


def topk_adjacency(
    adj: sp.csr_matrix, X: np.ndarray, h: int, k: int
) -> sp.csr_matrix:
    """Link each node to its k spectrally nearest h-hop neighbours, symmetrised.

    Distance ties go to the smaller node id; nodes with at most k
    neighbours within h hops link to all of them. Every weight is 1.

    Args:
        adj (sp.csr_matrix): Spatial adjacency.
        X (np.ndarray): Node attributes.
        h (int): Hop scale.
        k (int): Neighbours per node.

    Raises:
        ValueError: If h or k is below 1.

    Returns:
        sp.csr_matrix: Boolean symmetric relation.
    """
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    reach = reachability(adj, h)
    n = X.shape[0]
    rows: List[np.ndarray] = []
    cols: List[np.ndarray] = []
    for i in range(n):
        nbrs = reach.indices[reach.indptr[i] : reach.indptr[i + 1]]
        if nbrs.size == 0:
            continue
        dists = np.linalg.norm(X[nbrs] - X[i], axis=1)
        chosen = nbrs[np.lexsort((nbrs, dists))[:k]]
        rows.append(np.full(chosen.size, i))
        cols.append(chosen)
    if not rows:
        return sp.csr_matrix((n, n), dtype=bool)
    r, c = np.concatenate(rows), np.concatenate(cols)
    picked = sp.coo_matrix((np.ones(r.size, dtype=bool), (r, c)), shape=(n, n))
    return _canonical((picked + picked.T) > 0, dtype=bool)


def multiscale_sum(mats: List[sp.csr_matrix]) -> sp.csr_matrix:
    """Element-wise sum of the per-scale top-k relations (integer weights).

    Raises:
        ValueError: On an empty list or mismatched shapes.
    """
    if not mats:
        raise ValueError("multiscale_sum needs at least one matrix")
    shape = mats[0].shape
    total = sp.csr_matrix(shape, dtype=np.int64)
    for mat in mats:
        if mat.shape != shape:
            raise ValueError(f"Shape mismatch: {mat.shape} vs {shape}")
        total = total + sp.csr_matrix(mat, dtype=np.int64)
    return _canonical(total, dtype=np.int64)


def normalize(A: sp.spmatrix) -> sp.csr_matrix:
    """D^-1/2 (A + I) D^-1/2 with D the row sums of A + I."""
    regular = sp.csr_matrix(A, dtype=np.float64)
    regular = regular + sp.identity(A.shape[0], format="csr")
    degrees = np.asarray(regular.sum(axis=1)).ravel()
    d_inv_sqrt = sp.diags(1.0 / np.sqrt(degrees), format="csr")
    return _canonical(d_inv_sqrt @ regular @ d_inv_sqrt)


def build_graph(
    smap: SuperpixelMap, X: np.ndarray, o: int, k: int
) -> SuperpixelGraph:
    """Multi-scale top-k superpixel graph summed over hop scales 1..o."""
    if o < 1:
        raise ValueError(f"o must be >= 1, got {o}")
    adj = spatial_adjacency(smap)
    A = multiscale_sum([topk_adjacency(adj, X, h, k) for h in range(1, o + 1)])
    graph = SuperpixelGraph(
        X=X, A=A, o=o, k=k, node_weights=smap.sizes.astype(np.int64)
    )
    logging.info(
        "Built graph with %s nodes and %s edges (o=%s, k=%s).",
        graph.N,
        graph.num_edges,
        o,
        k,
    )
    return graph


##
# Artifacts:
##


def save_graph(graph: SuperpixelGraph, path: str) -> None:
    A = graph.A
    utils.save_arrays(
        path,
        X=graph.X,
        data=A.data,
        indices=A.indices,
        indptr=A.indptr,
        node_weights=graph.node_weights,
        scales=np.array([graph.o, graph.k]),
    )


def load_graph(path: str) -> SuperpixelGraph:
    arrays = utils.load_arrays(path)
    n = arrays["X"].shape[0]
    A = sp.csr_matrix(
        (arrays["data"], arrays["indices"], arrays["indptr"]), shape=(n, n)
    )
    o, k = (int(v) for v in arrays["scales"])
    return SuperpixelGraph(
        X=arrays["X"], A=A, o=o, k=k, node_weights=arrays["node_weights"]
    )


def edge_list(A: sp.spmatrix) -> List[Tuple[int, int, int]]:
    """Edges (i, j, w) with i < j in row-major order."""
    upper = sp.triu(sp.csr_matrix(A), k=1).tocoo()
    order = np.lexsort((upper.col, upper.row))
    return [
        (int(upper.row[e]), int(upper.col[e]), int(upper.data[e])) for e in order
    ]


def export_edges(
    graph: SuperpixelGraph, edges_path: str, attributes_path: str
) -> None:
    """Write the `i j w` edge list and the attribute matrix as text."""
    lines = [f"{i} {j} {w}" for i, j, w in edge_list(graph.A)]
    utils.atomic_write(edges_path, "".join(line + "\n" for line in lines))
    rows = [" ".join(repr(float(v)) for v in row) for row in graph.X]
    utils.atomic_write(attributes_path, "".join(row + "\n" for row in rows))


def read_edges(path: str, n: int) -> sp.csr_matrix:
    """Read an `i j w` edge list into a symmetric integer adjacency.

    Raises:
        ValueError: On malformed lines, self-loops or out-of-range ids.
    """
    rows, cols, weights = [], [], []
    with open(path, "r", encoding="utf-8") as openfile:
        for number, line in enumerate(openfile, start=1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 3:
                raise ValueError(f"{path}:{number}: expected 'i j w'")
            i, j, w = (int(v) for v in parts)
            if i == j or not (0 <= i < n and 0 <= j < n):
                raise ValueError(f"{path}:{number}: bad edge {i} {j}")
            rows.append(i)
            cols.append(j)
            weights.append(w)
    upper = sp.coo_matrix((weights, (rows, cols)), shape=(n, n), dtype=np.int64)
    return _canonical(upper + upper.T, dtype=np.int64)
