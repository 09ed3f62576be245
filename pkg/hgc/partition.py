"""
Multilevel graph partitioning

Splits the superpixel graph into c clusters of balanced node weight with a
small edge-cut, by recursive bisection. Every bisection coarsens the graph
with heavy-edge matching, grows an initial split on the coarsest graph and
refines it with boundary Fiduccia-Mattheyses passes while projecting back to
the finer levels. The clusters then become independent sub-graphs.
"""

import heapq
import logging
import math
import os
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
import scipy.sparse as sp

from hgc import constants, utils
from hgc.graph import SuperpixelGraph, normalize
from hgc.superpixel import NodeLabels


@dataclass(frozen=True)
class PartitionAssignment:
    """Cluster id in 0..c-1 for every node."""

    part: np.ndarray
    c: int

    @property
    def sizes(self) -> np.ndarray:
        return np.bincount(self.part, minlength=self.c)

    def members(self, index: int) -> np.ndarray:
        return np.flatnonzero(self.part == index)


@dataclass(frozen=True)
class SubGraph:
    """One cluster: global node ids (local i is nodes[i]) and induced data."""

    index: int
    nodes: np.ndarray
    A: sp.csr_matrix
    X: np.ndarray
    A_norm: sp.csr_matrix
    labels: Optional[NodeLabels] = None

    @property
    def num_nodes(self) -> int:
        return self.nodes.size

    def has_role(self, role: str) -> bool:
        return self.labels is not None and bool(np.any(self.labels.role(role) > 0))


@dataclass(frozen=True)
class BisectionLimits:
    """Balance limits of one bisection: side weight caps, side node minimums
    and the weight side 0 is grown to."""

    max_weight: Tuple[float, float]
    min_count: Tuple[int, int]
    target0: float


def _cut(A: sp.spmatrix, part: np.ndarray) -> int:
    upper = sp.triu(A, k=1).tocoo()
    return int(upper.data[part[upper.row] != part[upper.col]].sum())


def edge_cut(graph: SuperpixelGraph, assign: PartitionAssignment) -> int:
    """Total weight of the edges whose end points lie in different clusters."""
    if assign.part.size != graph.N:
        raise ValueError(
            f"Assignment covers {assign.part.size} nodes, graph has {graph.N}"
        )
    return _cut(graph.A, assign.part)


def _side_totals(values: np.ndarray, side: np.ndarray) -> np.ndarray:
    return np.array([values[side == 0].sum(), values[side == 1].sum()])


def _violation(weights: np.ndarray, limits: BisectionLimits) -> float:
    return float(
        max(0.0, weights[0] - limits.max_weight[0])
        + max(0.0, weights[1] - limits.max_weight[1])
    )


##
# Coarsening:
##


def heavy_edge_matching(
    A: sp.csr_matrix,
    node_weights: np.ndarray,
    rng: np.random.Generator,
    max_weight: float,
) -> Tuple[np.ndarray, int]:
    """Match every node to its heaviest unmatched neighbour, in seeded order.

    Pairs whose combined weight would exceed max_weight are not formed; edge
    weight ties go to the smaller neighbour id.

    Returns:
        Tuple[np.ndarray, int]: Coarse node id of every fine node and the
        coarse node count.
    """
    n = A.shape[0]
    match = np.full(n, -1, dtype=np.int64)
    for v in rng.permutation(n):
        if match[v] >= 0:
            continue
        nbrs = A.indices[A.indptr[v] : A.indptr[v + 1]]
        weights = A.data[A.indptr[v] : A.indptr[v + 1]]
        free = (
            (match[nbrs] < 0)
            & (nbrs != v)
            & (node_weights[nbrs] + node_weights[v] <= max_weight)
        )
        if np.any(free):
            cand, cand_w = nbrs[free], weights[free]
            u = cand[np.lexsort((cand, -cand_w))[0]]
            match[v], match[u] = u, v
        else:
            match[v] = v

    cmap = np.full(n, -1, dtype=np.int64)
    coarse = 0
    for v in range(n):
        if cmap[v] < 0:
            cmap[v] = cmap[match[v]] = coarse
            coarse += 1
    return cmap, coarse


def coarsen_graph(
    A: sp.csr_matrix, node_weights: np.ndarray, cmap: np.ndarray, num_coarse: int
) -> Tuple[sp.csr_matrix, np.ndarray, int]:
    """Collapse matched pairs into coarse nodes.

    Returns:
        Tuple[sp.csr_matrix, np.ndarray, int]: Coarse adjacency, coarse node
        weights and the edge weight absorbed inside matched pairs.
    """
    n = A.shape[0]
    proj = sp.csr_matrix(
        (np.ones(n, dtype=np.int64), (np.arange(n), cmap)), shape=(n, num_coarse)
    )
    merged = (proj.T @ A @ proj).tocsr()
    diagonal = merged.diagonal()
    internal = int(diagonal.sum()) // 2
    merged = (merged - sp.diags(diagonal)).tocsr()
    merged.eliminate_zeros()
    merged.sort_indices()
    coarse_weights = np.zeros(num_coarse, dtype=node_weights.dtype)
    np.add.at(coarse_weights, cmap, node_weights)
    return merged, coarse_weights, internal


##
# Refinement:
##


def boundary_nodes(A: sp.spmatrix, side: np.ndarray) -> np.ndarray:
    """Sorted nodes with at least one edge to the other side."""
    coo = sp.coo_matrix(A)
    crossing = side[coo.row] != side[coo.col]
    return np.unique(coo.row[crossing])


def _fm_pass(
    A: sp.csr_matrix,
    side: np.ndarray,
    node_weights: np.ndarray,
    counts: np.ndarray,
    limits: BisectionLimits,
) -> np.ndarray:
    """One boundary FM pass, rolled back to its best prefix by (violation, cut).

    The gain queue starts from the boundary nodes, or from every node when
    the start violates the balance limits.
    """
    n = side.size
    side = side.copy()
    degree = np.asarray(A.sum(axis=1)).ravel().astype(np.int64)
    to_one = A @ side
    external = np.where(side == 1, degree - to_one, to_one)
    gain = 2 * external - degree

    weights = _side_totals(node_weights, side).astype(np.float64)
    sizes = _side_totals(counts, side)
    cut = _cut(A, side)
    best_key = (_violation(weights, limits), cut)
    best_moves = 0
    moves: List[int] = []
    patience = min(max(int(0.01 * n), 15), 100)
    locked = np.zeros(n, dtype=bool)
    if best_key[0] > 0:
        seeds = np.arange(n)
    else:
        seeds = boundary_nodes(A, side)
    heap = [(-int(gain[v]), int(v)) for v in seeds]
    heapq.heapify(heap)

    while heap and len(moves) - best_moves < patience:
        neg_gain, v = heapq.heappop(heap)
        if locked[v] or -neg_gain != gain[v]:
            continue
        src = side[v]
        dst = 1 - src
        if sizes[src] - counts[v] < limits.min_count[src]:
            continue
        moved = weights.copy()
        moved[src] -= node_weights[v]
        moved[dst] += node_weights[v]
        violation = _violation(moved, limits)
        if violation > _violation(weights, limits):
            continue

        side[v] = dst
        locked[v] = True
        weights = moved
        sizes[src] -= counts[v]
        sizes[dst] += counts[v]
        cut -= int(gain[v])
        moves.append(v)
        for e in range(A.indptr[v], A.indptr[v + 1]):
            u = A.indices[e]
            if locked[u]:
                continue
            gain[u] += -2 * A.data[e] if side[u] == dst else 2 * A.data[e]
            heapq.heappush(heap, (-int(gain[u]), u))

        if (violation, cut) < best_key:
            best_key = (violation, cut)
            best_moves = len(moves)

    for v in moves[best_moves:]:
        side[v] = 1 - side[v]
    return side


def fm_refine(
    A: sp.csr_matrix,
    side: np.ndarray,
    node_weights: np.ndarray,
    limits: BisectionLimits,
    counts: Optional[np.ndarray] = None,
    max_passes: int = constants.MAX_FM_PASSES,
) -> Tuple[np.ndarray, List[int]]:
    """Refine a bisection with Fiduccia-Mattheyses passes.

    A pass is kept only if it lowers (violation, cut); refinement stops at the
    first pass that does not. Starting from a balanced bisection the cut
    therefore never increases.

    Args:
        A (sp.csr_matrix): Integer adjacency.
        side (np.ndarray): 0/1 side of every node.
        node_weights (np.ndarray): Balance weights.
        limits (BisectionLimits): Balance limits.
        counts (Optional[np.ndarray]): Original nodes behind every node, for
            the side minimums. Defaults to ones.
        max_passes (int): Pass limit.

    Returns:
        Tuple[np.ndarray, List[int]]: Refined sides and the cut before the
        first pass and after each kept pass.
    """
    side = np.asarray(side, dtype=np.int64).copy()
    if counts is None:
        counts = np.ones(side.size, dtype=np.int64)
    cut = _cut(A, side)
    key = (_violation(_side_totals(node_weights, side), limits), cut)
    trace = [cut]
    for _ in range(max_passes):
        refined = _fm_pass(A, side, node_weights, counts, limits)
        refined_key = (
            _violation(_side_totals(node_weights, refined), limits),
            _cut(A, refined),
        )
        if refined_key >= key:
            break
        side, key = refined, refined_key
        trace.append(key[1])
    return side, trace


##
# Initial bisection:
##


def grow_region(
    A: sp.csr_matrix,
    node_weights: np.ndarray,
    counts: np.ndarray,
    limits: BisectionLimits,
    start: int,
) -> np.ndarray:
    """Greedy region growing: side 0 starts at `start` and repeatedly absorbs
    the side 1 node that most reduces the cut, until it reaches its target
    weight and node minimum."""
    n = A.shape[0]
    side = np.ones(n, dtype=np.int64)
    degree = np.asarray(A.sum(axis=1)).ravel().astype(np.int64)
    linked = np.zeros(n, dtype=np.int64)
    weight0 = 0
    size0, size1 = 0, int(counts.sum())
    heap: List[Tuple[int, int]] = []

    def absorb(v: int) -> None:
        nonlocal weight0, size0, size1
        side[v] = 0
        weight0 += node_weights[v]
        size0 += counts[v]
        size1 -= counts[v]
        for e in range(A.indptr[v], A.indptr[v + 1]):
            u = A.indices[e]
            if side[u] == 1:
                linked[u] += A.data[e]
                heapq.heappush(heap, (-int(2 * linked[u] - degree[u]), u))

    absorb(start)
    while weight0 < limits.target0 or size0 < limits.min_count[0]:
        v = -1
        while heap:
            neg_gain, u = heapq.heappop(heap)
            current = -int(2 * linked[u] - degree[u])
            if side[u] == 1 and neg_gain == current:
                if size1 - counts[u] >= limits.min_count[1]:
                    v = u
                    break
        if v < 0:
            # Frontier exhausted: jump to another component.
            spare = np.flatnonzero(
                (side == 1) & (size1 - counts >= limits.min_count[1])
            )
            if spare.size == 0:
                break
            v = int(spare[0])
        absorb(v)
    return side


def _bisect(
    A: sp.csr_matrix,
    node_weights: np.ndarray,
    limits: BisectionLimits,
    rng: np.random.Generator,
    coarse_target: int,
) -> np.ndarray:
    levels: List[np.ndarray] = []
    graphs = [(A, node_weights, np.ones(A.shape[0], dtype=np.int64))]
    cap = max(
        float(node_weights.max()), 1.5 * float(node_weights.sum()) / coarse_target
    )
    while graphs[-1][0].shape[0] > coarse_target:
        fine_A, fine_w, fine_counts = graphs[-1]
        n = fine_A.shape[0]
        cmap, num_coarse = heavy_edge_matching(fine_A, fine_w, rng, cap)
        if num_coarse > 0.95 * n:
            break
        coarse_A, coarse_w, _ = coarsen_graph(fine_A, fine_w, cmap, num_coarse)
        coarse_counts = np.zeros(num_coarse, dtype=np.int64)
        np.add.at(coarse_counts, cmap, fine_counts)
        levels.append(cmap)
        graphs.append((coarse_A, coarse_w, coarse_counts))
    logging.debug("Coarsened %s nodes through %s levels.", A.shape[0], len(levels))

    coarse_A, coarse_w, coarse_counts = graphs[-1]
    best_side, best_key = None, None
    for _ in range(constants.INITIAL_BISECTION_TRIES):
        start = int(rng.integers(coarse_A.shape[0]))
        side = grow_region(coarse_A, coarse_w, coarse_counts, limits, start)
        side, _ = fm_refine(coarse_A, side, coarse_w, limits, coarse_counts)
        key = (
            _violation(_side_totals(coarse_w, side), limits),
            _cut(coarse_A, side),
        )
        if best_key is None or key < best_key:
            best_side, best_key = side, key

    side = best_side
    for cmap, (fine_A, fine_w, fine_counts) in zip(
        reversed(levels), reversed(graphs[:-1])
    ):
        side, _ = fm_refine(fine_A, side[cmap], fine_w, limits, fine_counts)
    return side


def _feasible_eps(node_weights: np.ndarray, c: int, eps: float) -> float:
    total = float(node_weights.sum())
    heaviest = max(float(node_weights.max()), math.ceil(total / c))
    needed = heaviest * c / total - 1.0
    if needed > eps + 1e-12:
        logging.warning(
            "Balance tolerance %.4f is infeasible for %s clusters, relaxed to %.4f.",
            eps,
            c,
            needed,
        )
        return needed
    return eps


def partition(
    graph: SuperpixelGraph,
    c: int,
    eps: float = constants.DEFAULT_BALANCE_EPS,
    seed: int = 0,
) -> PartitionAssignment:
    """Partition the graph into c clusters of balanced node weight.

    Every cluster's node weight stays within (1 + eps) * total / c; the
    tolerance is split evenly (multiplicatively) over the bisection depth.

    Args:
        graph (SuperpixelGraph): Graph with node weights.
        c (int): Cluster count.
        eps (float): Balance tolerance.
        seed (int): Seed for matching order and region-growing starts.

    Raises:
        ValueError: If c is outside 1..N or eps is negative.

    Returns:
        PartitionAssignment: The clusters.
    """
    n = graph.N
    if not 1 <= c <= n:
        raise ValueError(f"Cluster count {c} must lie in 1..{n} (nodes)")
    if eps < 0:
        raise ValueError(f"Balance tolerance must be non-negative, got {eps}")
    if c == 1:
        return PartitionAssignment(part=np.zeros(n, dtype=np.int64), c=1)

    node_weights = np.asarray(graph.node_weights, dtype=np.int64)
    eps = _feasible_eps(node_weights, c, eps)
    depth = math.ceil(math.log2(c))
    level_eps = (1.0 + eps) ** (1.0 / depth) - 1.0
    coarse_target = max(
        constants.MIN_COARSE_NODES, constants.COARSE_NODES_PER_PART * c
    )
    A = sp.csr_matrix(graph.A, dtype=np.int64)
    rng = np.random.default_rng(seed)

    part = np.zeros(n, dtype=np.int64)
    pending = [(np.arange(n), c, 0)]
    while pending:
        nodes, parts, offset = pending.pop()
        if parts == 1:
            part[nodes] = offset
            continue
        left = parts // 2
        right = parts - left
        weights = node_weights[nodes]
        total = float(weights.sum())
        limits = BisectionLimits(
            max_weight=(
                (1.0 + level_eps) * total * left / parts,
                (1.0 + level_eps) * total * right / parts,
            ),
            min_count=(left, right),
            target0=total * left / parts,
        )
        side = _bisect(A[nodes][:, nodes], weights, limits, rng, coarse_target)
        pending.append((nodes[side == 1], right, offset + left))
        pending.append((nodes[side == 0], left, offset))

    assign = PartitionAssignment(part=part, c=c)
    if np.any(assign.sizes == 0):
        raise RuntimeError("Partitioning produced an empty cluster.")
    cluster_weights = np.bincount(part, weights=node_weights, minlength=c)
    total = float(node_weights.sum())
    if cluster_weights.max() > (1.0 + eps) * total / c + 1e-9:
        logging.warning(
            "Balance tolerance %.4f not met, relaxed to %.4f.",
            eps,
            cluster_weights.max() * c / total - 1.0,
        )
    logging.info(
        "Partitioned %s nodes into %s clusters, edge-cut %s.",
        n,
        c,
        _cut(A, part),
    )
    return assign


def induce_subgraphs(
    graph: SuperpixelGraph,
    assign: PartitionAssignment,
    node_labels: Optional[NodeLabels] = None,
) -> List[SubGraph]:
    """Cut the graph into one sub-graph per cluster, dropping crossing edges.

    Each sub-graph carries its own normalized adjacency and, if given, the
    node labels of its members.
    """
    if assign.part.size != graph.N:
        raise ValueError(
            f"Assignment covers {assign.part.size} nodes, graph has {graph.N}"
        )
    A = sp.csr_matrix(graph.A)
    subgraphs = []
    for index in range(assign.c):
        nodes = assign.members(index)
        sub_A = A[nodes][:, nodes].tocsr()
        sub_A.sort_indices()
        subgraphs.append(
            SubGraph(
                index=index,
                nodes=nodes,
                A=sub_A,
                X=graph.X[nodes],
                A_norm=normalize(sub_A),
                labels=None if node_labels is None else node_labels.subset(nodes),
            )
        )
    return subgraphs


##
# Artifacts:
##


def write_assignment(assign: PartitionAssignment, path: str) -> None:
    """One `node_id part_id` line per node."""
    lines = [f"{node} {part}\n" for node, part in enumerate(assign.part)]
    utils.atomic_write(path, "".join(lines))


def read_assignment(path: str, n: int) -> PartitionAssignment:
    """Read an assignment written by `write_assignment` or an external tool.

    Raises:
        ValueError: If a node is missing, repeated or out of range, or a
                    cluster id in 0..max is unused.
    """
    part = np.full(n, -1, dtype=np.int64)
    with open(path, "r", encoding="utf-8") as openfile:
        for number, line in enumerate(openfile, start=1):
            if not line.strip():
                continue
            fields = line.split()
            if len(fields) != 2:
                raise ValueError(f"{path}:{number}: expected 'node_id part_id'")
            node, cluster = int(fields[0]), int(fields[1])
            if not 0 <= node < n or cluster < 0:
                raise ValueError(f"{path}:{number}: bad entry {node} {cluster}")
            if part[node] >= 0:
                raise ValueError(f"{path}:{number}: node {node} assigned twice")
            part[node] = cluster
    if np.any(part < 0):
        raise ValueError(f"{path}: {int(np.sum(part < 0))} nodes unassigned")
    c = int(part.max()) + 1
    assign = PartitionAssignment(part=part, c=c)
    if np.any(assign.sizes == 0):
        raise ValueError(f"{path}: cluster ids are not contiguous from 0")
    return assign


def save_subgraph(subgraph: SubGraph, path: str) -> None:
    arrays = {
        "index": np.array(subgraph.index),
        "nodes": subgraph.nodes,
        "X": subgraph.X,
        "data": subgraph.A.data,
        "indices": subgraph.A.indices,
        "indptr": subgraph.A.indptr,
    }
    if subgraph.labels is not None:
        for role in ("train", "val", "test", "impure"):
            arrays[role] = getattr(subgraph.labels, role)
    utils.save_arrays(path, **arrays)


def load_subgraph(path: str) -> SubGraph:
    arrays = utils.load_arrays(path)
    n = arrays["nodes"].size
    A = sp.csr_matrix(
        (arrays["data"], arrays["indices"], arrays["indptr"]), shape=(n, n)
    )
    labels = None
    if "train" in arrays:
        labels = NodeLabels(
            train=arrays["train"],
            val=arrays["val"],
            test=arrays["test"],
            impure=arrays["impure"].astype(bool),
        )
    return SubGraph(
        index=int(arrays["index"]),
        nodes=arrays["nodes"],
        A=A,
        X=arrays["X"],
        A_norm=normalize(A),
        labels=labels,
    )


def save_subgraphs(subgraphs: List[SubGraph], directory: str) -> List[str]:
    """Write one archive per sub-graph; returns the paths written."""
    utils.ensure_dir(directory)
    paths = []
    for subgraph in subgraphs:
        path = os.path.join(
            directory, constants.SUBGRAPH_FILENAME.format(subgraph.index)
        )
        save_subgraph(subgraph, path)
        paths.append(path)
    return paths


def load_subgraphs(paths: List[str]) -> List[SubGraph]:
    return sorted((load_subgraph(path) for path in paths), key=lambda s: s.index)
