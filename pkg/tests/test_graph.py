from collections import deque

import numpy as np
import pytest
import scipy.sparse as sp
from pytest import raises

from hgc import graph
from hgc.graph import SuperpixelGraph
from hgc.superpixel import SuperpixelMap

from .test_constants import *


def random_adjacency(rng, n, density=0.2):
    upper = np.triu(rng.random((n, n)) < density, k=1)
    dense = upper | upper.T
    return sp.csr_matrix(dense)


def bfs_within(dense, start, h):
    dist = {start: 0}
    queue = deque([start])
    while queue:
        v = queue.popleft()
        if dist[v] == h:
            continue
        for u in np.flatnonzero(dense[v]):
            if int(u) not in dist:
                dist[int(u)] = dist[v] + 1
                queue.append(int(u))
    return sorted(v for v in dist if v != start)


def test_spatial_adjacency():
    smap = SuperpixelMap(3, 4, assignment_grid.copy())
    adj = graph.spatial_adjacency(smap).toarray()
    assert adj.dtype == bool
    assert adj.tolist() == [
        [False, True, True],
        [True, False, True],
        [True, True, False],
    ]

    strip = SuperpixelMap(4, 1, np.array([[0, 1, 2, 3]]))
    adj = graph.spatial_adjacency(strip).toarray().astype(int)
    assert adj.tolist() == [[0, 1, 0, 0], [1, 0, 1, 0], [0, 1, 0, 1], [0, 0, 1, 0]]


def test_hop_neighborhood_path():
    adj = graph.spatial_adjacency(SuperpixelMap(5, 1, np.arange(5)[None, :]))
    assert graph.hop_neighborhood(adj, 0, 1).tolist() == [1]
    assert graph.hop_neighborhood(adj, 2, 2).tolist() == [0, 1, 3, 4]
    assert graph.hop_neighborhood(adj, 0, 10).tolist() == [1, 2, 3, 4]
    with raises(ValueError):
        graph.reachability(adj, 0)


def test_hop_neighborhood_matches_bfs():
    rng = np.random.default_rng(11)
    for _ in range(200):
        n = int(rng.integers(1, 31))
        adj = random_adjacency(rng, n, density=float(rng.uniform(0.05, 0.3)))
        dense = adj.toarray()
        h = int(rng.integers(1, 4))
        j = int(rng.integers(n))
        assert graph.hop_neighborhood(adj, j, h).tolist() == bfs_within(dense, j, h)


def test_pairwise_distance():
    X = np.array([[0.0, 0.0], [3.0, 4.0]])
    assert graph.pairwise_distance(X, 0, 1) == 5.0
    assert graph.pairwise_distance(X, 1, 1) == 0.0


def test_topk_tie_breaks_on_node_id():
    # Node 0 is equidistant from 1 and 2; the smaller id wins.
    adj = sp.csr_matrix(np.array([[0, 1, 1], [1, 0, 0], [1, 0, 0]], dtype=bool))
    X = np.array([[0.0], [1.0], [-1.0]])
    A = graph.topk_adjacency(adj, X, 1, 1).toarray()
    # 1 -> 0 and 2 -> 0 are their only choices; symmetrising keeps all.
    assert A.astype(int).tolist() == [[0, 1, 1], [1, 0, 0], [1, 0, 0]]

    lone = graph.topk_adjacency(sp.csr_matrix((2, 2), dtype=bool), X[:2], 1, 3)
    assert lone.nnz == 0
    with raises(ValueError):
        graph.topk_adjacency(adj, X, 1, 0)


def test_topk_matches_sort_and_select():
    rng = np.random.default_rng(12)
    for _ in range(200):
        n = int(rng.integers(1, 31))
        adj = random_adjacency(rng, n, density=float(rng.uniform(0.05, 0.3)))
        dense = adj.toarray()
        # Small integer attributes force distance ties.
        X = rng.integers(0, 3, size=(n, 2)).astype(np.float64)
        h = int(rng.integers(1, 4))
        k = int(rng.integers(1, 6))

        expected = np.zeros((n, n), dtype=bool)
        for i in range(n):
            nbrs = bfs_within(dense, i, h)
            ranked = sorted(nbrs, key=lambda j: (np.linalg.norm(X[i] - X[j]), j))
            for j in ranked[:k]:
                expected[i, j] = expected[j, i] = True

        actual = graph.topk_adjacency(adj, X, h, k).toarray()
        assert np.array_equal(actual, expected)


def test_multiscale_sum():
    one = sp.csr_matrix(np.array([[0, 1], [1, 0]], dtype=bool))
    total = graph.multiscale_sum([one, one, sp.csr_matrix((2, 2), dtype=bool)])
    assert total.dtype == np.int64
    assert total.toarray().tolist() == [[0, 2], [2, 0]]
    with raises(ValueError):
        graph.multiscale_sum([])
    with raises(ValueError):
        graph.multiscale_sum([one, sp.csr_matrix((3, 3), dtype=bool)])


def test_normalize_small():
    A = sp.csr_matrix(np.array([[0, 1], [1, 0]]))
    assert np.allclose(graph.normalize(A).toarray(), [[0.5, 0.5], [0.5, 0.5]])
    isolated = graph.normalize(sp.csr_matrix((3, 3)))
    assert np.allclose(isolated.toarray(), np.eye(3))


@pytest.mark.parametrize("seed", range(20))
def test_normalize_law_and_spectrum(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 201))
    upper = np.triu(rng.integers(0, 3, size=(n, n)) * (rng.random((n, n)) < 0.05), 1)
    weights = upper + upper.T
    A_norm = graph.normalize(sp.csr_matrix(weights)).toarray()

    regular = weights + np.eye(n)
    degrees = regular.sum(axis=1)
    rebuilt = A_norm * np.sqrt(np.outer(degrees, degrees))
    assert np.max(np.abs(rebuilt - regular)) < 1e-12
    assert np.max(np.abs(np.linalg.eigvalsh(A_norm))) <= 1.0 + 1e-9


def test_build_graph_on_strip():
    smap = SuperpixelMap(4, 2, np.array([[0, 0, 1, 2], [0, 3, 3, 2]]))
    X = np.array([[0.0], [1.0], [5.0], [1.1]])
    sp_graph = graph.build_graph(smap, X, o=2, k=1)
    assert sp_graph.N == 4
    assert sp_graph.node_weights.tolist() == [3, 1, 2, 2]
    assert (sp_graph.o, sp_graph.k) == (2, 1)
    A = sp_graph.A.toarray()
    assert np.array_equal(A, A.T)
    assert np.all(np.diag(A) == 0)
    assert A.max() <= 2
    with raises(ValueError):
        graph.build_graph(smap, X, o=0, k=1)


def test_graph_artifacts(tmp_path):
    A = sp.csr_matrix(np.array([[0, 2, 0], [2, 0, 1], [0, 1, 0]], dtype=np.int64))
    sp_graph = SuperpixelGraph(
        X=np.array([[0.5], [1.0], [2.0]]),
        A=A,
        o=2,
        k=5,
        node_weights=np.array([3, 1, 4]),
    )
    assert sp_graph.num_edges == 2
    path = str(tmp_path / "graph.npz")
    graph.save_graph(sp_graph, path)
    loaded = graph.load_graph(path)
    assert np.array_equal(loaded.A.toarray(), A.toarray())
    assert np.array_equal(loaded.X, sp_graph.X)
    assert loaded.node_weights.tolist() == [3, 1, 4]
    assert (loaded.o, loaded.k) == (2, 5)

    assert graph.edge_list(A) == [(0, 1, 2), (1, 2, 1)]
    edges_path = str(tmp_path / "edges.txt")
    graph.export_edges(sp_graph, edges_path, str(tmp_path / "attributes.txt"))
    with open(edges_path, "r") as reader:
        assert reader.read() == "0 1 2\n1 2 1\n"
    with open(str(tmp_path / "attributes.txt"), "r") as reader:
        assert reader.read() == "0.5\n1.0\n2.0\n"
    assert np.array_equal(graph.read_edges(edges_path, 3).toarray(), A.toarray())


def test_read_edges_errors(fs):
    fs.create_file("/home/loop.txt", contents="1 1 1\n")
    with raises(ValueError):
        graph.read_edges("/home/loop.txt", 3)
    fs.create_file("/home/range.txt", contents="0 5 1\n")
    with raises(ValueError):
        graph.read_edges("/home/range.txt", 3)
    fs.create_file("/home/short.txt", contents="0 1\n")
    with raises(ValueError):
        graph.read_edges("/home/short.txt", 3)
