import numpy as np
import pytest

from handemg import graph_features as gf
from handemg.errors import InvalidInputError


def _path_graph(n):
    return gf.SkeletonGraph(n_nodes=n, edges=[(i, i + 1) for i in range(n - 1)])


def test_edges_canonicalized():
    g = gf.SkeletonGraph(n_nodes=3, edges=[(2, 0), (1, 2)])
    assert g.edges == ((0, 2), (1, 2))
    adj = g.adjacency
    assert np.array_equal(adj, adj.T)
    assert adj.sum() == 4


def test_edge_validation():
    with pytest.raises(InvalidInputError):
        gf.SkeletonGraph(n_nodes=3, edges=[(0, 0)])          # self loop
    with pytest.raises(InvalidInputError):
        gf.SkeletonGraph(n_nodes=3, edges=[(0, 1), (1, 0)])  # duplicate
    with pytest.raises(InvalidInputError):
        gf.SkeletonGraph(n_nodes=3, edges=[(0, 3)])          # out of range


def test_laplacian_identity():
    g = _path_graph(6)
    lap = gf.graph_laplacian(g)
    deg = np.diag(g.adjacency.sum(axis=1))
    assert np.array_equal(lap, deg - g.adjacency)
    # rows of L sum to zero
    assert np.abs(lap.sum(axis=1)).max() == 0
    lap_n = gf.graph_laplacian(g, normalized=True)
    assert np.abs(np.diag(lap_n) - 1.0).max() < 1e-12


def test_path_graph_eigenvalues_analytic():
    """P_n Laplacian eigenvalues are 2 - 2 cos(pi m / n), m = 0..n-1."""
    n = 5
    pe = gf.laplacian_eigenvectors(_path_graph(n), k=n)
    expected = 2.0 - 2.0 * np.cos(np.pi * np.arange(n) / n)
    assert np.abs(pe.eigenvalues - expected).max() < 1e-10


def test_eigenvectors_orthonormal_and_signed():
    pe = gf.laplacian_eigenvectors(gf.default_marker_graph(), k=8)
    v = pe.eigenvectors
    assert v.shape == (21, 8)
    assert np.abs(v.T @ v - np.eye(8)).max() < 1e-10
    # deterministic sign: first nonzero entry of each eigenvector is positive
    for col in v.T:
        nz = col[np.abs(col) > 1e-12]
        assert nz[0] > 0
    assert np.all(np.diff(pe.eigenvalues) >= -1e-12)


def test_eigenvectors_satisfy_laplacian():
    g = gf.default_marker_graph()
    lap = gf.graph_laplacian(g)
    pe = gf.laplacian_eigenvectors(g, k=6)
    resid = lap @ pe.eigenvectors - pe.eigenvectors * pe.eigenvalues[None, :]
    assert np.abs(resid).max() < 1e-10


def test_shortest_paths_vs_floyd_warshall():
    rng = np.random.default_rng(0)
    for _ in range(25):
        n = 21
        # random spanning tree plus a few extra edges: always connected
        edges = {(min(i, rng.integers(0, i)), max(i, rng.integers(0, i)))
                 for i in range(1, n)}
        edges = set()
        for i in range(1, n):
            j = int(rng.integers(0, i))
            edges.add((j, i))
        for _ in range(rng.integers(0, 8)):
            a, b = rng.choice(n, 2, replace=False)
            edges.add((min(a, b), max(a, b)))
        g = gf.SkeletonGraph(n_nodes=n, edges=sorted(edges))
        spd = gf.shortest_path_distances(g)
        dist = np.full((n, n), np.inf)
        np.fill_diagonal(dist, 0.0)
        for a, b in g.edges:
            dist[a, b] = dist[b, a] = 1.0
        for k in range(n):
            dist = np.minimum(dist, dist[:, k, None] + dist[None, k, :])
        assert np.array_equal(spd, dist.astype(int))


def test_disconnected_graph_raises():
    g = gf.SkeletonGraph(n_nodes=4, edges=[(0, 1), (2, 3)])
    with pytest.raises(InvalidInputError):
        gf.shortest_path_distances(g)
    with pytest.raises(InvalidInputError):
        gf.laplacian_eigenvectors(g, k=2)


def test_default_marker_graph_topology():
    g = gf.default_marker_graph()
    assert g.n_nodes == gf.N_MARKERS == 21
    assert len(g.edges) == 20  # tree
    deg = g.adjacency.sum(axis=1)
    assert deg[0] == 5                      # wrist joins all five chains
    assert np.count_nonzero(deg == 1) == 5  # one tip per finger
    spd = gf.shortest_path_distances(g)
    assert spd.max() == 8                   # tip to tip across the wrist
