import json
from collections import deque

import numpy as np
import pytest

from graph_deblur.graphs import (
    Graph,
    build_community_graph,
    build_random_sensor_graph,
    community_labels,
    load_graph,
    save_graph,
    spectral_decompose,
)


def bfs_connected(W):
    n = W.shape[0]
    seen = {0}
    queue = deque([0])
    while queue:
        i = queue.popleft()
        for j in np.flatnonzero(W[i]):
            if j not in seen:
                seen.add(int(j))
                queue.append(int(j))
    return len(seen) == n


def check_invariants(g):
    W = g.weights
    assert np.array_equal(W, W.T)
    assert np.all(np.diag(W) == 0)
    assert np.all(W >= 0)
    assert bfs_connected(W)


def test_sensor_two_nodes_single_edge():
    g = build_random_sensor_graph(2, k=1, seed=5)
    assert g.edges() == [(0, 1, pytest.approx(np.exp(-0.5), abs=1e-15))]


def test_sensor_64():
    g = build_random_sensor_graph(64, k=6, seed=1)
    assert g.n == 64
    assert g.coords.shape == (64, 2)
    assert np.all((g.coords >= 0) & (g.coords <= 1))
    check_invariants(g)
    # every node keeps at least its k nearest neighbours
    assert np.all((g.weights > 0).sum(axis=1) >= 6)


@pytest.mark.parametrize("n,k", [(1, 1), (5, 0), (5, 5)])
def test_sensor_bad_params(n, k):
    with pytest.raises(ValueError):
        build_random_sensor_graph(n, k=k)


def test_sensor_kernel_weights():
    g = build_random_sensor_graph(12, k=3, seed=2)
    D = np.linalg.norm(g.coords[:, None] - g.coords[None], axis=-1)
    np.fill_diagonal(D, np.inf)
    theta = np.sort(D, axis=1)[:, :3].mean()
    i, j = np.nonzero(g.weights)
    np.testing.assert_allclose(g.weights[i, j], np.exp(-D[i, j] ** 2 / (2 * theta**2)), rtol=1e-12)


def test_community_complete():
    g = build_community_graph(4, c=1, p_in=1.0, p_out=1.0, seed=0)
    np.testing.assert_array_equal(g.weights, np.ones((4, 4)) - np.eye(4))


def test_community_block_densities():
    g = build_community_graph(100, c=4, seed=7)
    check_invariants(g)
    A = g.weights
    assert set(np.unique(A)) <= {0.0, 1.0}
    labels = community_labels(100, 4)
    same = labels[:, None] == labels[None, :]
    off_diag = ~np.eye(100, dtype=bool)
    assert abs(A[same & off_diag].mean() - 0.3) < 0.1
    assert abs(A[~same].mean() - 0.01) < 0.05


@pytest.mark.parametrize("kw", [dict(n=3, c=5), dict(n=10, c=2, p_in=0.1, p_out=0.2),
                                dict(n=10, c=2, p_out=0.0)])
def test_community_bad_params(kw):
    with pytest.raises(ValueError):
        build_community_graph(**kw)


def test_generators_deterministic():
    a = build_random_sensor_graph(30, k=4, seed=9)
    b = build_random_sensor_graph(30, k=4, seed=9)
    assert a.weights.tobytes() == b.weights.tobytes()
    c = build_community_graph(40, c=2, seed=9)
    d = build_community_graph(40, c=2, seed=9)
    assert c.weights.tobytes() == d.weights.tobytes()


def test_graph_rejects_invalid():
    with pytest.raises(ValueError):
        Graph(np.array([[0.0, 1.0], [2.0, 0.0]]))
    with pytest.raises(ValueError):
        Graph(np.array([[1.0, 1.0], [1.0, 0.0]]))
    with pytest.raises(ValueError):
        Graph(np.zeros((3, 3)))  # disconnected


def test_spectral_path2(path2):
    sd = spectral_decompose(path2, normalize=False)
    np.testing.assert_allclose(sd.eigenvalues, [-1.0, 1.0], atol=1e-15)
    s = 1 / np.sqrt(2)
    # eigenvectors are defined up to sign
    assert abs(abs(sd.V[:, 0] @ np.array([s, -s])) - 1) < 1e-12
    assert abs(abs(sd.V[:, 1] @ np.array([s, s])) - 1) < 1e-12


def test_spectral_normalized_radius(sensor10):
    sd = spectral_decompose(sensor10)
    assert abs(np.max(np.abs(sd.eigenvalues)) - 1) < 1e-12


@pytest.mark.parametrize("normalize", [True, False])
def test_spectral_invariants(normalize):
    g = build_random_sensor_graph(60, k=5, seed=4)
    sd = spectral_decompose(g, normalize=normalize)
    S = sd.operator
    V, lam = sd.V, sd.eigenvalues
    assert np.all(np.diff(lam) >= 0)
    np.testing.assert_array_equal(sd.U, V.T)
    assert np.abs(V.T @ V - np.eye(60)).max() < 1e-10
    assert np.abs(sd.U @ V - np.eye(60)).max() < 1e-10
    assert np.abs(S @ V - V * lam).max() < 1e-8
    recon = V @ np.diag(lam) @ V.T
    assert np.linalg.norm(recon - S) / np.linalg.norm(S) < 1e-10


def test_graph_json_roundtrip(tmp_path):
    g = build_random_sensor_graph(64, k=6, seed=1)
    path = tmp_path / "g.json"
    save_graph(g, path)
    data = json.loads(path.read_text())
    assert data["n"] == 64
    assert all(i < j for i, j, _ in data["edges"])
    h = load_graph(path)
    assert h.weights.tobytes() == g.weights.tobytes()
    assert h.coords.tobytes() == g.coords.tobytes()


def test_graph_json_rejects_bad_edge(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text(json.dumps({"n": 2, "coords": None, "edges": [[1, 0, 1.0]]}))
    with pytest.raises(ValueError):
        load_graph(path)
