"""Graph construction and spectral decomposition of the adjacency operator.

Graphs are undirected, weighted and connected. The variation operator is
the adjacency matrix, optionally scaled by its spectral radius.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy.sparse.csgraph import connected_components
from scipy.spatial.distance import cdist

MAX_REDRAWS = 100


class GraphConstructionError(RuntimeError):
    """Raised when a generator cannot produce a connected graph."""


def is_connected(weights: np.ndarray) -> bool:
    if weights.shape[0] <= 1:
        return True
    n_comp, _ = connected_components(weights > 0, directed=False)
    return n_comp == 1


@dataclass(frozen=True)
class Graph:
    """Undirected weighted graph.

    Attributes
    ----------
    weights : ndarray, shape (n, n)
        Symmetric nonnegative weight matrix with zero diagonal.
    coords : ndarray, shape (n, 2), optional
        Node positions (only set by the sensor generator).
    """

    weights: np.ndarray
    coords: Optional[np.ndarray] = None

    def __post_init__(self):
        W = np.array(self.weights, dtype=float)
        if W.ndim != 2 or W.shape[0] != W.shape[1]:
            raise ValueError(f"weights must be square, got shape {W.shape}")
        if not np.array_equal(W, W.T):
            raise ValueError("weights must be symmetric")
        if np.any(np.diag(W) != 0):
            raise ValueError("weights must have a zero diagonal")
        if np.any(W < 0) or not np.all(np.isfinite(W)):
            raise ValueError("weights must be finite and nonnegative")
        if not is_connected(W):
            raise ValueError("graph is not connected")
        W.setflags(write=False)
        object.__setattr__(self, "weights", W)
        if self.coords is not None:
            C = np.array(self.coords, dtype=float)
            if C.shape != (W.shape[0], 2):
                raise ValueError(f"coords must have shape ({W.shape[0]}, 2)")
            C.setflags(write=False)
            object.__setattr__(self, "coords", C)

    @property
    def n(self) -> int:
        return self.weights.shape[0]

    def edges(self) -> list[tuple[int, int, float]]:
        """Undirected edge list ``(i, j, w)`` with ``i < j``."""
        ii, jj = np.nonzero(np.triu(self.weights, 1))
        return [(int(i), int(j), float(self.weights[i, j])) for i, j in zip(ii, jj)]


def build_random_sensor_graph(n: int, k: int = 6, seed: int = 0) -> Graph:
    """Random geometric k-nearest-neighbour graph in the unit square.

    Each node is joined to its ``k`` nearest neighbours with weight
    ``exp(-d**2 / (2 * theta**2))`` where ``theta`` is the mean k-NN
    distance; the graph is symmetrized by taking the maximum. Disconnected
    draws are discarded and redrawn from the same random stream.
    """
    if n < 2:
        raise ValueError(f"sensor graph needs n >= 2, got {n}")
    if not 1 <= k < n:
        raise ValueError(f"need 1 <= k < n, got k={k}, n={n}")
    rng = np.random.default_rng(seed)
    rows = np.repeat(np.arange(n), k)
    for _ in range(MAX_REDRAWS):
        coords = rng.uniform(size=(n, 2))
        dist = cdist(coords, coords)
        np.fill_diagonal(dist, np.inf)
        nbrs = np.argsort(dist, axis=1, kind="stable")[:, :k]
        d = np.take_along_axis(dist, nbrs, axis=1)
        theta = d.mean()
        W = np.zeros((n, n))
        W[rows, nbrs.ravel()] = np.exp(-(d.ravel() ** 2) / (2.0 * theta**2))
        W = np.maximum(W, W.T)
        if is_connected(W):
            return Graph(W, coords)
    raise GraphConstructionError(
        f"no connected sensor graph after {MAX_REDRAWS} draws (n={n}, k={k}); increase k"
    )


def build_community_graph(
    n: int,
    c: int = 4,
    p_in: float = 0.3,
    p_out: float = 0.01,
    seed: int = 0,
) -> Graph:
    """Stochastic block model with ``c`` near-equal communities and unit weights.

    Node ``i`` belongs to community ``i * c // n``.
    """
    if not n >= c >= 1:
        raise ValueError(f"need n >= c >= 1, got n={n}, c={c}")
    if not 0 < p_out <= p_in <= 1:
        raise ValueError(f"need 0 < p_out <= p_in <= 1, got p_in={p_in}, p_out={p_out}")
    rng = np.random.default_rng(seed)
    labels = community_labels(n, c)
    prob = np.where(labels[:, None] == labels[None, :], p_in, p_out)
    for _ in range(MAX_REDRAWS):
        A = np.triu(rng.uniform(size=(n, n)) < prob, 1).astype(float)
        A = A + A.T
        if is_connected(A):
            return Graph(A)
    raise GraphConstructionError(
        f"no connected community graph after {MAX_REDRAWS} draws; raise p_out or p_in"
    )


def community_labels(n: int, c: int) -> np.ndarray:
    return np.arange(n) * c // n


@dataclass(frozen=True)
class SpectralDecomposition:
    """Eigendecomposition ``S = V diag(eigenvalues) V^T`` of the variation operator.

    ``U`` is the graph Fourier transform, ``U = V^T``. ``operator`` is the
    (possibly normalized) matrix that was decomposed and ``scale`` the
    factor it was divided by.
    """

    eigenvalues: np.ndarray
    V: np.ndarray
    U: np.ndarray
    operator: np.ndarray
    scale: float = 1.0

    @property
    def n(self) -> int:
        return self.eigenvalues.shape[0]


def spectral_decompose(g: Graph, normalize: bool = True) -> SpectralDecomposition:
    """Decompose the adjacency matrix of ``g``.

    With ``normalize`` the adjacency is divided by its largest-magnitude
    eigenvalue first, so the spectrum lies in [-1, 1].
    """
    A = np.array(g.weights, dtype=float)
    lam, V = np.linalg.eigh(A)
    scale = 1.0
    if normalize:
        scale = float(np.max(np.abs(lam)))
        A = A / scale
        lam = lam / scale
    U = V.T.copy()
    for arr in (lam, V, U, A):
        arr.setflags(write=False)
    return SpectralDecomposition(eigenvalues=lam, V=V, U=U, operator=A, scale=scale)


# -- JSON file format ------------------------------------------------------

def graph_to_dict(g: Graph) -> dict:
    return {
        "n": g.n,
        "coords": None if g.coords is None else g.coords.tolist(),
        "edges": [[i, j, w] for i, j, w in g.edges()],
    }


def graph_from_dict(data: dict) -> Graph:
    n = int(data["n"])
    W = np.zeros((n, n))
    for i, j, w in data["edges"]:
        i, j = int(i), int(j)
        if not 0 <= i < j < n:
            raise ValueError(f"bad edge ({i}, {j}) for n={n}; need 0 <= i < j < n")
        W[i, j] = W[j, i] = float(w)
    coords = data.get("coords")
    return Graph(W, None if coords is None else np.asarray(coords, dtype=float))


def save_graph(g: Graph, path, **extra) -> None:
    """Write ``g`` as JSON. Python floats serialize with round-trip precision."""
    data = {"schema": "graph-deblur/v1", **graph_to_dict(g), **extra}
    Path(path).write_text(json.dumps(data, indent=1))


def load_graph(path) -> Graph:
    return graph_from_dict(json.loads(Path(path).read_text()))
