"""Graph filters and the lifted (Khatri-Rao) measurement operator.

Throughout, ``vec`` stacks the columns of an ``n x L`` matrix (Fortran
order), and column ``j * n + i`` of the lifted operator pairs filter tap
``j`` with node ``i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .graphs import SpectralDecomposition


def vec(Z: np.ndarray) -> np.ndarray:
    return np.asarray(Z).reshape(-1, order="F")


def unvec(v: np.ndarray, n: int, L: int) -> np.ndarray:
    return np.asarray(v).reshape((n, L), order="F")


def as_filter(h) -> np.ndarray:
    h = np.atleast_1d(np.asarray(h, dtype=float))
    if h.ndim != 1 or h.size < 1:
        raise ValueError("filter coefficients must be a nonempty vector")
    if not np.all(np.isfinite(h)):
        raise ValueError("filter coefficients must be finite")
    return h


def apply_graph_filter(sd: SpectralDecomposition, h, x) -> np.ndarray:
    """Return ``sum_l h[l] S^l x`` by accumulating shifted copies of ``x``."""
    h = as_filter(h)
    x = np.asarray(x, dtype=float)
    if x.shape != (sd.n,):
        raise ValueError(f"signal has shape {x.shape}, expected ({sd.n},)")
    out = h[0] * x
    shifted = x
    for coef in h[1:]:
        shifted = sd.operator @ shifted
        out = out + coef * shifted
    return out


def vandermonde(eigenvalues, L: int) -> np.ndarray:
    """Matrix of eigenvalue powers, ``Psi[i, j] = eigenvalues[i] ** j``."""
    if L < 1:
        raise ValueError(f"L must be >= 1, got {L}")
    lam = np.asarray(eigenvalues, dtype=float)
    Psi = np.ones((lam.size, L))
    for j in range(1, L):
        Psi[:, j] = Psi[:, j - 1] * lam
    return Psi


@dataclass(frozen=True)
class LiftedOperator:
    """Linear map ``Z -> M vec(Z)`` with ``M = (Psi^T kr U^T)^T``.

    The thin SVD of ``M`` is computed once at construction and shared by
    every projection that needs it.
    """

    M: np.ndarray
    Psi: np.ndarray
    U: np.ndarray
    svd_u: np.ndarray = field(repr=False)
    svd_s: np.ndarray = field(repr=False)
    svd_vt: np.ndarray = field(repr=False)

    @property
    def n(self) -> int:
        return self.U.shape[0]

    @property
    def L(self) -> int:
        return self.Psi.shape[1]

    def forward(self, Z: np.ndarray) -> np.ndarray:
        return self.M @ vec(Z)

    def adjoint(self, r: np.ndarray) -> np.ndarray:
        return unvec(self.M.T @ r, self.n, self.L)


def build_lifted_operator(sd: SpectralDecomposition, L: int) -> LiftedOperator:
    Psi = vandermonde(sd.eigenvalues, L)
    U = np.asarray(sd.U)
    # column j*n + i is Psi[:, j] * U[:, i]
    M = np.hstack([Psi[:, [j]] * U for j in range(L)])
    u, s, vt = np.linalg.svd(M, full_matrices=False)
    rank = int(np.sum(s > s[0] * max(M.shape) * np.finfo(float).eps)) if s.size else 0
    u, s, vt = u[:, :rank], s[:rank], vt[:rank]
    for arr in (M, Psi, u, s, vt):
        arr.setflags(write=False)
    return LiftedOperator(M=M, Psi=Psi, U=U, svd_u=u, svd_s=s, svd_vt=vt)


@dataclass(frozen=True)
class Measurement:
    y: np.ndarray
    y_hat: np.ndarray


def diffuse_and_measure(sd: SpectralDecomposition, h, x, noise_sigma: float = 0.0,
                        seed=None) -> Measurement:
    """Diffuse ``x`` through the filter, add white Gaussian noise, and transform.

    ``seed`` may be an int, a ``numpy.random.Generator`` or None.
    """
    if noise_sigma < 0:
        raise ValueError(f"noise_sigma must be >= 0, got {noise_sigma}")
    y = apply_graph_filter(sd, h, x)
    if noise_sigma > 0:
        rng = np.random.default_rng(seed)
        y = y + noise_sigma * rng.standard_normal(sd.n)
    return Measurement(y=y, y_hat=sd.U @ y)
