"""Proximal maps and projections used by the ADMM solvers."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .lifting import LiftedOperator, unvec, vec

SECULAR_MAX_STEPS = 128
SECULAR_RTOL = 1e-10


class InfeasibleProblemError(ValueError):
    """The fidelity set is empty: ``epsilon`` is below the unavoidable residual."""


def svt(Z: np.ndarray, tau: float) -> np.ndarray:
    """Singular value thresholding, the proximal map of ``tau * ||.||_*``."""
    if tau < 0:
        raise ValueError(f"threshold must be >= 0, got {tau}")
    u, s, vt = np.linalg.svd(Z, full_matrices=False)
    return (u * np.maximum(s - tau, 0.0)) @ vt


def prox_l21(Z: np.ndarray, tau: float) -> np.ndarray:
    """Row-wise soft thresholding, the proximal map of ``tau * sum_i ||z_i||_2``."""
    if tau < 0:
        raise ValueError(f"threshold must be >= 0, got {tau}")
    Z = np.asarray(Z, dtype=float)
    norms = np.linalg.norm(Z, axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = np.where(norms > 0, np.maximum(0.0, 1.0 - tau / norms), 0.0)
    return Z * scale


def row_support(Z: np.ndarray) -> np.ndarray:
    """Indices of the nonzero rows of ``Z``."""
    return np.flatnonzero(np.any(np.asarray(Z) != 0, axis=1))


def project_l20(Zbar: np.ndarray, S: int) -> np.ndarray:
    """Euclidean projection onto matrices with at most ``S`` nonzero rows.

    Keeps the ``S`` rows of largest l2 norm. Among rows of equal norm the
    lowest index is kept, which makes the (set-valued) projection a
    function.
    """
    Zbar = np.asarray(Zbar, dtype=float)
    n = Zbar.shape[0]
    if not 0 <= S <= n:
        raise ValueError(f"need 0 <= S <= {n}, got S={S}")
    norms = np.linalg.norm(Zbar, axis=1)
    keep = np.argsort(-norms, kind="stable")[:S]
    out = np.zeros_like(Zbar)
    out[keep] = Zbar[keep]
    return out


@dataclass(frozen=True)
class FidelitySet:
    """The set ``{Z : ||y_hat - M vec(Z)||_2 <= epsilon}``.

    ``epsilon = 0`` gives the affine set ``M vec(Z) = y_hat``. Construction
    fails with :class:`InfeasibleProblemError` when the part of ``y_hat``
    outside the range of ``M`` is longer than ``epsilon``.
    """

    lifted: LiftedOperator
    y_hat: np.ndarray
    epsilon: float = 0.0
    range_gap: float = field(init=False, default=0.0)

    def __post_init__(self):
        if self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        y_hat = np.asarray(self.y_hat, dtype=float)
        if y_hat.shape != (self.lifted.n,):
            raise ValueError(f"y_hat has shape {y_hat.shape}, expected ({self.lifted.n},)")
        object.__setattr__(self, "y_hat", y_hat)
        u = self.lifted.svd_u
        gap = float(np.linalg.norm(y_hat - u @ (u.T @ y_hat)))
        object.__setattr__(self, "range_gap", gap)
        if gap > self.epsilon + 1e-9 * max(1.0, float(np.linalg.norm(y_hat))):
            raise InfeasibleProblemError(
                f"epsilon={self.epsilon:.3g} is below the minimum achievable residual {gap:.3g}"
            )

    def residual(self, Z: np.ndarray) -> float:
        return float(np.linalg.norm(self.y_hat - self.lifted.forward(Z)))

    def project(self, Zbar: np.ndarray) -> np.ndarray:
        return project_fidelity(self, Zbar)


def _secular_multiplier(c: np.ndarray, sig2: np.ndarray, gap: float, eps: float) -> float:
    """Solve ``phi(lam) = eps`` for the decreasing residual norm ``phi``."""

    def phi(lam):
        return np.sqrt(np.sum((c / (1.0 + lam * sig2)) ** 2) + gap**2)

    def dphi(lam, value):
        return -np.sum(c**2 * sig2 / (1.0 + lam * sig2) ** 3) / value

    lo, hi = 0.0, 1.0
    for _ in range(2048):
        if phi(hi) <= eps:
            break
        lo, hi = hi, 2.0 * hi
    lam = lo
    for _ in range(SECULAR_MAX_STEPS):
        value = phi(lam)
        f = value - eps
        if abs(f) <= SECULAR_RTOL * eps:
            break
        if f > 0:
            lo = lam
        else:
            hi = lam
        if hi - lo <= SECULAR_RTOL * hi:
            break
        step = lam - f / dphi(lam, value)
        lam = step if lo < step < hi else 0.5 * (lo + hi)
    # phi is convex, so a Newton iterate can land a hair short of the root
    return lam if phi(lam) <= eps * (1.0 + SECULAR_RTOL) else hi


def project_fidelity(fset: FidelitySet, Zbar: np.ndarray) -> np.ndarray:
    """Euclidean projection of ``Zbar`` onto the fidelity set."""
    lifted = fset.lifted
    Zbar = np.asarray(Zbar, dtype=float)
    v = vec(Zbar)
    r = lifted.M @ v - fset.y_hat
    if np.linalg.norm(r) <= fset.epsilon:
        return Zbar.copy()
    u, s, vt = lifted.svd_u, lifted.svd_s, lifted.svd_vt
    c = u.T @ r
    if fset.epsilon == 0.0:
        z = v - vt.T @ (c / s)
    else:
        sig2 = s**2
        lam = _secular_multiplier(c, sig2, fset.range_gap, fset.epsilon)
        z = v - vt.T @ (lam * s * c / (1.0 + lam * sig2))
    return unvec(z, lifted.n, lifted.L).copy()
