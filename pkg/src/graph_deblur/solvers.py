"""Consensus ADMM solvers for lifted graph blind deconvolution.

Both solvers split the problem over a consensus variable ``W`` (kept in
the fidelity set) and two local copies: ``Z1`` handled by singular value
thresholding and ``Z2`` handled either by row shrinkage (convex baseline)
or by the top-S row projection (S-sparse method). Duals are scaled, so the
penalty ``rho`` acts directly as the proximal threshold.

Multiple measurements are held as a ``(P, n, L)`` stack. The nuclear norm
acts on the vertical stack ``(P*n, L)``; row operators act on the
horizontal stack ``(n, P*L)`` for the convex method and block by block for
the S-sparse method.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .lifting import LiftedOperator
from .proximal import FidelitySet, project_l20, prox_l21, row_support, svt

TRACE_FIELDS = (
    "iter",
    "rho",
    "consensus_residual_1",
    "consensus_residual_2",
    "fidelity_residual",
    "nuclear_norm",
    "row_support_size",
)

SCALE_RULES = ("h0=1", "unit-h")


@dataclass(frozen=True)
class SolverConfig:
    """Parameters shared by both solvers.

    ``rho0`` is the initial penalty (and proximal threshold), decayed by
    ``eta`` after every S-sparse iteration. The convex solver keeps it
    fixed. ``epsilon`` is the fidelity radius of the S-sparse method and
    has no default: it must be set from the known noise level (see
    :func:`default_epsilon`) or explicitly.
    """

    rho0: float = 1.0
    eta: float = 0.99
    epsilon: Optional[float] = None
    tau: float = 1.0
    sparsity_S: int = 1
    max_iter: int = 5000
    tol: float = 1e-6
    scale_rule: str = "h0=1"
    trace_path: Optional[str] = None

    def __post_init__(self):
        if not self.rho0 > 0:
            raise ValueError(f"rho0 must be > 0, got {self.rho0}")
        if not 0 < self.eta <= 1:
            raise ValueError(f"eta must lie in (0, 1], got {self.eta}")
        if self.epsilon is not None and self.epsilon < 0:
            raise ValueError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.tau < 0:
            raise ValueError(f"tau must be >= 0, got {self.tau}")
        if self.sparsity_S < 1:
            raise ValueError(f"sparsity_S must be >= 1, got {self.sparsity_S}")
        if self.max_iter < 1:
            raise ValueError(f"max_iter must be >= 1, got {self.max_iter}")
        if not self.tol > 0:
            raise ValueError(f"tol must be > 0, got {self.tol}")
        if self.scale_rule not in SCALE_RULES:
            raise ValueError(f"scale_rule must be one of {SCALE_RULES}")

    def with_(self, **changes) -> "SolverConfig":
        return replace(self, **changes)


def default_epsilon(noise_sigma: float, n: int) -> float:
    """Fidelity radius covering white noise of std ``noise_sigma`` on ``n`` nodes."""
    return 1.1 * noise_sigma * math.sqrt(n)


@dataclass
class SolverState:
    W: np.ndarray
    Z1: np.ndarray
    Z2: np.ndarray
    Y1: np.ndarray
    Y2: np.ndarray
    rho: float
    iter: int = 0


@dataclass
class DeconvResult:
    """Output of a solver run.

    For single-measurement solvers ``Z_final`` is ``(n, L)`` and ``x_hat``
    has length ``n``; the multi-measurement solvers return a ``(P, n, L)``
    stack and ``x_hat`` of shape ``(P, n)``. ``h_hat`` is shared.
    """

    Z_final: np.ndarray
    x_hat: np.ndarray
    h_hat: np.ndarray
    fidelity_residual: float
    iterations: int
    converged: bool
    method: str
    consensus_gap: float = 0.0
    scale_rule: str = "h0=1"
    objective_trace: list = field(default_factory=list, repr=False)

    def support(self) -> np.ndarray:
        """Nonzero rows of ``Z_final`` (per block for stacked results)."""
        if self.Z_final.ndim == 3:
            return [row_support(Zp) for Zp in self.Z_final]
        return row_support(self.Z_final)


def rank1_factor(Z: np.ndarray, scale_rule: str = "h0=1") -> tuple[np.ndarray, np.ndarray]:
    """Split ``Z`` into ``(x, h)`` with ``x h^T`` its best rank-1 approximation.

    ``scale_rule`` fixes the ``(c x, h / c)`` ambiguity: ``"h0=1"`` makes
    the first filter tap one, ``"unit-h"`` returns a unit-norm ``h`` with a
    nonnegative first tap.
    """
    Z = np.asarray(Z, dtype=float)
    if not np.any(Z):
        raise ValueError("cannot factor a zero matrix")
    u, s, vt = np.linalg.svd(Z, full_matrices=False)
    sigma, u1, v1 = s[0], u[:, 0].copy(), vt[0]
    # zero rows of Z stay exactly zero (the SVD leaves round-off there)
    u1[~np.any(Z, axis=1)] = 0.0
    if scale_rule == "h0=1":
        if abs(v1[0]) < 1e-8 * np.linalg.norm(v1):
            raise ValueError("leading filter tap is numerically zero; use scale_rule='unit-h'")
        return sigma * v1[0] * u1, v1 / v1[0]
    if scale_rule == "unit-h":
        sgn = -1.0 if v1[0] < 0 else 1.0
        return sigma * sgn * u1, sgn * v1
    raise ValueError(f"unknown scale rule {scale_rule!r}")


def _factor(Z: np.ndarray, rule: str):
    try:
        x, h = rank1_factor(Z, rule)
    except ValueError:
        if not np.any(Z):
            return np.zeros(Z.shape[0]), np.zeros(Z.shape[1]), rule
        rule = "unit-h"
        x, h = rank1_factor(Z, rule)
    return x, h, rule


def _vertical(Z):
    P, n, L = Z.shape
    return Z.reshape(P * n, L)


def _horizontal(Z):
    P, n, L = Z.shape
    return Z.transpose(1, 0, 2).reshape(n, P * L)


def _from_horizontal(H, P, L):
    n = H.shape[0]
    return H.reshape(n, P, L).transpose(1, 0, 2)


def _as_stack(y_hats, n) -> np.ndarray:
    y = np.asarray(y_hats, dtype=float)
    if y.ndim == 1:
        y = y[None, :]
    if y.ndim != 2 or y.shape[1] != n or y.shape[0] < 1:
        raise ValueError(f"measurements must have shape (P, {n}), got {np.shape(y_hats)}")
    return y


def _project_all(fsets, Zbar):
    return np.stack([f.project(Zp) for f, Zp in zip(fsets, Zbar)])


def _fidelity(fsets, Z) -> float:
    return float(math.sqrt(sum(f.residual(Zp) ** 2 for f, Zp in zip(fsets, Z))))


def _run(kind, lifted, y_stack, cfg, Z_init, epsilon):
    P = y_stack.shape[0]
    n, L = lifted.n, lifted.L
    fsets = [FidelitySet(lifted, y, epsilon) for y in y_stack]
    if Z_init is None:
        Z_init = np.zeros((P, n, L))
    state = SolverState(W=Z_init.copy(), Z1=Z_init.copy(), Z2=Z_init.copy(),
                        Y1=np.zeros_like(Z_init), Y2=np.zeros_like(Z_init), rho=cfg.rho0)
    decay = cfg.eta if kind == "ssparse" else 1.0
    trace = []
    converged = False
    for k in range(cfg.max_iter):
        st = state
        rho = cfg.rho0 * decay**k
        W_old = st.W
        st.W = _project_all(fsets, 0.5 * (st.Z1 - st.Y1 + st.Z2 - st.Y2))
        st.Z1 = svt(_vertical(st.W + st.Y1), rho).reshape(P, n, L)
        if kind == "convex":
            st.Z2 = _from_horizontal(prox_l21(_horizontal(st.W + st.Y2), cfg.tau * rho), P, L)
        else:
            st.Z2 = np.stack([project_l20(B, cfg.sparsity_S) for B in st.W + st.Y2])
        st.Y1 = st.Y1 + st.W - st.Z1
        st.Y2 = st.Y2 + st.W - st.Z2
        st.iter = k + 1
        st.rho = cfg.rho0 * decay ** (k + 1)

        r1 = float(np.linalg.norm(st.W - st.Z1))
        r2 = float(np.linalg.norm(st.W - st.Z2))
        w_norm = float(np.linalg.norm(st.W))
        trace.append((k, rho, r1, r2, _fidelity(fsets, st.W),
                      float(np.linalg.svd(_vertical(st.Z1), compute_uv=False).sum()),
                      int(row_support(_horizontal(st.Z2)).size)))
        if kind == "convex":
            change = float(np.linalg.norm(st.W - W_old)) / max(1.0, float(np.linalg.norm(W_old)))
            done = k > 0 and change < cfg.tol
        else:
            done = max(r1, r2) < cfg.tol * max(1.0, w_norm)
        if done:
            converged = True
            break

    Z_final = state.W if kind == "convex" else state.Z2
    x_hat, h_hat, rule = _factor(_vertical(Z_final), cfg.scale_rule)
    result = DeconvResult(
        Z_final=Z_final,
        x_hat=x_hat.reshape(P, n),
        h_hat=h_hat,
        fidelity_residual=_fidelity(fsets, Z_final),
        iterations=state.iter,
        converged=converged,
        method=kind,
        consensus_gap=float(np.linalg.norm(state.W - state.Z2)),
        scale_rule=rule,
        objective_trace=trace,
    )
    if cfg.trace_path:
        write_trace_csv(result, cfg.trace_path)
    return result


def _squeeze(result: DeconvResult) -> DeconvResult:
    result.Z_final = result.Z_final[0]
    result.x_hat = result.x_hat[0]
    return result


def solve_convex_multi(lifted: LiftedOperator, y_hats, cfg: SolverConfig) -> DeconvResult:
    """Minimize ``||Z_v||_* + tau ||Z_h||_{2,1}`` subject to exact data fit.

    ``Z_v`` and ``Z_h`` are the vertical and horizontal stacks of the
    per-measurement lifted matrices. The penalty is held at ``cfg.rho0``.
    """
    y_stack = _as_stack(y_hats, lifted.n)
    return _run("convex", lifted, y_stack, cfg, None, 0.0)


def solve_convex(lifted: LiftedOperator, y_hat, cfg: SolverConfig) -> DeconvResult:
    return _squeeze(solve_convex_multi(lifted, np.asarray(y_hat)[None, :], cfg))


def solve_ssparse_multi(lifted: LiftedOperator, y_hats, cfg: SolverConfig,
                        Z_init) -> DeconvResult:
    """S-sparse ADMM over ``P`` measurements sharing one filter.

    Every block of the returned stack has at most ``cfg.sparsity_S``
    nonzero rows; each measurement gets its own fidelity ball of radius
    ``cfg.epsilon``.
    """
    if cfg.epsilon is None:
        raise ValueError("the S-sparse solver needs an explicit epsilon")
    y_stack = _as_stack(y_hats, lifted.n)
    P = y_stack.shape[0]
    Z0 = np.asarray(Z_init, dtype=float)
    if Z0.ndim == 2:
        Z0 = Z0[None]
    if Z0.shape != (P, lifted.n, lifted.L):
        raise ValueError(f"Z_init has shape {np.shape(Z_init)}, expected {(P, lifted.n, lifted.L)}")
    if cfg.sparsity_S > lifted.n:
        raise ValueError(f"sparsity_S={cfg.sparsity_S} exceeds n={lifted.n}")
    return _run("ssparse", lifted, y_stack, cfg, Z0, cfg.epsilon)


def solve_ssparse(lifted: LiftedOperator, y_hat, cfg: SolverConfig, Z_init) -> DeconvResult:
    Z0 = np.asarray(Z_init, dtype=float)
    if Z0.shape != (lifted.n, lifted.L):
        raise ValueError(f"Z_init has shape {Z0.shape}, expected {(lifted.n, lifted.L)}")
    return _squeeze(solve_ssparse_multi(lifted, np.asarray(y_hat)[None, :], cfg, Z0[None]))


def write_trace_csv(result: DeconvResult, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_FIELDS)
        writer.writerows(result.objective_trace)
