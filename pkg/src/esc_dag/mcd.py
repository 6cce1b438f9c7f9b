"""Modified Cholesky decomposition ``Omega = (I - A)^T D^{-1} (I - A)``.

``A`` is strictly lower triangular (row ``j`` holds the regression of
variable ``j`` on its predecessors) and ``D`` holds the conditional
variances. Also provides matrix norms and checks of the eigenvalue,
sparsity and beta-min conditions on a ground-truth factor.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .exceptions import NotPositiveDefinite

ZERO_SNAP = 1e-12


@dataclass(frozen=True, eq=False)
class CholeskyModel:
    A: np.ndarray
    D: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=np.float64, copy=True)
        D = np.array(self.D, dtype=np.float64, copy=True).ravel()
        p = D.shape[0]
        if A.shape != (p, p):
            raise ValueError(f"A has shape {A.shape}, expected ({p}, {p})")
        if np.any(np.triu(A) != 0):
            raise ValueError("A must be strictly lower triangular")
        if not np.all(D > 0):
            raise ValueError("conditional variances D must be positive")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "D", D)

    @property
    def p(self) -> int:
        return self.D.shape[0]

    def support(self) -> np.ndarray:
        """Boolean mask of nonzero entries of ``A``."""
        return self.A != 0

    def precision(self) -> np.ndarray:
        return compose(self)

    def covariance(self) -> np.ndarray:
        # Sigma = (I - A)^{-1} D (I - A)^{-T}
        L = np.linalg.solve(np.eye(self.p) - self.A, np.diag(np.sqrt(self.D)))
        return L @ L.T


def compose(model: CholeskyModel) -> np.ndarray:
    """Precision matrix ``(I - A)^T D^{-1} (I - A)``."""
    B = np.eye(model.p) - model.A
    omega = B.T @ (B / model.D[:, None])
    return 0.5 * (omega + omega.T)


def decompose(omega: np.ndarray) -> CholeskyModel:
    """Recover ``(A, D)`` from a symmetric positive definite precision matrix.

    Reversing the variable order turns ``(I - A)^T D^{-1} (I - A)`` into an
    ordinary unpivoted ``L D L^T``, which we read off a Cholesky factor.
    """
    omega = np.asarray(omega, dtype=np.float64)
    if omega.ndim != 2 or omega.shape[0] != omega.shape[1]:
        raise ValueError(f"precision matrix must be square, got {omega.shape}")
    rev = omega[::-1, ::-1]
    try:
        C = np.linalg.cholesky(0.5 * (rev + rev.T))
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefinite("precision matrix has a nonpositive pivot") from exc
    piv = np.diag(C)
    if not np.all(piv > 0):
        raise NotPositiveDefinite("precision matrix has a nonpositive pivot")
    unit_lower = C / piv
    # reversed(unit_lower^T) = I - A,  reversed(piv^2) = 1 / D
    B = unit_lower.T[::-1, ::-1]
    A = np.tril(-B, k=-1)
    D = 1.0 / (piv[::-1] ** 2)
    amax = np.max(np.abs(A)) if A.size else 0.0
    if amax > 0:
        A[np.abs(A) < ZERO_SNAP * amax] = 0.0
    return CholeskyModel(A, D)


def matrix_norm(M: np.ndarray, kind: str = "spectral") -> float:
    """``spectral`` (largest singular value), ``l1`` (max column sum),
    ``linf`` (max row sum) or ``frobenius``."""
    M = np.atleast_2d(np.asarray(M, dtype=np.float64))
    if kind == "spectral":
        return float(np.linalg.svd(M, compute_uv=False)[0]) if M.size else 0.0
    if kind == "l1":
        return float(np.abs(M).sum(axis=0).max()) if M.size else 0.0
    if kind == "linf":
        return float(np.abs(M).sum(axis=1).max()) if M.size else 0.0
    if kind == "frobenius":
        return float(np.sqrt(np.sum(M * M)))
    raise ValueError(f"unknown norm kind {kind!r}")


@dataclass(frozen=True)
class ConditionReport:
    eig_min: float
    eig_max: float
    s0_row: int
    s0_col: int
    min_nonzero_sq: float
    beta_min_threshold: float
    passes_A1: bool
    passes_A2: bool
    passes_A3: bool
    passes_A4: bool


def beta_min_threshold(eps0: float, alpha: float, C_bm: float, n: int, p: int) -> float:
    """Lower bound on the squared smallest nonzero entry for exact support recovery."""
    return 16.0 / (alpha * (1 - alpha) * eps0**2 * (1 - 2 * eps0) ** 2) * C_bm * math.log(p) / n


def check_conditions(
    truth: CholeskyModel,
    eps0: float,
    alpha: float,
    C_bm: float,
    n: int,
    s0: int | None = None,
) -> ConditionReport:
    """Evaluate the bounded-eigenvalue, row/column sparsity and beta-min conditions.

    When ``s0`` is omitted the observed maximum row/column count is used, so
    the sparsity conditions pass trivially.
    """
    if not 0 < eps0 < 0.5:
        raise ValueError("eps0 must lie in (0, 1/2)")
    if not 0 < alpha < 1:
        raise ValueError("alpha must lie in (0, 1)")
    eig = np.linalg.eigvalsh(compose(truth))
    nz = truth.A != 0
    s_row = int(nz.sum(axis=1).max())
    s_col = int(nz.sum(axis=0).max())
    min_sq = float(np.min(truth.A[nz] ** 2)) if nz.any() else math.inf
    thr = beta_min_threshold(eps0, alpha, C_bm, n, truth.p)
    s0 = max(s_row, s_col) if s0 is None else s0
    return ConditionReport(
        eig_min=float(eig[0]),
        eig_max=float(eig[-1]),
        s0_row=s_row,
        s0_col=s_col,
        min_nonzero_sq=min_sq,
        beta_min_threshold=thr,
        passes_A1=bool(eps0 <= eig[0] and eig[-1] <= 1 / eps0),
        passes_A2=s_row <= s0,
        passes_A3=min_sq >= thr,
        passes_A4=s_col <= s0,
    )
