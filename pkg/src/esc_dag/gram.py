"""Least-squares kernel over a fixed data matrix.

Every support score in this package reduces to the residual variance of
regressing one column of the data on a subset of the preceding columns.
The fresh path factors the support Gram matrix with LAPACK; the incremental
path keeps an upper-triangular factor ``R`` (``R.T @ R == X_S.T @ X_S``)
together with ``w = R^{-T} X_S.T x_j`` and extends or shrinks both in
O(|S|^2) using only the precomputed full Gram matrix ``X.T @ X``.

Column and support indices are 0-based: column ``j`` may regress on
``0 .. j-1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Sequence

import numpy as np
from numba import njit
from scipy.linalg import LinAlgError, cholesky, solve_triangular

from .exceptions import SingularGram

# Relative pivot floor: pivot < SINGULAR_TOL * max diagonal Gram entry => singular.
SINGULAR_TOL = 1e-10


@dataclass(frozen=True, eq=False)
class DataMatrix:
    """Immutable ``n x p`` observation matrix (rows are observations)."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64, copy=True)
        if v.ndim != 2:
            raise ValueError(f"data must be 2-dimensional, got shape {v.shape}")
        if v.shape[0] < 2 or v.shape[1] < 2:
            raise ValueError(f"data needs n >= 2 and p >= 2, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("data contains non-finite entries")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def n(self) -> int:
        return self.values.shape[0]

    @property
    def p(self) -> int:
        return self.values.shape[1]

    @cached_property
    def gram(self) -> np.ndarray:
        g = self.values.T @ self.values
        g = 0.5 * (g + g.T)
        g.setflags(write=False)
        return g

    def column(self, j: int) -> np.ndarray:
        return self.values[:, j]


def as_data(data) -> DataMatrix:
    return data if isinstance(data, DataMatrix) else DataMatrix(np.asarray(data))


def max_support_size(n: int, j: int) -> int:
    """Hard cap on ``|S|`` for column ``j``: ``min(j, n - 2)``."""
    return max(0, min(j, n - 2))


def check_support(data: DataMatrix, j: int, support: Iterable[int]) -> tuple[int, ...]:
    """Validate a support for column ``j`` and return it sorted."""
    if not 1 <= j < data.p:
        raise ValueError(f"column {j} has no candidate predictors (p = {data.p})")
    s = tuple(sorted(int(i) for i in support))
    if len(set(s)) != len(s):
        raise ValueError(f"duplicate indices in support {s}")
    if s and (s[0] < 0 or s[-1] >= j):
        raise ValueError(f"support {s} must lie in 0..{j - 1}")
    if len(s) > max_support_size(data.n, j):
        raise ValueError(
            f"support of size {len(s)} exceeds cap min(j, n-2) = {max_support_size(data.n, j)}"
        )
    return s


# --------------------------------------------------------------------------
# numba primitives shared by the Python-level updates and the MH kernel
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _append_pivot(R, w, order, m, gram, l, j, rcol):
    """Prepare appending predictor ``l``; returns ``(r_ll, w_new)``.

    ``r_ll == 0`` flags a numerically singular extension. On success
    ``rcol[:m]`` holds the new factor column.
    """
    dmax = gram[l, l]
    for i in range(m):
        s = gram[order[i], l]
        for k in range(i):
            s -= R[k, i] * rcol[k]
        rcol[i] = s / R[i, i]
        g = gram[order[i], order[i]]
        if g > dmax:
            dmax = g
    piv = gram[l, l]
    proj = gram[l, j]
    for i in range(m):
        piv -= rcol[i] * rcol[i]
        proj -= rcol[i] * w[i]
    if not piv > SINGULAR_TOL * dmax:
        return 0.0, 0.0
    rll = math.sqrt(piv)
    return rll, proj / rll


@njit(cache=True, nogil=True)
def _commit_append(R, w, order, m, l, rcol, rll, wnew):
    for i in range(m):
        R[i, m] = rcol[i]
        R[m, i] = 0.0
    R[m, m] = rll
    w[m] = wnew
    order[m] = l


@njit(cache=True, nogil=True)
def _delete_at(R, w, order, m, pos, Rout, wout, orderout):
    """Drop factor position ``pos`` via Givens rotations into the ``*out`` buffers.

    Returns ``(rss_increase, ok)``; ``ok`` is False when the rotated factor
    lost a positive diagonal, in which case the caller must refactor.
    """
    for r in range(m):
        for c in range(m - 1):
            src = c if c < pos else c + 1
            Rout[r, c] = R[r, src]
        wout[r] = w[r]
    for c in range(m - 1):
        orderout[c] = order[c if c < pos else c + 1]
    for c in range(pos, m - 1):
        a = Rout[c, c]
        b = Rout[c + 1, c]
        r = math.hypot(a, b)
        if r == 0.0:
            cs, sn = 1.0, 0.0
        else:
            cs, sn = a / r, b / r
        Rout[c, c] = r
        Rout[c + 1, c] = 0.0
        for k in range(c + 1, m - 1):
            x = Rout[c, k]
            y = Rout[c + 1, k]
            Rout[c, k] = cs * x + sn * y
            Rout[c + 1, k] = -sn * x + cs * y
        x = wout[c]
        y = wout[c + 1]
        wout[c] = cs * x + sn * y
        wout[c + 1] = -sn * x + cs * y
    ok = True
    for c in range(m - 1):
        d = Rout[c, c]
        if not (d > 0.0 and math.isfinite(d)):
            ok = False
    return wout[m - 1] * wout[m - 1], ok


@njit(cache=True, nogil=True)
def _factor(gram, members, m, j, R, w, order, rcol):
    """Fresh factor of ``members[:m]`` by sequential appends; returns ``(ok, rss)``."""
    rss = gram[j, j]
    for i in range(m):
        rll, wnew = _append_pivot(R, w, order, i, gram, members[i], j, rcol)
        if rll == 0.0:
            return False, 0.0
        _commit_append(R, w, order, i, members[i], rcol, rll, wnew)
        rss -= wnew * wnew
    return True, rss


# --------------------------------------------------------------------------
# Python-level API
# --------------------------------------------------------------------------


@dataclass(frozen=True, eq=False)
class FitSummary:
    """Cached least-squares fit of column ``column`` on its support.

    ``gram_chol`` is upper triangular in the column order given by ``order``
    (insertion order, not necessarily sorted); ``qty`` is ``R^{-T} X_S^T x_j``.
    """

    column: int
    order: tuple[int, ...]
    gram_chol: np.ndarray
    qty: np.ndarray
    rss: float
    n: int

    @property
    def support(self) -> tuple[int, ...]:
        return tuple(sorted(self.order))

    @property
    def d_hat(self) -> float:
        return max(self.rss, 0.0) / self.n

    @property
    def a_hat(self) -> np.ndarray:
        """Least-squares coefficients in sorted-support order."""
        if not self.order:
            return np.zeros(0)
        coef = solve_triangular(self.gram_chol, self.qty, lower=False)
        return coef[np.argsort(self.order)]


def _fresh_chol(data: DataMatrix, support: tuple[int, ...]) -> np.ndarray:
    idx = np.asarray(support, dtype=np.intp)
    g = data.gram[np.ix_(idx, idx)]
    try:
        R = cholesky(g, lower=False)
    except LinAlgError as exc:
        raise SingularGram(f"Gram matrix of support {support} is not positive definite") from exc
    if np.any(np.diag(R) ** 2 < SINGULAR_TOL * np.max(np.diag(g))):
        raise SingularGram(f"Gram matrix of support {support} is numerically singular")
    return R


def fit_support(data, j: int, support: Sequence[int]) -> FitSummary:
    """Fresh least-squares fit of column ``j`` on ``support``."""
    data = as_data(data)
    s = check_support(data, j, support)
    y = data.column(j)
    if not s:
        return FitSummary(j, (), np.zeros((0, 0)), np.zeros(0), float(data.gram[j, j]), data.n)
    R = _fresh_chol(data, s)
    X = data.values[:, s]
    w = solve_triangular(R, X.T @ y, trans="T", lower=False)
    coef = solve_triangular(R, w, lower=False)
    resid = y - X @ coef
    return FitSummary(j, s, R, w, float(resid @ resid), data.n)


def residual_variance(data, j: int, support: Sequence[int]) -> float:
    """``n^{-1}`` times the residual sum of squares of column ``j`` on ``support``.

    Raises :class:`SingularGram` for a rank-deficient support.
    """
    return fit_support(data, j, support).d_hat


def least_squares(data, j: int, support: Sequence[int]) -> np.ndarray:
    """Least-squares coefficients of column ``j`` on a nonempty ``support``."""
    if len(support) == 0:
        raise ValueError("least_squares needs a nonempty support")
    return fit_support(data, j, support).a_hat


def update_add(fit: FitSummary, data, l: int) -> FitSummary:
    """Extend ``fit`` by predictor ``l`` in O(|S|^2)."""
    data = as_data(data)
    j = fit.column
    check_support(data, j, fit.order + (int(l),))
    m = len(fit.order)
    R = np.zeros((m + 1, m + 1))
    R[:m, :m] = fit.gram_chol
    w = np.zeros(m + 1)
    w[:m] = fit.qty
    order = np.zeros(m + 1, dtype=np.int64)
    order[:m] = fit.order
    rcol = np.zeros(m + 1)
    rll, wnew = _append_pivot(R, w, order, m, data.gram, int(l), j, rcol)
    if rll == 0.0:
        raise SingularGram(f"column {l} is numerically dependent on support {fit.support}")
    _commit_append(R, w, order, m, int(l), rcol, rll, wnew)
    return FitSummary(j, fit.order + (int(l),), R, w, fit.rss - wnew * wnew, fit.n)


def update_remove(fit: FitSummary, data, l: int) -> FitSummary:
    """Drop predictor ``l`` from ``fit``; refactors from scratch if the downdate breaks."""
    data = as_data(data)
    if l not in fit.order:
        raise ValueError(f"{l} is not in support {fit.support}")
    m = len(fit.order)
    pos = fit.order.index(l)
    Rout = np.zeros((m, m))
    wout = np.zeros(m)
    oout = np.zeros(max(m - 1, 1), dtype=np.int64)
    inc, ok = _delete_at(
        np.ascontiguousarray(fit.gram_chol), np.ascontiguousarray(fit.qty),
        np.asarray(fit.order, dtype=np.int64), m, pos, Rout, wout, oout,
    )
    new_order = tuple(int(i) for i in oout[: m - 1])
    if not ok:
        return fit_support(data, fit.column, new_order)
    return FitSummary(
        fit.column, new_order, Rout[: m - 1, : m - 1].copy(), wout[: m - 1].copy(),
        fit.rss + inc, fit.n,
    )
