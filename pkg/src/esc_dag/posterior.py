"""Empirical sparse Cholesky prior and the alpha-fractional posterior.

For column ``j`` (0-based, ``j`` candidate predictors) the unnormalised log
marginal posterior of a support ``S`` is

    log pi_j(S) - |S|/2 * log(1 + alpha/gamma) - (alpha*n + nu0)/2 * log d_hat(S)

with ``log pi_j(S) = -log C(j, |S|) - |S| * (log c1 + c2 * log p)`` truncated
at ``|S| <= R_j``. The MESC variant swaps the improper variance prior for
``IG(nu0/2, nu0')``; integrating it out replaces ``log d_hat`` by
``log(alpha*n*d_hat/2 + nu0')``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
from numba import njit
from scipy.linalg import solve_triangular

from .exceptions import InvalidState, SingularGram
from .gram import as_data, fit_support, max_support_size

R_RULES = ("order_cap", "condition_p", "explicit")
VARIANTS = ("ESC", "MESC")


@dataclass(frozen=True)
class Hyperparams:
    """Prior and fractional-posterior settings.

    Defaults: alpha 0.999, gamma 0.1, nu0 0,
    c1 5e-4, c2 2. ``R_explicit`` is consulted only when ``R_rule`` is
    ``"explicit"`` and is indexed by 0-based column.
    """

    alpha: float = 0.999
    gamma: float = 0.1
    nu0: float = 0.0
    nu0_prime: float = 1.0
    c1: float = 0.0005
    c2: float = 2.0
    c3: float = 1e-4
    R_rule: str = "order_cap"
    R_explicit: tuple[int, ...] | None = None
    variant: str = "ESC"

    def __post_init__(self):
        if not 0 < self.alpha < 1:
            raise ValueError(f"alpha must lie in (0, 1), got {self.alpha}")
        if not self.gamma > 0:
            raise ValueError(f"gamma must be positive, got {self.gamma}")
        if self.nu0 < 0:
            raise ValueError(f"nu0 must be nonnegative, got {self.nu0}")
        if not self.c1 > 0 or not self.c3 > 0:
            raise ValueError("c1 and c3 must be positive")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if self.variant == "MESC" and not self.nu0_prime > 0:
            raise ValueError("MESC needs nu0_prime > 0")
        if self.R_rule not in R_RULES:
            raise ValueError(f"R_rule must be one of {R_RULES}")
        if self.R_rule == "explicit" and self.R_explicit is None:
            raise ValueError("R_rule='explicit' needs R_explicit")
        if self.R_explicit is not None:
            object.__setattr__(self, "R_explicit", tuple(int(r) for r in self.R_explicit))
        if self.c2 < 2:
            warnings.warn(f"c2 = {self.c2} < 2 is outside the theoretical regime", stacklevel=2)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["R_explicit"] = None if self.R_explicit is None else list(self.R_explicit)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "Hyperparams":
        d = dict(d)
        if d.get("R_explicit") is not None:
            d["R_explicit"] = tuple(d["R_explicit"])
        return cls(**d)


@dataclass(frozen=True)
class SupportScore:
    log_score: float
    d_hat: float

    @property
    def admissible(self) -> bool:
        return self.log_score > -math.inf


def _floor_strict(x: float) -> int:
    """Largest integer strictly smaller than ``x``."""
    return math.ceil(x) - 1


def default_R(n: int, p: int, hyper: Hyperparams, j: int) -> int:
    """Support-size cap for column ``j`` (``j`` candidate predictors).

    ``condition_p``: ``floor*(n / log p * max(1/log n, c3))`` with the strict
    floor; ``order_cap``: ``floor(n / log p)``; ``explicit``: per-column value.
    The result is always clipped to ``min(j, n - 2)``.
    """
    if n < 3 or p < 2:
        raise ValueError("need n >= 3 and p >= 2")
    if hyper.R_rule == "condition_p":
        rule = _floor_strict(n / math.log(p) * max(1 / math.log(n), hyper.c3))
    elif hyper.R_rule == "order_cap":
        rule = math.floor(n / math.log(p))
    else:
        rule = hyper.R_explicit[j]
    return max(0, min(rule, max_support_size(n, j)))


def size_log_weights(j: int, p: int, hyper: Hyperparams, R_j: int) -> np.ndarray:
    """Support-size dependent part of the log score for sizes ``0..R_j``.

    Entry ``s`` is ``-log C(j, s) - s*(log c1 + c2*log p) - s/2*log(1 + alpha/gamma)``.
    """
    s = np.arange(R_j + 1, dtype=np.float64)
    log_binom = (
        math.lgamma(j + 1)
        - np.array([math.lgamma(k + 1) + math.lgamma(j - k + 1) for k in range(R_j + 1)])
    )
    per_size = math.log(hyper.c1) + hyper.c2 * math.log(p) + 0.5 * math.log1p(hyper.alpha / hyper.gamma)
    return -log_binom - s * per_size


def log_prior_support(support: Sequence[int], j: int, p: int, hyper: Hyperparams, R_j: int) -> float:
    """Unnormalised log prior mass of ``support`` for column ``j``."""
    k = len(support)
    if k > R_j or k > j:
        return -math.inf
    log_binom = math.lgamma(j + 1) - math.lgamma(k + 1) - math.lgamma(j - k + 1)
    return -log_binom - k * (math.log(hyper.c1) + hyper.c2 * math.log(p))


@njit(cache=True, nogil=True)
def _log_score(m, rss, n, log_w, kappa, an, nu0p, mesc):
    if m >= log_w.shape[0] or not rss > 0.0:
        return -np.inf
    dhat = rss / n
    if mesc:
        return log_w[m] - kappa * math.log(0.5 * an * dhat + nu0p)
    return log_w[m] - kappa * math.log(dhat)


@dataclass(frozen=True)
class ScoreConstants:
    """Per-column constants consumed by :func:`_log_score`."""

    log_w: np.ndarray
    kappa: float
    an: float
    nu0p: float
    mesc: bool
    n: int

    @classmethod
    def build(cls, n: int, p: int, j: int, hyper: Hyperparams, R_j: int) -> "ScoreConstants":
        return cls(
            log_w=size_log_weights(j, p, hyper, R_j),
            kappa=0.5 * (hyper.alpha * n + hyper.nu0),
            an=hyper.alpha * n,
            nu0p=hyper.nu0_prime,
            mesc=hyper.variant == "MESC",
            n=n,
        )

    def score(self, size: int, rss: float) -> float:
        return float(_log_score(size, rss, float(self.n), self.log_w, self.kappa, self.an, self.nu0p, self.mesc))


def log_marginal_support(data, j: int, support: Sequence[int], hyper: Hyperparams, R_j: int) -> SupportScore:
    """Log unnormalised alpha-posterior mass of ``support`` for column ``j``."""
    data = as_data(data)
    if len(support) > R_j:
        return SupportScore(-math.inf, math.nan)
    try:
        fit = fit_support(data, j, support)
    except SingularGram:
        return SupportScore(-math.inf, math.nan)
    consts = ScoreConstants.build(data.n, data.p, j, hyper, R_j)
    return SupportScore(consts.score(len(fit.order), fit.rss), fit.d_hat)


def variance_posterior(d_hat: float, n: int, hyper: Hyperparams) -> tuple[float, float]:
    """Shape and rate of the inverse-gamma conditional of ``d_j``."""
    shape = 0.5 * (hyper.alpha * n + hyper.nu0)
    rate = 0.5 * hyper.alpha * n * d_hat
    if hyper.variant == "MESC":
        rate += hyper.nu0_prime
    return shape, rate


def draw_variance(d_hat: float, n: int, hyper: Hyperparams, rng: np.random.Generator, size=None):
    shape, rate = variance_posterior(d_hat, n, hyper)
    if not rate > 0:
        raise InvalidState("residual variance is zero; the variance conditional is improper")
    return rate / rng.standard_gamma(shape, size=size)


def sample_d(data, j: int, support: Sequence[int], hyper: Hyperparams, rng: np.random.Generator) -> float:
    """Draw ``d_j`` from its inverse-gamma conditional given the support."""
    data = as_data(data)
    if j == 0:
        y = data.column(0)
        d_hat = float(y @ y) / data.n
    else:
        d_hat = fit_support(data, j, support).d_hat
    return draw_variance(d_hat, data.n, hyper, rng)


def draw_coefficients(fit, d: float, hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Normal draw around ``a_hat`` with covariance ``d/(alpha+gamma) * Gram^{-1}``.

    Coefficients come back in sorted-support order.
    """
    m = len(fit.order)
    if m == 0:
        return np.zeros(0)
    z = rng.standard_normal(m)
    coef = solve_triangular(fit.gram_chol, fit.qty + math.sqrt(d / (hyper.alpha + hyper.gamma)) * z, lower=False)
    return coef[np.argsort(fit.order)]


def sample_a(data, j: int, support: Sequence[int], d: float, hyper: Hyperparams, rng: np.random.Generator) -> np.ndarray:
    """Draw the nonzero coefficients of row ``j`` given ``d_j`` and the support."""
    if len(support) == 0:
        raise ValueError("sample_a needs a nonempty support")
    if not d > 0:
        raise ValueError("d must be positive")
    return draw_coefficients(fit_support(as_data(data), j, support), d, hyper, rng)
