"""Ground-truth generation, data sampling, selection metrics and replicate studies."""

from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.linalg import solve_triangular

from .exceptions import DegenerateTruth
from .gram import DataMatrix
from .mcd import CholeskyModel, compose, matrix_norm
from .posterior import Hyperparams
from .sampler import ChainConfig, draw_posterior_models, fit_dag

DATA_LAWS = ("gaussian", "laplace")


@dataclass(frozen=True)
class TruthSpec:
    p: int
    sparsity: float = 0.03
    coef_low: float = 0.3
    coef_high: float = 0.7
    d_low: float = 2.0
    d_high: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.p < 2:
            raise ValueError("p must be at least 2")
        if not 0 <= self.sparsity < 1:
            raise ValueError("sparsity must lie in [0, 1)")
        if not 0 < self.coef_low < self.coef_high:
            raise ValueError("need 0 < coef_low < coef_high")
        if not 0 < self.d_low <= self.d_high:
            raise ValueError("need 0 < d_low <= d_high")

    @property
    def n_nonzero(self) -> int:
        # guard against 0.04 * 44850 = 1794.0000000000002
        slots = self.p * (self.p - 1) // 2
        return min(slots, math.ceil(round(self.sparsity * slots, 9)))


def derive_seed(seed: int, *key: int) -> int:
    return int(np.random.SeedSequence(int(seed), spawn_key=tuple(int(k) for k in key)).generate_state(1, np.uint64)[0])


def generate_truth(spec: TruthSpec, rng: np.random.Generator | None = None) -> CholeskyModel:
    """Random sparse Cholesky factor with entries in ``±[coef_low, coef_high]``."""
    rng = np.random.default_rng(spec.seed) if rng is None else rng
    p = spec.p
    rows, cols = np.tril_indices(p, k=-1)
    pick = rng.choice(rows.size, size=spec.n_nonzero, replace=False)
    mags = rng.uniform(spec.coef_low, spec.coef_high, size=pick.size)
    signs = np.where(rng.random(pick.size) < 0.5, -1.0, 1.0)
    A = np.zeros((p, p))
    A[rows[pick], cols[pick]] = signs * mags
    D = rng.uniform(spec.d_low, spec.d_high, size=p)
    return CholeskyModel(A, D)


def sample_gaussian(n: int, truth: CholeskyModel, rng: np.random.Generator) -> DataMatrix:
    """``n`` draws from ``N(0, Omega^{-1})`` via the autoregressive recursion."""
    E = rng.standard_normal((n, truth.p)) * np.sqrt(truth.D)
    X = solve_triangular(np.eye(truth.p) - truth.A, E.T, lower=True, unit_diagonal=True).T
    return DataMatrix(X)


def sample_laplace(
    n: int,
    truth: CholeskyModel,
    rng: np.random.Generator,
    weights: np.ndarray | None = None,
) -> DataMatrix:
    """Multivariate Laplace draws ``sqrt(W) * Z`` with ``W ~ Exp(1)``, ``Z ~ N(0, Sigma)``.

    Since ``E[W] = 1`` the covariance is exactly ``Sigma``.
    """
    W = rng.standard_exponential(n) if weights is None else np.asarray(weights, dtype=np.float64)
    Z = sample_gaussian(n, truth, rng).values
    return DataMatrix(np.sqrt(W)[:, None] * Z)


def sample_data(law: str, n: int, truth: CholeskyModel, rng: np.random.Generator) -> DataMatrix:
    if law == "gaussian":
        return sample_gaussian(n, truth, rng)
    if law == "laplace":
        return sample_laplace(n, truth, rng)
    raise ValueError(f"unknown data law {law!r}; expected one of {DATA_LAWS}")


@dataclass(frozen=True)
class SelectionMetrics:
    errors: int
    fdr: float
    tpr: float
    p_bar_0: float
    p_bar_1: float
    tp: int = 0
    fp: int = 0
    fn: int = 0
    degenerate: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def support_mask(true_support, p: int) -> np.ndarray:
    """Boolean ``p x p`` mask from a mask or an iterable of ``(j, l)`` pairs."""
    if isinstance(true_support, np.ndarray) and true_support.shape == (p, p):
        return true_support.astype(bool)
    mask = np.zeros((p, p), dtype=bool)
    for j, l in true_support:
        if not 0 <= l < j < p:
            raise ValueError(f"({j}, {l}) is not a strictly lower-triangular position")
        mask[j, l] = True
    return mask


def selection_metrics(true_support, inclusion: np.ndarray, threshold: float = 0.5) -> SelectionMetrics:
    """Confusion counts of ``inclusion >= threshold`` against the true support.

    With an all-zero truth, ``tpr`` and ``p_bar_1`` are reported as 1 and the
    result is flagged ``degenerate`` with a :class:`DegenerateTruth` warning.
    """
    inclusion = np.asarray(inclusion, dtype=np.float64)
    p = inclusion.shape[0]
    if inclusion.shape != (p, p):
        raise ValueError("inclusion must be square")
    if np.any(np.triu(inclusion) != 0):
        raise ValueError("inclusion must be strictly lower triangular")
    if np.any((inclusion < 0) | (inclusion > 1)):
        raise ValueError("inclusion probabilities must lie in [0, 1]")
    truth = support_mask(true_support, p)
    lower = np.tril(np.ones((p, p), dtype=bool), k=-1)
    selected = (inclusion >= threshold) & lower
    tp = int(np.sum(selected & truth))
    fp = int(np.sum(selected & ~truth))
    fn = int(np.sum(~selected & truth))
    zeros = lower & ~truth
    p0 = float(inclusion[zeros].mean()) if zeros.any() else 0.0
    fdr = fp / (fp + tp) if fp + tp else 0.0
    if truth.any():
        return SelectionMetrics(fp + fn, fdr, tp / (tp + fn), p0, float(inclusion[truth].mean()), tp, fp, fn)
    warnings.warn("true factor has no nonzeros; tpr and p_bar_1 set to 1 by convention", DegenerateTruth, stacklevel=2)
    return SelectionMetrics(fp + fn, fdr, 1.0, p0, 1.0, tp, fp, fn, degenerate=True)


def average_metrics(ms: Sequence[SelectionMetrics]) -> dict:
    keys = ("errors", "fdr", "tpr", "p_bar_0", "p_bar_1")
    return {k: float(np.mean([getattr(m, k) for m in ms])) for k in keys}


@dataclass(frozen=True)
class Cell:
    """One cell of a replicate grid."""

    n: int
    p: int
    sparsity: float
    alpha: float = 0.999
    data_law: str = "gaussian"


def replicate_once(cell: Cell, rep: int, hyper: Hyperparams, cfg: ChainConfig, seed: int, workers: int = 1) -> SelectionMetrics:
    """One replicate of ``cell``.

    Truth, data and chain seeds depend only on ``(seed, rep)``, so cells that
    differ only in ``alpha`` share truth and data.
    """
    truth = generate_truth(TruthSpec(p=cell.p, sparsity=cell.sparsity, seed=derive_seed(seed, rep, 0)))
    data = sample_data(cell.data_law, cell.n, truth, np.random.default_rng(derive_seed(seed, rep, 1)))
    h = replace(hyper, alpha=cell.alpha)
    c = replace(cfg, seed=derive_seed(seed, rep, 2))
    dag = fit_dag(data, h, c, workers=workers)
    return selection_metrics(truth.support(), dag.inclusion, cfg.threshold)


def run_cell(cell: Cell, replicates: int, hyper: Hyperparams, cfg: ChainConfig, seed: int, workers: int = 1) -> dict:
    """Mean selection metrics of ``cell`` over ``replicates`` replicates."""
    ms = [replicate_once(cell, r, hyper, cfg, seed, workers) for r in range(replicates)]
    return {**asdict(cell), **average_metrics(ms), "replicates": replicates}


def rate_probe(
    norm_kind: str,
    n_grid: Iterable[int],
    p: int,
    sparsity: float,
    replicates: int,
    hyper: Hyperparams,
    cfg: ChainConfig,
    seed: int = 0,
    n_draws: int = 20,
    target: str = "A",
    workers: int = 1,
) -> list[dict]:
    """Mean posterior estimation error across a grid of sample sizes.

    Replicate ``r`` uses the same true factor at every ``n``; the error for
    one dataset is the posterior mean of ``||A - A0||`` (or ``||Omega - Omega0||``
    when ``target == "omega"``) over ``n_draws`` joint posterior draws.
    """
    grid = list(n_grid)
    if any(b <= a for a, b in zip(grid, grid[1:])):
        raise ValueError("n_grid must be increasing")
    if target not in ("A", "omega"):
        raise ValueError("target must be 'A' or 'omega'")
    truths = [generate_truth(TruthSpec(p=p, sparsity=sparsity, seed=derive_seed(seed, r, 0))) for r in range(replicates)]
    rows = []
    for n in grid:
        errs = []
        for r, truth in enumerate(truths):
            data = sample_gaussian(n, truth, np.random.default_rng(derive_seed(seed, r, 1, n)))
            dag = fit_dag(data, hyper, replace(cfg, seed=derive_seed(seed, r, 2, n)), workers=workers)
            draws = draw_posterior_models(data, dag, hyper, n_draws, np.random.default_rng(derive_seed(seed, r, 3, n)))
            if target == "A":
                e = [matrix_norm(m.A - truth.A, norm_kind) for m in draws]
            else:
                omega0 = compose(truth)
                e = [matrix_norm(compose(m) - omega0, norm_kind) for m in draws]
            errs.append(float(np.mean(e)))
        rows.append({"n": n, "mean_error": float(np.mean(errs)), "sd_error": float(np.std(errs)), "replicates": replicates})
    return rows
