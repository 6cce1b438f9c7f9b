"""Rao-Blackwellized Metropolis-Hastings over per-column supports.

Each column ``j >= 1`` runs an independent chain on the marginal posterior of
its support. The proposal flips one coordinate: with probability 1/2 drop a
uniformly chosen member, otherwise add a uniformly chosen absent index.
Impossible moves (drop from the empty set, add at the size cap) become
self-proposals.

Every MH step consumes exactly three uniforms ``(branch, index, accept)``,
pre-drawn from a per-column generator, so a chain is a deterministic function
of ``(data, hyper, seed, j)`` and independent of worker count.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np
from numba import njit

from .exceptions import ColumnError, InvalidInit, SingularGram
from .gram import (
    DataMatrix,
    FitSummary,
    _append_pivot,
    _commit_append,
    _delete_at,
    _factor,
    as_data,
    check_support,
    fit_support,
    max_support_size,
    update_add,
    update_remove,
)
from .mcd import CholeskyModel
from .posterior import (
    Hyperparams,
    ScoreConstants,
    SupportScore,
    _log_score,
    default_R,
    draw_coefficients,
    draw_variance,
    log_marginal_support,
)

INIT_KINDS = ("empty", "screening", "explicit")


@dataclass(frozen=True)
class ChainConfig:
    iterations: int = 24000
    burn_in: int = 4000
    init: str = "screening"
    init_k: int = 5
    init_support: tuple[int, ...] | None = None
    seed: int = 0
    threshold: float = 0.5

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be positive")
        if not 0 <= self.burn_in < self.iterations:
            raise ValueError("need 0 <= burn_in < iterations")
        if self.init not in INIT_KINDS:
            raise ValueError(f"init must be one of {INIT_KINDS}")
        if self.init == "explicit" and self.init_support is None:
            raise ValueError("init='explicit' needs init_support")
        if not 0 < self.threshold < 1:
            raise ValueError("threshold must lie in (0, 1)")
        if self.init_support is not None:
            object.__setattr__(self, "init_support", tuple(int(i) for i in self.init_support))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["init_support"] = None if self.init_support is None else list(self.init_support)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ChainConfig":
        return cls(**d)


@dataclass(frozen=True, eq=False)
class ChainTrace:
    """Retained part of one column's chain in run-length form.

    The state at retained iteration 0 is ``start``; ``change_steps[k]`` is
    the retained iteration at which index ``change_index[k]`` was flipped.
    """

    column: int
    cap: int
    start: tuple[int, ...]
    change_steps: np.ndarray
    change_index: np.ndarray
    n_retained: int
    accept_count: int
    proposal_count: int
    inclusion: np.ndarray
    final: tuple[int, ...]
    final_log_score: float

    @property
    def acceptance_rate(self) -> float:
        return self.accept_count / self.proposal_count if self.proposal_count else 0.0

    def runs(self) -> list[tuple[tuple[int, ...], int]]:
        """``(support, length)`` pairs covering all retained iterations."""
        out = []
        state = set(self.start)
        last = 0
        for step, idx in zip(self.change_steps.tolist(), self.change_index.tolist()):
            out.append((tuple(sorted(state)), step - last))
            state ^= {idx}
            last = step
        out.append((tuple(sorted(state)), self.n_retained - last))
        return out

    def visited(self) -> list[tuple[int, ...]]:
        return [s for s, length in self.runs() for _ in range(length)]

    def frequencies(self) -> dict[tuple[int, ...], float]:
        freq: dict[tuple[int, ...], float] = {}
        for s, length in self.runs():
            freq[s] = freq.get(s, 0) + length
        return {s: c / self.n_retained for s, c in freq.items()}

    def sample_supports(self, k: int, rng: np.random.Generator) -> list[tuple[int, ...]]:
        """``k`` supports drawn uniformly from the retained iterations."""
        runs = self.runs()
        ends = np.cumsum([length for _, length in runs])
        picks = rng.integers(0, self.n_retained, size=k)
        return [runs[int(np.searchsorted(ends, t, side="right"))][0] for t in picks]


def column_seed(seed: int, j: int) -> np.random.SeedSequence:
    return np.random.SeedSequence(entropy=int(seed), spawn_key=(int(j),))


# --------------------------------------------------------------------------
# reference (pure Python) path
# --------------------------------------------------------------------------


def _choose(u: float, count: int) -> int:
    return min(int(u * count), count - 1)


def propose(support: Sequence[int], j: int, R_j: int, rng: np.random.Generator):
    """One flip proposal. Returns ``(new_support, log_q_ratio, flipped)``.

    ``log_q_ratio`` is ``log q(S | S') - log q(S' | S)``; self-proposals
    return ``flipped = None`` and a ratio of 0. ``R_j`` must already include
    the ``n - 2`` cap.
    """
    s = tuple(sorted(support))
    m = len(s)
    u_branch, u_index = rng.random(), rng.random()
    if u_branch < 0.5:
        if m == 0:
            return s, 0.0, None
        l = s[_choose(u_index, m)]
        z = j - m
        return tuple(i for i in s if i != l), math.log(m) - math.log(z + 1), l
    if m >= min(R_j, j):
        return s, 0.0, None
    absent = [i for i in range(j) if i not in set(s)]
    z = len(absent)
    l = absent[_choose(u_index, z)]
    return tuple(sorted(s + (l,))), math.log(z) - math.log(m + 1), l


def acceptance_probability(log_current: float, log_proposed: float, log_q_ratio: float) -> float:
    if log_proposed == -math.inf:
        return 0.0
    return min(1.0, math.exp(log_proposed - log_current + log_q_ratio))


def mh_step(fit: FitSummary, score: SupportScore, data, hyper: Hyperparams, R_j: int, rng: np.random.Generator):
    """One MH step from the cached fit. Returns ``(fit, score, accepted)``.

    The accept uniform is always drawn, including for self-proposals and
    zero-mass proposals, so the random stream never desynchronises.
    """
    data = as_data(data)
    j = fit.column
    cap = min(R_j, max_support_size(data.n, j))
    new_support, log_q, flipped = propose(fit.order, j, cap, rng)
    u = rng.random()
    if flipped is None:
        return fit, score, False
    try:
        if len(new_support) > len(fit.order):
            new_fit = update_add(fit, data, flipped)
        else:
            new_fit = update_remove(fit, data, flipped)
    except SingularGram:
        return fit, score, False
    consts = ScoreConstants.build(data.n, data.p, j, hyper, cap)
    new_score = SupportScore(consts.score(len(new_fit.order), new_fit.rss), new_fit.d_hat)
    if new_score.log_score == -math.inf:
        return fit, score, False
    lr = new_score.log_score - score.log_score + log_q
    if lr >= 0.0 or u < math.exp(lr):
        return new_fit, new_score, True
    return fit, score, False


# --------------------------------------------------------------------------
# compiled chain
# --------------------------------------------------------------------------


@njit(cache=True, nogil=True)
def _chain_kernel(gram, j, n, init, cap, log_w, kappa, an, nu0p, mesc, uniforms, burn_in):
    iters = uniforms.shape[0]
    size = cap + 2
    R = np.zeros((size, size))
    w = np.zeros(size)
    order = np.zeros(size, dtype=np.int64)
    R2 = np.zeros((size, size))
    w2 = np.zeros(size)
    order2 = np.zeros(size, dtype=np.int64)
    rcol = np.zeros(size)
    tmp = np.zeros(size, dtype=np.int64)
    members = np.zeros(size, dtype=np.int64)
    m = init.shape[0]
    for i in range(m):
        members[i] = init[i]
    nf = float(n)

    counts = np.zeros(j)
    n_ret = iters - burn_in
    change_pos = np.zeros(n_ret, dtype=np.int64)
    change_idx = np.zeros(n_ret, dtype=np.int64)
    start = np.zeros(size, dtype=np.int64)
    start_m = 0
    n_changes = 0
    accepted = 0

    ok, rss = _factor(gram, members, m, j, R, w, order, rcol)
    cur = _log_score(m, rss, nf, log_w, kappa, an, nu0p, mesc) if ok else -np.inf
    if cur == -np.inf:
        return (False, counts, start[:0], change_pos[:0], change_idx[:0], 0, cur, members[:m])

    for t in range(iters):
        ub = uniforms[t, 0]
        ui = uniforms[t, 1]
        ua = uniforms[t, 2]
        kind = 0
        flip = -1
        z = j - m
        if ub < 0.5:
            if m > 0:
                k = min(int(ui * m), m - 1)
                flip = members[k]
                kind = -1
        elif m < cap:
            idx = min(int(ui * z), z - 1)
            for i in range(m):
                if members[i] <= idx:
                    idx += 1
                else:
                    break
            flip = idx
            kind = 1

        changed = False
        if kind != 0:
            new = -np.inf
            rss_new = 0.0
            rll = 0.0
            wnew = 0.0
            if kind == 1:
                rll, wnew = _append_pivot(R, w, order, m, gram, flip, j, rcol)
                if rll > 0.0:
                    rss_new = rss - wnew * wnew
                    new = _log_score(m + 1, rss_new, nf, log_w, kappa, an, nu0p, mesc)
                logq = math.log(z) - math.log(m + 1)
            else:
                pos = 0
                for i in range(m):
                    if order[i] == flip:
                        pos = i
                inc, dok = _delete_at(R, w, order, m, pos, R2, w2, order2)
                if dok:
                    rss_new = rss + inc
                    new = _log_score(m - 1, rss_new, nf, log_w, kappa, an, nu0p, mesc)
                else:
                    c = 0
                    for i in range(m):
                        if members[i] != flip:
                            tmp[c] = members[i]
                            c += 1
                    fok, rss_new = _factor(gram, tmp, m - 1, j, R2, w2, order2, rcol)
                    if fok:
                        new = _log_score(m - 1, rss_new, nf, log_w, kappa, an, nu0p, mesc)
                logq = math.log(m) - math.log(z + 1)
            if new > -np.inf:
                lr = new - cur + logq
                if lr >= 0.0 or ua < math.exp(lr):
                    if kind == 1:
                        _commit_append(R, w, order, m, flip, rcol, rll, wnew)
                        i = m
                        while i > 0 and members[i - 1] > flip:
                            members[i] = members[i - 1]
                            i -= 1
                        members[i] = flip
                        m += 1
                    else:
                        for a in range(m - 1):
                            for b in range(m - 1):
                                R[a, b] = R2[a, b]
                            w[a] = w2[a]
                            order[a] = order2[a]
                        i = 0
                        while members[i] != flip:
                            i += 1
                        while i < m - 1:
                            members[i] = members[i + 1]
                            i += 1
                        m -= 1
                    rss = rss_new
                    cur = new
                    accepted += 1
                    changed = True

        if t >= burn_in:
            if t == burn_in:
                for i in range(m):
                    start[i] = members[i]
                start_m = m
            elif changed:
                change_pos[n_changes] = t - burn_in
                change_idx[n_changes] = flip
                n_changes += 1
            for i in range(m):
                counts[members[i]] += 1.0

    return (
        True,
        counts / n_ret,
        start[:start_m].copy(),
        change_pos[:n_changes].copy(),
        change_idx[:n_changes].copy(),
        accepted,
        cur,
        members[:m].copy(),
    )


def screening_support(data, j: int, k: int) -> tuple[int, ...]:
    """Up to ``k`` predictors with the largest absolute (uncentred) correlation
    with column ``j``, skipping any that would make the fit singular."""
    data = as_data(data)
    g = data.gram
    diag = np.diag(g)[:j]
    denom = np.sqrt(diag * g[j, j])
    corr = np.divide(np.abs(g[:j, j]), denom, out=np.zeros(j), where=denom > 0)
    fit = fit_support(data, j, ())
    chosen: list[int] = []
    for l in np.argsort(-corr, kind="stable"):
        if len(chosen) >= k:
            break
        try:
            cand = update_add(fit, data, int(l))
        except SingularGram:
            continue
        if not cand.rss > 0:
            continue
        fit = cand
        chosen.append(int(l))
    return tuple(sorted(chosen))


def initial_support(data: DataMatrix, j: int, cap: int, cfg: ChainConfig) -> tuple[int, ...]:
    if cfg.init == "empty":
        return ()
    if cfg.init == "screening":
        return screening_support(data, j, min(cfg.init_k, cap))
    return tuple(sorted(cfg.init_support))


def run_chain(data, j: int, hyper: Hyperparams, cfg: ChainConfig, R_j: int | None = None) -> ChainTrace:
    """Run the MH chain for column ``j`` and keep the post-burn-in trace."""
    data = as_data(data)
    if R_j is None:
        R_j = default_R(data.n, data.p, hyper, j)
    cap = min(R_j, max_support_size(data.n, j))
    init = initial_support(data, j, cap, cfg)
    try:
        init = check_support(data, j, init)
    except ValueError as exc:
        raise InvalidInit(str(exc)) from exc
    if len(init) > cap:
        raise InvalidInit(f"initial support {init} exceeds the size cap {cap}")
    consts = ScoreConstants.build(data.n, data.p, j, hyper, cap)
    uniforms = np.random.default_rng(column_seed(cfg.seed, j)).random((cfg.iterations, 3))
    ok, incl, start, cpos, cidx, accepted, final_score, final = _chain_kernel(
        data.gram, j, data.n, np.asarray(init, dtype=np.int64), cap,
        consts.log_w, consts.kappa, consts.an, consts.nu0p, consts.mesc,
        uniforms, cfg.burn_in,
    )
    if not ok:
        raise InvalidInit(f"initial support {init} has zero posterior mass for column {j}")
    return ChainTrace(
        column=j,
        cap=cap,
        start=tuple(int(i) for i in start),
        change_steps=cpos,
        change_index=cidx,
        n_retained=cfg.iterations - cfg.burn_in,
        accept_count=int(accepted),
        proposal_count=cfg.iterations,
        inclusion=incl,
        final=tuple(int(i) for i in final),
        final_log_score=float(final_score),
    )


@dataclass(eq=False)
class DagFit:
    """Per-column traces plus the assembled inclusion matrix.

    ``inclusion[j, l]`` estimates the posterior probability that ``a_{jl}``
    is nonzero; ``selected`` thresholds it.
    """

    traces: dict[int, ChainTrace]
    inclusion: np.ndarray
    selected: np.ndarray
    threshold: float
    caps: dict[int, int] = field(default_factory=dict)

    def supports(self) -> list[tuple[int, ...]]:
        return [()] + [tuple(np.flatnonzero(self.selected[j]).tolist()) for j in range(1, self.inclusion.shape[0])]


def fit_dag(
    data,
    hyper: Hyperparams,
    cfg: ChainConfig,
    workers: int = 1,
    init_supports: Mapping[int, Sequence[int]] | None = None,
) -> DagFit:
    """Run every column ``j = 1 .. p-1`` and threshold inclusion probabilities."""
    data = as_data(data)
    p = data.p

    def one(j: int) -> ChainTrace:
        col_cfg = cfg
        if init_supports is not None and j in init_supports:
            col_cfg = ChainConfig(**{**asdict(cfg), "init": "explicit", "init_support": tuple(init_supports[j])})
        try:
            return run_chain(data, j, hyper, col_cfg)
        except Exception as exc:
            raise ColumnError(j, exc) from exc

    columns = range(1, p)
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            traces = list(pool.map(one, columns))
    else:
        traces = [one(j) for j in columns]

    inclusion = np.zeros((p, p))
    for tr in traces:
        inclusion[tr.column, : tr.column] = tr.inclusion
    return DagFit(
        traces={tr.column: tr for tr in traces},
        inclusion=inclusion,
        selected=inclusion >= cfg.threshold,
        threshold=cfg.threshold,
        caps={tr.column: tr.cap for tr in traces},
    )


def sample_posterior_model(
    data,
    supports: Sequence[Sequence[int]],
    hyper: Hyperparams,
    rng: np.random.Generator,
) -> CholeskyModel:
    """Draw ``(d_j, a_{S_j})`` for every column given per-column supports.

    ``supports[j]`` is the support of row ``j``; ``supports[0]`` must be empty.
    """
    data = as_data(data)
    p = data.p
    if len(supports) != p:
        raise ValueError(f"need {p} supports, got {len(supports)}")
    if len(supports[0]):
        raise ValueError("column 0 has no predecessors")
    A = np.zeros((p, p))
    D = np.zeros(p)
    y0 = data.column(0)
    D[0] = draw_variance(float(y0 @ y0) / data.n, data.n, hyper, rng)
    for j in range(1, p):
        fit = fit_support(data, j, supports[j])
        D[j] = draw_variance(fit.d_hat, data.n, hyper, rng)
        if fit.order:
            A[j, list(fit.support)] = draw_coefficients(fit, D[j], hyper, rng)
    return CholeskyModel(A, D)


def draw_posterior_models(data, dag: DagFit, hyper: Hyperparams, n_draws: int, rng: np.random.Generator) -> list[CholeskyModel]:
    """Joint posterior draws: supports from the chains, then ``(d, a)`` given them."""
    data = as_data(data)
    per_column = {j: tr.sample_supports(n_draws, rng) for j, tr in dag.traces.items()}
    out = []
    for k in range(n_draws):
        supports = [()] + [per_column[j][k] for j in range(1, data.p)]
        out.append(sample_posterior_model(data, supports, hyper, rng))
    return out


def brute_force_posterior(data, j: int, hyper: Hyperparams, R_j: int | None = None) -> dict[tuple[int, ...], float]:
    """Exact normalised support posterior for column ``j`` by enumeration."""
    from itertools import combinations

    data = as_data(data)
    if R_j is None:
        R_j = default_R(data.n, data.p, hyper, j)
    cap = min(R_j, max_support_size(data.n, j))
    scores = {}
    for k in range(cap + 1):
        for s in combinations(range(j), k):
            scores[s] = log_marginal_support(data, j, s, hyper, cap).log_score
    top = max(scores.values())
    weights = {s: math.exp(v - top) for s, v in scores.items()}
    total = math.fsum(weights.values())
    return {s: wgt / total for s, wgt in weights.items()}
