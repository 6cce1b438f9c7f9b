"""Command-line interface: ``esc-dag {simulate,fit,evaluate,replicate,rate-probe}``.

All commands share one JSON run configuration (``--config``); flags
override individual fields. ``--emit-config`` prints the effective
configuration and exits.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np

from . import __version__
from .exceptions import ColumnError
from .gram import DataMatrix
from .io import (
    FormatError,
    dump_json,
    read_matrix,
    read_triplets,
    read_vector,
    write_json,
    write_matrix,
    write_pairs,
    write_rows,
    write_triplets,
    write_vector,
)
from .mcd import compose
from .posterior import R_RULES, VARIANTS, Hyperparams
from .sampler import ChainConfig, draw_posterior_models, fit_dag
from .simulate import (
    DATA_LAWS,
    Cell,
    TruthSpec,
    derive_seed,
    generate_truth,
    rate_probe,
    run_cell,
    sample_data,
    selection_metrics,
)

log = logging.getLogger("esc_dag")

NORMS = ("spectral", "l1", "linf", "frobenius")


@dataclass
class RunConfig:
    """Every tunable of every command, with defaults.

    ``seed`` is the master seed; the chain seed is kept equal to it.
    ``workers = None`` resolves to ``$ESC_DAG_WORKERS`` or the CPU count.
    """

    hyper: Hyperparams = field(default_factory=Hyperparams)
    chain: ChainConfig = field(default_factory=ChainConfig)
    n: int = 100
    p: int = 50
    sparsity: float = 0.03
    coef_low: float = 0.3
    coef_high: float = 0.7
    d_low: float = 2.0
    d_high: float = 5.0
    data_law: str = "gaussian"
    seed: int = 0
    workers: int | None = None
    replicates: int = 10
    alphas: tuple[float, ...] = (0.999,)
    n_grid: tuple[int, ...] = (100, 200, 400)
    norm: str = "frobenius"
    target: str = "A"
    draws: int = 0
    rate_draws: int = 20
    standardize: bool = False

    def __post_init__(self):
        self.alphas = tuple(float(a) for a in self.alphas)
        self.n_grid = tuple(int(v) for v in self.n_grid)
        if self.chain.seed != self.seed:
            self.chain = replace(self.chain, seed=self.seed)
        if self.data_law not in DATA_LAWS:
            raise ValueError(f"data_law must be one of {DATA_LAWS}")
        if self.norm not in NORMS:
            raise ValueError(f"norm must be one of {NORMS}")
        if self.seed < 0 or self.seed >= 2**64:
            raise ValueError("seed must be an unsigned 64-bit integer")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self)}
        d["hyper"] = self.hyper.to_dict()
        d["chain"] = self.chain.to_dict()
        d["alphas"] = list(self.alphas)
        d["n_grid"] = list(self.n_grid)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        if "hyper" in d:
            d["hyper"] = Hyperparams.from_dict(d["hyper"])
        if "chain" in d:
            d["chain"] = ChainConfig.from_dict(d["chain"])
        return cls(**d)

    def truth_spec(self) -> TruthSpec:
        return TruthSpec(self.p, self.sparsity, self.coef_low, self.coef_high, self.d_low, self.d_high,
                         seed=derive_seed(self.seed, 0))

    def resolved_workers(self) -> int:
        if self.workers is not None:
            return max(1, self.workers)
        env = os.environ.get("ESC_DAG_WORKERS")
        if env:
            return max(1, int(env))
        return os.cpu_count() or 1


def emit_config(cfg: RunConfig) -> str:
    return dump_json(cfg.to_dict())


def parse_config(text: str) -> RunConfig:
    return RunConfig.from_dict(json.loads(text))


def _csv_floats(s: str) -> tuple[float, ...]:
    return tuple(float(x) for x in s.split(",") if x.strip())


def _csv_ints(s: str) -> tuple[int, ...]:
    return tuple(int(x) for x in s.split(",") if x.strip())


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="JSON run configuration")
    common.add_argument("--seed", type=int)
    common.add_argument("--workers", type=int)
    common.add_argument("--out", type=Path, default=Path("."))
    common.add_argument("--emit-config", action="store_true", help="print the effective config and exit")
    common.add_argument("--alpha", type=float)
    common.add_argument("--gamma", type=float)
    common.add_argument("--nu0", type=float)
    common.add_argument("--nu0-prime", type=float)
    common.add_argument("--c1", type=float)
    common.add_argument("--c2", type=float)
    common.add_argument("--r-rule", choices=R_RULES[:2])
    common.add_argument("--variant", choices=VARIANTS)
    common.add_argument("--iterations", type=int)
    common.add_argument("--burn-in", type=int)
    common.add_argument("--threshold", type=float)
    common.add_argument("--init", choices=("empty", "screening"))
    common.add_argument("--data-law", choices=DATA_LAWS)
    common.add_argument("--n", type=int)
    common.add_argument("--p", type=int)
    common.add_argument("--sparsity", type=float)
    common.add_argument("--replicates", type=int)
    common.add_argument("-v", "--verbose", action="store_true")

    parser = argparse.ArgumentParser(prog="esc-dag", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("simulate", parents=[common], help="generate a true factor and data")

    p_fit = sub.add_parser("fit", parents=[common], help="run the per-column MH chains on a data CSV")
    p_fit.add_argument("--data", type=Path, required=True)
    p_fit.add_argument("--draws", type=int, help="number of joint posterior draws to write")
    p_fit.add_argument("--standardize", action="store_true", help="center and scale columns first")

    p_eval = sub.add_parser("evaluate", parents=[common], help="selection metrics against a truth")
    p_eval.add_argument("--truth-a", type=Path, required=True)
    p_eval.add_argument("--truth-d", type=Path, required=True)
    p_eval.add_argument("--inclusion", type=Path, required=True)

    p_rep = sub.add_parser("replicate", parents=[common], help="replicate study over an alpha grid")
    p_rep.add_argument("--alphas", type=_csv_floats)

    p_rate = sub.add_parser("rate-probe", parents=[common], help="estimation error across sample sizes")
    p_rate.add_argument("--n-grid", type=_csv_ints)
    p_rate.add_argument("--norm", choices=NORMS)
    p_rate.add_argument("--target", choices=("A", "omega"))
    return parser


def resolve_config(args) -> RunConfig:
    cfg = parse_config(args.config.read_text()) if args.config else RunConfig()
    hyper_over = {k: getattr(args, a) for k, a in [
        ("alpha", "alpha"), ("gamma", "gamma"), ("nu0", "nu0"), ("nu0_prime", "nu0_prime"),
        ("c1", "c1"), ("c2", "c2"), ("R_rule", "r_rule"), ("variant", "variant"),
    ] if getattr(args, a) is not None}
    chain_over = {k: getattr(args, k) for k in ("iterations", "burn_in", "threshold", "init")
                  if getattr(args, k) is not None}
    top = {k: getattr(args, k, None) for k in (
        "seed", "workers", "data_law", "n", "p", "sparsity", "replicates",
        "alphas", "n_grid", "norm", "target", "draws",
    )}
    top = {k: v for k, v in top.items() if v is not None}
    if getattr(args, "standardize", False):
        top["standardize"] = True
    return replace(
        cfg,
        hyper=replace(cfg.hyper, **hyper_over),
        chain=replace(cfg.chain, **chain_over),
        **top,
    )


def cmd_simulate(cfg: RunConfig, out: Path) -> int:
    truth = generate_truth(cfg.truth_spec())
    data = sample_data(cfg.data_law, cfg.n, truth, np.random.default_rng(derive_seed(cfg.seed, 1)))
    write_triplets(out / "truth_A.csv", truth.A)
    write_vector(out / "truth_D.csv", truth.D)
    write_matrix(out / "data.csv", data.values)
    write_json(out / "provenance.json", {
        "command": "simulate",
        "version": __version__,
        "seed": cfg.seed,
        "n_nonzero": int(np.count_nonzero(truth.A)),
        "config": cfg.to_dict(),
    })
    log.info("wrote truth (%d nonzeros) and %dx%d data to %s", np.count_nonzero(truth.A), cfg.n, cfg.p, out)
    return 0


def load_data(path: Path, standardize: bool = False) -> DataMatrix:
    X = read_matrix(path)
    if standardize:
        X = X - X.mean(axis=0)
        sd = X.std(axis=0, ddof=1)
        X = X / np.where(sd > 0, sd, 1.0)
    return DataMatrix(X)


def cmd_fit(cfg: RunConfig, out: Path, data_path: Path) -> int:
    data = load_data(data_path, cfg.standardize)
    dag = fit_dag(data, cfg.hyper, cfg.chain, workers=cfg.resolved_workers())
    write_triplets(out / "inclusion.csv", dag.inclusion, header=("j", "l", "prob"), full_lower=True)
    write_pairs(out / "selected.csv", dag.selected)
    cols = [
        {
            "j": j + 1,
            "cap": tr.cap,
            "accept_count": tr.accept_count,
            "proposal_count": tr.proposal_count,
            "acceptance_rate": tr.acceptance_rate,
            "final_support": [i + 1 for i in tr.final],
        }
        for j, tr in sorted(dag.traces.items())
    ]
    total_acc = sum(c["accept_count"] for c in cols)
    total_prop = sum(c["proposal_count"] for c in cols)
    write_json(out / "summary.json", {
        "command": "fit",
        "version": __version__,
        "n": data.n,
        "p": data.p,
        "seed": cfg.seed,
        "iterations": cfg.chain.iterations,
        "burn_in": cfg.chain.burn_in,
        "threshold": cfg.chain.threshold,
        "hyper": cfg.hyper.to_dict(),
        "acceptance_rate": total_acc / total_prop if total_prop else 0.0,
        "n_selected": int(dag.selected.sum()),
        "columns": cols,
    })
    if cfg.draws:
        ddir = out / "draws"
        ddir.mkdir(exist_ok=True)
        models = draw_posterior_models(data, dag, cfg.hyper, cfg.draws, np.random.default_rng(derive_seed(cfg.seed, 3)))
        for k, m in enumerate(models):
            write_triplets(ddir / f"A_{k}.csv", m.A)
            write_vector(ddir / f"D_{k}.csv", m.D)
            write_matrix(ddir / f"Omega_{k}.csv", compose(m))
    log.info("fit %d columns; %d edges selected", data.p - 1, int(dag.selected.sum()))
    return 0


def format_metrics_table(m: dict) -> str:
    keys = ("errors", "fdr", "tpr", "p_bar_0", "p_bar_1")
    head = " ".join(f"{k:>10}" for k in keys)
    row = " ".join(f"{m[k]:>10d}" if isinstance(m[k], int) else f"{m[k]:>10.4f}" for k in keys)
    return head + "\n" + row + "\n"


def cmd_evaluate(cfg: RunConfig, out: Path, truth_a: Path, truth_d: Path, inclusion_path: Path) -> int:
    D = read_vector(truth_d)
    p = D.shape[0]
    inclusion, rows = read_triplets(inclusion_path)
    if inclusion.shape[0] != p or rows != p * (p - 1) // 2:
        raise FormatError(
            f"inclusion file covers p = {inclusion.shape[0]} with {rows} rows; truth has p = {p}"
        )
    A, _ = read_triplets(truth_a, p=p)
    m = selection_metrics(A != 0, inclusion, cfg.chain.threshold).to_dict()
    write_json(out / "metrics.json", m)
    (out / "metrics.txt").write_text(format_metrics_table(m))
    sys.stdout.write(format_metrics_table(m))
    return 0


REPLICATE_COLUMNS = ["n", "p", "sparsity", "alpha", "data_law", "replicates", "errors", "fdr", "tpr",
                     "p_bar_0", "p_bar_1", "status"]


def cmd_replicate(cfg: RunConfig, out: Path) -> int:
    rows = []
    failed = False
    for alpha in cfg.alphas:
        cell = Cell(cfg.n, cfg.p, cfg.sparsity, alpha, cfg.data_law)
        try:
            row = run_cell(cell, cfg.replicates, cfg.hyper, cfg.chain, cfg.seed, cfg.resolved_workers())
            row["status"] = "ok"
        except (ColumnError, ValueError, ArithmeticError) as exc:
            log.error("cell %s failed: %s", cell, exc)
            failed = True
            row = {**asdict(cell), "replicates": cfg.replicates, "status": f"failed: {exc}".replace(",", ";")}
            row.update({k: float("nan") for k in ("errors", "fdr", "tpr", "p_bar_0", "p_bar_1")})
        rows.append(row)
    write_rows(out / "table.csv", rows, REPLICATE_COLUMNS)
    return 1 if failed else 0


def cmd_rate_probe(cfg: RunConfig, out: Path) -> int:
    rows = rate_probe(cfg.norm, cfg.n_grid, cfg.p, cfg.sparsity, cfg.replicates, cfg.hyper, cfg.chain,
                      seed=cfg.seed, n_draws=cfg.rate_draws, target=cfg.target, workers=cfg.resolved_workers())
    prev = None
    for r in rows:
        r["ratio"] = r["mean_error"] / prev if prev else float("nan")
        prev = r["mean_error"]
    write_rows(out / "rate.csv", rows, ["n", "mean_error", "sd_error", "replicates", "ratio"])
    return 0


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        cfg = resolve_config(args)
        if args.emit_config:
            sys.stdout.write(emit_config(cfg))
            return 0
        args.out.mkdir(parents=True, exist_ok=True)
        if args.command == "simulate":
            return cmd_simulate(cfg, args.out)
        if args.command == "fit":
            return cmd_fit(cfg, args.out, args.data)
        if args.command == "evaluate":
            return cmd_evaluate(cfg, args.out, args.truth_a, args.truth_d, args.inclusion)
        if args.command == "replicate":
            return cmd_replicate(cfg, args.out)
        return cmd_rate_probe(cfg, args.out)
    except (FormatError, ValueError, OSError, ColumnError, json.JSONDecodeError) as exc:
        sys.stderr.write(f"esc-dag: error: {exc}\n")
        return 1


if __name__ == "__main__":
    sys.exit(main())
