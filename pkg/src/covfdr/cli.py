"""Command-line surface: generate, run, sweep, threshold-grid.

Exit codes: 0 success, 2 usage or validation error, 1 internal error.  All
randomness flows from --seed.  A JSON file passed as --config supplies
defaults for the invoked subcommand (flags still win); unknown keys are
rejected.  COVFDR_THREADS caps sweep parallelism.
"""
from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import dataio, simgen
from .baselines import bh_threshold, group_bh, kmeans, storey_pi0
from .core import (
    ConfigurationError,
    ConstantRule,
    Dataset,
    StandardizingRule,
    TINY_THRESHOLD,
    ValidationError,
    apply_rule,
    standardize,
)
from .simgen import FAMILIES, GenSpec
from .trainer import TrainConfig, neural_fdr

METHODS = ("bh", "sbh", "groupbh", "neuralfdr")


# ---------------------------------------------------------------------------
# Parser
# ---------------------------------------------------------------------------


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--folds", type=int, default=3, help="number of cross-validation folds")
    p.add_argument("--lambda1", type=float, default=20.0, help="constraint penalty weight")
    p.add_argument("--lambda2", type=float, default=None, help="sigmoid sharpness (default: adaptive)")
    p.add_argument("--lambda3", type=float, default=1.0, help="softmax sharpness for init targets")
    p.add_argument("--init-clusters", type=int, default=10)
    p.add_argument("--batch-size", type=int, default=10000)
    p.add_argument("--fit-iters", type=int, default=6000)
    p.add_argument("--opt-iters", type=int, default=12000)
    p.add_argument("--lr", type=float, default=0.01)
    p.add_argument("--min-discoveries", type=int, default=10)
    p.add_argument("--gamma-grid", type=int, default=200)
    p.add_argument("--t-cap", type=float, default=0.5)
    p.add_argument("--estimator", choices=("mirror", "expected"), default="mirror")
    p.add_argument("--clip-bound", type=float, default=None)
    p.add_argument("--prefilter", action="store_true", help="keep only p < t_cap or p > 1 - t_cap")
    p.add_argument("--snapshot-every", type=int, default=0)
    p.add_argument("--log-every", type=int, default=500)
    p.add_argument("--hidden", default="10,10,10,10,10,10,10,10,10,10", help="comma-separated hidden widths")
    p.add_argument("--dtype", choices=("float32", "float64"), default="float32")


def build_parser() -> tuple[argparse.ArgumentParser, dict[str, argparse.ArgumentParser]]:
    parser = argparse.ArgumentParser(prog="covfdr", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    subs: dict[str, argparse.ArgumentParser] = {}

    g = sub.add_parser("generate", help="write a synthetic dataset CSV plus metadata JSON")
    g.add_argument("--config", default=None, help="JSON file of defaults for this command")
    g.add_argument("--family", required=True, help=f"one of: {', '.join(FAMILIES)}")
    g.add_argument("--n", type=int, required=True)
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("-o", "--out", required=True)
    g.add_argument("--bump-height", type=float, default=0.6)
    g.add_argument("--bump-width", type=float, default=0.1)
    g.add_argument("--slope-intercept", type=float, default=0.05)
    g.add_argument("--slope-gradient", type=float, default=0.25)
    g.add_argument("--signal-frac", type=float, default=0.4)
    g.add_argument("--block-size", type=int, default=10)
    g.add_argument("--rho", type=float, default=0.5)
    g.set_defaults(func=cmd_generate)
    subs["generate"] = g

    r = sub.add_parser("run", help="run one method on a dataset; write discoveries and a report")
    r.add_argument("--config", default=None)
    r.add_argument("--method", required=True, choices=METHODS)
    r.add_argument("--data", required=True)
    r.add_argument("--alpha", type=float, default=0.1)
    r.add_argument("--seed", type=int, default=0)
    r.add_argument("-o", "--out-prefix", required=True)
    r.add_argument("--storey-lambda", type=float, default=0.4)
    r.add_argument("--groups", type=int, default=20, help="k for the grouped baseline")
    _add_train_flags(r)
    r.set_defaults(func=cmd_run)
    subs["run"] = r

    s = sub.add_parser("sweep", help="run (method, alpha, seed) cells; write a long-format CSV")
    s.add_argument("--config", default=None)
    s.add_argument("--data", required=True)
    s.add_argument("--methods", required=True, help="comma-separated subset of: " + ",".join(METHODS))
    s.add_argument("--alphas", required=True, help="comma-separated nominal FDR levels")
    s.add_argument("--seeds", required=True, help="comma-separated seeds")
    s.add_argument("-o", "--out", required=True)
    s.add_argument("--storey-lambda", type=float, default=0.4)
    s.add_argument("--groups", type=int, default=20)
    _add_train_flags(s)
    s.set_defaults(func=cmd_sweep)
    subs["sweep"] = s

    t = sub.add_parser("threshold-grid", help="evaluate a saved rule on a feature grid")
    t.add_argument("--config", default=None)
    t.add_argument("--rule", required=True)
    t.add_argument("--data", required=True)
    t.add_argument("--resolution", type=int, default=50)
    t.add_argument("-o", "--out", required=True)
    t.set_defaults(func=cmd_threshold_grid)
    subs["threshold-grid"] = t

    return parser, subs


def _apply_config_file(argv: list[str], parser_map: dict[str, argparse.ArgumentParser]) -> None:
    """Load --config JSON (if any) as subcommand defaults; flags still override."""
    command = next((a for a in argv if not a.startswith("-")), None)
    if command not in parser_map:
        return
    cfg_path = None
    for i, a in enumerate(argv):
        if a == "--config" and i + 1 < len(argv):
            cfg_path = argv[i + 1]
        elif a.startswith("--config="):
            cfg_path = a.split("=", 1)[1]
    if cfg_path is None:
        return
    cfg = dataio.read_json(cfg_path)
    sub = parser_map[command]
    valid = {a.dest for a in sub._actions}
    unknown = set(cfg) - valid
    if unknown:
        raise ValidationError(f"unknown config keys for {command!r}: {', '.join(sorted(unknown))}")
    sub.set_defaults(**cfg)
    for action in sub._actions:  # a config-supplied value satisfies a required flag
        if action.dest in cfg:
            action.required = False


# ---------------------------------------------------------------------------
# Commands
# ---------------------------------------------------------------------------


def _meta_path(out) -> Path:
    out = Path(out)
    return out.with_suffix(".meta.json") if out.suffix == ".csv" else Path(str(out) + ".meta.json")


def cmd_generate(args) -> int:
    spec = GenSpec(
        family=args.family,
        n=args.n,
        seed=args.seed,
        bump_height=args.bump_height,
        bump_width=args.bump_width,
        slope_intercept=args.slope_intercept,
        slope_gradient=args.slope_gradient,
        signal_frac=args.signal_frac,
        block_size=args.block_size,
        rho=args.rho,
    )
    data = simgen.generate(spec)
    simgen.write_with_metadata(args.out, _meta_path(args.out), data, spec)
    print(f"wrote {data.n} rows to {args.out}")
    return 0


def _train_config(args, alpha: float, seed: int) -> TrainConfig:
    hidden = tuple(int(w) for w in str(args.hidden).split(",") if w != "")
    return TrainConfig(
        alpha=alpha,
        M=args.folds,
        lambda1=args.lambda1,
        lambda2=args.lambda2,
        lambda3=args.lambda3,
        init_clusters=args.init_clusters,
        batch_size=args.batch_size,
        fit_iters=args.fit_iters,
        opt_iters=args.opt_iters,
        lr=args.lr,
        min_discoveries=args.min_discoveries,
        gamma_grid=args.gamma_grid,
        t_cap=args.t_cap,
        estimator=args.estimator,
        clip_bound=args.clip_bound,
        seed=seed,
        hidden=hidden,
        prefilter=args.prefilter,
        snapshot_every=args.snapshot_every,
        log_every=args.log_every,
        dtype=args.dtype,
    )


def _constant_method_outcome(data: Dataset, thr: float, alpha: float) -> dict:
    disc = np.flatnonzero(data.pvals <= thr)  # step-up procedures discover at p <= threshold
    D = int(disc.size)
    out = {"threshold": thr, "D": D, "discovered": disc, "FD": None, "FDP": None}
    if data.truth is not None:
        fd = int(np.count_nonzero(data.truth[disc] == 0))
        out["FD"] = fd
        out["FDP"] = fd / D if D > 0 else 0.0
    if thr <= 0.5:
        fdhat = int(np.count_nonzero(data.pvals > 1.0 - thr)) if thr > 0 else 0
        out["FDhat"] = fdhat
        out["FDPhat"] = fdhat / D if D > 0 else 0.0
    else:
        out["FDhat"] = None
        out["FDPhat"] = None
    return out


def run_method(method: str, data: Dataset, alpha: float, seed: int, args) -> dict:
    """Shared engine for `run` and `sweep`; returns report fields plus artifacts."""
    flags: list[str] = []
    if method == "bh":
        thr = bh_threshold(data.pvals, alpha)
        out = _constant_method_outcome(data, thr, alpha)
        out["rules"] = [ConstantRule(max(thr, TINY_THRESHOLD), 0.5)] if thr <= 0.5 else []
        out["fold_of"] = np.full(out["discovered"].size, -1)
        out["t_at_disc"] = np.full(out["discovered"].size, thr)
    elif method == "sbh":
        pi0, floored = storey_pi0(data.pvals, args.storey_lambda)
        if floored:
            flags.append(f"storey pi0 floored at {pi0:.3g}: no p-values above lambda={args.storey_lambda}")
        thr = bh_threshold(data.pvals, alpha / pi0)
        out = _constant_method_outcome(data, thr, alpha)
        out["pi0"] = pi0
        out["rules"] = [ConstantRule(max(thr, TINY_THRESHOLD), 0.5)] if thr <= 0.5 else []
        out["fold_of"] = np.full(out["discovered"].size, -1)
        out["t_at_disc"] = np.full(out["discovered"].size, thr)
    elif method == "groupbh":
        std = standardize(data)
        groups = kmeans(std.features, min(args.groups, data.n), seed=seed)
        rule = group_bh(std, groups, alpha)
        flags.extend(rule.notes)
        report = apply_rule(std, rule, alpha=alpha)
        public = StandardizingRule(std.applied_transform, rule)
        out = {
            "D": report.D,
            "FD": report.FD,
            "FDP": report.FDP,
            "FDhat": report.FDhat,
            "FDPhat": report.FDPhat,
            "discovered": report.discovered,
            "rules": [public],
            "fold_of": np.full(report.discovered.size, -1),
            "t_at_disc": rule.thresholds(std.features[report.discovered]),
            "group_thresholds": rule.values.tolist(),
        }
    elif method == "neuralfdr":
        config = _train_config(args, alpha, seed)
        result = neural_fdr(data, config)
        flags.extend(result.flags)
        out = {
            "D": result.report.D,
            "FD": result.report.FD,
            "FDP": result.report.FDP,
            "FDhat": result.report.FDhat,
            "FDPhat": result.report.FDPhat,
            "discovered": result.report.discovered,
            "rules": result.fold_rules,
            "fold_of": result.fold_assignment[result.report.discovered],
            "t_at_disc": result.disc_thresholds,
            "gammas": result.gammas,
            "logs": result.logs,
            "config": {**asdict(config), "hidden": list(config.hidden)},
        }
    else:
        raise ValidationError(f"unknown method {method!r}; valid: {', '.join(METHODS)}")
    out["flags"] = flags
    out["method"] = method
    out["alpha"] = alpha
    out["seed"] = seed
    return out


def cmd_run(args) -> int:
    data = dataio.read_dataset(args.data)
    if args.method == "neuralfdr" and data.n < 300 * args.folds:
        raise ValidationError(f"neuralfdr needs n >= 300*M = {300 * args.folds}, got {data.n}")
    out = run_method(args.method, data, args.alpha, args.seed, args)
    prefix = Path(args.out_prefix)
    prefix.parent.mkdir(parents=True, exist_ok=True)

    disc = out["discovered"]
    lines = ["index,pvalue,threshold,fold"]
    for i, idx in enumerate(disc):
        lines.append(
            f"{int(idx)},{repr(float(data.pvals[idx]))},{repr(float(out['t_at_disc'][i]))},{int(out['fold_of'][i])}"
        )
    Path(f"{prefix}.discoveries.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    report = {
        "method": out["method"],
        "alpha": out["alpha"],
        "seed": out["seed"],
        "n": data.n,
        "D": out["D"],
        "FD": out["FD"],
        "FDP": out["FDP"],
        "FDhat": out["FDhat"],
        "FDPhat": out["FDPhat"],
        "flags": out["flags"],
        "config": _resolved_config(args),
    }
    for key in ("threshold", "pi0", "group_thresholds", "gammas"):
        if key in out:
            report[key] = out[key]
    if args.method == "neuralfdr":
        report["rules"] = [r.to_config() for r in out["rules"]]
    dataio.write_json(f"{prefix}.report.json", report)

    for j, rule in enumerate(out["rules"]):
        name = f"{prefix}.rule{j}.json" if args.method == "neuralfdr" else f"{prefix}.rule.json"
        dataio.write_rule(name, rule)
    if args.method == "neuralfdr" and args.log_every:
        rows = ["fold,iteration,d_smooth,fd_smooth,loss"]
        for j, log in enumerate(out["logs"]):
            for it, d_s, fd_s, loss in log:
                rows.append(f"{j},{it},{repr(float(d_s))},{repr(float(fd_s))},{repr(float(loss))}")
        Path(f"{prefix}.trainlog.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    for flag in out["flags"]:
        print(f"warning: {flag}", file=sys.stderr)
    print(f"{args.method}: D={out['D']}" + (f" FDP={out['FDP']:.4f}" if out["FDP"] is not None else ""))
    return 0


def _resolved_config(args) -> dict:
    resolved = {k: v for k, v in vars(args).items() if k not in ("func", "config")}
    return {k: v for k, v in resolved.items() if not callable(v)}


_SWEEP_STATE: dict = {}


def _sweep_cell(cell):
    method, alpha, seed = cell
    data = _SWEEP_STATE["data"]
    args = _SWEEP_STATE["args"]
    out = run_method(method, data, alpha, seed, args)
    return (method, alpha, seed, out["D"], out["FDP"], out["FDPhat"])


def cmd_sweep(args) -> int:
    data = dataio.read_dataset(args.data)
    methods = [m for m in args.methods.split(",") if m]
    for m in methods:
        if m not in METHODS:
            raise ValidationError(f"unknown method {m!r}; valid: {', '.join(METHODS)}")
    alphas = [float(a) for a in args.alphas.split(",") if a]
    seeds = [int(s) for s in args.seeds.split(",") if s]
    if data.truth is None:
        print("warning: no truth column; FDP left empty", file=sys.stderr)
    cells = [(m, a, s) for m in methods for a in alphas for s in seeds]
    _SWEEP_STATE["data"] = data
    _SWEEP_STATE["args"] = args
    workers = int(os.environ.get("COVFDR_THREADS", "1"))
    if workers > 1:
        import multiprocessing as mp

        with mp.get_context("fork").Pool(min(workers, len(cells))) as pool:
            results = pool.map(_sweep_cell, cells)
    else:
        results = [_sweep_cell(c) for c in cells]
    lines = ["method,alpha,seed,D,FDP,FDPhat"]
    for method, alpha, seed, D, fdp, fdphat in results:
        fdp_s = "" if fdp is None else repr(float(fdp))
        fdphat_s = "" if fdphat is None else repr(float(fdphat))
        lines.append(f"{method},{repr(float(alpha))},{seed},{D},{fdp_s},{fdphat_s}")
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {len(results)} rows to {args.out}")
    return 0


def cmd_threshold_grid(args) -> int:
    rule = dataio.read_rule(args.rule)
    data = dataio.read_dataset(args.data)
    r = args.resolution
    if r < 2:
        raise ValidationError("resolution must be at least 2")
    d = data.dim
    los = data.features.min(axis=0)
    his = data.features.max(axis=0)
    if d == 1:
        grid = np.linspace(los[0], his[0], r)[:, None]
    else:
        g1 = np.linspace(los[0], his[0], r)
        g2 = np.linspace(los[1], his[1], r)
        xx, yy = np.meshgrid(g1, g2, indexing="ij")
        grid = np.column_stack([xx.ravel(), yy.ravel()])
        if d > 2:
            medians = np.median(data.features[:, 2:], axis=0)
            grid = np.column_stack([grid, np.tile(medians, (grid.shape[0], 1))])
            print(
                f"note: dimensions 3..{d} fixed at their medians {medians.tolist()}",
                file=sys.stderr,
            )
    t = rule.thresholds(grid)
    lines = [",".join([f"f{i + 1}" for i in range(d)] + ["threshold"])]
    for row, tv in zip(grid, t):
        lines.append(",".join([repr(float(v)) for v in row] + [repr(float(tv))]))
    Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
    print(f"wrote {grid.shape[0]} rows to {args.out}")
    return 0


def main(argv=None) -> int:
    argv = list(sys.argv[1:]) if argv is None else list(argv)
    parser, subs = build_parser()
    try:
        _apply_config_file(argv, subs)
        args = parser.parse_args(argv)
        return args.func(args)
    except (ValidationError, ConfigurationError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:  # argparse usage errors already exit 2
        return int(exc.code) if exc.code is not None else 0
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
