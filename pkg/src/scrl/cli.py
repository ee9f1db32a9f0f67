"""Command-line front end: train, eval, ablate, oracle."""

from __future__ import annotations

import argparse
import csv
import sys
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig
from .constraints import ConstraintSyntaxError, load_formula
from .density import write_density_csv
from .oracle import TinyMDPError, enumerate_policies, exact_density, load_tinymdp
from .penalty import write_ledger_csv
from .policy import read_checkpoint, write_checkpoint
from .trainer import MODES, EvalResult, TrainConfig, evaluate, scrl_pieces, punitive_loop

SUMMARY_COLUMNS = ["mode", "seed", "episodes", "reward_mean", "reward_std", "consvio", "consvio_ep_mean",
                   "consvio_ep_std"]
ABLATION_COLUMNS = ["mode", "runs", "consvio_mean", "consvio_std", "reward_mean", "reward_std", "feasible_runs"]


def _fmt(x) -> str:
    return repr(float(x))


def _write_rows(path: Path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def summary_row(mode: str, seed: int, episodes: int, result: EvalResult) -> list:
    ep = result.episode_consvio
    return [mode, seed, episodes, _fmt(result.reward_mean), _fmt(result.reward_std), _fmt(result.consvio),
            _fmt(ep.mean()), _fmt(ep.std())]


def write_eval_artifacts(out: Path, cfg: TrainConfig, episodes: int, result: EvalResult, pgm: bool) -> None:
    _write_rows(out / "summary.csv", SUMMARY_COLUMNS, [summary_row(cfg.mode, cfg.seed, episodes, result)])
    write_density_csv(result.rho, out / "density.csv")
    rows = [["total", "", "", _fmt(result.consvio)]]
    rows += [["clause", k, label, _fmt(v)]
             for k, (label, v) in enumerate(zip(cfg.formula.labels, result.per_clause))]
    rows += [["label", "", label, _fmt(v)] for label, v in result.per_label.items()]
    _write_rows(out / "violations.csv", ["scope", "index", "label", "violation"], rows)
    np.savetxt(out / "heatmap.csv", result.heatmap, fmt="%d", delimiter=",")
    if pgm:
        write_pgm(result.heatmap, out / "heatmap.pgm")


def write_pgm(grid: np.ndarray, path: Path) -> None:
    """Plain (ASCII) portable graymap, scaled so the busiest cell is 255."""
    peak = grid.max()
    img = np.zeros_like(grid) if peak == 0 else np.rint(grid * 255.0 / peak).astype(int)
    lines = ["P2", f"{grid.shape[1]} {grid.shape[0]}", "255"]
    lines += [" ".join(str(int(v)) for v in row) for row in img]
    path.write_text("\n".join(lines) + "\n")


def run_training(cfg: TrainConfig, out: Path | None = None):
    update, term, ledger = scrl_pieces(cfg)
    final = {}

    def record_ledger(state, rho, it):
        new = update(state, rho, it)
        final["ledger"] = new
        return new

    params, rho, records = punitive_loop(cfg, record_ledger, term, ledger)
    if out is not None:
        n_clauses = len(cfg.formula.clauses)
        header = (["iteration", "reward_mean", "penalized_mean", "consvio"]
                  + [f"clause_{k}" for k in range(n_clauses)]
                  + [f"kappa_{k}" for k in range(len(cfg.formula.atoms))]
                  + [f"rho_{i}" for i in range(1, cfg.env.m + 1)])
        rows = [[r.iteration, _fmt(r.reward_mean), _fmt(r.penalized_mean), _fmt(r.consvio)]
                + [_fmt(v) for v in r.per_clause] + [_fmt(v) for v in r.kappa] + [_fmt(v) for v in r.rho]
                for r in records]
        _write_rows(out / "train_log.csv", header, rows)
        write_ledger_csv(final.get("ledger", ledger), out / "kappa.csv")
        write_checkpoint(params, out / "policy.csv")
    return params, rho, records


def _load(args) -> RunConfig:
    rc = RunConfig.load(args.config, args.set or [])
    if args.seed is not None:
        rc.set("seed", args.seed)
    if args.mode is not None:
        rc.set("mode", args.mode)
    return rc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_train(args) -> int:
    rc = _load(args)
    cfg = rc.train_config()
    episodes = rc["eval_episodes"]
    if episodes < 1:
        raise ConfigError("eval_episodes must be >= 1")
    out = _out_dir(args)
    params, _, records = run_training(cfg, out)
    result = evaluate(params, cfg, episodes)
    write_eval_artifacts(out, cfg, episodes, result, rc["pgm"])
    print(f"{cfg.mode} seed {cfg.seed}: {len(records)} iterations, reward {result.reward_mean:.4f}, "
          f"consvio {result.consvio:.4f}")
    return 0


def cmd_eval(args) -> int:
    rc = _load(args)
    if args.episodes is not None:
        rc.set("eval_episodes", args.episodes)
    episodes = rc["eval_episodes"]
    if episodes < 1:
        raise ConfigError("episodes must be >= 1")
    cfg = rc.train_config()
    ckpt = Path(args.checkpoint)
    if not ckpt.is_file():
        raise ConfigError(f"checkpoint not found: {ckpt}")
    try:
        params = read_checkpoint(ckpt, n_buckets=cfg.bucketizer().n_buckets)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    out = _out_dir(args)
    result = evaluate(params, cfg, episodes)
    write_eval_artifacts(out, cfg, episodes, result, rc["pgm"])
    print(f"reward {result.reward_mean:.4f}, consvio {result.consvio:.4f}")
    return 0


def cmd_ablate(args) -> int:
    rc = _load(args)
    modes = [m.strip() for m in args.modes.split(",") if m.strip()]
    bad = [m for m in modes if m not in MODES]
    if bad or not modes:
        raise ConfigError(f"unknown mode(s) {bad}; choose from {', '.join(MODES)}")
    if args.seeds < 1:
        raise ConfigError("--seeds must be >= 1")
    episodes = rc["eval_episodes"]
    if episodes < 1:
        raise ConfigError("eval_episodes must be >= 1")
    out = _out_dir(args)
    base_seed = rc["seed"]
    runs, table = [], []
    for mode in modes:
        rc.set("mode", mode)
        vio, rew = [], []
        for k in range(args.seeds):
            rc.set("seed", base_seed + k)
            cfg = rc.train_config()
            params, _, _ = run_training(cfg)
            result = evaluate(params, cfg, episodes)
            runs.append(summary_row(mode, cfg.seed, episodes, result))
            vio.append(result.consvio)
            rew.append(result.reward_mean)
        vio, rew = np.array(vio), np.array(rew)
        table.append([mode, len(vio), _fmt(vio.mean()), _fmt(vio.std()), _fmt(rew.mean()), _fmt(rew.std()),
                      int(np.sum(vio == 0.0))])
        print(f"{mode}: consvio {vio.mean():.4f} +- {vio.std():.4f}, reward {rew.mean():.4f} +- {rew.std():.4f}")
    _write_rows(out / "runs.csv", SUMMARY_COLUMNS, runs)
    _write_rows(out / "ablation.csv", ABLATION_COLUMNS, table)
    return 0


def cmd_oracle(args) -> int:
    path = Path(args.mdp)
    if not path.is_file():
        raise ConfigError(f"TinyMDP file not found: {path}")
    try:
        mdp = load_tinymdp(path)
    except TinyMDPError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    horizon = args.horizon
    if horizon is None and mdp.gamma >= 1:
        raise ConfigError("undiscounted TinyMDP needs --horizon")
    out = _out_dir(args)
    uniform = np.full((mdp.n_states, mdp.n_actions), 1.0 / mdp.n_actions)
    write_density_csv(exact_density(mdp, uniform, horizon), out / "density.csv")
    if args.formula:
        fpath = Path(args.formula)
        if not fpath.is_file():
            raise ConfigError(f"formula not found: {fpath}")
        try:
            formula = load_formula(fpath.read_text(encoding="utf-8"), mdp.m)
        except ConstraintSyntaxError as exc:
            raise ConfigError(f"{fpath}: {exc}") from exc
        try:
            best = enumerate_policies(mdp, formula, horizon)
        except TinyMDPError as exc:
            raise ConfigError(str(exc)) from exc
        _write_rows(out / "best_policy.csv", ["feasible", "reward", "consvio", "policy"],
                    [[int(best.feasible), _fmt(best.reward), _fmt(best.consvio), " ".join(map(str, best.policy))]])
        print(f"best policy {best.policy}: reward {best.reward:.6f}, consvio {best.consvio:.6f}, "
              f"feasible {best.feasible}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="run configuration file (bundled configs may be named directly)")
    common.add_argument("--seed", type=int)
    common.add_argument("--mode", choices=MODES)
    common.add_argument("--out", default=".", help="output directory")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a configuration key")

    parser = argparse.ArgumentParser(prog="scrl", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)
    p = sub.add_parser("train", parents=[common], help="train a policy and evaluate it")
    p.set_defaults(func=cmd_train)
    p = sub.add_parser("eval", parents=[common], help="evaluate a policy checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--episodes", type=int)
    p.set_defaults(func=cmd_eval)
    p = sub.add_parser("ablate", parents=[common], help="train and evaluate several modes over seeds")
    p.add_argument("--seeds", type=int, default=10)
    p.add_argument("--modes", default="scrl,scrl_min")
    p.set_defaults(func=cmd_ablate)
    p = sub.add_parser("oracle", help="exact density and best deterministic policy of a TinyMDP")
    p.add_argument("mdp")
    p.add_argument("--formula")
    p.add_argument("--horizon", type=int)
    p.add_argument("--out", default=".")
    p.set_defaults(func=cmd_oracle)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    # argparse rejects bad choices with status 2; config errors must be status 1
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # runtime failure
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
