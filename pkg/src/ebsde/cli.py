"""Command-line entry point: ``ebsde <command> [--config FILE] [--preset NAME] [--set key=value ...]``.

Outputs go to ``output.dir``; the environment variable EBSDE_OUTPUT_DIR
overrides the config and ``--out`` overrides both. Every CSV starts with a
``# config_hash=... seed=...`` line.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import nn
from .config import ExperimentConfig, build_driver, build_grid, build_model, dump_text, load_config, parse_value
from .drivers import bounds as driver_bounds
from .drivers import lipschitz_constants, sup_abs_f0
from .ergodic_cost import estimate_lambda
from .errors import BoundUnavailable, ConfigError, EbsdeError, InvalidCombination
from .metrics import (LAMBDA_HEADER, err_h_study, integral_errors_table, oracle_for, table_lambda_convergence,
                      table_method_comparison, write_csv)
from .sde import exp_moment_bounds, simulate_paths
from .solvers import SolvedEbsde, SolverConfig, evaluate, train
from .utilities import UtilitySpec, martingale_check, optimal_strategy, utility_surface, y0_from_initial_utility

OUTPUT_ENV = "EBSDE_OUTPUT_DIR"
COMMANDS = ("simulate", "bounds", "estimate-lambda", "train", "evaluate", "table", "utility")


class Run:
    """A validated config plus its output directory and CSV header metadata."""

    def __init__(self, cfg: ExperimentConfig, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        self.meta = {"config_hash": cfg.hash(), "seed": cfg.seed}
        self.model = build_model(cfg)
        self.grid = build_grid(cfg)
        self.driver = build_driver(cfg)
        self.written: list[Path] = []

    def csv(self, name, header, rows):
        self.written.append(write_csv(self.out / name, header, rows, self.meta))

    def checkpoint_path(self) -> Path:
        p = Path(self.cfg.train.checkpoint)
        return p if p.is_absolute() else self.out / p


def default_y0(run: Run) -> float:
    cfg = run.cfg
    if cfg.train.y0 is not None:
        return cfg.train.y0
    oracle = oracle_for(run.driver, run.model)
    if oracle is not None:
        return float(oracle.y(run.model.v0))
    if cfg.utility.u0_x0 is not None and run.driver.kind in ("log", "exp", "power"):
        return y0_from_initial_utility(run.driver.kind, cfg.utility.u0_x0, cfg.utility.x0,
                                       cfg.driver.delta, cfg.driver.gamma)
    return 0.0


# ---------------------------------------------------------------- commands


def cmd_simulate(run: Run):
    cfg = run.cfg
    b = simulate_paths(run.model, run.grid, cfg.simulate.n_paths, cfg.seed, cfg.threads)
    tau = b.tau
    q = np.quantile(tau, [0.05, 0.25, 0.5, 0.75, 0.95])
    run.csv("paths_summary.csv", ["n_paths", "h", "T", "mean_tau", "q05", "q25", "q50", "q75", "q95", "max_tau"],
            [[b.n_paths, b.h, cfg.grid.T, float(tau.mean()), *map(float, q), float(tau.max())]])
    if cfg.simulate.dump:
        rows = []
        for j in range(b.n_paths):
            for k in range(int(b.n_ret[j]) + 1):
                rows.append([j, k, k * b.h, float(b.v[j, k])])
        run.csv("paths.csv", ["path", "k", "t", "v"], rows)
    return {"mean_tau": float(tau.mean())}


def cmd_bounds(run: Run):
    drv, model = run.driver, run.model
    rows = [["K", sup_abs_f0(drv)]]
    c_v, c_z = lipschitz_constants(drv)
    rows += [["C_v", c_v], ["C_z", c_z], ["C_mu", model.c_mu]]
    try:
        rows.append(["Z_max", driver_bounds(drv, model).z_max])
    except BoundUnavailable:
        rows.append(["Z_max", float("nan")])
    eb = exp_moment_bounds(model)
    rows += [["B_plus", eb.b_plus], ["B_minus", eb.b_minus], ["gamma_threshold", eb.gamma_threshold]]
    run.csv("bounds.csv", ["quantity", "value"], rows)
    return dict(rows)


def cmd_estimate_lambda(run: Run):
    cfg = run.cfg
    e = cfg.estimator
    method = None if e.method == "auto" else e.method
    if method == "regression":
        raise InvalidCombination("the regression scheme needs lambda as input; use ratio, linear_exp or cole_hopf")
    if method in ("linear_exp", "cole_hopf"):
        want = "exp" if method == "linear_exp" else "power"
        if run.driver.kind != want or not run.driver.pi_set.is_full:
            raise InvalidCombination(f"{method} needs an unconstrained {want} driver, got {run.driver.kind!r}")
    est = estimate_lambda(run.driver, run.model, run.grid, e.M, cfg.seed, e.reps, method, e.K, e.y0, cfg.threads)
    oracle = oracle_for(run.driver, run.model)
    mae = float(np.mean(np.abs(np.asarray(est.values) - oracle.lam))) if oracle else ""
    run.csv("lambda.csv", LAMBDA_HEADER + ["std_error"],
            [[est.method, run.grid.h, e.M, est.value, est.variance, e.reps, cfg.seed, mae, est.std_error]])
    run.csv("lambda_reps.csv", ["rep", "value"], [[r, v] for r, v in enumerate(est.values)])
    return {"lambda": est.value, "std_error": est.std_error}


def _solver_config(run: Run) -> SolverConfig:
    t = run.cfg.train
    return SolverConfig(t.solver, run.driver, run.model, run.grid, batch=t.batch, steps=t.steps, lr=t.lr,
                        seed=run.cfg.train_seed, y0=default_y0(run), eval_batch=t.eval_batch,
                        eval_every=t.eval_every, resample=t.resample, lr_decay=t.lr_decay, K=t.K,
                        zero_init=t.zero_init, threads=run.cfg.threads)


def cmd_train(run: Run):
    scfg = _solver_config(run)
    sol = train(scfg)
    run.csv("training_log.csv", ["step", "loss", "eval_loss", "lambda_bar"],
            [[r["step"], r["loss"], r["eval_loss"], r["lambda_bar"]] for r in sol.log])
    ck = run.checkpoint_path()
    ck.parent.mkdir(parents=True, exist_ok=True)
    nn.save_checkpoint(sol.state, ck, {"solver": scfg.kind, "y0": scfg.y0, "v0": run.model.v0,
                                       "config_hash": run.cfg.hash(), "seed": run.cfg.train_seed})
    run.written.append(ck)
    return {"lambda_bar": sol.lambda_bar}


def load_solution(run: Run) -> SolvedEbsde:
    ck = run.checkpoint_path()
    if not ck.exists():
        raise ConfigError(f"checkpoint {ck} not found; run 'ebsde train' first")
    state, meta = nn.load_checkpoint(ck)
    return SolvedEbsde(meta["solver"], state.lambda_bar, meta["y0"], run.driver, meta["v0"], state=state)


def cmd_evaluate(run: Run):
    cfg = run.cfg
    oracle = oracle_for(run.driver, run.model)
    if oracle is None:
        raise InvalidCombination(f"no closed-form solution for driver {run.driver.kind!r} with this factor")
    sol = load_solution(run)
    n = cfg.evaluate.n_paths or 100 * cfg.train.batch
    fresh = simulate_paths(run.model, run.grid, n, (cfg.seed, 7), cfg.threads)
    rep = evaluate(sol, oracle, fresh, pinned=cfg.evaluate.pinned)
    run.csv("errors.csv", ["t", "eps_Y"], [[t, e] for t, e in zip(rep.times, rep.eps_y)])
    run.csv("integral_errors.csv", ["h", "I_Y", "I_Z", "lambda_abs_error", "excluded", "n_paths"],
            [[run.grid.h, rep.I_Y, rep.I_Z, rep.lambda_error, rep.excluded, rep.n_paths]])
    return {"eps_T": float(rep.eps_y[-1]), "lambda_abs_error": rep.lambda_error}


def cmd_table(run: Run):
    cfg, tb = run.cfg, run.cfg.table
    if tb.which == "lambda":
        header, rows = table_lambda_convergence(run.driver, run.model, tb.h_list, tb.M_list, tb.reps, cfg.seed,
                                                cfg.grid.T, cfg.estimator.K, cfg.threads)
        run.csv("lambda_table.csv", header, rows)
        return {"rows": len(rows)}
    if tb.which == "methods":
        header, rows = table_method_comparison(run.driver, run.model, run.grid, cfg.estimator.M, tb.reps,
                                               tb.trainings, cfg.train.steps, cfg.seed, cfg.train.batch,
                                               cfg.train.lr, cfg.train.y0, cfg.threads)
        run.csv("method_comparison.csv", header, rows)
        return {"rows": len(rows)}
    oracle = oracle_for(run.driver, run.model)
    if oracle is None:
        raise InvalidCombination(f"table {tb.which!r} needs a closed-form benchmark driver")
    if tb.which == "err_h":
        header, rows = err_h_study(run.driver, run.model, oracle, tb.h_list, tb.n_paths,
                                   (0.0, tb.lambda_shift), cfg.seed, cfg.grid.T, cfg.estimator.degree,
                                   threads=cfg.threads)
        run.csv("err_h.csv", header, rows)
    else:
        header, rows = integral_errors_table(run.driver, run.model, oracle, tb.h_list, tb.n_paths, tb.reps,
                                             cfg.seed, cfg.grid.T, cfg.estimator.degree, cfg.threads)
        run.csv("integral_errors.csv", header, rows)
    return {"rows": len(rows)}


def cmd_utility(run: Run):
    cfg, u = run.cfg, run.cfg.utility
    kind = run.driver.kind if u.kind == "auto" else u.kind
    if kind not in ("log", "exp", "power") or kind != run.driver.kind:
        raise InvalidCombination(f"utility {kind!r} needs the matching utility driver, got {run.driver.kind!r}")
    sol = load_solution(run)
    spec = UtilitySpec(kind, cfg.driver.delta, cfg.driver.gamma, sol.y0)
    paths = simulate_paths(run.model, run.grid, u.n_paths, (cfg.seed, 11), cfg.threads)
    x = np.linspace(u.x_min, u.x_max, u.n_x)
    t, xx, U = utility_surface(sol, spec, paths, x, u.path_index)
    run.csv("surface.csv", ["t", "x", "U"], list(zip(t, xx, U)))
    v = paths.v[u.path_index, :paths.n_T + 1]
    pi = optimal_strategy(sol, spec, v)
    d = pi.shape[-1]
    run.csv("strategy.csv", ["t", "v"] + [f"pi_{k + 1}" for k in range(d)],
            [[k * paths.h, float(v[k]), *map(float, pi[k])] for k in range(len(v))])
    rep = martingale_check(sol, spec, paths, u.x0)
    run.csv("martingale.csv", ["t", "mean_U"], list(zip(rep.times, rep.mean_u)))
    return {"max_rel_drift": rep.max_rel_drift}


HANDLERS = {"simulate": cmd_simulate, "bounds": cmd_bounds, "estimate-lambda": cmd_estimate_lambda,
            "train": cmd_train, "evaluate": cmd_evaluate, "table": cmd_table, "utility": cmd_utility}


# ---------------------------------------------------------------- argument handling


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="ebsde", description="Ergodic BSDE numerical laboratory.")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--preset", help="named parameter set applied before the file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override one config key")
    p.add_argument("--seed", type=int, help="override the seed")
    p.add_argument("--threads", type=int, help="worker threads; results do not depend on it")
    p.add_argument("--out", help="output directory")
    p.add_argument("--dry-run", action="store_true", help="validate the config, print it and exit")
    return p


def resolve(args) -> tuple[ExperimentConfig, Path]:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = parse_value(v)
    if args.seed is not None:
        overrides["seed"] = args.seed
        overrides["train.seed"] = args.seed
    if args.threads is not None:
        overrides["threads"] = args.threads
    cfg = load_config(args.config, overrides, args.preset)
    out = args.out or os.environ.get(OUTPUT_ENV) or cfg.output.dir
    return cfg, Path(out)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg, out = resolve(args)
        run = Run(cfg, out)
        if args.dry_run:
            sys.stdout.write(dump_text(cfg))
            return 0
        summary = HANDLERS[args.command](run)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except EbsdeError as exc:
        print(f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for path in run.written:
        print(f"wrote {path}")
    print(json.dumps({k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in summary.items()}))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
