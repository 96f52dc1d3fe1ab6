"""Experiment runner.

    magfn run <config>              execute one configured run
    magfn summarize <dir> [...]     align finished runs into one table
    magfn eval <checkpoint> [...]   roll out a saved model

``run`` writes ``metrics.csv`` (fixed header), ``config.resolved.json``,
``checkpoint.txt`` and ``curves.svg`` into the configured output
directory. The environment variable ``MAGFN_SEED`` overrides the config
seed. Exit codes: 0 success, 1 runtime failure, 2 bad configuration or
usage.
"""

from __future__ import annotations

import argparse
import json
import os
import sys

from . import svg, trainer
from .config import ConfigError, RunConfig, load_config
from .trainer import CSV_HEADER, MetricsRow


class MissingMetrics(Exception):
    pass


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="magfn")
    sub = parser.add_subparsers(dest="command", required=True)

    p_run = sub.add_parser("run", help="execute one configured experiment")
    p_run.add_argument("config", help="path to a key=value config file")

    p_sum = sub.add_parser("summarize", help="compare finished runs")
    p_sum.add_argument("run_dirs", nargs="+", help="run output directories")
    p_sum.add_argument("--out", default="summary", help="output file stem")

    p_eval = sub.add_parser("eval", help="roll out a saved checkpoint")
    p_eval.add_argument("checkpoint", help="path to checkpoint.txt")
    p_eval.add_argument("--rollouts", type=int, default=20)
    p_eval.add_argument("--seed", type=int, default=None)
    return parser


TRAINERS = {
    "cfn": trainer.train_cfn,
    "ifn": trainer.train_ifn,
    "jfn": trainer.train_jfn,
    "cjfn": trainer.train_cjfn,
}


def write_metrics_csv(path, rows):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(CSV_HEADER + "\n")
        for row in rows:
            fh.write(row.csv_values() + "\n")


def read_metrics_csv(path) -> list[MetricsRow]:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != CSV_HEADER:
        raise MissingMetrics(f"{path} does not carry the metrics schema")
    rows = []
    for line in lines[1:]:
        step, loss, l1, modes, tau, wall = line.split(",")
        opt = lambda s: None if s == "" else float(s)
        rows.append(
            MetricsRow(int(step), opt(loss), opt(l1), int(modes), opt(tau), opt(wall))
        )
    return rows


def _write_curves_svg(path, rows):
    steps = [r.step for r in rows]
    svg.write_curves(
        path,
        [
            ("training loss", [("loss", steps, [r.loss for r in rows])]),
            ("normalized L1 error", [("l1", steps, [r.l1_error for r in rows])]),
            ("modes found", [("modes", steps, [float(r.modes_found) for r in rows])]),
        ],
    )


def cmd_run(args) -> int:
    cfg = load_config(args.config)
    env_seed = os.environ.get("MAGFN_SEED")
    if env_seed is not None:
        try:
            cfg.seed = int(env_seed)
        except ValueError as exc:
            raise ConfigError(f"MAGFN_SEED must be an integer: {env_seed!r}") from exc
    out_dir = cfg.output_dir or os.path.join("runs", cfg.run_name())
    cfg.output_dir = out_dir
    os.makedirs(out_dir, exist_ok=True)

    def checkpoint_fn(step, snapshot):
        trainer.write_checkpoint(
            os.path.join(out_dir, f"checkpoint-{step}.txt"), cfg, snapshot
        )

    if cfg.algorithm == "mcmc":
        result = trainer.run_mcmc_experiment(cfg)
    else:
        result = TRAINERS[cfg.algorithm](cfg, checkpoint_fn=checkpoint_fn)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), result.metrics)
    with open(os.path.join(out_dir, "config.resolved.json"), "w", encoding="utf-8") as fh:
        fh.write(cfg.to_json() + "\n")
    if result.tables:
        trainer.write_checkpoint(os.path.join(out_dir, "checkpoint.txt"), cfg, result)
    _write_curves_svg(os.path.join(out_dir, "curves.svg"), result.metrics)
    print(f"wrote {out_dir}", file=sys.stderr)
    return 0


def cmd_summarize(args) -> int:
    runs = []
    for run_dir in args.run_dirs:
        path = os.path.join(run_dir, "metrics.csv")
        if not os.path.exists(path):
            raise MissingMetrics(f"{path} not found")
        runs.append((os.path.basename(os.path.normpath(run_dir)), read_metrics_csv(path)))
    n_rows = min(len(rows) for _, rows in runs)
    if any(len(rows) != n_rows for _, rows in runs):
        print("warning: runs have unequal lengths; aligning on the shortest",
              file=sys.stderr)
    header = ["step"]
    for name, _ in runs:
        header += [f"l1_error:{name}", f"modes_found:{name}"]
    lines = [",".join(header)]
    for i in range(n_rows):
        cells = [str(runs[0][1][i].step)]
        for _, rows in runs:
            r = rows[i]
            cells.append("" if r.l1_error is None else repr(r.l1_error))
            cells.append(str(r.modes_found))
        lines.append(",".join(cells))
    csv_path = args.out + ".csv"
    with open(csv_path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    steps = [rows[i].step for i in range(n_rows) for rows in [runs[0][1]]]
    svg.write_curves(
        args.out + ".svg",
        [
            (
                "normalized L1 error",
                [
                    (name, steps, [rows[i].l1_error for i in range(n_rows)])
                    for name, rows in runs
                ],
            ),
            (
                "modes found",
                [
                    (name, steps, [float(rows[i].modes_found) for i in range(n_rows)])
                    for name, rows in runs
                ],
            ),
        ],
    )
    print(f"wrote {csv_path} and {args.out}.svg", file=sys.stderr)
    return 0


def cmd_eval(args) -> int:
    import random

    from .flow_table import FlowParams, GlobalFlowView, LocalFlowView
    from .hypergrid import HypergridEnv, is_mode
    from .joint_flow import JointView

    algo, cfg, tables, _ = trainer.load_checkpoint(args.checkpoint)
    env = HypergridEnv(cfg.spec(), cfg.effective_horizon())
    seed = args.seed if args.seed is not None else cfg.seed
    env_seed = os.environ.get("MAGFN_SEED")
    if env_seed is not None:
        seed = int(env_seed)
    rng = random.Random(f"{seed}:eval-cli")

    def joint_of(owners):
        locals_ = [
            LocalFlowView(tables[o], env.dims, env.side, owner=o) for o in owners
        ]
        return JointView(locals_, env, async_start=cfg.async_start)

    if algo == "cfn":
        view = GlobalFlowView(tables[0], env, owner=0, action_cap=cfg.cfn_action_cap)
        views = [view]
    elif algo in ("jfn", "ifn"):
        views = [joint_of(list(range(env.n_agents)))]
    elif algo == "cjfn":
        if cfg.n_omega == 1:
            views = [joint_of(list(range(env.n_agents)))]
        else:
            views = [
                joint_of([(omega, agent) for agent in range(env.n_agents)])
                for omega in range(cfg.n_omega)
            ]
    else:
        raise ConfigError(f"cannot evaluate algorithm {algo!r}")

    taus = []
    terminals = []
    for _ in range(args.rollouts):
        view = views[rng.randrange(len(views))] if len(views) > 1 else views[0]
        if isinstance(view, GlobalFlowView):
            fn = lambda key: view.sample_profile(key, rng, 0.0)
        else:
            fn = lambda key: view.sample_profile(key, rng, 0.0, mode=cfg.sampling)
        traj = trainer.sample_trajectory(fn, env)
        taus.append(traj.tau)
        terminals.append(traj.final_positions())
    report = {
        "algo": algo,
        "rollouts": args.rollouts,
        "mean_tau": sum(taus) / len(taus) if taus else None,
        "mean_reward": (
            sum(env.reward(x) for x in terminals) / len(terminals)
            if terminals
            else None
        ),
        "modes_found": len({x for x in terminals if is_mode(x, env.spec)}),
        "distinct_terminals": len(set(terminals)),
    }
    print(json.dumps(report, indent=2, sort_keys=True))
    return 0


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        if args.command == "run":
            return cmd_run(args)
        if args.command == "summarize":
            return cmd_summarize(args)
        if args.command == "eval":
            return cmd_eval(args)
        raise ConfigError(f"unknown command {args.command!r}")
    except (ConfigError, MissingMetrics) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
