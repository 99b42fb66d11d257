"""Benchmark command line.

Subcommands: train, bench, factorial, breakdown, plotdata.  Exit codes:
0 success, 2 configuration error, 3 runtime error.  RMS_SCHED_THREADS caps
the evaluation worker pool.  All CSV outputs are byte-reproducible for a
fixed config and seed; wall-clock timings go to the summary JSON instead.
"""

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .agent import AgentConfig, EnhancedDQN
from .baselines import make_policy
from .config import ConfigError, ScenarioConfig
from .negotiation import NegotiationAllocator, NegotiationEngine
from .nn import CheckpointError
from .trainer import (METRIC_FIELDS, TrainConfig, episode_seed, evaluate,
                      run_training)

RESULT_COLUMNS = ("scenario", "policy", "seed", "episode", "makespan",
                  "total_tardiness", "avg_utilization", "total_setup_time",
                  "reconfig_count", "completion_rate", "objective")

FACTORIAL_ROWS = (("WNR", True, True), ("WTR", False, True),
                  ("WNF", True, False), ("WTF", False, False))

BREAKDOWN_ROWS = (("Baseline", False, False), ("Reconfig Only", False, True),
                  ("Negotiation Only", True, False), ("Combined", True, True))

HEURISTICS = ("edf", "random", "fifo", "earliest")


class MissingCheckpoint(Exception):
    pass


class MissingLog(Exception):
    pass


def thread_count() -> int:
    raw = os.environ.get("RMS_SCHED_THREADS", "")
    if raw.strip():
        try:
            return max(1, int(raw))
        except ValueError:
            raise ConfigError(f"RMS_SCHED_THREADS must be an integer, got {raw!r}")
    return min(8, os.cpu_count() or 1)


def _fmt(v):
    if isinstance(v, float):
        return repr(v)
    return v


def _write_csv(path, columns, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _scenario_label(path: str) -> str:
    return os.path.splitext(os.path.basename(path))[0]


def build_policy(spec: str, scenario: ScenarioConfig, seed: int):
    """Policy factory for bench: heuristics, 'nego', or 'dqn:<checkpoint>'."""
    if spec in HEURISTICS:
        return make_policy(spec, seed=seed)
    if spec == "nego":
        return NegotiationAllocator(
            NegotiationEngine(scenario.n_machines, seed=seed))
    if spec.startswith("dqn:"):
        path = spec.split(":", 1)[1]
        if not os.path.exists(path):
            raise MissingCheckpoint(f"checkpoint not found: {path}")
        return EnhancedDQN.load(path)
    raise ConfigError(f"unknown policy {spec!r} (expected one of "
                      f"{HEURISTICS + ('nego', 'dqn:<checkpoint>')})")


# ------------------------------------------------------------------- commands

def cmd_train(args) -> int:
    scenario = ScenarioConfig.from_json(args.config)
    os.makedirs(args.out, exist_ok=True)
    agent_cfg = AgentConfig(seed=args.seed)
    for attr in ("lr", "epsilon_decay", "warmup", "hidden_dim", "batch_size"):
        value = getattr(args, attr)
        if value is not None:
            setattr(agent_cfg, attr, value)
    train = TrainConfig(
        episodes=args.episodes, seed=args.seed, agent=agent_cfg,
        eval_every=args.eval_every, eval_episodes=args.eval_episodes,
        checkpoint_dir=args.out if args.checkpoint_every else None,
        checkpoint_every=args.checkpoint_every)
    engine = None
    if scenario.negotiation:
        engine = NegotiationEngine(scenario.n_machines, seed=args.seed)
    started = time.perf_counter()
    agent, log = run_training(scenario, train, engine=engine)
    wall = time.perf_counter() - started
    agent.save(os.path.join(args.out, "checkpoint.json"))
    log.to_csv(os.path.join(args.out, "train_log.csv"))
    log.eval_to_csv(os.path.join(args.out, "eval_log.csv"))
    if engine is not None:
        engine.export_log(os.path.join(args.out, "negotiation_log.csv"))
    summary = {
        "scenario": _scenario_label(args.config),
        "episodes": train.episodes,
        "seed": train.seed,
        "final_epsilon": agent.epsilon,
        "learn_calls": agent.learn_calls,
        "wall_time": wall,
    }
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"trained {train.episodes} episodes -> {args.out}")
    return 0


def _bench_task(policy_spec, scenario, scenario_name, seed, episodes):
    policy = build_policy(policy_spec, scenario, seed)
    engine = policy.engine if isinstance(policy, NegotiationAllocator) else None
    seeds = [episode_seed(seed, i) for i in range(episodes)]
    started = time.perf_counter()
    rows, _ = evaluate(policy, scenario, episodes, seeds=seeds, engine=engine)
    wall = time.perf_counter() - started
    out = []
    for episode, row in enumerate(rows):
        record = {"scenario": scenario_name, "policy": policy_spec,
                  "seed": seed, "episode": episode}
        record.update({k: row[k] for k in METRIC_FIELDS})
        out.append(record)
    return out, wall


def cmd_bench(args) -> int:
    scenario = ScenarioConfig.from_json(args.config)
    name = _scenario_label(args.config)
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    if not policies:
        raise ConfigError("no policies given")
    for p in policies:                     # fail fast on bad specs
        build_policy(p, scenario, seed=0)
    seeds = parse_seeds(args.seeds)
    os.makedirs(args.out, exist_ok=True)
    tasks = [(p, s) for p in policies for s in seeds]
    workers = thread_count()

    def run(task):
        p, s = task
        return _bench_task(p, scenario, name, s, args.episodes)

    if workers > 1 and len(tasks) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    rows = [r for chunk, _ in results for r in chunk]
    _write_csv(os.path.join(args.out, "results.csv"), RESULT_COLUMNS, rows)

    summary = {"scenario": name, "episodes": args.episodes,
               "seeds": list(seeds), "policies": {}}
    for i, (p, s) in enumerate(tasks):
        entry = summary["policies"].setdefault(
            p, {"wall_time": 0.0, "metrics": {}})
        entry["wall_time"] += results[i][1]
    for p in policies:
        sub = [r for r in rows if r["policy"] == p]
        stats = {}
        for f in METRIC_FIELDS:
            vals = np.array([r[f] for r in sub], dtype=np.float64)
            stats[f] = {"mean": float(vals.mean()), "std": float(vals.std())}
        summary["policies"][p]["metrics"] = stats
    with open(os.path.join(args.out, "summary.json"), "w") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
    print(f"{len(rows)} result rows -> {args.out}")
    return 0


def _toggled_eval(scenario, negotiation, reconfiguration, seeds, episodes):
    cfg = scenario.replace(negotiation=negotiation,
                           reconfiguration=reconfiguration)
    rows = []
    for seed in seeds:
        if negotiation:
            policy = NegotiationAllocator(
                NegotiationEngine(cfg.n_machines, seed=seed))
            engine = policy.engine
        else:
            policy = make_policy("earliest", seed=seed)
            engine = None
        ep_seeds = [episode_seed(seed, i) for i in range(episodes)]
        r, _ = evaluate(policy, cfg, episodes, seeds=ep_seeds, engine=engine)
        rows.extend(r)
    means = {}
    for f in METRIC_FIELDS:
        means[f] = float(np.mean([r[f] for r in rows]))
    return means


def cmd_factorial(args) -> int:
    scenario = ScenarioConfig.from_json(args.config)
    seeds = parse_seeds(args.seeds)
    os.makedirs(args.out, exist_ok=True)
    out_rows = []
    for label, nego, reconf in FACTORIAL_ROWS:
        means = _toggled_eval(scenario, nego, reconf, seeds, args.episodes)
        row = {"config": label, "negotiation": int(nego),
               "reconfiguration": int(reconf)}
        row.update(means)
        out_rows.append(row)
    columns = ("config", "negotiation", "reconfiguration") + METRIC_FIELDS
    _write_csv(os.path.join(args.out, "factorial.csv"), columns, out_rows)
    for row in out_rows:
        print(f"{row['config']}: makespan {row['makespan']:.2f} "
              f"reconfig_time {row['total_reconfig_time']:.2f} "
              f"objective {row['objective']:.2f}")
    return 0


def cmd_breakdown(args) -> int:
    scenario = ScenarioConfig.from_json(args.config)
    seeds = parse_seeds(args.seeds)
    os.makedirs(args.out, exist_ok=True)
    out_rows = []
    for mode in ("normal", "breakdown"):
        plan = scenario.breakdowns if mode == "breakdown" else []
        if mode == "breakdown" and not scenario.breakdowns:
            raise ConfigError("breakdown mode needs a breakdown plan "
                              "in the scenario config")
        base = scenario.replace(breakdowns=plan)
        for label, nego, reconf in BREAKDOWN_ROWS:
            means = _toggled_eval(base, nego, reconf, seeds, args.episodes)
            row = {"mode": mode, "config": label, "negotiation": int(nego),
                   "reconfiguration": int(reconf),
                   "status": "FAIL" if means["completion_rate"] < 1.0 else "OK"}
            row.update(means)
            out_rows.append(row)
    columns = (("mode", "config", "negotiation", "reconfiguration", "status")
               + METRIC_FIELDS)
    _write_csv(os.path.join(args.out, "breakdown.csv"), columns, out_rows)
    for row in out_rows:
        print(f"{row['mode']:9s} {row['config']:17s} "
              f"completion {row['completion_rate']:.3f} {row['status']}")
    return 0


def cmd_plotdata(args) -> int:
    produced = []
    os.makedirs(args.out, exist_ok=True)
    train_log = os.path.join(args.log, "train_log.csv")
    eval_log = os.path.join(args.log, "eval_log.csv")
    nego_log = os.path.join(args.log, "negotiation_log.csv")
    results = os.path.join(args.log, "results.csv")

    if os.path.exists(train_log):
        with open(train_log) as fh:
            rows = list(csv.DictReader(fh))
        out = [{"episode": r["episode"], "reward": r["reward"],
                "loss_mean": r["loss_mean"], "epsilon": r["epsilon"]}
               for r in rows]
        _write_csv(os.path.join(args.out, "reward_curve.csv"),
                   ("episode", "reward", "loss_mean", "epsilon"), out)
        produced.append("reward_curve.csv")

    if os.path.exists(eval_log):
        with open(eval_log) as fh:
            rows = list(csv.DictReader(fh))
        out = [{"episode": r["episode"], "eval_index": r["eval_index"],
                "makespan": r["makespan"],
                "total_tardiness": r["total_tardiness"]} for r in rows]
        _write_csv(os.path.join(args.out, "pareto.csv"),
                   ("episode", "eval_index", "makespan", "total_tardiness"), out)
        produced.append("pareto.csv")

    if os.path.exists(nego_log):
        with open(nego_log) as fh:
            rows = list(csv.DictReader(fh))
        counts = {}
        for r in rows:
            counts[int(r["round"])] = counts.get(int(r["round"]), 0) + 1
        out = [{"round": k, "count": counts[k]} for k in sorted(counts)]
        _write_csv(os.path.join(args.out, "rounds_hist.csv"),
                   ("round", "count"), out)
        produced.append("rounds_hist.csv")

    if os.path.exists(results):
        with open(results) as fh:
            rows = list(csv.DictReader(fh))
        out = []
        for r in rows:
            for metric in ("makespan", "total_tardiness", "objective"):
                out.append({"policy": r["policy"], "metric": metric,
                            "value": r[metric]})
        _write_csv(os.path.join(args.out, "box.csv"),
                   ("policy", "metric", "value"), out)
        produced.append("box.csv")

    if not produced:
        raise MissingLog(f"no train_log.csv, eval_log.csv, negotiation_log.csv "
                         f"or results.csv under {args.log}")
    print("wrote " + ", ".join(produced))
    return 0


# ----------------------------------------------------------------- arg wiring

def parse_seeds(raw: str):
    try:
        seeds = [int(s) for s in raw.split(",") if s.strip()]
    except ValueError:
        raise ConfigError(f"bad seed list {raw!r}")
    if not seeds:
        raise ConfigError("no seeds given")
    return seeds


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rmsched",
        description="Reconfigurable-shop scheduling benchmarks")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the scheduling agent")
    p.add_argument("--config", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--episodes", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.add_argument("--eval-every", type=int, default=20)
    p.add_argument("--eval-episodes", type=int, default=20)
    p.add_argument("--checkpoint-every", type=int, default=0)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--epsilon-decay", type=float, default=None,
                   dest="epsilon_decay")
    p.add_argument("--warmup", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=None, dest="hidden_dim")
    p.add_argument("--batch-size", type=int, default=None, dest="batch_size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("bench", help="evaluate policies on a scenario")
    p.add_argument("--config", required=True)
    p.add_argument("--policies", required=True,
                   help="comma list: edf,random,fifo,earliest,nego,dqn:<ckpt>")
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("factorial", help="toggle grid: negotiation x reconfiguration")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_factorial)

    p = sub.add_parser("breakdown", help="normal vs machine-failure comparison")
    p.add_argument("--config", required=True)
    p.add_argument("--seeds", default="0,1,2")
    p.add_argument("--episodes", type=int, default=5)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_breakdown)

    p = sub.add_parser("plotdata", help="emit plot-ready CSV tables from logs")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_plotdata)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, MissingCheckpoint, MissingLog, CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - single CLI surface
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
