"""Command-line entry point.

Subcommands: ``genmap`` (write the terrain map file), ``train`` (collect
driving data and fit per-terrain GP models), ``run`` (closed-loop experiment
batches), ``report`` (aggregate tables and figures from saved results).
Failures exit nonzero with a machine-readable JSON error on stderr.
"""

import argparse
import csv
import json
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import gp, mapio, plots, sim_world
from .gp import GpRegistry
from .sim_world import STACKS, TrialLog
from .world import make_world


class CliError(RuntimeError):
    pass


def _load_scenario(args) -> "config_mod.ScenarioConfig":
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise CliError(f"config file not found: {path}")
        if path.suffix == ".json":
            cfg = config_mod.from_dict(json.loads(path.read_text()))
        else:
            cfg = config_mod.load(path)
    else:
        cfg = config_mod.ScenarioConfig()
    if args.seed is not None:
        cfg = config_mod.dataclasses.replace(cfg, seed=args.seed)
    return cfg


def _world_seed(cfg, trial: int) -> int:
    return int(np.random.SeedSequence([cfg.seed, trial]).generate_state(1)[0])


def _mission_seed(cfg, trial: int, stack: str) -> int:
    return int(np.random.SeedSequence([cfg.seed, trial, STACKS.index(stack)]).generate_state(1)[0])


def _trial_world(cfg, trial: int):
    return make_world(cfg.world, seed=_world_seed(cfg, trial), weights=cfg.weights,
                      disturbances=cfg.disturbances)


def cmd_genmap(args) -> int:
    cfg = _load_scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    world = make_world(cfg.world, seed=cfg.seed, weights=cfg.weights,
                       disturbances=cfg.disturbances)
    map_path = out / "world.tmap"
    mapio.save_world(map_path, world)
    cfg.to_json(out / "scenario.json")
    print(f"wrote {map_path} ({world.elevation.width}x{world.elevation.height} cells, "
          f"resolution {world.elevation.resolution} m)")
    return 0


def train_registry(cfg) -> tuple[GpRegistry, dict]:
    """Collect scripted driving data on the scenario world and fit one GP per
    terrain class. Returns the registry and per-class training stats."""
    world = make_world(cfg.world, seed=cfg.seed, weights=cfg.weights,
                       disturbances=cfg.disturbances)
    rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xDA7A]))
    datasets = sim_world.collect_training_data(
        world, cfg.vehicle, duration=cfg.train.duration, rng=rng,
    )
    for lbl in world.terrain_types.labels:
        n = len(datasets.get(lbl, []))
        if n < cfg.train.min_samples:
            raise CliError(
                f"insufficient training data for terrain {lbl!r}: "
                f"{n} < {cfg.train.min_samples} samples"
            )
    models = {}
    stats = {}
    for lbl, data in datasets.items():
        sub = data
        if len(data) > cfg.train.n_train:
            idx = np.sort(np.random.default_rng(cfg.seed).choice(
                len(data), size=cfg.train.n_train, replace=False))
            sub = gp.GpDataset(data.inputs[idx], data.outputs[idx])
        models[lbl] = gp.fit(sub, iters=cfg.train.iters, seed=cfg.seed)
        stats[lbl] = {
            "collected": len(data),
            "used": len(sub),
            "log_likelihoods": models[lbl].log_likelihoods.tolist(),
        }
    return GpRegistry(models), stats


def cmd_train(args) -> int:
    cfg = _load_scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    registry, stats = train_registry(cfg)
    registry.save(out / "registry.json")
    cfg.to_json(out / "scenario.json")
    for lbl, st in sorted(stats.items()):
        lmls = ", ".join(f"{v:.1f}" for v in st["log_likelihoods"])
        print(f"{lbl}: {st['collected']} samples collected, {st['used']} used, "
              f"final log-likelihoods [{lmls}]")
    print(f"wrote {out / 'registry.json'}")
    return 0


def _run_one(cfg, registry, stack: str, trial: int) -> TrialLog:
    world = _trial_world(cfg, trial)
    return sim_world.run_mission(
        world, cfg.mission(), stack,
        registry if stack == "proposed" else None,
        cfg.vehicle, cfg.planner, cfg.mppi,
        seed=_mission_seed(cfg, trial, stack),
        baseline_cfg=cfg.baseline,
    )


def build_report(cfg, logs: dict[str, list[TrialLog]]) -> dict:
    """Aggregates are pure functions of the per-trial rows."""
    report = {"seed": cfg.seed, "trials": len(next(iter(logs.values()))), "stacks": {}}
    for stack, stack_logs in logs.items():
        rows = [
            {"trial": i, "outcome": l.outcome, "detail": l.detail,
             "path_length": l.path_length, "fallbacks": l.fallback_count}
            for i, l in enumerate(stack_logs)
        ]
        succ_lengths = [r["path_length"] for r in rows if r["outcome"] == "success"]
        plan_t = np.concatenate([l.plan_times for l in stack_logs]) \
            if any(len(l.plan_times) for l in stack_logs) else np.array([0.0])
        track_t = np.concatenate([l.track_times for l in stack_logs]) \
            if any(len(l.track_times) for l in stack_logs) else np.array([0.0])
        report["stacks"][stack] = {
            "trials": rows,
            "successes": sum(1 for r in rows if r["outcome"] == "success"),
            "mean_success_path_length":
                float(np.mean(succ_lengths)) if succ_lengths else None,
            "timing": {
                "plan_p50_ms": float(np.percentile(plan_t, 50) * 1e3),
                "plan_p95_ms": float(np.percentile(plan_t, 95) * 1e3),
                "track_p50_ms": float(np.percentile(track_t, 50) * 1e3),
                "track_p95_ms": float(np.percentile(track_t, 95) * 1e3),
            },
        }
    return report


def _write_outputs(cfg, out: Path, logs: dict[str, list[TrialLog]]) -> dict:
    trials_dir = out / "trials"
    trials_dir.mkdir(parents=True, exist_ok=True)
    for stack, stack_logs in logs.items():
        for i, log in enumerate(stack_logs):
            (trials_dir / f"{stack}_{i:03d}.json").write_text(json.dumps(log.to_dict()))
            with open(trials_dir / f"{stack}_{i:03d}.csv", "w", newline="") as f:
                w = csv.writer(f)
                w.writerow(["t", "x", "y", "yaw", "v_x", "v_y", "omega_z",
                            "steer", "accel", "terrain"])
                w.writerows(log.trajectory_rows())

    with open(out / "paths.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stack", "trial", "t", "x", "y", "yaw", "v_x", "v_y",
                    "omega_z", "steer", "accel", "terrain"])
        for stack, stack_logs in logs.items():
            for i, log in enumerate(stack_logs):
                for row in log.trajectory_rows():
                    w.writerow([stack, i, *row])

    report = build_report(cfg, logs)
    (out / "report.json").write_text(json.dumps(report, indent=2))
    _write_report_table(out, report)

    world0 = _trial_world(cfg, 0)
    plots.plot_paths(world0, logs, cfg.start[:2], cfg.goal, out / "paths.png",
                     title=f"seed {cfg.seed} (paths from all trials over the trial-0 map)")
    plots.plot_summary(report, out / "summary.png")
    return report


def _write_report_table(out: Path, report: dict):
    with open(out / "report.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["stack", "successes", "trials", "mean_success_path_length_m",
                    "plan_p95_ms", "track_p95_ms"])
        for stack, s in report["stacks"].items():
            w.writerow([
                stack, s["successes"], len(s["trials"]),
                "" if s["mean_success_path_length"] is None
                else f"{s['mean_success_path_length']:.2f}",
                f"{s['timing']['plan_p95_ms']:.1f}",
                f"{s['timing']['track_p95_ms']:.1f}",
            ])


def cmd_run(args) -> int:
    cfg = _load_scenario(args)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    stacks = list(STACKS) if args.stack == "all" else [args.stack]

    registry = None
    if "proposed" in stacks:
        reg_path = Path(args.registry) if args.registry else out / "registry.json"
        if not reg_path.exists():
            raise CliError(
                f"missing model file {reg_path}; run the train subcommand first"
            )
        registry = GpRegistry.load(reg_path)

    jobs = [(stack, trial) for stack in stacks for trial in range(args.trials)]
    logs: dict[str, list] = {stack: [None] * args.trials for stack in stacks}
    if args.threads > 1:
        with ProcessPoolExecutor(max_workers=args.threads) as pool:
            futures = {
                (stack, trial): pool.submit(_run_one, cfg, registry, stack, trial)
                for stack, trial in jobs
            }
            for (stack, trial), fut in futures.items():
                logs[stack][trial] = fut.result()
    else:
        for stack, trial in jobs:
            logs[stack][trial] = _run_one(cfg, registry, stack, trial)

    cfg.to_json(out / "scenario.json")
    report = _write_outputs(cfg, out, logs)
    for stack in stacks:
        s = report["stacks"][stack]
        mean_len = s["mean_success_path_length"]
        print(f"{stack}: {s['successes']}/{args.trials} successes, "
              f"mean successful path length "
              f"{'n/a' if mean_len is None else f'{mean_len:.1f} m'}")
    print(f"wrote {out / 'report.json'}, {out / 'report.csv'}, "
          f"{out / 'paths.csv'}, figures and per-trial logs")
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    report_path = out / "report.json"
    scenario_path = out / "scenario.json"
    if not report_path.exists() or not scenario_path.exists():
        raise CliError(f"{out} does not contain report.json and scenario.json")
    report = json.loads(report_path.read_text())
    cfg = config_mod.from_dict(json.loads(scenario_path.read_text()))

    logs: dict[str, list] = {}
    for stack in report["stacks"]:
        logs[stack] = []
        for i in range(len(report["stacks"][stack]["trials"])):
            d = json.loads((out / "trials" / f"{stack}_{i:03d}.json").read_text())
            logs[stack].append(TrialLog(
                times=np.array(d["times"]), states=np.array(d["states"]),
                commands=np.array(d["commands"]), labels=d["labels"],
                outcome=d["outcome"], detail=d["detail"],
                path_length=d["path_length"], plan_count=d["plan_count"],
                fallback_count=d["fallback_count"],
            ))

    _write_report_table(out, report)
    world0 = _trial_world(cfg, 0)
    plots.plot_paths(world0, logs, cfg.start[:2], cfg.goal, out / "paths.png")
    plots.plot_summary(report, out / "summary.png")
    for stack, s in report["stacks"].items():
        mean_len = s["mean_success_path_length"]
        print(f"{stack}: {s['successes']}/{len(s['trials'])} successes, "
              f"mean successful path length "
              f"{'n/a' if mean_len is None else f'{mean_len:.1f} m'}")
    return 0


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="terranav")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=str, default=None,
                        help="scenario TOML (or exported JSON)")
        sp.add_argument("--seed", type=int, default=None, help="override scenario seed")
        sp.add_argument("--out", type=str, default="out", help="output directory")

    sp = sub.add_parser("genmap", help="generate and write the terrain map file")
    common(sp)
    sp.set_defaults(func=cmd_genmap)

    sp = sub.add_parser("train", help="collect driving data and fit per-terrain GP models")
    common(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("run", help="run closed-loop experiment batches")
    common(sp)
    sp.add_argument("--stack", choices=[*STACKS, "all"], default="all")
    sp.add_argument("--trials", type=int, default=10)
    sp.add_argument("--threads", type=int, default=1)
    sp.add_argument("--registry", type=str, default=None,
                    help="trained registry JSON (default: OUT/registry.json)")
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("report", help="re-render tables and figures from saved results")
    sp.add_argument("--out", type=str, default="out")
    sp.set_defaults(func=cmd_report)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - CLI boundary
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}),
              file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
