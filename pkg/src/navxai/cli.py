"""Operator entry points.

Subcommands: train, eval, scenarios, study, trace, serve, export-hist,
export-scene. All randomness flows from --seed; NAVXAI_DATA_DIR sets the
default output directory. Invalid input exits nonzero with a one-line
diagnostic.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .attribution import export_trace
from .mlp import CheckpointFormatError, PolicyNetwork, load_policy, save_policy
from .study import (
    CONDITIONS,
    STRATEGIES,
    aggregate,
    generate_scenarios,
    load_scenarios,
    run_study,
    run_trial,
    save_scenarios,
    write_results_csv,
)
from .td3 import (
    TrainConfig,
    evaluate_policy,
    sample_eval_scenes,
    train,
    write_episode_log,
)
from .world import SceneFormatError

DATA_DIR_ENV = "NAVXAI_DATA_DIR"


def data_dir() -> Path:
    return Path(os.environ.get(DATA_DIR_ENV, "navxai-data"))


def _load_policy_arg(checkpoint: str | None, seed: int) -> PolicyNetwork:
    """Checkpoint if given, otherwise a fresh seeded policy."""
    if checkpoint is not None:
        return load_policy(checkpoint)
    print(f"no checkpoint given; using untrained policy (seed {seed})")
    return PolicyNetwork(np.random.default_rng(seed))


def cmd_train(args: argparse.Namespace) -> int:
    if args.config is not None:
        config = TrainConfig.from_json(Path(args.config).read_text())
    else:
        config = TrainConfig()
    overrides = {}
    if args.steps is not None:
        overrides["total_steps"] = args.steps
    if args.seed is not None:
        overrides["seed"] = args.seed
    if overrides:
        import dataclasses

        config = dataclasses.replace(config, **overrides)
    out = Path(args.out) if args.out else data_dir() / "train"
    out.mkdir(parents=True, exist_ok=True)

    def progress(step: int, n_episodes: int, last_return: float) -> None:
        print(
            f"step {step}/{config.total_steps}  episodes {n_episodes}  "
            f"last_return {last_return:.3f}"
        )

    result = train(config, progress=progress)
    ckpt = out / "policy.npz"
    save_policy(result.policy, ckpt, metadata={"config": config.to_json()})
    write_episode_log(result.episodes, out / "train_log.csv")
    print(f"checkpoint: {ckpt}")
    print(f"episodes: {len(result.episodes)}")
    return 0


def _eval_scenes(args: argparse.Namespace, seed: int):
    if args.scenarios is not None:
        return [s.scene for s in load_scenarios(args.scenarios)]
    return sample_eval_scenes(seed, args.episodes)


def cmd_eval(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    policy = _load_policy_arg(args.checkpoint, seed)
    scenes = _eval_scenes(args, seed)
    res = evaluate_policy(policy, scenes)
    print(f"episodes       {len(scenes)}")
    print(f"goal_rate      {res.goal_rate:.4f}")
    print(f"collision_rate {res.collision_rate:.4f}")
    print(f"timeout_rate   {res.timeout_rate:.4f}")
    print(f"mean_return    {res.mean_return:.4f}")
    if res.goal_rate > 0:
        print(f"mean_goal_steps {res.mean_goal_steps:.2f}")
    return 0


def cmd_scenarios(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    scenarios = generate_scenarios(seed=seed, count=args.count)
    out = Path(args.out) if args.out else data_dir() / "scenarios.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_scenarios(scenarios, out, seed=seed)
    print(f"wrote {len(scenarios)} scenarios to {out}")
    return 0


def cmd_study(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    policy = _load_policy_arg(args.checkpoint, seed)
    if args.scenarios is not None:
        scenarios = load_scenarios(args.scenarios)
    else:
        scenarios = generate_scenarios(seed=seed)
    rows = run_study(
        policy,
        scenarios,
        strategy=args.strategy,
        participants=args.participants,
        seed=seed,
        scoring=args.scoring,
    )
    out = Path(args.out) if args.out else data_dir() / "study.csv"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_results_csv(rows, out)
    summary = aggregate(rows)
    for label in sorted(summary.per_condition):
        s = summary.per_condition[label]
        print(f"{label:<9} mean_tau {s.mean:+.4f}  sd {s.sd:.4f}  n {s.n}")
    print(f"results: {out}")
    return 0


def cmd_trace(args: argparse.Namespace) -> int:
    seed = args.seed if args.seed is not None else 0
    policy = _load_policy_arg(args.checkpoint, seed)
    scenarios = load_scenarios(args.scenarios)
    if args.scenario_id is not None:
        by_id = {s.id: s for s in scenarios}
        if args.scenario_id not in by_id:
            raise ValueError(f"scenario {args.scenario_id!r} not in {args.scenarios}")
        scenarios = [by_id[args.scenario_id]]
    out_dir = Path(args.out) if args.out else data_dir() / "traces"
    out_dir.mkdir(parents=True, exist_ok=True)
    for s in scenarios:
        # condition only gates display; any one yields the same frames
        record = run_trial(policy, s, CONDITIONS[0])
        export_trace(record.frames, out_dir / f"trace-{s.id}.csv")
    print(f"wrote {len(scenarios)} traces to {out_dir}")
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    import uvicorn

    from .service import create_app

    seed = args.seed if args.seed is not None else 0
    if args.frame_interval < 0:
        raise ValueError("--frame-interval must be >= 0")
    policy = _load_policy_arg(args.checkpoint, seed)
    scenarios = load_scenarios(args.scenarios)
    app = create_app(policy, scenarios, seed=seed, frame_interval_s=args.frame_interval)
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    return 0


def cmd_export_hist(args: argparse.Namespace) -> int:
    from .figures import export_histogram

    out = Path(args.out) if args.out else data_dir() / "hist.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = export_histogram(args.traces, out)
    print(f"image: {out}")
    print(f"data:  {csv_path}")
    return 0


def cmd_export_scene(args: argparse.Namespace) -> int:
    from .figures import export_scene_map

    seed = args.seed if args.seed is not None else 0
    policy = _load_policy_arg(args.checkpoint, seed)
    scenarios = load_scenarios(args.scenarios)
    by_id = {s.id: s for s in scenarios}
    if args.scenario_id not in by_id:
        raise ValueError(f"scenario {args.scenario_id!r} not in {args.scenarios}")
    out = Path(args.out) if args.out else data_dir() / f"scene-{args.scenario_id}.png"
    out.parent.mkdir(parents=True, exist_ok=True)
    csv_path = export_scene_map(policy, by_id[args.scenario_id].scene, args.timestep, out)
    print(f"image: {out}")
    print(f"data:  {csv_path}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="navxai", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a policy with TD3")
    p.add_argument("--config", help="training config JSON")
    p.add_argument("--steps", type=int, help="override total environment steps")
    p.add_argument("--seed", type=int, help="override training seed")
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on held-out scenes")
    p.add_argument("--checkpoint", help="policy .npz (omit for an untrained policy)")
    p.add_argument("--scenarios", help="scenario JSON file; omit to sample scenes")
    p.add_argument("--episodes", type=int, default=100, help="sampled scene count")
    p.add_argument("--seed", type=int)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("scenarios", help="generate a study scenario set")
    p.add_argument("--count", type=int, default=48)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_scenarios)

    p = sub.add_parser("study", help="run a headless study with a baseline ranker")
    p.add_argument("--checkpoint")
    p.add_argument("--scenarios")
    p.add_argument("--strategy", choices=STRATEGIES, default="oracle")
    p.add_argument("--participants", type=int, default=1)
    p.add_argument("--scoring", choices=("resolved", "tie-aware"), default="resolved")
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_study)

    p = sub.add_parser("trace", help="roll out scenarios and write per-frame trace CSVs")
    p.add_argument("--checkpoint")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--scenario-id", help="trace only this scenario")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory")
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("serve", help="serve the session API")
    p.add_argument("--checkpoint")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)
    p.add_argument("--seed", type=int)
    p.add_argument(
        "--frame-interval", type=float, default=0.1, help="seconds between frames"
    )
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("export-hist", help="attribution histogram figure + CSV")
    p.add_argument("traces", nargs="+", help="trace CSV files")
    p.add_argument("--out", help="output image path")
    p.set_defaults(func=cmd_export_hist)

    p = sub.add_parser("export-scene", help="top-down attribution map figure + CSV")
    p.add_argument("scenario_id")
    p.add_argument("--checkpoint")
    p.add_argument("--scenarios", required=True)
    p.add_argument("--timestep", type=int, default=0)
    p.add_argument("--seed", type=int)
    p.add_argument("--out")
    p.set_defaults(func=cmd_export_scene)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except (
        ValueError,
        OSError,
        RuntimeError,
        SceneFormatError,
        CheckpointFormatError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
