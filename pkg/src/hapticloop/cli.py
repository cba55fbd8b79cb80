"""Command-line entry points for the full workflow.

Subcommands: serve (session service), record (scripted datasets), train
(behavioral cloning), eval (policy rollouts), replay (re-simulate a
trajectory's actions), stats (dataset statistics + significance tests).
Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import asyncio
import csv
import json
import sys
from pathlib import Path

import numpy as np

from .bclearn import (
    TrainConfig,
    fit_normalizer,
    init_policy,
    load_dataset,
    load_policy,
    rollout_eval,
    save_policy,
    train,
)
from .demos import (
    DatasetManifest,
    ScriptedDemonstratorConfig,
    dataset_stats,
    read_demonstration,
    record_scripted_dataset,
    welch_t_test,
)
from .haptics import FeedbackCondition
from .kinematics import GripperKind
from .simworld import EventKind, GripperReference, WorldConfig, init_world, step


class ValidationError(Exception):
    pass


def _world_config(args) -> WorldConfig:
    if getattr(args, "world", None):
        return WorldConfig.from_json(args.world)
    return WorldConfig()


def _parse_kind(value: str) -> GripperKind:
    try:
        return GripperKind(value.lower())
    except ValueError:
        raise ValidationError(f"unknown gripper {value!r}; expected one of {[k.value for k in GripperKind]}")


def _parse_condition(value: str) -> FeedbackCondition:
    try:
        return FeedbackCondition(value.lower())
    except ValueError:
        raise ValidationError(f"unknown condition {value!r}; expected one of {[c.value for c in FeedbackCondition]}")


# ---------------------------------------------------------------------------
# subcommands


def cmd_serve(args) -> int:
    from .service import serve

    cfg = _world_config(args)
    try:
        asyncio.run(
            serve(
                bind=args.bind,
                world_config=cfg,
                out_dir=args.out,
                real_time_factor=args.real_time_factor,
                tcp=args.tcp,
            )
        )
    except KeyboardInterrupt:
        pass
    return 0


def cmd_record(args) -> int:
    if not args.scripted:
        raise ValidationError("only --scripted recording is supported from the CLI; use `serve` for live sessions")
    kind = _parse_kind(args.gripper)
    condition = _parse_condition(args.condition)
    out = Path(args.out)
    wcfg = _world_config(args)
    if args.world is None:
        wcfg = WorldConfig.from_dict({**wcfg.to_dict(), "base_disturbance": 1.0})
    manifest = record_scripted_dataset(
        out,
        kind,
        condition,
        episodes=args.episodes,
        base_seed=args.seed,
        world_config=wcfg,
        script_config=ScriptedDemonstratorConfig(seed=args.seed),
    )
    path = manifest.write(out / "manifest.json")
    print(f"recorded {len(manifest.entries)} demonstrations -> {path}")
    return 0


def cmd_train(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise ValidationError(f"manifest not found: {manifest_path}")
    manifest = DatasetManifest.read(manifest_path)
    root = manifest_path.parent
    kind = _parse_kind(args.gripper) if args.gripper else manifest.entries[0].gripper
    condition = _parse_condition(args.condition) if args.condition else None
    entries = manifest.select(gripper=kind, condition=condition)
    if not entries:
        raise ValidationError("no demonstrations match the requested gripper/condition")
    subset = DatasetManifest(entries=entries)
    x, y = load_dataset(subset, root)
    cfg = TrainConfig.from_json(args.config) if args.config else TrainConfig()
    policy = init_policy(kind, fit_normalizer(x), fit_normalizer(y), seed=cfg.seed)
    policy, losses, metrics = train(policy, x, y, cfg, world_config=_world_config(args) if args.eval_world else None)
    save_policy(policy, args.out)
    print(f"trained {cfg.epochs} epochs on {x.shape[0]} samples; final loss {losses[-1]:.3e}")
    if args.metrics:
        with open(args.metrics, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["epoch", "loss", "fingertip_n", "palm_n", "exec_s", "success_rate"])
            by_epoch = {m.epoch: m for m in metrics}
            for epoch, loss in enumerate(losses, start=1):
                m = by_epoch.get(epoch)
                if m is None:
                    writer.writerow([epoch, repr(loss), "", "", "", ""])
                else:
                    writer.writerow(
                        [epoch, repr(loss), repr(m.fingertip_force), repr(m.palm_force), repr(m.exec_time), repr(m.success_rate)]
                    )
        print(f"metrics -> {args.metrics}")
    print(f"policy -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    policy_path = Path(args.policy)
    if not policy_path.exists():
        raise ValidationError(f"policy not found: {policy_path}")
    policy = load_policy(policy_path)
    cfg = _world_config(args)
    m = rollout_eval(policy, cfg, policy.kind, count=args.episodes, seed=args.seed)
    report = {
        "policy": str(policy_path),
        "gripper": policy.kind.value,
        "episodes": args.episodes,
        "seed": args.seed,
        "success_rate": m.success_rate,
        "fingertip_force": m.fingertip_force,
        "palm_force": m.palm_force,
        "exec_time": m.exec_time,
    }
    text = json.dumps(report, indent=1)
    if args.report:
        Path(args.report).write_text(text)
    print(text)
    return 0


def cmd_replay(args) -> int:
    path = Path(args.traj)
    if not path.exists():
        raise ValidationError(f"trajectory not found: {path}")
    demo = read_demonstration(path)
    cfg = WorldConfig.from_dict(demo.header.world)
    world = init_world(cfg, demo.header.gripper)
    success_t = None
    for sample in demo.samples:
        ref = GripperReference.from_vector(sample.act, demo.header.gripper)
        world, _, events = step(world, ref)
        for e in events:
            if e.kind is EventKind.DUCK_IN_TRAY and success_t is None:
                success_t = e.t
    if demo.outcome.success:
        if success_t is None:
            print("replay FAILED: original succeeded but replay did not reach DuckInTray")
            return 2
        drift = abs(success_t - demo.outcome.exec_time)
        print(f"replay ok: DuckInTray at {success_t:.4f}s (recorded {demo.outcome.exec_time:.4f}s, drift {drift:.6f}s)")
        if drift > cfg.dt + 1e-9:
            print("replay FAILED: success time drifted by more than one step")
            return 2
        return 0
    print(f"replay ok: original outcome failure reproduced (success_t={success_t})")
    return 0


def cmd_stats(args) -> int:
    manifest_path = Path(args.manifest)
    if not manifest_path.exists():
        raise ValidationError(f"manifest not found: {manifest_path}")
    manifest = DatasetManifest.read(manifest_path)
    stats = dataset_stats(manifest, manifest_path.parent)
    agent_times: dict[tuple[str, str], float] = {}
    for spec in args.agent or []:
        try:
            gripper, condition, report_path = spec.split(":", 2)
        except ValueError:
            raise ValidationError("--agent expects gripper:condition:report.json")
        report = json.loads(Path(report_path).read_text())
        agent_times[(gripper, condition)] = float(report["exec_time"])

    conditions = [c.value for c in FeedbackCondition]
    grippers = sorted({g for g, _ in stats})
    with open(args.report, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(
            ["gripper"]
            + [f"demo_{c}_s" for c in conditions]
            + [f"agent_{c}_s" for c in conditions]
            + [f"demo_{c}_tip_n" for c in conditions]
            + [f"demo_{c}_palm_n" for c in conditions]
        )
        for gripper in grippers:
            row = [gripper]
            for c in conditions:
                cell = stats.get((gripper, c))
                row.append(repr(cell["exec_time"].mean) if cell else "")
            for c in conditions:
                t = agent_times.get((gripper, c))
                row.append(repr(t) if t is not None else "")
            for c in conditions:
                cell = stats.get((gripper, c))
                row.append(repr(cell["fingertip"].mean) if cell else "")
            for c in conditions:
                cell = stats.get((gripper, c))
                row.append(repr(cell["palm"].mean) if cell else "")
            writer.writerow(row)
        writer.writerow([])
        writer.writerow(["gripper", "metric", "comparison", "t", "p", "stars"])
        for gripper in grippers:
            for metric in ("fingertip", "palm", "exec_time"):
                for a, b in (("nff", "fff"), ("nff", "fpff"), ("fff", "fpff")):
                    cell_a, cell_b = stats.get((gripper, a)), stats.get((gripper, b))
                    if not cell_a or not cell_b:
                        continue
                    r = welch_t_test(cell_a["values"][metric], cell_b["values"][metric])
                    writer.writerow([gripper, metric, f"{a} vs {b}", repr(r.t), repr(r.p), r.stars])
    print(f"stats -> {args.report}")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hapticloop", description=__doc__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the interactive session service")
    p.add_argument("--bind", default=None, help="host:port (default env HAPTICLOOP_BIND or 127.0.0.1:8765)")
    p.add_argument("--tcp", action="store_true", help="newline-delimited TCP instead of WebSocket")
    p.add_argument("--out", default=".", help="directory for recorded trajectories")
    p.add_argument("--world", default=None, help="WorldConfig JSON file")
    p.add_argument("--real-time-factor", type=float, default=1.0)
    p.set_defaults(func=cmd_serve)

    p = sub.add_parser("record", help="record scripted demonstrations")
    p.add_argument("--scripted", action="store_true")
    p.add_argument("--gripper", required=True)
    p.add_argument("--condition", required=True)
    p.add_argument("--episodes", type=int, default=50)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--world", default=None, help="WorldConfig JSON file")
    p.set_defaults(func=cmd_record)

    p = sub.add_parser("train", help="behavioral cloning on a demonstration manifest")
    p.add_argument("--manifest", required=True)
    p.add_argument("--gripper", default=None)
    p.add_argument("--condition", default=None)
    p.add_argument("--config", default=None, help="TrainConfig JSON file")
    p.add_argument("--out", required=True, help="output policy JSON")
    p.add_argument("--metrics", default=None, help="optional metrics CSV")
    p.add_argument("--world", default=None, help="WorldConfig JSON for rollout evals")
    p.add_argument("--eval-world", action="store_true", help="run rollout evals during training")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="closed-loop policy rollouts")
    p.add_argument("--policy", required=True)
    p.add_argument("--episodes", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--report", default=None)
    p.add_argument("--world", default=None)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("replay", help="re-simulate a trajectory's actions and verify the outcome")
    p.add_argument("--traj", required=True)
    p.set_defaults(func=cmd_replay)

    p = sub.add_parser("stats", help="dataset statistics and significance tests")
    p.add_argument("--manifest", required=True)
    p.add_argument("--report", required=True)
    p.add_argument("--agent", action="append", help="gripper:condition:report.json (repeatable)")
    p.set_defaults(func=cmd_stats)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, KeyError, RuntimeError, FloatingPointError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
