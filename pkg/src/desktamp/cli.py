"""Command line entry points.

One executable, subcommand per stage of the pipeline: plan a task, collect
demonstrations, learn constraints from them, train and evaluate a policy,
size and simulate a fleet, inspect a dataset, or serve the teleop hub.

Every subcommand accepts --config pointing at a JSON file of parameter
overrides (nested by group, e.g. {"planner": {"timeout": 10}}).
"""
from __future__ import annotations

import argparse
import json
import sys

from . import bootstrap, constraints, dataset, fleet, imitate
from .config import NOISE_LEVELS, NoiseParams, Params, load_overrides
from .gate import PolicyOperator, ScriptedOracle, run_gated
from .planner import plan as plan_fn
from .tasks import load_task
from .world import World


def _params(args) -> Params:
    p = Params()
    if getattr(args, "config", None):
        p = load_overrides(p, args.config)
    return p


def _noise(spec: str) -> NoiseParams:
    if spec in NOISE_LEVELS:
        return NOISE_LEVELS[spec]
    parts = [float(v) for v in spec.split(",")]
    if len(parts) != 2:
        raise SystemExit(f"bad noise spec {spec!r}: want L0|L1|L2 or pos,ang")
    return NoiseParams(pos=parts[0], ang=parts[1])


def _db_or_bootstrap(args, world, task, params):
    """Load a constraints file, or learn one from fresh scripted demos."""
    if getattr(args, "constraints", None):
        return constraints.load(args.constraints)
    n = getattr(args, "bootstrap_demos", 5)
    demos = bootstrap.collect_demos(world, task, params, n, seed0=9_000_000)
    good = [ep for ep in demos if ep.outcome.success]
    if not good:
        raise SystemExit("bootstrap demos all failed; cannot learn constraints")
    return constraints.learn(good, task, params.world, params.learn.delta)


def _add_common(sp, task=True, config=True, constraints_opt=False):
    if task:
        sp.add_argument("--task", required=True, help="task name or .tamp path")
    if config:
        sp.add_argument("--config", help="JSON parameter overrides")
    if constraints_opt:
        sp.add_argument(
            "--constraints",
            help="learned constraints file; omitted -> bootstrap from "
            "scripted demos",
        )
        sp.add_argument(
            "--bootstrap-demos", type=int, default=5,
            help="scripted demos to learn from when --constraints is omitted",
        )


def cmd_plan(args) -> int:
    params = _params(args)
    task = load_task(args.task)
    world = World(task, params.world)
    db = _db_or_bootstrap(args, world, task, params)
    state = world.initial_state(args.seed)
    obs = world.perceive(state, NoiseParams(), args.seed)
    bp = plan_fn(world, obs, task.problem.goal, db, args.seed, params.planner)
    text = bp.to_sexp()
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(f"plan for {task.name}, seed {args.seed}:")
    for step in bp.skeleton():
        print("  " + " ".join(step))
    if args.out:
        print(f"bound plan written to {args.out}")
    else:
        print(text)
    return 0


def cmd_collect(args) -> int:
    params = _params(args)
    task = load_task(args.task)
    world = World(task, params.world)
    noise = _noise(args.noise)
    if args.operator == "human":
        raise SystemExit("human collection runs through `desktamp serve`")
    if args.operator == "oracle":
        operator = ScriptedOracle(cmd_noise=args.cmd_noise, seed=args.seed0)
        db = _db_or_bootstrap(args, world, task, params)
    elif args.operator == "scripted":
        operator = None  # pure scripted demos, no planner in the loop
        db = None
    else:
        if not args.policy:
            raise SystemExit("--operator policy needs --policy FILE")
        operator = PolicyOperator(imitate.load_policy(args.policy), task)
        db = _db_or_bootstrap(args, world, task, params)

    episodes = []
    for i in range(args.episodes):
        seed = args.seed0 + i
        if operator is None:
            ep = bootstrap.scripted_demo(world, task, params, seed)
        else:
            ep = run_gated(world, task, db, params, operator, seed, noise)
        episodes.append(ep)
        print(f"episode {i} seed {seed}: {ep.outcome.reason}")
    meta = {
        "task": task.name,
        "operator": args.operator,
        "noise": [noise.pos, noise.ang],
    }
    dataset.save(args.out, episodes, meta)
    ok = sum(1 for e in episodes if e.outcome.success)
    print(f"{ok}/{len(episodes)} successful -> {args.out}")
    return 0


def cmd_learn_constraints(args) -> int:
    params = _params(args)
    task = load_task(args.task)
    episodes, _meta = dataset.load(args.demos)
    good = [ep for ep in episodes if ep.outcome.success]
    db = constraints.learn(good, task, params.world, args.delta)
    constraints.save(db, args.out)
    n_pre = sum(len(s.poses) for s in db.preattach.values())
    n_grasp = sum(len(s.grasps) for s in db.grasps.values())
    print(
        f"{len(good)} demos -> {n_pre} pre-contact poses, "
        f"{n_grasp} grasps -> {args.out}"
    )
    return 0


def cmd_train(args) -> int:
    params = _params(args)
    episodes, meta = dataset.load(args.demos)
    task_name = args.task or meta.get("task")
    if not task_name:
        raise SystemExit("dataset has no task in meta; pass --task")
    task = load_task(task_name)
    policy = imitate.train_policy(
        task, params.world.arm, episodes, params.learn, kind=args.kind
    )
    imitate.save_policy(policy, args.out)
    print(f"{args.kind} policy trained on {len(episodes)} episodes -> {args.out}")
    return 0


def cmd_eval(args) -> int:
    params = _params(args)
    task = load_task(args.task)
    world = World(task, params.world)
    db = _db_or_bootstrap(args, world, task, params)
    policy = imitate.load_policy(args.policy)
    noise = _noise(args.noise)
    rows = []
    for s in range(args.seeds):
        stats, _eps = imitate.evaluate_policy(
            world, task, db, params, policy, noise, args.n,
            seed0=args.seed0 + s * 100_000,
        )
        rows.append(stats)
        print(
            f"seed block {s}: filtered {stats.filtered_sr:.3f} "
            f"raw {stats.raw_sr:.3f} "
            f"({stats.successes}/{stats.kept} kept, "
            f"{stats.tamp_failures} planner-side failures)"
        )
    mean_f = sum(r.filtered_sr for r in rows) / len(rows)
    mean_r = sum(r.raw_sr for r in rows) / len(rows)
    print(f"mean filtered SR {mean_f:.3f}, mean raw SR {mean_r:.3f}")
    if args.stats:
        out = {
            "task": task.name,
            "filtered_sr": mean_f,
            "raw_sr": mean_r,
            "blocks": [
                {
                    "rollouts": r.rollouts,
                    "successes": r.successes,
                    "tamp_failures": r.tamp_failures,
                    "operator_failures": r.operator_failures,
                }
                for r in rows
            ],
        }
        with open(args.stats, "w") as fh:
            json.dump(out, fh, indent=2)
    return 0


def cmd_fleet_sim(args) -> int:
    params = _params(args)
    horizon = args.minutes * 60.0
    if args.abstract:
        d_human = 60.0 / args.rh
        d_tamp = 60.0 / args.rt
        need = fleet.min_fleet(args.rh, args.rt, args.x)
        duty_on = duty_off = 0.0
        if args.x < 100:
            duty_on = 600.0 * args.x / 100.0
            duty_off = 600.0 - duty_on
        cfg = fleet.FleetConfig(
            n_robot=args.n,
            d_tamp=d_tamp,
            d_human=d_human,
            horizon=horizon,
            warmup=args.warmup,
            duty_on=duty_on,
            duty_off=duty_off,
        )
        stats = fleet.simulate_events(cfg)
        print(
            f"min_fleet(rh={args.rh}, rt={args.rt}, x={args.x}) = {need}; "
            f"n = {args.n} {'meets' if args.n >= need else 'misses'} it"
        )
        print(
            f"simulated: {stats.completed} demos, "
            f"{stats.throughput_per_min:.3f}/min "
            f"(bound {fleet.throughput_bound(args.n, d_tamp, d_human):.3f} "
            f"demos/s scaled: "
            f"{60 * fleet.throughput_bound(args.n, d_tamp, d_human):.3f}/min), "
            f"operator utilization {stats.utilization:.3f}, "
            f"mean queue {stats.mean_queue:.2f}"
        )
        payload = {
            "mode": "abstract",
            "min_fleet": need,
            "completed": stats.completed,
            "throughput_per_min": stats.throughput_per_min,
            "utilization": stats.utilization,
            "mean_queue": stats.mean_queue,
        }
    else:
        task = load_task(args.task)
        world = World(task, params.world)
        db = _db_or_bootstrap(args, world, task, params)
        operator = ScriptedOracle(cmd_noise=args.cmd_noise)
        stats, _eps = fleet.run_fleet(
            world, task, db, params, args.n, horizon,
            warmup_s=args.warmup, seed0=args.seed0, operator=operator,
            noise=_noise(args.noise),
        )
        print(
            f"{stats.completed} demos ({stats.failed} failed), "
            f"{stats.throughput_per_min:.3f}/min, "
            f"operator utilization {stats.utilization:.3f}, "
            f"mean queue {stats.mean_queue:.2f}"
        )
        payload = {
            "mode": "full",
            "task": task.name,
            "n_robot": args.n,
            "completed": stats.completed,
            "failed": stats.failed,
            "throughput_per_min": stats.throughput_per_min,
            "utilization": stats.utilization,
            "mean_queue": stats.mean_queue,
            "mean_tamp_ticks": stats.mean_tamp_ticks,
            "mean_human_ticks": stats.mean_human_ticks,
        }
    if args.stats:
        with open(args.stats, "w") as fh:
            json.dump(payload, fh, indent=2)
        print(f"stats written to {args.stats}")
    return 0


def cmd_stats(args) -> int:
    episodes, meta = dataset.load(args.demos)
    out = dataset.stats(episodes)
    out["meta"] = meta
    print(json.dumps(out, indent=2))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .serve import build_app

    params = _params(args)
    task = load_task(args.task)
    world = World(task, params.world)
    db = _db_or_bootstrap(args, world, task, params)
    app = build_app(
        task,
        params=params,
        db=db,
        n_robot=args.n,
        seed0=args.seed0,
        noise=_noise(args.noise),
    )
    print(f"serving {task.name} with {args.n} sessions on ws://{args.host}:{args.port}/ws")
    uvicorn.run(app, host=args.host, port=args.port, log_level="warning")
    hub = app.state.hub
    if args.out and hub.episodes:
        dataset.save(args.out, hub.episodes, {"task": task.name, "operator": "human"})
        print(f"{len(hub.episodes)} episodes -> {args.out}")
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(
        prog="desktamp",
        description="planar tamp-gated teleoperation and imitation",
    )
    sub = ap.add_subparsers(dest="cmd", required=True)

    sp = sub.add_parser("plan", help="plan one task instance and print it")
    _add_common(sp, constraints_opt=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", help="write the bound plan as s-expressions")
    sp.set_defaults(fn=cmd_plan)

    sp = sub.add_parser("collect", help="roll episodes and save a dataset")
    _add_common(sp, constraints_opt=True)
    sp.add_argument(
        "--operator",
        choices=["oracle", "policy", "scripted", "human"],
        default="oracle",
    )
    sp.add_argument("--episodes", type=int, default=10)
    sp.add_argument("--out", required=True)
    sp.add_argument("--policy", help="policy file for --operator policy")
    sp.add_argument("--noise", default="L0", help="L0|L1|L2 or pos,ang")
    sp.add_argument("--cmd-noise", type=float, default=0.0,
                    help="oracle command noise fraction")
    sp.add_argument("--seed0", type=int, default=0)
    sp.set_defaults(fn=cmd_collect)

    sp = sub.add_parser(
        "learn-constraints", help="extract constraint sets from demos"
    )
    _add_common(sp)
    sp.add_argument("--demos", required=True)
    sp.add_argument("--delta", type=float, default=0.05)
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_learn_constraints)

    sp = sub.add_parser("train", help="fit a policy on a dataset")
    _add_common(sp, task=False)
    sp.add_argument("--task", help="override the dataset's task")
    sp.add_argument("--demos", required=True)
    sp.add_argument("--kind", choices=["knn", "ridge"], default="knn")
    sp.add_argument("--out", required=True)
    sp.set_defaults(fn=cmd_train)

    sp = sub.add_parser("eval", help="evaluate a policy in the gated loop")
    _add_common(sp, constraints_opt=True)
    sp.add_argument("--policy", required=True)
    sp.add_argument("--n", type=int, default=50, help="kept rollouts per seed")
    sp.add_argument("--seeds", type=int, default=3)
    sp.add_argument("--noise", default="L0")
    sp.add_argument("--seed0", type=int, default=0)
    sp.add_argument("--stats", help="write summary JSON here")
    sp.set_defaults(fn=cmd_eval)

    sp = sub.add_parser("fleet-sim", help="queueing simulation, full or abstract")
    _add_common(sp, task=False, constraints_opt=True)
    sp.add_argument("--task", help="task for the full simulation")
    sp.add_argument("--abstract", action="store_true")
    sp.add_argument("--n", type=int, default=3)
    sp.add_argument("--minutes", type=float, default=60.0)
    sp.add_argument("--warmup", type=float, default=300.0)
    sp.add_argument("--rh", type=float, default=2.0, help="human segs/min")
    sp.add_argument("--rt", type=float, default=1.0, help="tamp segs/min")
    sp.add_argument("--x", type=float, default=100.0, help="duty cycle %%")
    sp.add_argument("--noise", default="L0")
    sp.add_argument("--cmd-noise", type=float, default=0.0)
    sp.add_argument("--seed0", type=int, default=0)
    sp.add_argument("--stats", help="write summary JSON here")
    sp.set_defaults(fn=cmd_fleet_sim)

    sp = sub.add_parser("stats", help="summarize a dataset")
    sp.add_argument("--demos", required=True)
    sp.set_defaults(fn=cmd_stats)

    sp = sub.add_parser("serve", help="websocket hub for remote operation")
    _add_common(sp, constraints_opt=True)
    sp.add_argument("--n", type=int, default=2, help="concurrent sessions")
    sp.add_argument("--host", default="127.0.0.1")
    sp.add_argument("--port", type=int, default=8765)
    sp.add_argument("--noise", default="L0")
    sp.add_argument("--seed0", type=int, default=0)
    sp.add_argument("--out", help="save finished episodes here on exit")
    sp.set_defaults(fn=cmd_serve)

    args = ap.parse_args(argv)
    if args.cmd == "fleet-sim" and not args.abstract and not args.task:
        ap.error("fleet-sim needs --task unless --abstract")
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
