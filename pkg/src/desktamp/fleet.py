"""One operator, many robots: queueing simulations and fleet sizing.

A session alternates an autonomous phase (the robot plans and moves on its
own) with a delegated phase that needs the single shared operator. Sessions
are blocking: a robot that has requested help sits frozen in the queue
until the operator takes it.

Two simulators. `simulate_events` is the abstract model: constant phase
durations, event-driven, in seconds. `run_fleet` drives real gated
sessions tick by tick through their generators and measures the same
quantities, so the two can be compared directly.

Sizing rule: with the operator busy a fraction X/100 of the time she can
keep ceil(1 + (R_H/R_T) * X/100) robots from ever starving her queue,
where R_H and R_T are the delegated and autonomous phase rates. The
throughput identity min(R_H, n / (D_T + D_H)) holds at every fleet size;
the saturated form R_T * (n - 1) only once n reaches that bound.
"""
from __future__ import annotations

import heapq
import itertools
import math
from collections import deque
from dataclasses import dataclass, field

from .config import NoiseParams, Params
from .constraints import ConstraintDB
from .episode import Episode
from .gate import ScriptedOracle, episode_ticks
from .tasks import TaskSpec
from .world import World


def min_fleet(r_human: float, r_tamp: float, duty_pct: float) -> int:
    """Smallest fleet that keeps a duty_pct-busy operator saturated."""
    return int(math.ceil(1.0 + (r_human / r_tamp) * (duty_pct / 100.0) - 1e-9))


def throughput_bound(n: int, d_tamp: float, d_human: float) -> float:
    """Demos per second: operator-limited or robot-limited, whichever binds."""
    return min(1.0 / d_human, n / (d_tamp + d_human))


@dataclass(frozen=True)
class FleetConfig:
    n_robot: int
    d_tamp: float            # autonomous phase duration, seconds
    d_human: float           # delegated phase duration, seconds
    horizon: float = 3600.0
    warmup: float = 300.0    # excluded from utilization and queue stats
    duty_on: float = 0.0     # operator duty cycle; 0 = always on duty
    duty_off: float = 0.0


@dataclass
class FleetStats:
    completed: int
    throughput_per_min: float
    utilization: float       # operator busy fraction, post-warmup
    mean_queue: float        # time-averaged waiting count, post-warmup
    queue_timeline: list[tuple[float, int]] = field(default_factory=list)


def _on_duty(cfg: FleetConfig, t: float) -> bool:
    if cfg.duty_on <= 0.0:
        return True
    return (t % (cfg.duty_on + cfg.duty_off)) < cfg.duty_on


def _next_duty_start(cfg: FleetConfig, t: float) -> float:
    period = cfg.duty_on + cfg.duty_off
    return (math.floor(t / period) + 1.0) * period


def simulate_events(cfg: FleetConfig) -> FleetStats:
    """Event-driven queue simulation with constant phase durations."""
    seq = itertools.count()
    events: list[tuple[float, int, str, int]] = []
    for robot in range(cfg.n_robot):
        heapq.heappush(events, (cfg.d_tamp, next(seq), "arrive", robot))
    queue: deque[int] = deque()
    timeline: list[tuple[float, int]] = [(0.0, 0)]
    op_free = True
    service_start = 0.0
    completed = 0
    busy = 0.0
    q_area = 0.0
    last_t = 0.0
    window = cfg.horizon - cfg.warmup

    def clip_span(a: float, b: float) -> float:
        return max(0.0, min(b, cfg.horizon) - max(a, cfg.warmup))

    def advance_time(t: float):
        nonlocal q_area, last_t
        q_area += len(queue) * clip_span(last_t, t)
        last_t = t

    def try_start(t: float):
        nonlocal op_free, service_start
        if not op_free or not queue:
            return
        if _on_duty(cfg, t):
            robot = queue.popleft()
            timeline.append((t, len(queue)))
            op_free = False
            service_start = t
            heapq.heappush(events, (t + cfg.d_human, next(seq), "done", robot))
        else:
            heapq.heappush(
                events, (_next_duty_start(cfg, t), next(seq), "wake", -1)
            )

    while events:
        t, _, kind, robot = heapq.heappop(events)
        if t >= cfg.horizon:
            advance_time(cfg.horizon)
            break
        advance_time(t)
        if kind == "arrive":
            queue.append(robot)
            timeline.append((t, len(queue)))
            try_start(t)
        elif kind == "done":
            completed += 1
            busy += clip_span(service_start, t)
            op_free = True
            heapq.heappush(events, (t + cfg.d_tamp, next(seq), "arrive", robot))
            try_start(t)
        elif kind == "wake":
            try_start(t)
    else:
        advance_time(cfg.horizon)
    if not op_free:
        busy += clip_span(service_start, cfg.horizon)

    return FleetStats(
        completed=completed,
        throughput_per_min=completed / (cfg.horizon / 60.0),
        utilization=busy / window if window > 0 else 0.0,
        mean_queue=q_area / window if window > 0 else 0.0,
        queue_timeline=timeline,
    )


# --------------------------------------------------------------------------
# full run: real gated sessions, interleaved tick by tick


@dataclass
class RunStats:
    completed: int
    failed: int
    throughput_per_min: float
    utilization: float
    mean_queue: float
    mean_tamp_ticks: float   # autonomous ticks per finished episode
    mean_human_ticks: float  # delegated ticks per finished episode
    queue_timeline: list[tuple[float, int]] = field(default_factory=list)


class _Session:
    def __init__(self, idx: int, seed_base: int):
        self.idx = idx
        self.seed_base = seed_base
        self.episode_no = 0
        self.gen = None
        self.view = None
        self.prompt = None
        self.mode = "tamp"  # tamp | waiting | human

    def next_seed(self) -> int:
        seed = self.seed_base + self.episode_no
        self.episode_no += 1
        return seed


def run_fleet(
    world: World,
    task: TaskSpec,
    db: ConstraintDB | None,
    params: Params,
    n_robot: int,
    horizon_s: float,
    warmup_s: float = 0.0,
    seed0: int = 0,
    operator=None,
    noise: NoiseParams | None = None,
) -> tuple[RunStats, list[Episode]]:
    """Interleave n_robot gated sessions against one operator."""
    tick_s = params.world.tick
    total_ticks = int(round(horizon_s / tick_s))
    warmup_ticks = int(round(warmup_s / tick_s))
    noise = noise if noise is not None else NoiseParams()
    operator = operator if operator is not None else ScriptedOracle()

    episodes: list[Episode] = []
    completed = failed = 0
    tamp_tick_counts: list[int] = []
    human_tick_counts: list[int] = []

    def fresh_gen(sess: _Session):
        return episode_ticks(
            world, task, db, params, sess.next_seed(), noise,
            operator_label=operator.label,
        )

    def record_finished(ep: Episode):
        nonlocal completed, failed
        episodes.append(ep)
        if ep.outcome.success:
            completed += 1
            tamp = sum(1 for s in ep.steps if s.label == "tamp")
            tamp_tick_counts.append(tamp)
            human_tick_counts.append(len(ep.steps) - tamp)
        else:
            failed += 1

    def advance(sess: _Session, cmd):
        """One send into the session; episode turnover costs one tick."""
        try:
            if sess.gen is None:
                sess.gen = fresh_gen(sess)
                item = next(sess.gen)
            else:
                item = sess.gen.send(cmd)
        except StopIteration as stop:
            record_finished(stop.value)
            sess.gen = None
            return "tamp"
        if item[0] == "request":
            _, sess.prompt, sess.view = item
            return "request"
        return "tamp"

    sessions = [_Session(i, seed0 + i * 1_000_000) for i in range(n_robot)]
    waiting: deque[int] = deque()
    active: int | None = None

    busy_ticks = 0
    q_area = 0
    timeline: list[tuple[float, int]] = []

    for t in range(total_ticks):
        now_s = t * tick_s
        for sess in sessions:
            if sess.mode != "tamp":
                continue
            if advance(sess, None) == "request":
                sess.mode = "waiting"
                waiting.append(sess.idx)
        # an in-progress delegation finishes even if the duty window closed
        if active is None and waiting and _on_duty_run(params, now_s):
            active = waiting.popleft()
            sessions[active].mode = "human"
        if active is not None:
            sess = sessions[active]
            cmd = operator.command(sess.view)
            if advance(sess, cmd) == "tamp":
                sess.mode = "tamp"
                active = None
            if t >= warmup_ticks:
                busy_ticks += 1
        if t >= warmup_ticks:
            q_area += len(waiting)
        timeline.append((now_s, len(waiting)))

    window = max(1, total_ticks - warmup_ticks)
    return (
        RunStats(
            completed=completed,
            failed=failed,
            throughput_per_min=completed / (horizon_s / 60.0),
            utilization=busy_ticks / window,
            mean_queue=q_area / window,
            mean_tamp_ticks=(
                sum(tamp_tick_counts) / len(tamp_tick_counts)
                if tamp_tick_counts
                else 0.0
            ),
            mean_human_ticks=(
                sum(human_tick_counts) / len(human_tick_counts)
                if human_tick_counts
                else 0.0
            ),
            queue_timeline=timeline,
        ),
        episodes,
    )


def _on_duty_run(params: Params, t: float) -> bool:
    on, off = params.fleet.duty_on, params.fleet.duty_off
    if on <= 0.0:
        return True
    return (t % (on + off)) < on
