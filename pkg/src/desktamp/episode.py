"""Episode records: per-tick steps, controller labels, outcomes, events.

One Step per world tick. `label` names the controller that produced the
action ('tamp', 'human', 'policy'); exactly one controller owns any tick.
The `state` snapshot is ground truth; `obs_poses` is kept only when the
perceived poses differ from the true ones (nonzero noise), so noise-free
datasets stay compact.
"""
from __future__ import annotations

from dataclasses import dataclass, field

from .geom import Pose2

RESULT_REASONS = ("goal-reached", "tamp-failure", "operator-timeout", "plan-failure")


@dataclass(frozen=True)
class StateSnap:
    config: tuple[float, float, float]
    poses: dict[str, Pose2]
    gripper: bool
    held: tuple[str, Pose2] | None
    attachments: tuple[tuple[str, str, Pose2], ...]


@dataclass(frozen=True)
class Step:
    t: int
    state: StateSnap
    action: tuple[float, float, float, int]
    label: str
    schema_index: int
    obs_poses: dict[str, Pose2] | None = None

    def observed_poses(self) -> dict[str, Pose2]:
        return self.obs_poses if self.obs_poses is not None else self.state.poses


@dataclass(frozen=True)
class EpisodeOutcome:
    reason: str  # one of RESULT_REASONS
    handoffs: int
    plans: int
    ticks: int
    detail: str = ""

    def __post_init__(self):
        if self.reason not in RESULT_REASONS:
            raise ValueError(f"unknown outcome reason {self.reason!r}")

    @property
    def success(self) -> bool:
        return self.reason == "goal-reached"

    @property
    def tamp_failure(self) -> bool:
        return self.reason in ("tamp-failure", "plan-failure")


@dataclass
class Episode:
    task: str
    seed: int
    noise: tuple[float, float]
    steps: list[Step] = field(default_factory=list)
    events: list[dict] = field(default_factory=list)
    outcome: EpisodeOutcome | None = None

    def labels(self) -> list[str]:
        return [s.label for s in self.steps]

    def operator_segments(self) -> list[tuple[int, int]]:
        """Contiguous [start, end) runs of human- or policy-controlled ticks."""
        segs = []
        start = None
        for i, s in enumerate(self.steps):
            if s.label in ("human", "policy"):
                if start is None:
                    start = i
            elif start is not None:
                segs.append((start, i))
                start = None
        if start is not None:
            segs.append((start, len(self.steps)))
        return segs

    def mean_operator_segment(self) -> float | None:
        """Within-episode mean of operator segment lengths, in ticks."""
        segs = self.operator_segments()
        if not segs:
            return None
        return sum(e - s for s, e in segs) / len(segs)


# -- json round trip ---------------------------------------------------------


def _pose_out(p: Pose2) -> list[float]:
    return [p.x, p.y, p.theta]


def _snap_out(s: StateSnap) -> dict:
    return {
        "config": list(s.config),
        "poses": {n: _pose_out(p) for n, p in sorted(s.poses.items())},
        "gripper": int(s.gripper),
        "held": [s.held[0], _pose_out(s.held[1])] if s.held else None,
        "attachments": [[c, pr, _pose_out(rel)] for c, pr, rel in s.attachments],
    }


def _snap_in(d: dict) -> StateSnap:
    return StateSnap(
        config=tuple(d["config"]),
        poses={n: Pose2.from_list(v) for n, v in d["poses"].items()},
        gripper=bool(d["gripper"]),
        held=(d["held"][0], Pose2.from_list(d["held"][1])) if d["held"] else None,
        attachments=tuple(
            (c, pr, Pose2.from_list(rel)) for c, pr, rel in d["attachments"]
        ),
    )


def episode_to_dict(ep: Episode) -> dict:
    if ep.outcome is None:
        raise ValueError("cannot serialize an unfinished episode")
    return {
        "task": ep.task,
        "seed": ep.seed,
        "noise": list(ep.noise),
        "steps": [
            {
                "t": s.t,
                "state": _snap_out(s.state),
                "action": list(s.action),
                "label": s.label,
                "schema_index": s.schema_index,
                "obs_poses": (
                    {n: _pose_out(p) for n, p in sorted(s.obs_poses.items())}
                    if s.obs_poses is not None
                    else None
                ),
            }
            for s in ep.steps
        ],
        "events": ep.events,
        "outcome": {
            "reason": ep.outcome.reason,
            "handoffs": ep.outcome.handoffs,
            "plans": ep.outcome.plans,
            "ticks": ep.outcome.ticks,
            "detail": ep.outcome.detail,
        },
    }


def episode_from_dict(d: dict) -> Episode:
    out = d["outcome"]
    return Episode(
        task=d["task"],
        seed=d["seed"],
        noise=tuple(d["noise"]),
        steps=[
            Step(
                t=s["t"],
                state=_snap_in(s["state"]),
                action=tuple(s["action"]),
                label=s["label"],
                schema_index=s["schema_index"],
                obs_poses=(
                    {n: Pose2.from_list(v) for n, v in s["obs_poses"].items()}
                    if s.get("obs_poses") is not None
                    else None
                ),
            )
            for s in d["steps"]
        ],
        events=list(d.get("events", [])),
        outcome=EpisodeOutcome(
            reason=out["reason"],
            handoffs=out["handoffs"],
            plans=out["plans"],
            ticks=out["ticks"],
            detail=out.get("detail", ""),
        ),
    )
