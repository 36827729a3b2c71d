"""JSONL episode datasets and summary statistics.

Line 1 is a header object with a schema tag and version; each further line
is one episode. Serialization is canonical (sorted keys, fixed separators),
so save -> load -> save is byte-identical.
"""
from __future__ import annotations

import json
from pathlib import Path

from .episode import Episode, episode_from_dict, episode_to_dict

SCHEMA = "desktamp-episodes"
VERSION = 1


class DatasetError(ValueError):
    pass


def _dump_line(obj) -> str:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"))


def save(path: str | Path, episodes: list[Episode], meta: dict | None = None) -> None:
    header = {"schema": SCHEMA, "version": VERSION}
    if meta:
        overlap = set(meta) & set(header)
        if overlap:
            raise DatasetError(f"meta may not override {sorted(overlap)}")
        header.update(meta)
    path = Path(path)
    with path.open("w") as fh:
        fh.write(_dump_line(header) + "\n")
        for ep in episodes:
            fh.write(_dump_line(episode_to_dict(ep)) + "\n")


def load(path: str | Path) -> tuple[list[Episode], dict]:
    path = Path(path)
    episodes = []
    header = None
    with path.open() as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as e:
                raise DatasetError(f"{path}:{lineno}: bad JSON ({e})") from e
            if header is None:
                if obj.get("schema") != SCHEMA:
                    raise DatasetError(
                        f"{path}:1: expected schema {SCHEMA!r}, got {obj.get('schema')!r}"
                    )
                if obj.get("version") != VERSION:
                    raise DatasetError(
                        f"{path}:1: unsupported version {obj.get('version')!r}"
                    )
                header = obj
                continue
            try:
                episodes.append(episode_from_dict(obj))
            except (KeyError, TypeError, ValueError) as e:
                raise DatasetError(f"{path}:{lineno}: bad episode ({e})") from e
    if header is None:
        raise DatasetError(f"{path}: empty file, no header")
    return episodes, header


def stats(episodes: list[Episode]) -> dict:
    """Aggregate segment statistics.

    Episodes with several operator segments contribute the within-episode
    mean, so every episode weighs equally in `mean_operator_segment`.
    """
    seg_means = []
    traj_lens = []
    handoffs = []
    successes = 0
    reasons: dict[str, int] = {}
    for ep in episodes:
        traj_lens.append(len(ep.steps))
        m = ep.mean_operator_segment()
        if m is not None:
            seg_means.append(m)
        if ep.outcome is not None:
            handoffs.append(ep.outcome.handoffs)
            successes += int(ep.outcome.success)
            reasons[ep.outcome.reason] = reasons.get(ep.outcome.reason, 0) + 1
    n = len(episodes)
    return {
        "episodes": n,
        "success_rate": successes / n if n else 0.0,
        "mean_operator_segment": (
            sum(seg_means) / len(seg_means) if seg_means else 0.0
        ),
        "mean_trajectory_length": sum(traj_lens) / n if n else 0.0,
        "mean_handoffs": sum(handoffs) / len(handoffs) if handoffs else 0.0,
        "outcome_reasons": dict(sorted(reasons.items())),
    }
