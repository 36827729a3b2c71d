"""Shared fixtures: task bundles with bootstrapped constraint databases.

Bundles are session-scoped because bootstrapping runs scripted demonstrations
through the full simulator. Each bundle is (task, world, db) where db was
learned from exactly three scripted demos.
"""
from __future__ import annotations

from typing import NamedTuple

import pytest

from desktamp import bootstrap, constraints
from desktamp.config import Params
from desktamp.constraints import ConstraintDB
from desktamp.tasks import TaskSpec, load_task
from desktamp.world import World


class Bundle(NamedTuple):
    task: TaskSpec
    world: World
    db: ConstraintDB


@pytest.fixture(scope="session")
def params() -> Params:
    return Params()


def _bundle(name: str, params: Params) -> Bundle:
    task = load_task(name)
    world = World(task, params.world)
    demos = bootstrap.collect_demos(world, task, params, 3, seed0=9_000_000)
    assert all(e.outcome is not None and e.outcome.success for e in demos), (
        f"bootstrap demos failed for {name}: "
        f"{[e.outcome.reason for e in demos if e.outcome]}"
    )
    db = constraints.learn(demos, task, params.world, params.learn.delta)
    return Bundle(task, world, db)


@pytest.fixture(scope="session")
def toolhang(params) -> Bundle:
    return _bundle("tool-hang-2d", params)


@pytest.fixture(scope="session")
def coffee(params) -> Bundle:
    return _bundle("coffee-2d", params)
