"""Teleop hub: frame protocol, queue discipline, and command mailbox."""
from __future__ import annotations

import asyncio
import json

import pytest
from fastapi import WebSocketDisconnect
from fastapi.testclient import TestClient

from desktamp.config import NoiseParams
from desktamp.episode import episode_to_dict
from desktamp.gate import ScriptedOracle, run_gated
from desktamp.serve import Hub, build_app

L0 = NoiseParams()


class FakeWS:
    """In-memory stand-in for a websocket; records every frame sent to it."""

    def __init__(self, incoming=None):
        self.sent = []
        self._incoming = list(incoming or [])

    async def accept(self):
        pass

    async def send_json(self, frame):
        self.sent.append(frame)

    async def receive_text(self):
        if self._incoming:
            return self._incoming.pop(0)
        raise WebSocketDisconnect(code=1000)

    def of_type(self, kind):
        return [f for f in self.sent if f["type"] == kind]


def _act(session, action):
    dx, dy, dth, grip = action
    return {
        "type": "act", "session": session,
        "dx": dx, "dy": dy, "dtheta": dth, "grip": int(grip),
    }


async def _join(hub, ws, role="operator"):
    hub.clients.append(ws)
    await hub._handle_frame(ws, {"type": "hello", "role": role})


async def _tick_until(hub, pred, cap=20_000):
    for _ in range(cap):
        if pred():
            return
        await hub._tick()
    raise AssertionError("hub never reached the expected state")


def test_health_endpoint(coffee, params):
    task, _, db = coffee
    app = build_app(task, params=params, db=db, n_robot=2, fast=True)
    with TestClient(app) as client:
        got = client.get("/health").json()
    assert got["ok"] is True
    assert got["task"] == "coffee-2d"
    assert got["sessions"] == 2


def test_hello_catchup_and_activation(coffee, params):
    task, _, db = coffee
    hub = Hub(task, params=params, db=db, n_robot=2, seed0=0, fast=True)

    async def drive():
        op = FakeWS()
        await _join(hub, op)
        assert op.of_type("queue") == [{"type": "queue", "waiting": [], "active": None}]

        await _tick_until(hub, lambda: hub.active is not None)
        assert hub.active == 0
        assert hub.sessions[0].mode == "human"

        prompt = op.of_type("prompt")[-1]
        assert prompt == {
            "type": "prompt", "session": 0,
            "schema": "attach", "child": "pod", "parent": "machine",
        }
        snap = op.of_type("snapshot")[-1]
        assert snap["session"] in (0, 1)
        assert {o["name"] for o in snap["objects"]} == {"pod", "machine"}
        assert len(snap["config"]) == 3
        assert snap["gripper"] in (0, 1)

        # a laggard viewer is caught up on join: scene, queue, open prompt
        late = FakeWS()
        await _join(hub, late, role="viewer")
        assert [f["type"] for f in late.sent].count("prompt") == 1
        assert late.of_type("queue")[-1]["active"] == 0
        assert len(late.of_type("snapshot")) == 2  # one per session

    asyncio.run(drive())


def test_act_gating_and_error_codes(coffee, params):
    task, _, db = coffee
    hub = Hub(task, params=params, db=db, n_robot=1, seed0=0, fast=True)

    async def drive():
        op = FakeWS()
        viewer = FakeWS()
        await _join(hub, op)
        await _join(hub, viewer, role="viewer")
        await _tick_until(hub, lambda: hub.active == 0)

        await hub._handle_frame(viewer, _act(0, (0.01, 0.0, 0.0, 1)))
        assert viewer.of_type("error")[-1]["code"] == "not-your-session"

        await hub._handle_frame(op, _act(5, (0.01, 0.0, 0.0, 1)))
        assert op.of_type("error")[-1]["code"] == "not-your-session"

        await hub._handle_frame(op, {"type": "act", "session": 0, "dx": "wat"})
        assert op.of_type("error")[-1]["code"] == "bad-frame"

        await hub._handle_frame(op, {"type": "nonsense"})
        assert op.of_type("error")[-1]["code"] == "unknown-type"

        await hub._handle_frame(op, _act(0, (0.01, -0.01, 0.0, 1)))
        assert hub.sessions[0].mailbox.take() is not None

    asyncio.run(drive())


def test_handle_reports_bad_json_and_drops_on_disconnect(coffee, params):
    task, _, db = coffee
    hub = Hub(task, params=params, db=db, n_robot=1, seed0=0, fast=True)

    async def drive():
        ws = FakeWS(incoming=["{not json", json.dumps([1, 2, 3])])
        await hub.handle(ws)
        kinds = [f["type"] for f in ws.sent]
        assert kinds[0] == "queue"  # greeting
        codes = [f["code"] for f in ws.of_type("error")]
        assert codes == ["bad-json", "bad-frame"]
        assert ws not in hub.clients

    asyncio.run(drive())


def test_one_command_applied_per_tick(coffee, params):
    task, _, db = coffee
    hub = Hub(task, params=params, db=db, n_robot=1, seed0=0, fast=True)

    async def drive():
        op = FakeWS()
        await _join(hub, op)
        await _tick_until(hub, lambda: hub.active == 0)

        # two acts in one tick: the mailbox keeps only the newest
        before = len(op.of_type("snapshot"))
        await hub._handle_frame(op, _act(0, (0.004, 0.0, 0.0, 0)))
        await hub._handle_frame(op, _act(0, (0.0, 0.004, 0.0, 0)))
        assert not op.of_type("error")
        await hub._tick()
        assert len(op.of_type("snapshot")) == before + 1
        assert hub.sessions[0].mailbox.take() is None

        # idle operator: the delegated session holds still, no frames flow
        quiet = len(op.sent)
        await hub._tick()
        assert len(op.sent) == quiet

    asyncio.run(drive())


def test_controller_disconnect_requeues_active_session(coffee, params):
    task, _, db = coffee
    hub = Hub(task, params=params, db=db, n_robot=1, seed0=0, fast=True)

    async def drive():
        op = FakeWS()
        await _join(hub, op)
        await _tick_until(hub, lambda: hub.active == 0)

        hub._drop(op)
        assert hub.active is None
        assert list(hub.waiting) == [0]
        assert hub.sessions[0].mode == "waiting"
        assert hub.sessions[0].mailbox.take() is None

        # a fresh controller picks the session back up at the same prompt
        op2 = FakeWS()
        await _join(hub, op2)
        await _tick_until(hub, lambda: hub.active == 0)
        assert op2.of_type("prompt")[-1]["child"] == "pod"

    asyncio.run(drive())


def test_wire_replay_reproduces_oracle_episode(coffee, params):
    """Replaying an oracle's recorded commands over the wire yields the
    identical episode: the protocol adds nothing and loses nothing."""
    task, world, db = coffee
    oracle_ep = run_gated(world, task, db, params, ScriptedOracle(), 0, L0)
    assert oracle_ep.outcome.success
    cmds = [s.action for s in oracle_ep.steps if s.label == "human"]
    assert cmds

    hub = Hub(task, params=params, db=db, n_robot=1, seed0=0, fast=True)

    async def drive():
        op = FakeWS()
        await _join(hub, op)
        sent = 0
        for _ in range(50_000):
            if hub.episodes:
                break
            if hub.active == 0 and sent < len(cmds):
                await hub._handle_frame(op, _act(0, cmds[sent]))
                sent += 1
            await hub._tick()
        assert hub.episodes, "episode never finished"
        assert sent == len(cmds)
        assert op.of_type("done")[-1] == {
            "type": "done", "session": 0, "outcome": "goal-reached",
        }
        return hub.episodes[0]

    wire_ep = asyncio.run(drive())
    assert hub.completed == 1 and hub.failed == 0
    assert episode_to_dict(wire_ep) == episode_to_dict(oracle_ep)


def test_websocket_roundtrip_over_test_client(coffee, params):
    task, _, db = coffee
    app = build_app(task, params=params, db=db, n_robot=1, seed0=0, fast=True)
    with TestClient(app) as client:
        with client.websocket_connect("/ws") as ws:
            assert ws.receive_json()["type"] == "queue"
            ws.send_text(json.dumps({"type": "hello", "role": "operator"}))
            prompt = None
            for _ in range(5000):
                frame = ws.receive_json()
                if frame["type"] == "prompt":
                    prompt = frame
                    break
            assert prompt is not None
            assert prompt["child"] == "pod" and prompt["parent"] == "machine"

            def next_error():
                # skip snapshot/queue frames still in flight from activation
                for _ in range(5000):
                    frame = ws.receive_json()
                    if frame["type"] == "error":
                        return frame
                raise AssertionError("no error frame arrived")

            ws.send_text("{oops")
            assert next_error() == {"type": "error", "code": "bad-json"}
            ws.send_text(json.dumps(_act(7, (0.0, 0.0, 0.0, 0))))
            assert next_error() == {"type": "error", "code": "not-your-session"}
