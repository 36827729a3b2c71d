"""Websocket hub for remote teleoperation.

Runs gated sessions the way the fleet scheduler does, but the operator is
a remote client speaking JSON text frames. The hub broadcasts scene
snapshots, queue membership, and delegation prompts; the first client to
introduce itself as operator answers prompts with delta commands. Every
other client observes.

Commands land in a per-session mailbox of depth one, so a burst of act
frames keeps only the newest and at most one command is applied per
simulation tick. The delegated session advances only when a command is
pending; a paused operator does not burn the step's tick budget. Sessions
never block on the network: autonomous phases run regardless of who is
connected, and handoffs queue up until a controller is present.
"""
from __future__ import annotations

import asyncio
import contextlib
from collections import deque
from contextlib import asynccontextmanager

import json

from fastapi import FastAPI, WebSocket, WebSocketDisconnect

from .config import NoiseParams, Params
from .constraints import ConstraintDB
from .episode import Episode
from .gate import RemoteHuman, episode_ticks
from .tasks import TaskSpec
from .world import Command, World


class _WireSession:
    def __init__(self, idx: int, seed_base: int):
        self.idx = idx
        self.seed_base = seed_base
        self.episode_no = 0
        self.gen = None
        self.view = None
        self.prompt = None
        self.mode = "tamp"  # tamp | waiting | human
        self.last_state = None
        self.mailbox = RemoteHuman()
        self.wire_t = 0  # per-session frame clock, strictly increasing

    def next_seed(self) -> int:
        seed = self.seed_base + self.episode_no
        self.episode_no += 1
        return seed


def _parse_act(msg: dict) -> Command | None:
    try:
        return Command(
            dx=float(msg["dx"]),
            dy=float(msg["dy"]),
            dtheta=float(msg["dtheta"]),
            grip=bool(int(msg["grip"])),
        )
    except (KeyError, TypeError, ValueError):
        return None


class Hub:
    """Sessions, queue, and connected sockets; one tick loop drives all."""

    def __init__(
        self,
        task: TaskSpec,
        params: Params | None = None,
        db: ConstraintDB | None = None,
        n_robot: int = 1,
        seed0: int = 0,
        noise: NoiseParams | None = None,
        fast: bool = False,
    ):
        self.task = task
        self.params = params if params is not None else Params()
        self.db = db
        self.noise = noise if noise is not None else NoiseParams()
        self.fast = fast
        self.world = World(task, self.params.world)
        self.sessions = [
            _WireSession(i, seed0 + i * 1_000_000) for i in range(n_robot)
        ]
        self.waiting: deque[int] = deque()
        self.active: int | None = None
        self.episodes: list[Episode] = []
        self.completed = 0
        self.failed = 0
        self.clients: list[WebSocket] = []
        self.op_order: list[WebSocket] = []  # sockets that asked to operate
        self._queue_dirty = False

    # -- session stepping ----------------------------------------------

    def _advance(self, sess: _WireSession, cmd):
        """One send into the session generator; returns (kind, episode)."""
        try:
            if sess.gen is None:
                sess.gen = episode_ticks(
                    self.world,
                    self.task,
                    self.db,
                    self.params,
                    sess.next_seed(),
                    self.noise,
                )
            else:
                return self._classify(sess, sess.gen.send(cmd))
            return self._classify(sess, next(sess.gen))
        except StopIteration as stop:
            ep: Episode = stop.value
            self.episodes.append(ep)
            if ep.outcome.success:
                self.completed += 1
            else:
                self.failed += 1
            sess.gen = None
            sess.view = None
            sess.prompt = None
            return ("done", ep)

    def _classify(self, sess: _WireSession, item):
        if item[0] == "request":
            _, sess.prompt, sess.view = item
            sess.last_state = sess.view.state
            return ("request", None)
        sess.last_state = item[1]
        return ("tamp", None)

    # -- frames ----------------------------------------------------------

    def _snapshot_frame(self, sess: _WireSession) -> dict:
        state = sess.last_state
        sess.wire_t += 1
        objects = []
        for name in self.task.problem.objects:
            pose = self.world.object_pose(state, name)
            objects.append(
                {
                    "name": name,
                    "x": float(pose.x),
                    "y": float(pose.y),
                    "theta": float(pose.theta),
                }
            )
        return {
            "type": "snapshot",
            "session": sess.idx,
            "t": sess.wire_t,
            "objects": objects,
            "config": [float(q) for q in state.config],
            "gripper": int(state.gripper),
            "mode": sess.mode,
        }

    def _queue_frame(self) -> dict:
        return {
            "type": "queue",
            "waiting": list(self.waiting),
            "active": self.active,
        }

    def _prompt_frame(self, sess: _WireSession) -> dict:
        return {
            "type": "prompt",
            "session": sess.idx,
            "schema": sess.prompt["schema"],
            "child": sess.prompt["child"],
            "parent": sess.prompt["parent"],
        }

    @staticmethod
    def _done_frame(idx: int, ep: Episode) -> dict:
        return {"type": "done", "session": idx, "outcome": ep.outcome.reason}

    # -- socket plumbing ---------------------------------------------------

    def _controller(self) -> WebSocket | None:
        for ws in self.op_order:
            if ws in self.clients:
                return ws
        return None

    async def _send(self, ws: WebSocket, frame: dict) -> None:
        try:
            await ws.send_json(frame)
        except Exception:
            self._drop(ws)

    async def _broadcast(self, frame: dict) -> None:
        for ws in list(self.clients):
            await self._send(ws, frame)

    def _drop(self, ws: WebSocket) -> None:
        was_controller = self._controller() is ws
        if ws in self.clients:
            self.clients.remove(ws)
        if ws in self.op_order:
            self.op_order.remove(ws)
        if was_controller and self.active is not None:
            # mid-segment disconnect: back to the front of the queue
            sess = self.sessions[self.active]
            sess.mode = "waiting"
            sess.mailbox.clear()
            self.waiting.appendleft(sess.idx)
            self.active = None
            self._queue_dirty = True

    async def handle(self, ws: WebSocket) -> None:
        await ws.accept()
        self.clients.append(ws)
        try:
            await self._send(ws, self._queue_frame())
            while True:
                raw = await ws.receive_text()
                try:
                    msg = json.loads(raw)
                except ValueError:
                    await self._send(ws, {"type": "error", "code": "bad-json"})
                    continue
                await self._handle_frame(ws, msg)
        except WebSocketDisconnect:
            pass
        finally:
            self._drop(ws)

    async def _handle_frame(self, ws: WebSocket, msg) -> None:
        if not isinstance(msg, dict):
            await self._send(ws, {"type": "error", "code": "bad-frame"})
            return
        kind = msg.get("type")
        if kind == "hello":
            if msg.get("role") == "operator" and ws not in self.op_order:
                self.op_order.append(ws)
            # catch the newcomer up on scene, queue, and open prompt
            for sess in self.sessions:
                if sess.last_state is not None:
                    await self._send(ws, self._snapshot_frame(sess))
            await self._send(ws, self._queue_frame())
            if self.active is not None:
                await self._send(
                    ws, self._prompt_frame(self.sessions[self.active])
                )
            return
        if kind == "act":
            if (
                ws is not self._controller()
                or self.active is None
                or msg.get("session") != self.active
            ):
                await self._send(
                    ws, {"type": "error", "code": "not-your-session"}
                )
                return
            cmd = _parse_act(msg)
            if cmd is None:
                await self._send(ws, {"type": "error", "code": "bad-frame"})
                return
            self.sessions[self.active].mailbox.put(cmd)
            return
        await self._send(ws, {"type": "error", "code": "unknown-type"})

    # -- tick loop -----------------------------------------------------------

    async def _tick(self) -> bool:
        progressed = False
        for sess in self.sessions:
            if sess.mode != "tamp":
                continue
            progressed = True
            kind, ep = self._advance(sess, None)
            if kind == "request":
                sess.mode = "waiting"
                self.waiting.append(sess.idx)
                self._queue_dirty = True
            elif kind == "done":
                await self._broadcast(self._done_frame(sess.idx, ep))
            if sess.last_state is not None:
                await self._broadcast(self._snapshot_frame(sess))
        if (
            self.active is None
            and self.waiting
            and self._controller() is not None
        ):
            progressed = True
            self.active = self.waiting.popleft()
            sess = self.sessions[self.active]
            sess.mode = "human"
            sess.mailbox.clear()
            self._queue_dirty = True
            await self._broadcast(self._prompt_frame(sess))
            await self._broadcast(self._snapshot_frame(sess))
        if self.active is not None:
            sess = self.sessions[self.active]
            cmd = sess.mailbox.take()
            if cmd is not None:
                progressed = True
                kind, ep = self._advance(sess, cmd)
                if kind != "request":
                    sess.mode = "tamp"
                    self.active = None
                    self._queue_dirty = True
                if kind == "done":
                    await self._broadcast(self._done_frame(sess.idx, ep))
                if sess.last_state is not None:
                    await self._broadcast(self._snapshot_frame(sess))
        if self._queue_dirty:
            self._queue_dirty = False
            await self._broadcast(self._queue_frame())
        return progressed

    async def run(self) -> None:
        while True:
            progressed = await self._tick()
            if self.fast:
                await asyncio.sleep(0.0 if progressed else 0.002)
            else:
                await asyncio.sleep(self.params.world.tick)


def build_app(
    task: TaskSpec,
    params: Params | None = None,
    db: ConstraintDB | None = None,
    n_robot: int = 1,
    seed0: int = 0,
    noise: NoiseParams | None = None,
    fast: bool = False,
) -> FastAPI:
    """FastAPI app with the hub loop bound to its lifespan."""
    hub = Hub(
        task,
        params=params,
        db=db,
        n_robot=n_robot,
        seed0=seed0,
        noise=noise,
        fast=fast,
    )

    @asynccontextmanager
    async def lifespan(app: FastAPI):
        runner = asyncio.create_task(hub.run())
        try:
            yield
        finally:
            runner.cancel()
            with contextlib.suppress(asyncio.CancelledError):
                await runner

    app = FastAPI(lifespan=lifespan)
    app.state.hub = hub

    @app.get("/health")
    def health() -> dict:
        return {
            "ok": True,
            "task": task.name,
            "sessions": len(hub.sessions),
            "completed": hub.completed,
        }

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket):
        await hub.handle(ws)

    return app
