"""Network control and telemetry for the running rig.

One WebSocket endpoint (`/ws`) carries versioned JSON messages both ways:
commands in (start, stop, set_rpm, set_operating_point, inject_fault,
clear_fault, load_scenario, subscribe), acks/errors and telemetry out
(frame_summary at the display rate, diagnostics and fault_ledger on
change). All mutations funnel through the producer thread's command queue,
so acks report the exact applied value or activation position.

The first connection holds control authority; later connections observe
until an explicit takeover (POST /takeover). Frame summaries for a slow
consumer are dropped oldest-first; acks and diagnostics are never dropped.
"""

from __future__ import annotations

import asyncio
import json
import threading
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np
from fastapi import FastAPI, Request, WebSocket, WebSocketDisconnect
from fastapi.responses import JSONResponse

from hilbench.decoder import DecoderConfig, VirtualEcu
from hilbench.engine import (
    RpmLimitError,
    RunConfig,
    Simulator,
    WallClockRunner,
)
from hilbench.faults import (
    FaultScript,
    FaultSpec,
    ScenarioError,
    parse_scenario,
)
from hilbench.sensors import SENSOR_IDS, OperatingPoint, SensorBank
from hilbench.waveforms import CYCLE_DEG

PROTOCOL_VERSION = 1

COMMAND_KINDS = (
    "start", "stop", "set_rpm", "set_operating_point", "inject_fault",
    "clear_fault", "load_scenario", "subscribe",
)
MUTATING_KINDS = frozenset(COMMAND_KINDS) - {"subscribe"}

DISPLAY_BUCKETS = 720  # one-degree min/max buckets over the 720 deg cycle


def minmax_decimate(values: np.ndarray, buckets: int) -> tuple[np.ndarray, np.ndarray]:
    """Per-bucket minima and maxima; extrema are preserved exactly."""
    n = len(values)
    if n == 0:
        return np.zeros(buckets), np.zeros(buckets)
    edges = np.linspace(0, n, buckets + 1).astype(int)
    mins = np.empty(buckets)
    maxs = np.empty(buckets)
    for b in range(buckets):
        lo, hi = edges[b], max(edges[b] + 1, edges[b + 1])
        chunk = values[lo:min(hi, n)] if lo < n else values[-1:]
        mins[b] = chunk.min()
        maxs[b] = chunk.max()
    return mins, maxs


class CycleDisplay:
    """Min/max display buckets over the engine cycle, per completed cycle."""

    def __init__(self, buckets: int = DISPLAY_BUCKETS):
        self.buckets = buckets
        self._reset()
        self.last_complete: dict | None = None

    def _reset(self) -> None:
        self._crank_min = np.full(self.buckets, np.inf)
        self._crank_max = np.full(self.buckets, -np.inf)
        self._cam_min = np.full(self.buckets, np.inf)
        self._cam_max = np.full(self.buckets, -np.inf)
        self._touched = False

    def add(self, frame) -> None:
        angles = frame.angles
        wraps = np.flatnonzero(np.diff(angles) < -CYCLE_DEG / 2)
        start = 0
        for w in wraps:
            stop = int(w) + 1
            self._accumulate(angles[start:stop], frame.crank[start:stop],
                             frame.cam[start:stop])
            self._finalize()
            start = stop
        self._accumulate(angles[start:], frame.crank[start:], frame.cam[start:])

    def _accumulate(self, angles, crank, cam) -> None:
        if len(angles) == 0:
            return
        idx = np.minimum(
            (angles / (CYCLE_DEG / self.buckets)).astype(int), self.buckets - 1
        )
        np.minimum.at(self._crank_min, idx, crank)
        np.maximum.at(self._crank_max, idx, crank)
        np.minimum.at(self._cam_min, idx, cam)
        np.maximum.at(self._cam_max, idx, cam)
        self._touched = True

    def _finalize(self) -> None:
        if not self._touched:
            return
        filled = self._crank_min <= self._crank_max
        crank_min = np.where(filled, self._crank_min, 0.0)
        crank_max = np.where(filled, self._crank_max, 0.0)
        cam_filled = self._cam_min <= self._cam_max
        cam_min = np.where(cam_filled, self._cam_min, 0.0)
        cam_max = np.where(cam_filled, self._cam_max, 0.0)
        self.last_complete = {
            "buckets": self.buckets,
            "bucket_deg": CYCLE_DEG / self.buckets,
            "crank_min": crank_min.round(5).tolist(),
            "crank_max": crank_max.round(5).tolist(),
            "cam_min": cam_min.round(5).tolist(),
            "cam_max": cam_max.round(5).tolist(),
        }
        self._reset()


@dataclass
class Session:
    """One websocket client: its queues, sequence counter, and role."""

    conn_id: int
    loop: asyncio.AbstractEventLoop
    guaranteed: deque = field(default_factory=deque)
    summaries: deque = field(default_factory=lambda: deque(maxlen=8))
    wake: asyncio.Event = field(default_factory=asyncio.Event)
    seq: int = 0
    subscribed: bool = False
    replies: dict = field(default_factory=dict)  # request_id -> sent response
    _lock: threading.Lock = field(default_factory=threading.Lock)

    def push(self, kind: str, payload: dict, request_id: str | None = None) -> dict:
        # pushed from the pump thread, executor threads and the event loop;
        # seq is stamped at send time so the wire order stays monotone
        msg = {"v": PROTOCOL_VERSION, "kind": kind, "payload": payload}
        if request_id is not None:
            msg["request_id"] = request_id
        with self._lock:
            if kind == "frame_summary":
                self.summaries.append(msg)  # bounded: drop-oldest under stall
            else:
                self.guaranteed.append(msg)
        try:
            self.loop.call_soon_threadsafe(self.wake.set)
        except RuntimeError:
            pass  # loop already closed during shutdown
        return msg

    def stamp(self, msg: dict) -> dict:
        msg["seq"] = self.seq
        self.seq += 1
        return msg


class RigService:
    """Owns the streaming rig and fans telemetry out to sessions."""

    def __init__(
        self,
        config: RunConfig | None = None,
        initial_rpm: float = 0.0,
        scenario: FaultScript | None = None,
        sensors: SensorBank | None = None,
        decoder_config: DecoderConfig | None = None,
        display_rate_hz: float = 20.0,
    ):
        cfg = config or RunConfig(mode="wall_clock")
        self.sim = Simulator(cfg, sensors=sensors, initial_rpm=initial_rpm)
        if scenario is not None:
            self.sim.load_scenario(scenario)
        self.runner = WallClockRunner(self.sim)
        self.ecu = VirtualEcu(decoder_config)
        self.display = CycleDisplay()
        self.display_rate_hz = display_rate_hz
        self._sessions: dict[int, Session] = {}
        self._sessions_lock = threading.Lock()
        self._next_conn_id = 1
        self._controller: int | None = None
        self._pump_thread: threading.Thread | None = None
        self._stopping = threading.Event()
        self._last_summary_t = 0.0
        self._last_diag = None

    # -- lifecycle ---------------------------------------------------------

    def start(self) -> None:
        self.runner.start()
        self._stopping.clear()
        self._pump_thread = threading.Thread(target=self._pump, daemon=True)
        self._pump_thread.start()

    def stop(self) -> None:
        self._stopping.set()
        self.runner.stop()
        if self._pump_thread is not None:
            self._pump_thread.join(timeout=2.0)

    def _pump(self) -> None:
        for frame in self.runner.frames():
            if self._stopping.is_set():
                return
            self.ecu.feed(frame)
            self.display.add(frame)
            now = time.monotonic()
            if now - self._last_summary_t >= 1.0 / self.display_rate_hz:
                self._last_summary_t = now
                self._broadcast_summary(frame)
            diag = self._diag_payload()
            # change detection ignores the free-running angle estimate and
            # rpm jitter; the live values ride on frame_summary
            key = (round(diag["rpm_estimate"]), diag["rpm_valid"],
                   diag["sync"], tuple(diag["fault_codes"]))
            if key != self._last_diag:
                self._last_diag = key
                self._broadcast("diagnostics", diag)

    # -- sessions ----------------------------------------------------------

    def open_session(self, loop: asyncio.AbstractEventLoop) -> Session:
        with self._sessions_lock:
            sess = Session(conn_id=self._next_conn_id, loop=loop)
            self._next_conn_id += 1
            self._sessions[sess.conn_id] = sess
            if self._controller is None:
                self._controller = sess.conn_id
        return sess

    def close_session(self, sess: Session) -> None:
        with self._sessions_lock:
            self._sessions.pop(sess.conn_id, None)
            if self._controller == sess.conn_id:
                self._controller = min(self._sessions) if self._sessions else None

    def has_control(self, sess: Session) -> bool:
        return self._controller == sess.conn_id

    def take_control(self, conn_id: int) -> bool:
        with self._sessions_lock:
            if conn_id in self._sessions:
                self._controller = conn_id
                return True
        return False

    # -- telemetry -----------------------------------------------------------

    def _broadcast(self, kind: str, payload: dict) -> None:
        with self._sessions_lock:
            sessions = [s for s in self._sessions.values() if s.subscribed]
        for s in sessions:
            s.push(kind, payload)

    def _broadcast_summary(self, frame) -> None:
        state = self.sim.state
        payload = {
            "t": state.t,
            "rpm_actual": state.rpm_actual,
            "rpm_commanded": state.rpm_commanded,
            "angle": state.angle,
            "cycle": state.cycle_count,
            "display": self.display.last_complete,
        }
        self._broadcast("frame_summary", payload)

    def broadcast_ledger(self) -> None:
        payload = {"faults": [e.describe() for e in self.sim.active_faults()]}
        self._broadcast("fault_ledger", payload)

    def _diag_payload(self) -> dict:
        d = self.ecu.diagnostics()
        return {
            "rpm_estimate": round(d.rpm_estimate, 2),
            "rpm_valid": d.rpm_valid,
            "sync": d.sync,
            "fault_codes": sorted(d.fault_codes),
            "crank_angle_estimate": round(d.crank_angle_estimate, 1),
        }

    # -- commands ------------------------------------------------------------

    def state_snapshot(self) -> dict:
        state = self.sim.state
        return {
            "running": self.sim.running,
            "rpm_commanded": state.rpm_commanded,
            "rpm_actual": state.rpm_actual,
            "angle": state.angle,
            "cycle": state.cycle_count,
            "t": state.t,
            "sample_rate": self.sim.config.sample_rate,
            "platform_limit_hz": self.sim.config.platform_limit_hz,
            "rpm_ceiling": self.sim.rpm_ceiling(),
            "faults": [e.describe() for e in self.sim.active_faults()],
            "diagnostics": self._diag_payload(),
        }

    def execute(self, kind: str, payload: dict) -> dict:
        """Run one validated command on the producer thread; returns ack payload."""
        if kind == "start":
            fut = self.runner.submit(self.sim.start)
            fut.result(timeout=5.0)
            return {"running": True}
        if kind == "stop":
            fut = self.runner.submit(self.sim.stop)
            fut.result(timeout=5.0)
            return {"running": False}
        if kind == "set_rpm":
            rpm = float(payload["rpm"])
            fut = self.runner.submit(lambda: self.sim.set_rpm(rpm))
            return {"applied_rpm": fut.result(timeout=5.0)}
        if kind == "set_operating_point":
            values = {k: float(v) for k, v in payload.items()}
            unknown = set(values) - set(SENSOR_IDS)
            if unknown:
                raise ValueError(f"unknown sensors: {sorted(unknown)}")
            op = OperatingPoint(**{
                **{sid: self.sim.sensors.operating_point.value_for(sid)
                   for sid in SENSOR_IDS},
                **values,
            })
            fut = self.runner.submit(lambda: self.sim.set_operating_point(op))
            fut.result(timeout=5.0)
            return {"operating_point": values}
        if kind == "inject_fault":
            fault = self._fault_from_payload(payload)
            fut = self.runner.submit(lambda: self.sim.inject_live(fault))
            ack = fut.result(timeout=5.0)
            return {
                "fault_id": ack.fault_id,
                "activation": ack.activation,
                "applies_at_sample": ack.applies_at_sample,
                "applies_at_cycle": ack.applies_at_cycle,
            }
        if kind == "clear_fault":
            fault_id = str(payload["id"])
            fut = self.runner.submit(lambda: self.sim.clear_fault(fault_id))
            fut.result(timeout=5.0)
            return {"cleared": fault_id}
        if kind == "load_scenario":
            script = parse_scenario(
                json.dumps(payload), self.sim.bench.wheel, self.sim.bench.cam
            )
            fut = self.runner.submit(lambda: self.sim.load_scenario(script))
            acks = fut.result(timeout=5.0)
            return {"loaded": len(acks)}
        raise ValueError(f"unknown command kind {kind!r}")

    LEDGER_KINDS = frozenset({"inject_fault", "clear_fault", "load_scenario"})

    def _fault_from_payload(self, payload: dict) -> FaultSpec:
        doc = {"version": 1, "faults": [payload]}
        script = parse_scenario(
            json.dumps(doc), self.sim.bench.wheel, self.sim.bench.cam
        )
        fault = script.faults[0]
        if fault.activation == "on_start":
            # a live-injected on_start fault behaves like live_immediate
            from dataclasses import replace

            fault = replace(fault, activation="live_immediate")
        return fault


def create_app(service: RigService) -> FastAPI:
    """FastAPI app exposing /ws, /health, /state, /scenario, /takeover."""
    from contextlib import asynccontextmanager

    @asynccontextmanager
    async def lifespan(_app: FastAPI):
        service.start()
        try:
            yield
        finally:
            service.stop()

    app = FastAPI(title="hilbench", lifespan=lifespan)
    app.state.service = service

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok", "v": PROTOCOL_VERSION}

    @app.get("/state")
    def state() -> dict:
        return service.state_snapshot()

    @app.post("/scenario")
    async def scenario(request: Request):
        body = await request.body()
        try:
            script = parse_scenario(
                body.decode(), service.sim.bench.wheel, service.sim.bench.cam
            )
            fut = service.runner.submit(lambda: service.sim.load_scenario(script))
            acks = fut.result(timeout=5.0)
        except (ScenarioError, ValueError) as e:
            return JSONResponse({"error": str(e)}, status_code=400)
        service.broadcast_ledger()
        return {"loaded": len(acks)}

    @app.post("/takeover")
    async def takeover(request: Request):
        body = await request.json()
        conn_id = int(body.get("connection_id", 0))
        if service.take_control(conn_id):
            return {"controller": conn_id}
        return JSONResponse({"error": "unknown connection"}, status_code=404)

    @app.websocket("/ws")
    async def ws_endpoint(ws: WebSocket) -> None:
        await ws.accept()
        loop = asyncio.get_running_loop()
        sess = service.open_session(loop)
        sess.push("ack", {
            "connection_id": sess.conn_id,
            "controller": service.has_control(sess),
        }, request_id="__welcome__")
        writer = asyncio.create_task(_writer(ws, sess))
        try:
            while True:
                raw = await ws.receive_text()
                await _handle_message(service, sess, raw)
        except WebSocketDisconnect:
            pass
        finally:
            writer.cancel()
            service.close_session(sess)

    async def _handle_message(service: RigService, sess: Session, raw: str) -> None:
        try:
            msg = json.loads(raw)
        except json.JSONDecodeError as e:
            sess.push("error", {"reason": f"bad json: {e.msg}"})
            return
        request_id = str(msg.get("request_id", ""))
        if request_id and request_id in sess.replies:
            # retried request: acknowledge idempotently, do not re-apply
            prior = sess.replies[request_id]
            sess.push(prior["kind"], prior["payload"], request_id=request_id)
            return
        kind = msg.get("kind")
        if msg.get("v") != PROTOCOL_VERSION:
            _reply(sess, request_id, "error",
                   {"reason": f"unsupported protocol version {msg.get('v')!r}"})
            return
        if kind not in COMMAND_KINDS:
            _reply(sess, request_id, "error", {"reason": f"unknown kind {kind!r}"})
            return
        payload = msg.get("payload") or {}
        if kind == "subscribe":
            sess.subscribed = True
            _reply(sess, request_id, "ack", {"subscribed": True})
            return
        if kind in MUTATING_KINDS and not service.has_control(sess):
            _reply(sess, request_id, "error",
                   {"reason": "no control authority (observer connection)"})
            return
        try:
            result = await asyncio.get_running_loop().run_in_executor(
                None, service.execute, kind, payload
            )
            _reply(sess, request_id, "ack", result)
            if kind in RigService.LEDGER_KINDS:
                service.broadcast_ledger()  # ledger update follows the ack
        except RpmLimitError as e:
            _reply(sess, request_id, "error",
                   {"reason": str(e), "ceiling": e.ceiling})
        except (ScenarioError, ValueError, KeyError) as e:
            _reply(sess, request_id, "error", {"reason": str(e)})
        except Exception as e:  # runtime state errors and friends
            _reply(sess, request_id, "error", {"reason": str(e)})

    def _reply(sess: Session, request_id: str, kind: str, payload: dict) -> None:
        if request_id:
            sess.replies[request_id] = {"kind": kind, "payload": payload}
        sess.push(kind, payload, request_id=request_id or None)

    async def _writer(ws: WebSocket, sess: Session) -> None:
        while True:
            await sess.wake.wait()
            sess.wake.clear()
            while sess.guaranteed:
                await ws.send_json(sess.stamp(sess.guaranteed.popleft()))
            while sess.summaries:
                await ws.send_json(sess.stamp(sess.summaries.popleft()))

    return app


def serve(service: RigService, host: str = "127.0.0.1", port: int = 8780) -> None:
    """Blocking uvicorn entry point used by the CLI."""
    import uvicorn

    uvicorn.run(create_app(service), host=host, port=port, log_level="warning")
