"""Engine-state advance and sample-stream production.

The simulator advances crank angle in time, resamples the active (possibly
faulted) waveform tables at the configured rate, and emits immutable frame
batches. One producer owns the engine state; control commands (rpm,
operating point, live faults) are applied between frames, except
cycle-boundary fault activations which swap tables exactly at the next
720 degree crossing, mid-frame if needed.

In simulated-time mode the stream is a pure function of configuration,
scenario and seeds. Wall-clock mode wraps the same producer in a paced
ring buffer; falling behind real time is a counted underrun, never
fabricated samples.
"""

from __future__ import annotations

import math
import queue
import threading
import time
from dataclasses import dataclass, replace

import numpy as np

from hilbench.faults import (
    LIVE_CYCLE_BOUNDARY,
    LIVE_IMMEDIATE,
    ON_START,
    FaultBench,
    FaultScript,
    FaultSpec,
    LedgerEntry,
)
from hilbench.sensors import OperatingPoint, SensorBank
from hilbench.waveforms import CYCLE_DEG

SIMULATED_TIME = "simulated_time"
WALL_CLOCK = "wall_clock"

DEG_PER_RPM_S = 6.0  # one rpm advances the crank 6 deg per second


class RuntimeStateError(RuntimeError):
    """Operation requires a running (or stopped) runtime."""


class RpmLimitError(ValueError):
    """RPM target rejected by the emulated platform's sampling budget."""

    def __init__(self, target: float, ceiling: float):
        self.target = target
        self.ceiling = ceiling
        super().__init__(
            f"rpm {target:g} exceeds the emulated platform ceiling {ceiling:g}"
        )


def max_rpm(sample_rate: float, samples_per_tooth_min: int, teeth_per_rev: int) -> float:
    """Highest engine speed representable at `sample_rate`.

    Keeping at least `samples_per_tooth_min` output samples on every tooth
    of a `teeth_per_rev` wheel bounds the speed at
    sample_rate * 60 / (teeth_per_rev * samples_per_tooth_min).
    """
    if sample_rate <= 0 or samples_per_tooth_min <= 0 or teeth_per_rev <= 0:
        raise ValueError("max_rpm inputs must be positive")
    return sample_rate * 60.0 / (teeth_per_rev * samples_per_tooth_min)


@dataclass(frozen=True)
class EngineState:
    """Kinematic state: commanded/actual speed, crank angle, clock."""

    rpm_commanded: float = 0.0
    rpm_actual: float = 0.0
    angle: float = 0.0  # deg in [0, 720)
    t: float = 0.0
    cycle_count: int = 0


def advance(state: EngineState, dt: float, rpm_slew: float = math.inf) -> EngineState:
    """Advance one time step: slew rpm toward the command, then move the angle.

    The angle advances 6 * rpm degrees per second and wraps modulo 720;
    each wrap increments cycle_count.
    """
    if dt <= 0:
        raise ValueError(f"dt must be positive, got {dt}")
    gap = state.rpm_commanded - state.rpm_actual
    step = rpm_slew * dt
    if abs(gap) <= step:
        rpm = state.rpm_commanded
    else:
        rpm = state.rpm_actual + math.copysign(step, gap)
    unwrapped = state.angle + DEG_PER_RPM_S * rpm * dt
    wraps = int(unwrapped // CYCLE_DEG)
    return EngineState(
        rpm_commanded=state.rpm_commanded,
        rpm_actual=rpm,
        angle=unwrapped - wraps * CYCLE_DEG,
        t=state.t + dt,
        cycle_count=state.cycle_count + wraps,
    )


@dataclass(frozen=True)
class RunConfig:
    """Streaming configuration.

    `platform_limit_hz` emulates a hardware platform's maximum output
    sampling rate: the configured rate must fit under it and rpm targets
    are capped at max_rpm(limit, samples_per_tooth_min, teeth).
    """

    sample_rate: float = 48_000.0
    mode: str = SIMULATED_TIME
    rpm_slew: float = math.inf
    platform_limit_hz: float | None = None
    frame_size: int = 1024
    samples_per_tooth_min: int = 4
    base_seed: int = 0

    def __post_init__(self) -> None:
        if self.sample_rate <= 0:
            raise ValueError(f"sample_rate must be positive, got {self.sample_rate}")
        if self.frame_size < 1:
            raise ValueError(f"frame_size must be >= 1, got {self.frame_size}")
        if self.mode not in (SIMULATED_TIME, WALL_CLOCK):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.samples_per_tooth_min < 1:
            raise ValueError("samples_per_tooth_min must be >= 1")
        if self.platform_limit_hz is not None and self.sample_rate > self.platform_limit_hz:
            raise ValueError(
                f"sample_rate {self.sample_rate:g} exceeds the emulated platform "
                f"limit {self.platform_limit_hz:g} Hz"
            )


@dataclass(frozen=True)
class FrameBatch:
    """One contiguous block of output samples, immutable once emitted.

    `angle0` is the crank angle at the frame boundary (equal to the last
    sample angle of the previous frame); each sample's angle is taken after
    its time step, so `angles[-1]` is the state the next frame starts from.
    """

    seq: int
    t0: float
    n: int
    sample_rate: float
    angle0: float
    angles: np.ndarray
    crank: np.ndarray
    cam: np.ndarray
    sensors: np.ndarray  # shape (6, n), SENSOR_IDS order

    def __post_init__(self) -> None:
        for arr in (self.angles, self.crank, self.cam):
            if len(arr) != self.n:
                raise ValueError("channel length mismatch")
        if self.sensors.shape != (6, self.n):
            raise ValueError("sensor block must be 6 x n")


@dataclass(frozen=True)
class Activation:
    """Acknowledgment of a live fault injection."""

    fault_id: str
    activation: str
    applies_at_sample: int | None = None
    applies_at_cycle: int | None = None


class Simulator:
    """Single-producer streaming core over the fault bench and sensor bank."""

    def __init__(
        self,
        config: RunConfig | None = None,
        bench: FaultBench | None = None,
        sensors: SensorBank | None = None,
        initial_rpm: float = 0.0,
    ):
        self.config = config or RunConfig()
        self.bench = bench or FaultBench(base_seed=self.config.base_seed)
        self.sensors = sensors or SensorBank()
        self.state = EngineState(rpm_commanded=initial_rpm, rpm_actual=initial_rpm)
        self._running = False
        self._seq = 0
        self._sample_index = 0  # absolute samples emitted
        self._pending_cycle_faults: list[FaultSpec] = []
        if initial_rpm:
            self._check_ceiling(initial_rpm)

    # -- control ------------------------------------------------------------

    @property
    def running(self) -> bool:
        return self._running

    def start(self) -> None:
        self._running = True

    def stop(self) -> None:
        self._running = False

    def rpm_ceiling(self) -> float | None:
        """Ceiling implied by the emulated platform limit, if any."""
        if self.config.platform_limit_hz is None:
            return None
        return max_rpm(
            self.config.platform_limit_hz,
            self.config.samples_per_tooth_min,
            self.bench.wheel.teeth_per_rev,
        )

    def _check_ceiling(self, target: float) -> None:
        ceiling = self.rpm_ceiling()
        if ceiling is not None and target > ceiling:
            raise RpmLimitError(target, ceiling)

    def set_rpm(self, target: float) -> float:
        """Command a new engine speed; rejects targets above the platform budget."""
        if target < 0:
            raise ValueError(f"rpm must be >= 0, got {target}")
        self._check_ceiling(target)
        self.state = replace(self.state, rpm_commanded=target)
        return target

    def set_operating_point(self, op: OperatingPoint) -> None:
        self.sensors.set_operating_point(op)

    def inject_live(self, fault: FaultSpec) -> Activation:
        """Stage a fault while running; returns where it takes effect."""
        if not self._running:
            raise RuntimeStateError("inject_live requires a running runtime")
        self.bench.validate(fault)
        if fault.activation == LIVE_CYCLE_BOUNDARY:
            self._pending_cycle_faults.append(fault)
            return Activation(
                fault.id, fault.activation,
                applies_at_cycle=self.state.cycle_count + 1,
            )
        # on_start and live_immediate both swap before the next sample
        self.bench.apply(
            fault,
            cycle=self.state.cycle_count,
            sample_index=self._sample_index,
            t=self.state.t,
        )
        return Activation(
            fault.id, fault.activation, applies_at_sample=self._sample_index
        )

    def clear_fault(self, fault_id: str) -> None:
        self.bench.clear(fault_id)

    def active_faults(self) -> tuple[LedgerEntry, ...]:
        return self.bench.active()

    def load_scenario(self, script: FaultScript) -> list[Activation]:
        """Apply a parsed scenario: on_start faults now, live ones per contract."""
        acks = []
        for fault in script.faults:
            if fault.activation == ON_START or not self._running:
                self.bench.apply(
                    fault,
                    cycle=self.state.cycle_count,
                    sample_index=self._sample_index,
                    t=self.state.t,
                )
                acks.append(
                    Activation(fault.id, ON_START, applies_at_sample=self._sample_index)
                )
            else:
                acks.append(self.inject_live(fault))
        return acks

    # -- streaming ----------------------------------------------------------

    def _rpm_profile(self, n: int) -> np.ndarray | float:
        """Per-sample actual rpm for the next n samples (scalar if constant)."""
        state = self.state
        gap = state.rpm_commanded - state.rpm_actual
        if gap == 0.0 or math.isinf(self.config.rpm_slew):
            return state.rpm_commanded
        step = self.config.rpm_slew / self.config.sample_rate
        ramp = state.rpm_actual + np.minimum(
            np.arange(1, n + 1) * step, abs(gap)
        ) * math.copysign(1.0, gap)
        return ramp

    def step(self, n: int | None = None) -> FrameBatch:
        """Produce the next frame of `n` samples (defaults to frame_size).

        Each sample advances time by 1/sample_rate and then evaluates the
        active tables and sensor bank; a pending cycle-boundary fault splits
        the frame at the 720 degree crossing so earlier samples still see
        the old tables.
        """
        if not self._running:
            raise RuntimeStateError("step requires a started runtime")
        n = n or self.config.frame_size
        dt = 1.0 / self.config.sample_rate
        state = self.state

        rpm = self._rpm_profile(n)
        steps = DEG_PER_RPM_S * dt * (rpm if isinstance(rpm, np.ndarray)
                                      else np.full(n, rpm))
        unwrapped = state.angle + np.cumsum(steps)
        angles = np.mod(unwrapped, CYCLE_DEG)

        # pending cycle-boundary faults swap tables at the first 720 crossing
        split = n
        if self._pending_cycle_faults:
            split = int(np.searchsorted(unwrapped, CYCLE_DEG, side="left"))
        crank = np.empty(n)
        cam = np.empty(n)
        if split > 0:
            crank[:split] = self.bench.crank_table.sample_many(angles[:split])
            cam[:split] = self.bench.cam_table.sample_many(angles[:split])
        if split < n:
            self._activate_pending(cycle=state.cycle_count + 1,
                                   sample_index=self._sample_index + split)
            crank[split:] = self.bench.crank_table.sample_many(angles[split:])
            cam[split:] = self.bench.cam_table.sample_many(angles[split:])
        sensor_v = self.sensors.voltages()
        sensors = np.repeat(sensor_v[:, None], n, axis=1)

        frame = FrameBatch(
            seq=self._seq,
            t0=self._sample_index * dt,
            n=n,
            sample_rate=self.config.sample_rate,
            angle0=state.angle,
            angles=angles,
            crank=crank,
            cam=cam,
            sensors=sensors,
        )
        final_rpm = float(rpm[-1]) if isinstance(rpm, np.ndarray) else rpm
        wraps = int(unwrapped[-1] // CYCLE_DEG)
        self.state = EngineState(
            rpm_commanded=state.rpm_commanded,
            rpm_actual=final_rpm,
            angle=float(unwrapped[-1]) - wraps * CYCLE_DEG,
            t=(self._sample_index + n) * dt,
            cycle_count=state.cycle_count + wraps,
        )
        self._seq += 1
        self._sample_index += n
        return frame

    def _activate_pending(self, cycle: int, sample_index: int) -> None:
        faults, self._pending_cycle_faults = self._pending_cycle_faults, []
        for fault in faults:
            self.bench.apply(fault, cycle=cycle, sample_index=sample_index)


class WallClockRunner:
    """Paces a simulator against real time through a bounded frame buffer.

    The producer thread runs ahead by up to `buffer_frames`; `frames()`
    yields each frame no earlier than its presentation deadline. A frame
    that is not ready at its deadline counts as an underrun and the
    consumer stalls until it arrives (samples are never fabricated).
    """

    def __init__(self, sim: Simulator, buffer_frames: int = 8):
        if buffer_frames < 4:
            raise ValueError("buffer must hold at least 4 frames")
        self.sim = sim
        self._buffer: queue.Queue = queue.Queue(maxsize=buffer_frames)
        self._commands: queue.Queue = queue.Queue()
        self._stop = threading.Event()
        self._thread: threading.Thread | None = None
        self.underruns = 0
        self.frames_produced = 0

    def start(self) -> None:
        self.sim.start()
        self._stop.clear()
        self._thread = threading.Thread(target=self._produce, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        self._stop.set()
        if self._thread is not None:
            # drain so a blocked put() can finish
            while self._thread.is_alive():
                try:
                    self._buffer.get(timeout=0.05)
                except queue.Empty:
                    pass
            self._thread.join()
        self.sim.stop()

    def submit(self, fn):
        """Run a control command on the producer thread, between frames."""
        import concurrent.futures

        fut: concurrent.futures.Future = concurrent.futures.Future()
        self._commands.put((fn, fut))
        return fut

    def _run_commands(self) -> None:
        while True:
            try:
                fn, fut = self._commands.get_nowait()
            except queue.Empty:
                return
            try:
                fut.set_result(fn())
            except Exception as e:  # command errors go back to the caller
                fut.set_exception(e)

    def _produce(self) -> None:
        while not self._stop.is_set():
            self._run_commands()
            if not self.sim.running:  # paused by a stop command
                time.sleep(0.01)
                continue
            frame = self.sim.step()
            self.frames_produced += 1
            while not self._stop.is_set():
                try:
                    self._buffer.put(frame, timeout=0.05)
                    break
                except queue.Full:
                    self._run_commands()  # stay responsive while buffer is full

    def frames(self, duration: float | None = None):
        """Yield frames paced to the wall clock.

        Runs for `duration` seconds, or until stop() when duration is None.
        """
        frame_dur = self.sim.config.frame_size / self.sim.config.sample_rate
        total = None if duration is None else int(round(duration / frame_dur))
        t0 = time.monotonic()
        k = 0
        while total is None or k < total:
            if self._stop.is_set():
                return
            deadline = t0 + (k + 1) * frame_dur
            now = time.monotonic()
            if now < deadline:
                time.sleep(deadline - now)
            try:
                frame = self._buffer.get_nowait()
            except queue.Empty:
                if self.sim.running:
                    self.underruns += 1
                while not self._stop.is_set():
                    try:
                        frame = self._buffer.get(timeout=0.1)
                        break
                    except queue.Empty:
                        continue
                else:
                    return
            yield frame
            k += 1


def export_waveform(sim: Simulator, duration: float, path, fmt: str = "csv") -> dict:
    """Stream `duration` seconds of output into a CSV or raw-binary file.

    Returns a run report: sample count, configuration and active faults.
    """
    from hilbench import waveio

    total = int(round(duration * sim.config.sample_rate))
    if fmt == "csv":
        writer = waveio.CsvStreamWriter(path, sim.config.sample_rate)
    elif fmt in ("bin", "raw-binary"):
        writer = waveio.RawStreamWriter(path, sim.config.sample_rate)
    else:
        raise ValueError(f"unknown export format {fmt!r}")

    was_running = sim.running
    if not was_running:
        sim.start()
    written = 0
    with writer:
        while written < total:
            n = min(sim.config.frame_size, total - written)
            writer.write_frame(sim.step(n))
            written += n
    if not was_running:
        sim.stop()
    return {
        "samples": written,
        "sample_rate": sim.config.sample_rate,
        "duration_s": duration,
        "format": fmt,
        "rpm_commanded": sim.state.rpm_commanded,
        "faults": [e.describe() for e in sim.active_faults()],
    }
