"""Virtual ECU: decodes crank/cam frame streams and emits injection pulses.

The decoder stands in for the engine controller so the loop can close in
software. It finds tooth edges as hysteresis-qualified zero crossings,
establishes the crank index from the missing-tooth gap (an inter-tooth
period far beyond the rolling median), locks cycle phase from the cam index
peak, estimates RPM from a rolling revolution of tooth periods (the gap
counted at its missing-tooth span), shape-checks every expected tooth
window, and latches fault codes until explicitly cleared.

Once synchronized it schedules six injection pulses per 720 degree cycle
and renders them as per-cylinder drive channels aligned with the consumed
frames; `capture_injection` measures such channels back into events.
"""

from __future__ import annotations

import bisect
import math
import statistics
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from hilbench.waveforms import CYCLE_DEG, REV_DEG, CamPatternSpec, ToothWheelSpec

ACQUIRING = "acquiring"
SYNCHRONIZED = "synchronized"
SYNC_FAULT = "sync_fault"

CRANK_SIGNAL_MISSING = "crank_signal_missing"
CRANK_TOOTH_FAULT = "crank_tooth_fault"
CAM_SIGNAL_MISSING = "cam_signal_missing"
CAM_TOOTH_FAULT = "cam_tooth_fault"
CRANK_CAM_SYNC_FAULT = "crank_cam_sync_fault"

FAULT_CODES = (
    CRANK_SIGNAL_MISSING,
    CRANK_TOOTH_FAULT,
    CAM_SIGNAL_MISSING,
    CAM_TOOTH_FAULT,
    CRANK_CAM_SYNC_FAULT,
)


class ProtocolError(RuntimeError):
    """Frame stream violated its ordering contract."""


def _max_missing_run(wheel: ToothWheelSpec) -> int:
    """Longest cyclic run of consecutive missing teeth (2 for a 60-2 wheel)."""
    if not wheel.missing_teeth:
        return 0
    present = [t for t in range(1, wheel.teeth_per_rev + 1)
               if t not in wheel.missing_teeth]
    best = 0
    for a, b in zip(present, present[1:] + [present[0] + wheel.teeth_per_rev]):
        best = max(best, b - a - 1)
    return best


@dataclass(frozen=True)
class DecoderConfig:
    """Decoder thresholds and the nominal geometry it expects.

    All thresholds are configurable; the defaults are: gap flagged when a
    period exceeds 2x the rolling median (window of 20 teeth), pulse shape
    checked against a 0.3x amplitude floor and a 2-crossing count, cam index
    accepted within +/-15 deg of crank around its nominal offset from the
    gap, and edge hysteresis at +/-0.05x amplitude.
    """

    wheel: ToothWheelSpec = field(default_factory=ToothWheelSpec)
    cam: CamPatternSpec = field(default_factory=CamPatternSpec)
    gap_ratio: float = 2.0
    peak_floor_ratio: float = 0.3
    sync_window_deg: float = 15.0
    hysteresis_ratio: float = 0.05
    median_window: int = 20
    no_signal_timeout_s: float = 0.5
    cam_index_offset_deg: float | None = None  # derived from `cam` when None
    firing_order: tuple[int, ...] = (1, 5, 3, 6, 2, 4)
    soi_offset_deg: float = -10.0  # injection starts 10 deg before each TDC slot
    injection_v: float = 5.0
    injection_min_s: float = 0.5e-3
    injection_max_s: float = 2.5e-3
    throttle_v_span: tuple[float, float] = (0.5, 4.5)
    min_pulse_width_s: float = 1e-4

    def index_offset(self) -> float:
        """In-revolution angle of the cam index peak's rising edge."""
        if self.cam_index_offset_deg is not None:
            return self.cam_index_offset_deg
        start, _ = self.cam.index_peak.window()
        return start % REV_DEG


class EdgeDetector:
    """Hysteresis-qualified zero-crossing extractor for a bipolar signal.

    A crossing qualifies when the signal reaches one band (+h or -h) after
    last having been at the opposite band; timestamps are refined to the
    linear zero crossing between the bracketing samples. State carries
    across frames. Starts armed, so a stream beginning at baseline fires on
    its first rise.
    """

    def __init__(self, hysteresis: float):
        self.h = hysteresis
        self._band = -1
        self._prev_v = 0.0
        self._prev_t: float | None = None

    def process(self, values: np.ndarray, t0: float, dt: float):
        """Return [(t, polarity)] for one frame of samples starting at t0."""
        v = np.asarray(values)
        n = len(v)
        if self._prev_t is None:
            self._prev_t = t0
        ts = t0 + np.arange(1, n + 1) * dt
        s = np.zeros(n, dtype=np.int8)
        s[v >= self.h] = 1
        s[v <= -self.h] = -1
        idx = np.flatnonzero(s)
        out: list[tuple[float, int]] = []
        if len(idx):
            states = s[idx]
            prev_states = np.concatenate(([self._band], states[:-1]))
            hits = np.flatnonzero(states != prev_states)
            for j in hits:
                i = int(idx[j])
                pol = int(states[j])
                out.append((self._zero_time(v, ts, i, pol), pol))
            self._band = int(states[-1])
        self._prev_v = float(v[-1])
        self._prev_t = float(ts[-1])
        return out

    def _zero_time(self, v, ts, i, pol) -> float:
        """Departure-from-zero time for the crossing that fired at sample i.

        Walks back over the contiguous run of firing-side samples; the
        crossing is where the signal last left zero (or the opposite sign)
        toward the band. This keeps isolated pulses (cam peaks after a
        baseline stretch) anchored at their own rise, not at the previous
        pulse's tail.
        """
        sgn = 1.0 if pol > 0 else -1.0
        k = i
        while k >= 0 and sgn * v[k] > 0:
            k -= 1
        if k < 0:
            a, b = self._prev_v, v[0]
            if sgn * a < 0 and self._prev_t is not None:
                return float(self._prev_t + (ts[0] - self._prev_t) * a / (a - b))
            return float(self._prev_t if self._prev_t is not None else ts[0])
        a = v[k]
        if a == 0.0:
            return float(ts[k])
        b = v[k + 1]
        return float(ts[k] + (ts[k + 1] - ts[k]) * a / (a - b))


@dataclass(frozen=True)
class InjectionEvent:
    """One per-cylinder injection pulse, commanded or measured."""

    cylinder: int
    start_angle: float  # deg in [0, 720)
    duration: float  # seconds
    source: str  # "emitted" | "captured"
    t_start: float = 0.0
    cycle: int = -1


@dataclass(frozen=True)
class MalformedPulse:
    """Pulse that failed capture: glitch or missing falling edge."""

    channel: int
    t: float
    reason: str


@dataclass(frozen=True)
class EcuDiagnostics:
    """Decoder outputs: speed estimate, sync state, latched codes."""

    rpm_estimate: float
    rpm_valid: bool
    sync: str
    fault_codes: frozenset[str]
    crank_angle_estimate: float


class VirtualEcu:
    """Stream consumer closing the loop: diagnostics plus injection drive.

    feed() one frame at a time, in order; each call returns the six-channel
    injection drive block covering the same samples.
    """

    def __init__(self, config: DecoderConfig | None = None):
        self.config = config or DecoderConfig()
        cfg = self.config
        self._teeth = cfg.wheel.teeth_per_rev
        self._tooth_deg = cfg.wheel.tooth_width_deg
        self._gap_teeth = _max_missing_run(cfg.wheel) + 1
        self._crank_det = EdgeDetector(cfg.hysteresis_ratio * cfg.wheel.amplitude)
        self._cam_det = EdgeDetector(cfg.hysteresis_ratio * cfg.cam.amplitude)

        self._expect_seq = 0
        self._t_now = 0.0
        self._samples: deque = deque()  # (t0, dt, crank, cam) blocks
        # qualified-crossing times, sorted; bisect-searchable for window counts
        self._crank_cross_t: list[float] = []
        self._cam_cross_t: list[float] = []

        # crank tracking
        self._last_edge_t: float | None = None
        self._periods: deque = deque(maxlen=cfg.median_window)
        self._boundary_c = 0
        self._phase_valid = False
        self._rev_id = 0
        self._revs_completed = 0
        self._phase_rev: int | None = None
        self.gaps_detected = 0
        self._last_gap_t: float | None = None

        # rpm rolling window: (duration, tooth_equivalents)
        self._rpm_window: deque = deque()
        self._rpm_time = 0.0
        self._rpm_equiv = 0

        # cam / sync
        self._last_cam_seen_t = 0.0
        self._lock_rev: int | None = None
        self._index_match_in_rev = False
        self._sync_ok = False
        self._synchronized_once = False
        self.sync_time: float | None = None
        self._sync_timeline: list[tuple[float, str]] = []
        self._last_status: str | None = None

        # fault codes
        self._codes: set[str] = set()
        self._code_log: dict[str, dict] = {}

        # angle estimate and injection
        self._anchor: tuple[float, float, float] | None = None  # (t, angle720, slope)
        self._u: float | None = None  # unwrapped angle estimate
        self._high_until = np.zeros(6)
        self._emitted: list[InjectionEvent] = []
        self._throttle_v = 0.0
        self._rpm_trace: list[tuple[float, float]] = []

    # -- public queries -------------------------------------------------

    def estimate_rpm(self) -> tuple[float, bool]:
        """Rolling-revolution speed estimate and its validity flag."""
        if self._rpm_equiv < self._teeth or self._rpm_time <= 0:
            return 0.0, False
        revs = self._rpm_equiv / self._teeth
        rpm = 60.0 * revs / self._rpm_time
        stale = (
            self._last_edge_t is None
            or self._t_now - self._last_edge_t > self.config.no_signal_timeout_s
        )
        return rpm, self._synchronized_once and not stale

    def sync_status(self) -> str:
        if CRANK_CAM_SYNC_FAULT in self._codes:
            return SYNC_FAULT
        if not self._synchronized_once:
            return ACQUIRING
        return SYNCHRONIZED if self._sync_ok else SYNC_FAULT

    def fault_codes(self) -> frozenset[str]:
        return frozenset(self._codes)

    def clear_fault_codes(self) -> None:
        """Explicit code reset; detection history is kept in the report log."""
        self._codes.clear()

    def crank_angle_estimate(self) -> float:
        return self._angle720_at(self._t_now)

    def diagnostics(self) -> EcuDiagnostics:
        rpm, valid = self.estimate_rpm()
        return EcuDiagnostics(
            rpm_estimate=rpm,
            rpm_valid=valid,
            sync=self.sync_status(),
            fault_codes=self.fault_codes(),
            crank_angle_estimate=self.crank_angle_estimate(),
        )

    @property
    def synchronized_once(self) -> bool:
        return self._synchronized_once

    @property
    def revolutions(self) -> int:
        return self._revs_completed

    @property
    def emitted_events(self) -> tuple[InjectionEvent, ...]:
        return tuple(self._emitted)

    def injection_schedule(self) -> list[InjectionEvent]:
        """The six per-cycle events as currently planned (empty before sync)."""
        if not self._synchronized_once:
            return []
        dur = self._duration_for(self._throttle_v)
        out = []
        for p, cyl in enumerate(self.config.firing_order):
            angle = (self.config.soi_offset_deg + 120.0 * p) % CYCLE_DEG
            out.append(InjectionEvent(cyl, angle, dur, "emitted"))
        return out

    def first_detection(self, code: str) -> dict | None:
        return self._code_log.get(code)

    def report(self) -> dict:
        """Structured decode report: rpm trace, sync timeline, codes, injection."""
        rpm, valid = self.estimate_rpm()
        per_cyl: dict[int, list[InjectionEvent]] = {c: [] for c in range(1, 7)}
        for e in self._emitted:
            per_cyl[e.cylinder].append(e)
        return {
            "rpm": {"estimate": rpm, "valid": valid,
                    "trace": [{"t": t, "rpm": r} for t, r in self._rpm_trace[-200:]]},
            "sync": {"status": self.sync_status(),
                     "timeline": [{"t": t, "status": s} for t, s in self._sync_timeline]},
            "fault_codes": {
                "active": sorted(self._codes),
                "log": self._code_log,
            },
            "revolutions": self._revs_completed,
            "gaps_detected": self.gaps_detected,
            "injection": {
                str(c): {
                    "count": len(evts),
                    "mean_duration_s": (float(np.mean([e.duration for e in evts]))
                                        if evts else 0.0),
                    "mean_start_angle_deg": (float(np.mean([e.start_angle for e in evts]))
                                             if evts else 0.0),
                }
                for c, evts in per_cyl.items()
            },
        }

    # -- feeding ----------------------------------------------------------

    def feed(self, frame) -> np.ndarray:
        """Consume one frame; returns the (6, n) injection drive block."""
        if frame.seq != self._expect_seq:
            raise ProtocolError(
                f"frame seq {frame.seq}, expected {self._expect_seq}"
            )
        self._expect_seq += 1
        dt = 1.0 / frame.sample_rate
        ts = frame.t0 + np.arange(1, frame.n + 1) * dt

        self._samples.append((frame.t0, dt, frame.crank, frame.cam))
        self._throttle_v = float(frame.sensors[0][-1])

        crank_cross = self._crank_det.process(frame.crank, frame.t0, dt)
        cam_cross = self._cam_det.process(frame.cam, frame.t0, dt)
        self._crank_cross_t.extend(t for t, _pol in crank_cross)
        self._cam_cross_t.extend(t for t, _pol in cam_cross)

        # walk both channels' events in time order so cam edges see the
        # freshest crank anchor
        anchors = [self._anchor] if self._anchor else []
        events = sorted(
            [(t, "crank", pol) for t, pol in crank_cross]
            + [(t, "cam", pol) for t, pol in cam_cross]
        )
        for t, chan, pol in events:
            if chan == "crank":
                if pol > 0:
                    if self._on_crank_edge(t) and self._anchor:
                        anchors.append(self._anchor)
            else:
                self._on_cam_crossing(t, pol)

        self._t_now = float(ts[-1])
        self._check_timeouts()
        block = self._emit_injection(frame, ts, anchors)
        self._prune()
        self._log_status()
        return block

    # -- crank decode -------------------------------------------------------

    def _median_period(self) -> float | None:
        if len(self._periods) < 5:
            return None
        return statistics.median(self._periods)

    def _on_crank_edge(self, t: float) -> bool:
        """Handle an accepted or rejected rising crank crossing.

        Returns True when the edge was accepted as a tooth boundary.
        """
        if self._last_edge_t is None:
            self._last_edge_t = t
            return False
        period = t - self._last_edge_t
        if period <= 0:
            return False
        med = self._median_period()
        if med is None:
            k = 1
        else:
            r = period / med
            if r < 0.5:
                return False  # noise burst inside a window; crossings log keeps it
            k = max(1, round(r))
            if k > self._teeth:
                k = self._teeth
        if self._phase_valid:
            self._check_crank_windows(self._last_edge_t, t, k)
        is_gap = med is not None and k >= self._gap_teeth

        if is_gap:
            self.gaps_detected += 1
            self._complete_revolution(t, gap=True)
        else:
            self._boundary_c += k
            if self._boundary_c >= self._teeth:
                self._boundary_c -= self._teeth
                self._complete_revolution(t, gap=False)

        self._periods.append(period / k)
        self._rpm_push(period, k)
        self._last_edge_t = t

        med = self._median_period()
        if med:
            base = self._rev_base()
            self._anchor = (t, base + self._boundary_c * self._tooth_deg,
                            self._tooth_deg / med)
        return True

    def _rev_base(self) -> float:
        """0 or 360 depending on the current revolution's cycle parity."""
        if self._lock_rev is None:
            return 0.0
        return REV_DEG * ((self._rev_id - self._lock_rev) % 2)

    def _complete_revolution(self, t: float, gap: bool) -> None:
        if gap:
            self._boundary_c = 0
        completed = self._rev_id
        self._rev_id += 1
        self._revs_completed += 1
        if not self._phase_valid and gap:
            self._phase_valid = True
            self._phase_rev = completed
        self._evaluate_sync(t, completed)
        if self._last_gap_t is not None and self._synchronized_once:
            self._check_cam_windows(self._last_gap_t, t, completed)
        rpm, _ = self.estimate_rpm()
        if rpm:
            self._rpm_trace.append((t, rpm))
        self._last_gap_t = t
        self._index_match_in_rev = False

    def _evaluate_sync(self, t: float, completed_rev: int) -> None:
        if self._lock_rev is not None:
            expected = (completed_rev - self._lock_rev) % 2 == 0
            if expected != self._index_match_in_rev:
                self._sync_ok = False
                self._latch(CRANK_CAM_SYNC_FAULT, t)
            else:
                self._sync_ok = True
        elif self._phase_valid and self._phase_rev is not None:
            # no cam index lock after two full revolutions of valid phase
            if completed_rev - self._phase_rev >= 2:
                self._sync_ok = False
                self._latch(CRANK_CAM_SYNC_FAULT, t)

    def _rpm_push(self, period: float, k: int) -> None:
        self._rpm_window.append((period, k))
        self._rpm_time += period
        self._rpm_equiv += k
        while self._rpm_window and (
            self._rpm_equiv - self._rpm_window[0][1] >= self._teeth
        ):
            p, kk = self._rpm_window.popleft()
            self._rpm_time -= p
            self._rpm_equiv -= kk

    # -- shape checks ---------------------------------------------------

    def _check_crank_windows(self, t0: float, t1: float, k: int) -> None:
        """Shape-check the k tooth windows the period [t0, t1) closed."""
        cfg = self.config
        floor = cfg.peak_floor_ratio * cfg.wheel.amplitude
        width = (t1 - t0) / k
        for j in range(k):
            tooth = self._boundary_c + 1 + j
            while tooth > self._teeth:
                tooth -= self._teeth
            if tooth in cfg.wheel.missing_teeth:
                continue
            ta = t0 + j * width
            tb = t0 + (j + 1) * width
            peak = self._peak_between(ta, tb, channel=0)
            crossings = bisect.bisect_left(self._crank_cross_t, tb) - \
                bisect.bisect_left(self._crank_cross_t, ta)
            if peak < floor or crossings != 2:
                self._latch(CRANK_TOOTH_FAULT, ta, detail={"tooth": tooth})

    def _check_cam_windows(self, t_rev0: float, t_rev1: float, completed_rev: int) -> None:
        """Shape-check cam peaks inside the revolution that just completed."""
        cfg = self.config
        if self._lock_rev is None:
            return
        parity = (completed_rev - self._lock_rev) % 2
        base = REV_DEG * parity
        rev_dur = t_rev1 - t_rev0
        if rev_dur <= 0:
            return
        floor = cfg.peak_floor_ratio * cfg.cam.amplitude

        def t_of(angle720: float) -> float:
            return t_rev0 + (angle720 - base) / REV_DEG * rev_dur

        for num, peak in enumerate(cfg.cam.all_peaks(), start=1):
            a, b = peak.window()
            if not base <= a % CYCLE_DEG < base + REV_DEG:
                continue
            a = a % CYCLE_DEG
            b = a + peak.width_deg
            if b > base + REV_DEG:  # straddles the revolution boundary; skip
                continue
            ta, tb = t_of(a), t_of(b)
            peak_v = self._peak_between(ta - rev_dur * 0.002, tb, channel=1)
            # generous margins: cam peaks are isolated by wide baseline gaps
            lead = (peak.width_deg / 2) / REV_DEG * rev_dur
            tail = (peak.width_deg / 4) / REV_DEG * rev_dur
            crossings = bisect.bisect_left(self._cam_cross_t, tb - tail) - \
                bisect.bisect_left(self._cam_cross_t, ta - lead)
            if peak_v < floor or crossings != 2:
                self._latch(CAM_TOOTH_FAULT, ta, detail={"peak": num})

    def _peak_between(self, ta: float, tb: float, channel: int) -> float:
        peak = 0.0
        for t0, dt, crank, cam in self._samples:
            n = len(crank)
            t_end = t0 + n * dt
            if t_end < ta or t0 > tb:
                continue
            lo = max(0, int(math.ceil((ta - t0) / dt - 1.0)))
            hi = min(n, int(math.ceil((tb - t0) / dt - 1.0)) + 1)
            if hi > lo:
                v = crank if channel == 0 else cam
                peak = max(peak, float(np.max(np.abs(v[lo:hi]))))
        return peak

    # -- cam decode -------------------------------------------------------

    def _on_cam_crossing(self, t: float, pol: int) -> None:
        self._last_cam_seen_t = t
        if pol <= 0 or not self._phase_valid:
            return
        ang = self._angle_in_rev_at(t)
        if ang is None:
            return
        offset = self.config.index_offset()
        d = (ang - offset + REV_DEG / 2) % REV_DEG - REV_DEG / 2
        if abs(d) <= self.config.sync_window_deg:
            self._index_match_in_rev = True
            if self._lock_rev is None:
                self._lock_rev = self._rev_id
                self._synchronized_once = True
                self._sync_ok = True
                self.sync_time = t
                if self._anchor is not None:
                    at, aang, slope = self._anchor
                    self._anchor = (at, aang % REV_DEG, slope)  # rebase to cycle start

    def _angle_in_rev_at(self, t: float) -> float | None:
        med = self._median_period()
        if self._last_edge_t is None or med is None:
            return None
        return (self._boundary_c * self._tooth_deg
                + (t - self._last_edge_t) / med * self._tooth_deg)

    def _angle720_at(self, t: float) -> float:
        if self._anchor is None:
            return 0.0
        at, ang, slope = self._anchor
        return (ang + (t - at) * slope) % CYCLE_DEG

    # -- timeouts, codes ----------------------------------------------------

    def _check_timeouts(self) -> None:
        timeout = self.config.no_signal_timeout_s
        last_crank = self._last_edge_t if self._last_edge_t is not None else 0.0
        if self._t_now - last_crank > timeout:
            self._latch(CRANK_SIGNAL_MISSING, self._t_now)
        last_cam = getattr(self, "_last_cam_seen_t", 0.0)
        if self._t_now - last_cam > timeout:
            self._latch(CAM_SIGNAL_MISSING, self._t_now)

    def _latch(self, code: str, t: float, detail: dict | None = None) -> None:
        if code not in self._code_log:
            entry = {"t": t, "angle_deg": self._angle720_at(t),
                     "cycle": self._cycle_at(t)}
            if detail:
                entry.update(detail)
            self._code_log[code] = entry
        self._codes.add(code)

    def _cycle_at(self, t: float) -> int:
        if self._lock_rev is None:
            return -1
        return max(0, (self._rev_id - self._lock_rev) // 2)

    def _log_status(self) -> None:
        status = self.sync_status()
        if status != self._last_status:
            self._sync_timeline.append((self._t_now, status))
            self._last_status = status

    def _prune(self) -> None:
        # keep a bit over one revolution of history for window checks
        med = self._median_period()
        rev_s = med * self._teeth if med else 0.1
        horizon = self._t_now - min(3.0, max(0.3, 3.0 * rev_s))
        while self._samples:
            t0, dt, crank, _cam = self._samples[0]
            if t0 + len(crank) * dt < horizon:
                self._samples.popleft()
            else:
                break
        for times in (self._crank_cross_t, self._cam_cross_t):
            cut = bisect.bisect_left(times, horizon)
            if cut > 256:
                del times[:cut]

    # -- injection emission ---------------------------------------------

    def _duration_for(self, throttle_v: float) -> float:
        lo, hi = self.config.throttle_v_span
        pct = min(1.0, max(0.0, (throttle_v - lo) / (hi - lo)))
        return (self.config.injection_min_s
                + (self.config.injection_max_s - self.config.injection_min_s) * pct)

    def _emit_injection(self, frame, ts: np.ndarray, anchors) -> np.ndarray:
        cfg = self.config
        n = frame.n
        block = np.zeros((6, n))
        if not self._synchronized_once:
            return block

        # emission begins at the lock instant: earlier samples of the lock
        # frame carry pre-lock (wrong-parity) angle estimates
        i0 = 0
        if self._u is None and self.sync_time is not None:
            i0 = int(np.searchsorted(ts, self.sync_time, side="left"))
            if i0 >= n:
                return block

        # piecewise angle estimate over this frame from the anchor trail
        angle720 = np.zeros(n)
        if anchors:
            bounds = [a[0] for a in anchors]
            seg = np.searchsorted(bounds, ts, side="right") - 1
            seg = np.clip(seg, 0, len(anchors) - 1)
            for i, (at, ang, slope) in enumerate(anchors):
                m = seg == i
                if m.any():
                    angle720[m] = (ang + (ts[m] - at) * slope) % CYCLE_DEG
        else:
            angle720[:] = self._angle720_at(self._t_now)

        ts_e = ts[i0:]
        angle_e = angle720[i0:]
        if self._u is None:
            self._u = float(angle_e[0])
        d = np.diff(np.concatenate(([self._u % CYCLE_DEG], angle_e)))
        d -= CYCLE_DEG * np.round(d / CYCLE_DEG)
        u = np.maximum.accumulate(self._u + np.cumsum(d))
        u_prev = self._u
        self._u = float(u[-1])

        # carry-over highs from earlier fires
        for c in range(6):
            if self._high_until[c] > ts[0] - 1e-12:
                block[c][ts < self._high_until[c]] = cfg.injection_v

        for p, cyl in enumerate(cfg.firing_order):
            a_p = (cfg.soi_offset_deg + 120.0 * p) % CYCLE_DEG
            m_lo = math.floor((u_prev - a_p) / CYCLE_DEG) + 1
            m_hi = math.floor((u[-1] - a_p) / CYCLE_DEG)
            for m in range(m_lo, m_hi + 1):
                # tiny slack keeps estimator jitter from pushing the fire
                # one full sample past an on-grid target angle
                target = a_p + CYCLE_DEG * m - 1e-6
                idx = int(np.searchsorted(u, target, side="left"))
                if idx >= len(ts_e):
                    continue
                t_fire = float(ts_e[idx])
                dur = self._duration_for(float(frame.sensors[0][i0 + idx]))
                self._high_until[cyl - 1] = t_fire + dur
                block[cyl - 1][(ts >= t_fire) & (ts < t_fire + dur)] = cfg.injection_v
                self._emitted.append(
                    InjectionEvent(cyl, a_p, dur, "emitted", t_start=t_fire, cycle=m)
                )
        return block


def capture_injection(
    channels,
    angles: np.ndarray,
    sample_rate: float,
    t0: float = 0.0,
    threshold: float | None = None,
    min_pulse_width_s: float = 1e-4,
):
    """Measure injection pulses from sampled drive channels.

    Edges are detected at the half-amplitude threshold; the start angle is
    the stream angle at the rising-edge sample. Pulses narrower than
    `min_pulse_width_s` and pulses with no falling edge are reported as
    malformed, not as events.

    Returns (events, malformed).
    """
    channels = np.asarray(channels)
    dt = 1.0 / sample_rate
    wraps = np.flatnonzero(np.diff(angles) < -REV_DEG)
    events: list[InjectionEvent] = []
    malformed: list[MalformedPulse] = []

    for ch in range(channels.shape[0]):
        v = channels[ch]
        vmax = float(np.max(v)) if len(v) else 0.0
        thr = threshold if threshold is not None else vmax / 2.0
        if vmax <= 0 or thr <= 0:
            continue
        above = v >= thr
        d = np.diff(above.astype(np.int8))
        rises = np.flatnonzero(d == 1) + 1
        falls = np.flatnonzero(d == -1) + 1
        for r in rises:
            nxt = falls[falls > r]
            if len(nxt) == 0:
                malformed.append(
                    MalformedPulse(ch + 1, t0 + (r + 1) * dt, "no falling edge")
                )
                continue
            f = int(nxt[0])
            dur = (f - r) * dt
            if dur < min_pulse_width_s:
                malformed.append(
                    MalformedPulse(ch + 1, t0 + (r + 1) * dt, "glitch")
                )
                continue
            cycle = int(np.searchsorted(wraps, r))
            events.append(
                InjectionEvent(
                    cylinder=ch + 1,
                    start_angle=float(angles[r]),
                    duration=float(dur),
                    source="captured",
                    t_start=t0 + (r + 1) * dt,
                    cycle=cycle,
                )
            )
    events.sort(key=lambda e: e.t_start)
    return events, malformed
