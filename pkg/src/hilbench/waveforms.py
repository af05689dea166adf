"""Crank and cam position-sensor waveforms as angle-domain lookup tables.

Both sensor signals are deterministic functions of crankshaft angle, so they
are rendered once into tables covering one full engine cycle (720 degrees of
crank, i.e. two crank revolutions and one cam revolution) and resampled at
runtime. The crank wheel is a toothed ring read by a speed sensor: each tooth
window carries one full sine period, missing teeth leave their windows at
baseline and provide the per-revolution index gap. The cam track carries one
peak per cylinder plus one extra indexing peak.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

CYCLE_DEG = 720.0
REV_DEG = 360.0

CRANK = "crank"
CAM = "cam"


class WaveformError(ValueError):
    """Invalid waveform geometry or table parameters."""


def wrap_angle(deg: float) -> float:
    """Wrap an angle into the [0, 720) crank-cycle domain."""
    return deg % CYCLE_DEG


def table_size(resolution: float) -> int:
    """Number of samples in a table at `resolution` deg/sample.

    The resolution must divide 720 exactly so the table wraps cleanly.
    """
    if resolution <= 0:
        raise WaveformError(f"resolution must be positive, got {resolution}")
    n = round(CYCLE_DEG / resolution)
    if n < 1 or abs(n * resolution - CYCLE_DEG) > 1e-6:
        raise WaveformError(
            f"resolution {resolution} deg/sample does not divide {CYCLE_DEG} deg"
        )
    return n


@dataclass(frozen=True)
class ToothWheelSpec:
    """Geometry of the crank trigger wheel.

    Defaults describe a 60-2 wheel: 60 tooth positions per revolution, 6 deg
    per tooth, with the last two teeth missing to form the index gap.
    """

    teeth_per_rev: int = 60
    missing_teeth: frozenset[int] = frozenset({59, 60})
    amplitude: float = 1.0
    pulse_shape: str = "full-sine-period"

    def __post_init__(self) -> None:
        object.__setattr__(self, "missing_teeth", frozenset(self.missing_teeth))
        if self.teeth_per_rev < 4:
            raise WaveformError(f"teeth_per_rev must be >= 4, got {self.teeth_per_rev}")
        for t in self.missing_teeth:
            if not 1 <= t <= self.teeth_per_rev:
                raise WaveformError(
                    f"missing tooth {t} out of range 1..{self.teeth_per_rev}"
                )
        if len(self.missing_teeth) >= self.teeth_per_rev:
            raise WaveformError("at least one tooth must be present")
        if self.amplitude <= 0:
            raise WaveformError(f"amplitude must be positive, got {self.amplitude}")
        if self.pulse_shape != "full-sine-period":
            raise WaveformError(f"unknown pulse shape {self.pulse_shape!r}")

    @property
    def tooth_width_deg(self) -> float:
        return REV_DEG / self.teeth_per_rev

    def tooth_window(self, tooth: int, revolution: int = 0) -> tuple[float, float]:
        """Angular window [start, end) of a 1-based tooth in one revolution."""
        if not 1 <= tooth <= self.teeth_per_rev:
            raise WaveformError(f"tooth {tooth} out of range 1..{self.teeth_per_rev}")
        if revolution not in (0, 1):
            raise WaveformError("revolution must be 0 or 1")
        w = self.tooth_width_deg
        start = revolution * REV_DEG + (tooth - 1) * w
        return start, start + w


@dataclass(frozen=True)
class CamPeak:
    """One cam pulse: a full sine period of `width_deg` centered at `center_deg`."""

    center_deg: float
    width_deg: float = 12.0

    def window(self) -> tuple[float, float]:
        return self.center_deg - self.width_deg / 2, self.center_deg + self.width_deg / 2


def _default_cylinder_peaks() -> tuple[CamPeak, ...]:
    return tuple(CamPeak(60.0 + 120.0 * k) for k in range(6))


@dataclass(frozen=True)
class CamPatternSpec:
    """Geometry of the cam track: six cylinder peaks plus one index peak.

    All placements are configurable; the defaults put the cylinder peaks on a
    regular 120 deg grid with the index peak at 30 deg of crank.
    """

    cylinder_peaks: tuple[CamPeak, ...] = field(default_factory=_default_cylinder_peaks)
    index_peak: CamPeak = CamPeak(30.0)
    amplitude: float = 1.0

    def __post_init__(self) -> None:
        object.__setattr__(self, "cylinder_peaks", tuple(self.cylinder_peaks))
        if len(self.cylinder_peaks) != 6:
            raise WaveformError(
                f"expected 6 cylinder peaks, got {len(self.cylinder_peaks)}"
            )
        if self.amplitude <= 0:
            raise WaveformError(f"amplitude must be positive, got {self.amplitude}")
        for p in self.all_peaks():
            if p.width_deg <= 0:
                raise WaveformError(f"peak width must be positive, got {p.width_deg}")
            if not 0 <= p.center_deg < CYCLE_DEG:
                raise WaveformError(f"peak center {p.center_deg} outside [0, 720)")
        self._check_disjoint()

    def _check_disjoint(self) -> None:
        wins = sorted((wrap_angle(p.window()[0]), p.window()) for p in self.all_peaks())
        for (s0, (a0, b0)), (s1, (a1, b1)) in zip(wins, wins[1:]):
            if s0 + (b0 - a0) > s1 + 1e-9:
                raise WaveformError(f"cam peak windows overlap near {s1:.2f} deg")
        # wrap pair: last window vs first + 720
        s0, (a0, b0) = wins[-1]
        s1, _ = wins[0]
        if s0 + (b0 - a0) > s1 + CYCLE_DEG + 1e-9:
            raise WaveformError("cam peak windows overlap across the 720 deg wrap")

    def all_peaks(self) -> tuple[CamPeak, ...]:
        """All 7 peaks in ascending order of (wrapped) center angle.

        The 1-based position in this ordering is the peak's "tooth" number
        for fault targeting; with the default layout the index peak is #1.
        """
        return tuple(
            sorted(
                self.cylinder_peaks + (self.index_peak,),
                key=lambda p: wrap_angle(p.center_deg),
            )
        )

    def peak_window(self, number: int) -> tuple[float, float]:
        """Angular window [start, end) of the 1-based peak number."""
        peaks = self.all_peaks()
        if not 1 <= number <= len(peaks):
            raise WaveformError(f"cam peak {number} out of range 1..{len(peaks)}")
        return peaks[number - 1].window()


@dataclass(frozen=True)
class WaveformTable:
    """Voltage-vs-crank-angle lookup over one 720 deg engine cycle.

    Tables are immutable after construction (the sample array is marked
    read-only) and safe to share across concurrent readers. Faults produce
    new tables rather than editing one in place.
    """

    channel: str
    resolution: float
    samples: np.ndarray
    geometry: ToothWheelSpec | CamPatternSpec

    def __post_init__(self) -> None:
        if self.channel not in (CRANK, CAM):
            raise WaveformError(f"unknown channel {self.channel!r}")
        n = table_size(self.resolution)
        if len(self.samples) != n:
            raise WaveformError(
                f"table needs {n} samples at {self.resolution} deg/sample, "
                f"got {len(self.samples)}"
            )
        arr = np.array(self.samples, dtype=np.float64)  # own the buffer
        arr.setflags(write=False)
        object.__setattr__(self, "samples", arr)

    @property
    def n(self) -> int:
        return len(self.samples)

    @property
    def amplitude(self) -> float:
        return self.geometry.amplitude

    def with_samples(self, samples: np.ndarray) -> "WaveformTable":
        """New table sharing this table's geometry with different samples."""
        return WaveformTable(self.channel, self.resolution, samples, self.geometry)

    def sample_at(self, angle: float) -> float:
        """Linear interpolation at `angle`, wrapping across the 720 deg seam."""
        x = wrap_angle(angle) / self.resolution
        i = math.floor(x)
        frac = x - i
        # snap to the stored sample when the angle sits on the grid
        if frac < 1e-9:
            return float(self.samples[i % self.n])
        if frac > 1 - 1e-9:
            return float(self.samples[(i + 1) % self.n])
        i0 = i % self.n
        i1 = (i + 1) % self.n
        return float(self.samples[i0] * (1.0 - frac) + self.samples[i1] * frac)

    def sample_many(self, angles: np.ndarray) -> np.ndarray:
        """Vectorized linear interpolation for an array of angles (degrees)."""
        x = np.mod(angles, CYCLE_DEG) / self.resolution
        i0 = np.floor(x).astype(np.int64)
        frac = x - i0
        i0 %= self.n
        i1 = (i0 + 1) % self.n
        return self.samples[i0] * (1.0 - frac) + self.samples[i1] * frac


def sample_at_angle(table: WaveformTable, angle: float) -> float:
    """Table lookup with linear interpolation and 720 deg wrap-around."""
    return table.sample_at(angle)


def _crank_window_samples(n: int, teeth: int, window_index: int) -> tuple[int, int]:
    """Sample-index range [lo, hi) of one tooth window, computed exactly.

    Sample k sits at angle 720*k/n, so it belongs to window
    floor(2*k*teeth/n); inverting in integer arithmetic keeps window
    boundaries bit-stable at any resolution.
    """
    denom = 2 * teeth
    lo = -((-window_index * n) // denom)  # ceil(window_index*n / denom)
    hi = -((-(window_index + 1) * n) // denom)
    return lo, hi


def build_crank_table(
    spec: ToothWheelSpec, resolution: float = 0.1
) -> WaveformTable:
    """Render the crank wheel into a table over [0, 720).

    Each present tooth's window holds one full sine period
    A*sin(2*pi*(theta-theta0)/w); missing-tooth windows are exactly 0.0.
    Requires at least 4 samples per tooth.
    """
    n = table_size(resolution)
    w = spec.tooth_width_deg
    if resolution > w / 4 + 1e-12:
        raise WaveformError(
            f"resolution {resolution} too coarse: need >= 4 samples per "
            f"{w:.3f} deg tooth"
        )
    k = np.arange(n, dtype=np.int64)
    num = 2 * k * spec.teeth_per_rev
    window = num // n  # 0 .. 2*teeth-1 over the 720 deg table
    phase = (num % n) / n  # position within the tooth window, [0, 1)
    samples = spec.amplitude * np.sin(2.0 * np.pi * phase)
    tooth = (window % spec.teeth_per_rev) + 1
    if spec.missing_teeth:
        samples[np.isin(tooth, sorted(spec.missing_teeth))] = 0.0
    return WaveformTable(CRANK, resolution, samples, spec)


def _window_sample_range(start: float, width: float, resolution: float) -> range:
    """Unwrapped sample indices whose angles fall in [start, start+width)."""
    lo = math.ceil(start / resolution - 1e-9)
    hi = math.ceil((start + width) / resolution - 1e-9)
    return range(lo, hi)


def build_cam_table(spec: CamPatternSpec, resolution: float = 0.1) -> WaveformTable:
    """Render the cam track into a table over [0, 720).

    Each of the 7 peaks is one full sine period of its width centered at its
    center angle; everywhere else the table is baseline 0.0.
    """
    n = table_size(resolution)
    samples = np.zeros(n)
    for peak in spec.all_peaks():
        start, _ = peak.window()
        ks = np.array(_window_sample_range(start, peak.width_deg, resolution))
        if len(ks) == 0:
            continue
        theta = ks * resolution
        phase = (theta - start) / peak.width_deg
        samples[ks % n] = spec.amplitude * np.sin(2.0 * np.pi * phase)
    return WaveformTable(CAM, resolution, samples, spec)


@dataclass(frozen=True)
class PulseCensus:
    """Result of scanning a table for pulses above a threshold."""

    pulse_count: int
    pulse_windows: tuple[tuple[float, float], ...]


def pulse_census(table: WaveformTable, threshold: float) -> PulseCensus:
    """Count pulses: contiguous |v| > threshold regions, merging the positive
    and negative half-lobes of one sine period into a single pulse.

    Windows are reported as (start_deg, end_deg); a window that crosses the
    720 deg seam has end < start.
    """
    if not 0 < threshold < table.amplitude:
        raise WaveformError(
            f"threshold {threshold} outside (0, {table.amplitude})"
        )
    v = table.samples
    mask = np.abs(v) > threshold
    if not mask.any():
        return PulseCensus(0, ())

    # maximal runs of the circular mask
    edges = np.flatnonzero(np.diff(mask.astype(np.int8)))
    starts = [int(i) + 1 for i in edges if not mask[i]]
    stops = [int(i) + 1 for i in edges if mask[i]]
    if mask[0]:
        starts.insert(0, 0)
    if mask[-1]:
        stops.append(table.n)
    runs = list(zip(starts, stops))
    if mask[0] and mask[-1] and len(runs) > 1:
        # run wrapping the seam: fold the leading run into the trailing one
        first = runs.pop(0)
        last = runs.pop()
        runs.append((last[0], first[1] + table.n))

    signed = [(s, e, 1 if v[s % table.n] > 0 else -1) for s, e in runs]
    # start the circular walk on a positive run so +/- pairs stay intact
    pos = next((i for i, r in enumerate(signed) if r[2] > 0), 0)
    signed = signed[pos:] + signed[:pos]

    pulses: list[tuple[float, float]] = []
    i = 0
    while i < len(signed):
        s, e, sign = signed[i]
        nxt = signed[(i + 1) % len(signed)]
        if sign > 0 and i + 1 < len(signed) and nxt[2] < 0:
            e = nxt[1]
            i += 2
        else:
            i += 1
        pulses.append(
            (wrap_angle(s * table.resolution), wrap_angle(e * table.resolution))
        )
    return PulseCensus(len(pulses), tuple(pulses))
