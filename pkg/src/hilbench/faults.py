"""Sensor-signal fault injection for the crank/cam waveform tables.

Faults are declarative (`FaultSpec`), collected into scenario scripts, and
applied as pure table transforms: `apply_fault` never mutates its input and
returns a new table, so the streaming path can swap table references
atomically at the fault's activation point. Per-tooth faults on the crank
affect both per-revolution images of that tooth (a physically broken tooth
is broken on every revolution); cam faults affect the single image.

Clearing a fault rebuilds from the clean geometry and replays the remaining
ledger in order, which keeps the active tables an auditable function of the
ledger.
"""

from __future__ import annotations

import json
import zlib
from dataclasses import dataclass

import numpy as np

from hilbench.waveforms import (
    CAM,
    CRANK,
    CamPatternSpec,
    ToothWheelSpec,
    WaveformTable,
    build_cam_table,
    build_crank_table,
    _window_sample_range,
)

SCENARIO_VERSION = 1

MISSING_TOOTH = "missing_tooth"
AMPLITUDE_SCALE = "amplitude_scale"
WIDTH_SCALE = "width_scale"
PARTIAL_NOISE = "partial_noise"
FULL_NOISE_REPLACE = "full_noise_replace"
SYNC_OFFSET = "sync_offset"
GLOBAL_NOISE = "global_noise"

FAULT_KINDS = (
    MISSING_TOOTH,
    AMPLITUDE_SCALE,
    WIDTH_SCALE,
    PARTIAL_NOISE,
    FULL_NOISE_REPLACE,
    SYNC_OFFSET,
    GLOBAL_NOISE,
)

ON_START = "on_start"
LIVE_IMMEDIATE = "live_immediate"
LIVE_CYCLE_BOUNDARY = "live_cycle_boundary"
ACTIVATIONS = (ON_START, LIVE_IMMEDIATE, LIVE_CYCLE_BOUNDARY)

# JSON keys accepted per fault kind, beyond id/type/activation/seed
_KIND_FIELDS = {
    MISSING_TOOTH: {"sensor", "tooth"},
    AMPLITUDE_SCALE: {"sensor", "tooth", "factor"},
    WIDTH_SCALE: {"sensor", "tooth", "factor"},
    PARTIAL_NOISE: {"sensor", "tooth", "sigma_volts"},
    FULL_NOISE_REPLACE: {"sensor", "tooth", "noise_amplitude"},
    SYNC_OFFSET: {"offset_deg"},
    GLOBAL_NOISE: {"sensor", "sigma_volts"},
}


class ScenarioError(ValueError):
    """Scenario document rejected: syntax or semantic problem."""

    def __init__(self, message: str, position: str | None = None):
        self.position = position
        super().__init__(message if position is None else f"{position}: {message}")


class FaultApplicationError(ValueError):
    """Fault cannot be applied to the given table."""


@dataclass(frozen=True)
class FaultSpec:
    """One declarative sensor-signal fault.

    `tooth` indexes crank teeth 1..teeth_per_rev or cam peaks 1..7 in
    ascending center-angle order. `seed` feeds the noise generator; None
    means "derive from the run's base seed".
    """

    id: str
    kind: str
    activation: str = ON_START
    sensor: str | None = None
    tooth: int | None = None
    factor: float | None = None
    sigma_volts: float | None = None
    noise_amplitude: float | None = None
    offset_deg: float | None = None
    seed: int | None = None

    def __post_init__(self) -> None:
        if not self.id:
            raise ScenarioError("fault id must be non-empty")
        if self.kind not in FAULT_KINDS:
            raise ScenarioError(f"unknown fault type {self.kind!r}")
        if self.activation not in ACTIVATIONS:
            raise ScenarioError(f"unknown activation {self.activation!r}")
        fields_needed = _KIND_FIELDS[self.kind]
        if "sensor" in fields_needed:
            if self.sensor not in (CRANK, CAM):
                raise ScenarioError(
                    f"fault {self.id}: sensor must be 'crank' or 'cam', got {self.sensor!r}"
                )
        elif self.sensor is not None:
            raise ScenarioError(f"fault {self.id}: {self.kind} takes no sensor field")
        if "tooth" in fields_needed:
            if not isinstance(self.tooth, int) or self.tooth < 1:
                raise ScenarioError(f"fault {self.id}: tooth must be a positive integer")
        elif self.tooth is not None:
            raise ScenarioError(f"fault {self.id}: {self.kind} takes no tooth field")
        if "factor" in fields_needed:
            if self.factor is None or not self.factor > 0:
                raise ScenarioError(f"fault {self.id}: factor must be > 0")
        if "sigma_volts" in fields_needed:
            if self.sigma_volts is None or self.sigma_volts < 0:
                raise ScenarioError(f"fault {self.id}: sigma_volts must be >= 0")
        if "noise_amplitude" in fields_needed:
            if self.noise_amplitude is None or not self.noise_amplitude > 0:
                raise ScenarioError(f"fault {self.id}: noise_amplitude must be > 0")
        if self.kind == SYNC_OFFSET and self.offset_deg is None:
            raise ScenarioError(f"fault {self.id}: offset_deg required")

    @property
    def target_channel(self) -> str:
        """Channel whose table this fault transforms (sync offsets hit the cam)."""
        return CAM if self.kind == SYNC_OFFSET else self.sensor


@dataclass(frozen=True)
class FaultScript:
    """Ordered fault list parsed from a scenario document."""

    version: int = SCENARIO_VERSION
    faults: tuple[FaultSpec, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "faults", tuple(self.faults))
        ids = [f.id for f in self.faults]
        if len(set(ids)) != len(ids):
            raise ScenarioError("fault ids must be unique within a script")


def _check_tooth_range(
    fault: FaultSpec, wheel: ToothWheelSpec, cam: CamPatternSpec
) -> None:
    if fault.tooth is None:
        return
    if fault.sensor == CRANK and fault.tooth > wheel.teeth_per_rev:
        raise ScenarioError(
            f"fault {fault.id}: tooth {fault.tooth} out of range "
            f"1..{wheel.teeth_per_rev} for the crank wheel"
        )
    if fault.sensor == CAM and fault.tooth > len(cam.all_peaks()):
        raise ScenarioError(
            f"fault {fault.id}: cam peak {fault.tooth} out of range "
            f"1..{len(cam.all_peaks())}"
        )


def parse_scenario(
    text: str,
    wheel: ToothWheelSpec | None = None,
    cam: CamPatternSpec | None = None,
) -> FaultScript:
    """Parse and validate a scenario document (JSON).

    Rejects unknown top-level or per-fault keys, unknown fault types, and
    out-of-range fields; tooth indices are checked against the given (or
    default) wheel and cam geometry.
    """
    wheel = wheel or ToothWheelSpec()
    cam = cam or CamPatternSpec()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as e:
        raise ScenarioError(e.msg, position=f"line {e.lineno} col {e.colno}") from e
    if not isinstance(doc, dict):
        raise ScenarioError("scenario must be a JSON object")
    unknown = set(doc) - {"version", "faults"}
    if unknown:
        raise ScenarioError(f"unknown top-level keys: {sorted(unknown)}")
    if doc.get("version") != SCENARIO_VERSION:
        raise ScenarioError(f"unsupported scenario version {doc.get('version')!r}")
    raw_faults = doc.get("faults")
    if not isinstance(raw_faults, list):
        raise ScenarioError("'faults' must be a list")

    faults = []
    for i, item in enumerate(raw_faults):
        where = f"faults[{i}]"
        if not isinstance(item, dict):
            raise ScenarioError("fault entry must be an object", position=where)
        kind = item.get("type")
        if kind not in FAULT_KINDS:
            raise ScenarioError(f"unknown fault type {kind!r}", position=where)
        allowed = {"id", "type", "activation", "seed"} | _KIND_FIELDS[kind]
        unknown = set(item) - allowed
        if unknown:
            raise ScenarioError(f"unknown keys {sorted(unknown)}", position=where)
        try:
            spec = FaultSpec(
                id=str(item.get("id", "")),
                kind=kind,
                activation=item.get("activation", ON_START),
                sensor=item.get("sensor"),
                tooth=item.get("tooth"),
                factor=item.get("factor"),
                sigma_volts=item.get("sigma_volts"),
                noise_amplitude=item.get("noise_amplitude"),
                offset_deg=item.get("offset_deg"),
                seed=item.get("seed"),
            )
            _check_tooth_range(spec, wheel, cam)
        except ScenarioError as e:
            raise ScenarioError(str(e), position=where) from e
        faults.append(spec)
    return FaultScript(version=SCENARIO_VERSION, faults=tuple(faults))


def scenario_to_json(script: FaultScript) -> str:
    """Serialize a script back to the scenario document format."""
    out = {"version": script.version, "faults": []}
    for f in script.faults:
        entry: dict = {"id": f.id, "type": f.kind, "activation": f.activation}
        for key in ("sensor", "tooth", "factor", "sigma_volts", "noise_amplitude",
                    "offset_deg", "seed"):
            val = getattr(f, key)
            if val is not None:
                entry[key] = val
        out["faults"].append(entry)
    return json.dumps(out, indent=2)


def _fault_windows(table: WaveformTable, tooth: int) -> list[tuple[float, float]]:
    """Angular windows a per-tooth fault touches on this table."""
    geo = table.geometry
    if table.channel == CRANK:
        return [geo.tooth_window(tooth, rev) for rev in (0, 1)]
    return [geo.peak_window(tooth)]


def _window_indices(table: WaveformTable, start: float, width: float) -> np.ndarray:
    ks = np.array(_window_sample_range(start, width, table.resolution), dtype=np.int64)
    return ks % table.n


def _crank_gap_deg(wheel: ToothWheelSpec, tooth: int, side: int) -> float:
    """Contiguous empty space next to a tooth: sum of adjacent missing windows."""
    w = wheel.tooth_width_deg
    gap = 0.0
    t = tooth
    for _ in range(wheel.teeth_per_rev - 1):
        t = (t - 1 + side) % wheel.teeth_per_rev + 1
        if t in wheel.missing_teeth:
            gap += w
        else:
            break
    return gap


def _cam_gap_deg(cam: CamPatternSpec, number: int, side: int) -> float:
    """Baseline distance from a cam peak's window edge to its neighbor."""
    peaks = cam.all_peaks()
    i = number - 1
    j = (i + side) % len(peaks)
    a0, b0 = peaks[i].window()
    a1, b1 = peaks[j].window()
    if side > 0:
        return (a1 - b0) % 720.0
    return (a0 - b1) % 720.0


def apply_fault(
    table: WaveformTable, fault: FaultSpec, seed: int | None = None
) -> WaveformTable:
    """Apply one fault to a table, returning a new table.

    `seed` overrides the generator seed for noise faults (used by the bench
    to resolve faults that left their seed unset); defaults to fault.seed
    or 0.
    """
    if fault.target_channel != table.channel:
        raise FaultApplicationError(
            f"fault {fault.id} targets {fault.target_channel}, table is {table.channel}"
        )
    if fault.tooth is not None:
        # raises if the index is out of range for this geometry
        _fault_windows(table, fault.tooth)
    rng_seed = seed if seed is not None else (fault.seed or 0)
    rng = np.random.default_rng(rng_seed)
    new = table.samples.copy()

    if fault.kind == MISSING_TOOTH:
        for start, end in _fault_windows(table, fault.tooth):
            new[_window_indices(table, start, end - start)] = 0.0

    elif fault.kind == AMPLITUDE_SCALE:
        for start, end in _fault_windows(table, fault.tooth):
            new[_window_indices(table, start, end - start)] *= fault.factor

    elif fault.kind == WIDTH_SCALE:
        _apply_width_scale(table, fault, new)

    elif fault.kind == PARTIAL_NOISE:
        for start, end in _fault_windows(table, fault.tooth):
            idx = _window_indices(table, start, end - start)
            new[idx] += rng.normal(0.0, fault.sigma_volts, len(idx))

    elif fault.kind == FULL_NOISE_REPLACE:
        a = fault.noise_amplitude
        for start, end in _fault_windows(table, fault.tooth):
            idx = _window_indices(table, start, end - start)
            new[idx] = rng.uniform(-a, a, len(idx))

    elif fault.kind == SYNC_OFFSET:
        shift = round(fault.offset_deg / table.resolution)
        new = np.roll(new, shift)

    elif fault.kind == GLOBAL_NOISE:
        new = new + rng.normal(0.0, fault.sigma_volts, table.n)

    return table.with_samples(new)


def _apply_width_scale(table: WaveformTable, fault: FaultSpec, new: np.ndarray) -> None:
    """Re-render a pulse at width w*factor, centered on its original center.

    Widening may extend into adjacent baseline (missing-tooth windows on the
    crank, inter-peak baseline on the cam) but never into a neighboring
    pulse; that raises instead of silently clipping.
    """
    geo = table.geometry
    amp = geo.amplitude
    for i, (start, end) in enumerate(_fault_windows(table, fault.tooth)):
        w = end - start
        new_w = w * fault.factor
        ext = (new_w - w) / 2
        if ext > 1e-9:
            if table.channel == CRANK:
                gap_l = _crank_gap_deg(geo, fault.tooth, -1)
                gap_r = _crank_gap_deg(geo, fault.tooth, +1)
            else:
                gap_l = _cam_gap_deg(geo, fault.tooth, -1)
                gap_r = _cam_gap_deg(geo, fault.tooth, +1)
            if ext > gap_l + 1e-9 or ext > gap_r + 1e-9:
                raise FaultApplicationError(
                    f"fault {fault.id}: width factor {fault.factor} would overlap "
                    f"a neighboring pulse (free space {gap_l:.2f}/{gap_r:.2f} deg)"
                )
        new[_window_indices(table, start, w)] = 0.0
        ks = np.array(
            _window_sample_range(start - ext, new_w, table.resolution), dtype=np.int64
        )
        if len(ks) == 0:
            continue
        theta = ks * table.resolution
        phase = (theta - (start - ext)) / new_w
        new[ks % table.n] = amp * np.sin(2.0 * np.pi * phase)


@dataclass(frozen=True)
class LedgerEntry:
    """One applied fault plus where it took effect."""

    fault: FaultSpec
    seed: int
    cycle: int | None = None
    sample_index: int | None = None
    t: float | None = None

    def describe(self) -> dict:
        entry: dict = {"id": self.fault.id, "type": self.fault.kind,
                       "activation": self.fault.activation, "seed": self.seed}
        for key in ("sensor", "tooth", "factor", "sigma_volts",
                    "noise_amplitude", "offset_deg"):
            val = getattr(self.fault, key)
            if val is not None:
                entry[key] = val
        if self.cycle is not None:
            entry["applied_cycle"] = self.cycle
        if self.sample_index is not None:
            entry["applied_sample"] = self.sample_index
        if self.t is not None:
            entry["applied_t"] = self.t
        return entry


def _resolve_seed(fault: FaultSpec, base_seed: int) -> int:
    if fault.seed is not None:
        return fault.seed
    return (base_seed + zlib.crc32(fault.id.encode())) & 0xFFFFFFFF


class FaultBench:
    """Owns the clean geometry, the active tables, and the fault ledger.

    The active tables are always equal to the clean build with the ledger
    replayed in order, so clearing a fault is a deterministic rebuild.
    """

    def __init__(
        self,
        wheel: ToothWheelSpec | None = None,
        cam: CamPatternSpec | None = None,
        resolution: float = 0.1,
        base_seed: int = 0,
    ):
        self.wheel = wheel or ToothWheelSpec()
        self.cam = cam or CamPatternSpec()
        self.resolution = resolution
        self.base_seed = base_seed
        self._clean_crank = build_crank_table(self.wheel, resolution)
        self._clean_cam = build_cam_table(self.cam, resolution)
        self._crank = self._clean_crank
        self._cam = self._clean_cam
        self._ledger: list[LedgerEntry] = []

    @property
    def crank_table(self) -> WaveformTable:
        return self._crank

    @property
    def cam_table(self) -> WaveformTable:
        return self._cam

    def validate(self, fault: FaultSpec) -> None:
        _check_tooth_range(fault, self.wheel, self.cam)

    def apply(
        self,
        fault: FaultSpec,
        cycle: int | None = None,
        sample_index: int | None = None,
        t: float | None = None,
    ) -> LedgerEntry:
        """Apply a fault now and record it in the ledger."""
        self.validate(fault)
        if any(e.fault.id == fault.id for e in self._ledger):
            raise ScenarioError(f"fault id {fault.id!r} already active")
        seed = _resolve_seed(fault, self.base_seed)
        if fault.target_channel == CRANK:
            self._crank = apply_fault(self._crank, fault, seed=seed)
        else:
            self._cam = apply_fault(self._cam, fault, seed=seed)
        entry = LedgerEntry(fault, seed, cycle=cycle, sample_index=sample_index, t=t)
        self._ledger.append(entry)
        return entry

    def clear(self, fault_id: str) -> None:
        """Drop one fault and rebuild the tables from the remaining ledger."""
        remaining = [e for e in self._ledger if e.fault.id != fault_id]
        if len(remaining) == len(self._ledger):
            raise ScenarioError(f"unknown fault id {fault_id!r}")
        self._ledger = remaining
        self._rebuild()

    def clear_all(self) -> None:
        self._ledger = []
        self._rebuild()

    def active(self) -> tuple[LedgerEntry, ...]:
        return tuple(self._ledger)

    def _rebuild(self) -> None:
        crank, cam = self._clean_crank, self._clean_cam
        for e in self._ledger:
            if e.fault.target_channel == CRANK:
                crank = apply_fault(crank, e.fault, seed=e.seed)
            else:
                cam = apply_fault(cam, e.fault, seed=e.seed)
        self._crank, self._cam = crank, cam
