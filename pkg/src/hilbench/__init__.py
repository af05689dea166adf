"""Software bench for engine ECU signal testing.

Synthesizes crank/cam position-sensor waveforms and auxiliary sensor
channels, injects scripted or live faults, streams the result at a
configured sample rate, and closes the loop with a virtual ECU decoder
that estimates RPM, checks crank-cam synchronization, raises fault codes,
and emits injection pulses.
"""

from hilbench.decoder import (
    DecoderConfig,
    EcuDiagnostics,
    InjectionEvent,
    VirtualEcu,
    capture_injection,
)
from hilbench.engine import (
    EngineState,
    FrameBatch,
    RunConfig,
    Simulator,
    WallClockRunner,
    advance,
    export_waveform,
    max_rpm,
)
from hilbench.faults import (
    FaultBench,
    FaultScript,
    FaultSpec,
    apply_fault,
    parse_scenario,
)
from hilbench.sensors import OperatingPoint, SensorBank, SensorTable
from hilbench.waveforms import (
    CamPatternSpec,
    CamPeak,
    ToothWheelSpec,
    WaveformTable,
    build_cam_table,
    build_crank_table,
    pulse_census,
    sample_at_angle,
)

__version__ = "0.1.0"

__all__ = [
    "CamPatternSpec",
    "CamPeak",
    "DecoderConfig",
    "EcuDiagnostics",
    "EngineState",
    "FaultBench",
    "FaultScript",
    "FaultSpec",
    "FrameBatch",
    "InjectionEvent",
    "OperatingPoint",
    "RunConfig",
    "SensorBank",
    "SensorTable",
    "Simulator",
    "ToothWheelSpec",
    "VirtualEcu",
    "WallClockRunner",
    "WaveformTable",
    "advance",
    "apply_fault",
    "build_cam_table",
    "build_crank_table",
    "capture_injection",
    "export_waveform",
    "max_rpm",
    "parse_scenario",
    "pulse_census",
    "sample_at_angle",
    "__version__",
]
