"""Batch entry points: waveform generation, decode analysis, rate budgets.

Every subcommand prints a machine-parseable JSON report to stdout and
exits nonzero on any error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from hilbench.decoder import DecoderConfig, VirtualEcu, capture_injection
from hilbench.engine import (
    FrameBatch,
    RpmLimitError,
    RunConfig,
    Simulator,
    export_waveform,
    max_rpm,
)
from hilbench.faults import ScenarioError, parse_scenario
from hilbench.sensors import SENSOR_IDS, SensorBank, SensorError
from hilbench.waveio import (
    STREAM_CHANNELS,
    FormatError,
    read_csv_stream,
    read_raw_stream,
)


class CliError(Exception):
    """Fatal command error with a clean message."""


def _add_common_gen_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--rate", type=float, default=48_000.0, help="sample rate, Hz")
    p.add_argument("--rpm", type=float, default=2000.0, help="engine speed")
    p.add_argument("--scenario", type=Path, help="fault scenario JSON file")
    p.add_argument("--platform-limit", type=float, dest="platform_limit",
                   metavar="HZ", help="emulate a platform sampling-rate limit")
    p.add_argument("--seed", type=int, default=0,
                   help="base seed for faults without an explicit seed")
    p.add_argument("--sensor-table", action="append", default=[],
                   metavar="ID=PATH", help="replace one sensor table from CSV")


def _build_sim(args, mode: str = "simulated_time") -> Simulator:
    config = RunConfig(
        sample_rate=args.rate,
        mode=mode,
        platform_limit_hz=args.platform_limit,
        base_seed=args.seed,
    )
    sensors = SensorBank()
    for item in args.sensor_table:
        if "=" not in item:
            raise CliError(f"--sensor-table expects ID=PATH, got {item!r}")
        sid, path = item.split("=", 1)
        if sid not in SENSOR_IDS:
            raise CliError(f"unknown sensor id {sid!r}")
        sensors.load_table_csv(sid, path)
    sim = Simulator(config, sensors=sensors)
    sim.set_rpm(args.rpm)
    if args.scenario:
        text = Path(args.scenario).read_text()
        script = parse_scenario(text, sim.bench.wheel, sim.bench.cam)
        sim.load_scenario(script)
    return sim


def cmd_gen(args) -> int:
    fmt = "bin" if args.format == "bin" else "csv"
    if args.mode == "rt":
        report = _gen_realtime(args, fmt)
    else:
        sim = _build_sim(args)
        report = export_waveform(sim, args.duration, args.out, fmt)
    report["out"] = str(args.out)
    print(json.dumps(report, indent=2))
    return 0


def _gen_realtime(args, fmt: str) -> dict:
    """Paced generation through the wall-clock runner (same file contents)."""
    from hilbench.engine import WallClockRunner
    from hilbench import waveio

    sim = _build_sim(args, mode="wall_clock")
    runner = WallClockRunner(sim)
    writer_cls = waveio.RawStreamWriter if fmt == "bin" else waveio.CsvStreamWriter
    written = 0
    runner.start()
    try:
        with writer_cls(args.out, sim.config.sample_rate) as writer:
            for frame in runner.frames(args.duration):
                writer.write_frame(frame)
                written += frame.n
    finally:
        runner.stop()
    return {
        "samples": written,
        "sample_rate": sim.config.sample_rate,
        "duration_s": args.duration,
        "format": fmt,
        "mode": "rt",
        "underruns": runner.underruns,
        "rpm_commanded": sim.state.rpm_commanded,
        "faults": [e.describe() for e in sim.active_faults()],
    }


def _frames_from_file(path: Path, frame_size: int):
    """Load a stream file and re-frame it for the decoder."""
    raw = Path(path).read_bytes()[:4]
    if raw == b"SLR1":
        rate, data = read_raw_stream(path)
    else:
        rate, data = read_csv_stream(path)
    if len(data) == 0:
        raise CliError(f"{path}: empty stream")
    angles = data[:, 0].astype(np.float64)
    crank = data[:, 1].astype(np.float64)
    cam = data[:, 2].astype(np.float64)
    sensors = data[:, 3:9].astype(np.float64).T
    frames = []
    for seq, lo in enumerate(range(0, len(data), frame_size)):
        hi = min(lo + frame_size, len(data))
        frames.append(FrameBatch(
            seq=seq,
            t0=lo / rate,
            n=hi - lo,
            sample_rate=rate,
            angle0=float(angles[lo - 1]) if lo else 0.0,
            angles=angles[lo:hi],
            crank=crank[lo:hi],
            cam=cam[lo:hi],
            sensors=np.ascontiguousarray(sensors[:, lo:hi]),
        ))
    return rate, angles, frames


def cmd_decode(args) -> int:
    rate, angles, frames = _frames_from_file(args.input, args.frame_size)
    ecu = VirtualEcu(DecoderConfig())
    blocks = [ecu.feed(f) for f in frames]
    report = ecu.report()
    events, malformed = capture_injection(
        np.concatenate(blocks, axis=1), angles, rate
    )
    report["injection_capture"] = {
        "captured": len(events),
        "malformed": len(malformed),
        "emitted": len(ecu.emitted_events),
    }
    report["input"] = str(args.input)
    report["sample_rate"] = rate
    print(json.dumps(report, indent=2))
    return 0


def cmd_maxrpm(args) -> int:
    rows = [
        {"sample_rate_hz": r,
         "max_rpm": max_rpm(r, args.min_samples, args.teeth)}
        for r in args.rate
    ]
    print(json.dumps({
        "samples_per_tooth_min": args.min_samples,
        "teeth_per_rev": args.teeth,
        "table": rows,
    }, indent=2))
    return 0


def cmd_scenario_check(args) -> int:
    text = Path(args.input).read_text()
    script = parse_scenario(text)
    print(json.dumps({
        "ok": True,
        "faults": len(script.faults),
        "ids": [f.id for f in script.faults],
    }, indent=2))
    return 0


def cmd_serve(args) -> int:
    from hilbench.service import RigService, serve

    sim_args = args
    config = RunConfig(
        sample_rate=args.rate,
        mode="wall_clock",
        platform_limit_hz=args.platform_limit,
        frame_size=args.frame_size,
        base_seed=args.seed,
    )
    scenario = None
    if args.scenario:
        scenario = parse_scenario(Path(args.scenario).read_text())
    sensors = SensorBank()
    for item in sim_args.sensor_table:
        sid, path = item.split("=", 1)
        sensors.load_table_csv(sid, path)
    service = RigService(
        config=config,
        initial_rpm=args.rpm,
        scenario=scenario,
        sensors=sensors,
    )
    print(json.dumps({"serving": f"http://{args.host}:{args.port}",
                      "ws": f"ws://{args.host}:{args.port}/ws"}), flush=True)
    serve(service, host=args.host, port=args.port)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="hilbench",
        description="engine crank/cam signal bench with fault injection "
                    "and a virtual ECU decoder",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a waveform stream file")
    _add_common_gen_flags(p)
    p.add_argument("--duration", type=float, default=1.0, help="seconds")
    p.add_argument("--mode", choices=("sim", "rt"), default="sim")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--format", choices=("csv", "bin"), default="csv")
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("decode", help="run the virtual ECU over a stream file")
    p.add_argument("input", type=Path)
    p.add_argument("--frame-size", type=int, default=1024)
    p.set_defaults(fn=cmd_decode)

    p = sub.add_parser("maxrpm", help="sampling-rate speed budget table")
    p.add_argument("--rate", type=float, action="append", required=True,
                   help="sample rate in Hz (repeatable)")
    p.add_argument("--min-samples", type=int, default=4,
                   help="minimum samples per tooth")
    p.add_argument("--teeth", type=int, default=60)
    p.set_defaults(fn=cmd_maxrpm)

    p = sub.add_parser("scenario-check", help="validate a fault scenario file")
    p.add_argument("input", type=Path)
    p.set_defaults(fn=cmd_scenario_check)

    p = sub.add_parser("serve", help="run the control/telemetry service")
    _add_common_gen_flags(p)
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8780)
    p.add_argument("--frame-size", type=int, default=1024)
    p.set_defaults(fn=cmd_serve)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (CliError, ScenarioError, FormatError, SensorError, RpmLimitError,
            FileNotFoundError, ValueError) as e:
        print(json.dumps({"error": str(e)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
