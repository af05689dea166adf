"""File formats for waveform tables and sample streams.

Two binary layouts, both little-endian:

* table files ("SLC1"): u32 channel count, f64 resolution in deg/sample,
  u64 sample count, then sample-major interleaved f32 samples.
* stream files ("SLR1"): u32 channel count, f64 sample rate in Hz, then
  sample-major interleaved f32 frames until EOF.

CSV counterparts carry one header row and one row per sample.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

TABLE_MAGIC = b"SLC1"
STREAM_MAGIC = b"SLR1"

TABLE_CSV_HEADER = "angle_deg,crank_v,cam_v"
STREAM_CSV_HEADER = (
    "t_s,angle_deg,crank_v,cam_v,throttle_v,oil_p_v,boost_p_v,rail_p_v,"
    "coolant_t_v,boost_t_v"
)
# stream binary channel order: the CSV columns minus t_s (t = k / sample_rate)
STREAM_CHANNELS = tuple(STREAM_CSV_HEADER.split(",")[1:])


class FormatError(ValueError):
    """Malformed or unrecognized waveform file."""


def write_table_csv(path, crank_table, cam_table) -> None:
    """Write paired crank/cam tables as angle_deg,crank_v,cam_v rows."""
    if crank_table.n != cam_table.n or crank_table.resolution != cam_table.resolution:
        raise FormatError("crank and cam tables must share resolution")
    angles = np.arange(crank_table.n) * crank_table.resolution
    with open(path, "w") as f:
        f.write(TABLE_CSV_HEADER + "\n")
        for a, cr, ca in zip(angles, crank_table.samples, cam_table.samples):
            f.write(f"{a:.6f},{cr:.9g},{ca:.9g}\n")


def write_table_raw(path, tables) -> None:
    """Write one or more equal-length tables as an SLC1 file."""
    tables = list(tables)
    n = tables[0].n
    res = tables[0].resolution
    for t in tables:
        if t.n != n or t.resolution != res:
            raise FormatError("all tables must share resolution")
    data = np.empty((n, len(tables)), dtype="<f4")
    for j, t in enumerate(tables):
        data[:, j] = t.samples
    with open(path, "wb") as f:
        f.write(TABLE_MAGIC)
        f.write(struct.pack("<IdQ", len(tables), res, n))
        f.write(data.tobytes())


def read_table_raw(path) -> tuple[float, list[np.ndarray]]:
    """Read an SLC1 file; returns (resolution_deg, [channel arrays as f32])."""
    raw = Path(path).read_bytes()
    if raw[:4] != TABLE_MAGIC:
        raise FormatError(f"{path}: not a table file (bad magic)")
    nchan, res, n = struct.unpack_from("<IdQ", raw, 4)
    payload = raw[4 + struct.calcsize("<IdQ"):]
    if len(payload) != 4 * nchan * n:
        raise FormatError(f"{path}: truncated table body")
    body = np.frombuffer(payload, dtype="<f4")
    data = body.reshape(n, nchan)
    return res, [data[:, j].copy() for j in range(nchan)]


class CsvStreamWriter:
    """Streams frames to CSV with the standard 10-column header."""

    def __init__(self, path, sample_rate: float):
        self._f = open(path, "w")
        self._dt = 1.0 / sample_rate
        self._f.write(STREAM_CSV_HEADER + "\n")

    def write_frame(self, frame) -> None:
        dt = self._dt
        t0 = frame.t0
        rows = np.column_stack(
            [frame.angles, frame.crank, frame.cam, frame.sensors.T]
        )
        lines = []
        for k in range(frame.n):
            t = t0 + (k + 1) * dt
            vals = ",".join(f"{v:.9g}" for v in rows[k])
            lines.append(f"{t:.9f},{vals}")
        self._f.write("\n".join(lines) + "\n")

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class RawStreamWriter:
    """Streams frames to an SLR1 binary file (9 interleaved f32 channels)."""

    def __init__(self, path, sample_rate: float):
        self._f = open(path, "wb")
        self._f.write(STREAM_MAGIC)
        self._f.write(struct.pack("<Id", len(STREAM_CHANNELS), sample_rate))

    def write_frame(self, frame) -> None:
        block = np.empty((frame.n, len(STREAM_CHANNELS)), dtype="<f4")
        block[:, 0] = frame.angles
        block[:, 1] = frame.crank
        block[:, 2] = frame.cam
        block[:, 3:] = frame.sensors.T
        self._f.write(block.tobytes())

    def close(self) -> None:
        self._f.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def read_raw_stream(path) -> tuple[float, np.ndarray]:
    """Read an SLR1 file; returns (sample_rate, samples[n, channels])."""
    raw = Path(path).read_bytes()
    if raw[:4] != STREAM_MAGIC:
        raise FormatError(f"{path}: not a stream file (bad magic)")
    nchan, rate = struct.unpack_from("<Id", raw, 4)
    payload = raw[4 + struct.calcsize("<Id"):]
    if nchan == 0 or len(payload) % (4 * nchan):
        raise FormatError(f"{path}: truncated stream body")
    body = np.frombuffer(payload, dtype="<f4")
    return rate, body.reshape(-1, nchan)


def read_csv_stream(path) -> tuple[float, np.ndarray]:
    """Read a stream CSV; returns (sample_rate, samples[n, channels]).

    The returned columns match STREAM_CHANNELS (t_s is consumed to infer
    the sample rate and then dropped).
    """
    with open(path) as f:
        header = f.readline().strip()
    if header != STREAM_CSV_HEADER:
        raise FormatError(f"{path}: unexpected CSV header")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2:
        raise FormatError(f"{path}: need at least 2 samples to infer rate")
    dt = float(np.median(np.diff(data[:, 0])))
    return 1.0 / dt, data[:, 1:]
