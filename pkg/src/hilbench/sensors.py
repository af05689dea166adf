"""Auxiliary sensor channels simulated as voltage lookup tables.

Six channels ride alongside the crank/cam signals: throttle position, oil
pressure, boost pressure, rail pressure, coolant temperature and boost
temperature. Each is a piecewise-linear table from engineering units to
volts, driven by an operator-set operating point. Inputs outside a table's
span clamp to the end values.

The shipped default tables are plausible automotive placeholders, not
calibrations; every table can be replaced from a two-column CSV
(`input,output_volts`).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

THROTTLE = "throttle_position"
OIL_PRESSURE = "oil_pressure"
BOOST_PRESSURE = "boost_pressure"
RAIL_PRESSURE = "rail_pressure"
COOLANT_TEMP = "coolant_temperature"
BOOST_TEMP = "boost_temperature"

SENSOR_IDS = (THROTTLE, OIL_PRESSURE, BOOST_PRESSURE, RAIL_PRESSURE,
              COOLANT_TEMP, BOOST_TEMP)


class SensorError(ValueError):
    """Invalid sensor table or operating point."""


@dataclass(frozen=True)
class SensorTable:
    """Piecewise-linear map from engineering units to sensor volts."""

    sensor_id: str
    points: tuple[tuple[float, float], ...]
    units: str = ""
    v_min: float = 0.0
    v_max: float = 5.0

    def __post_init__(self) -> None:
        if self.sensor_id not in SENSOR_IDS:
            raise SensorError(f"unknown sensor id {self.sensor_id!r}")
        pts = tuple((float(x), float(v)) for x, v in self.points)
        object.__setattr__(self, "points", pts)
        if len(pts) < 2:
            raise SensorError(f"{self.sensor_id}: need at least 2 points")
        xs = [p[0] for p in pts]
        if any(b <= a for a, b in zip(xs, xs[1:])):
            raise SensorError(f"{self.sensor_id}: inputs must be strictly increasing")
        for _, v in pts:
            if not self.v_min <= v <= self.v_max:
                raise SensorError(
                    f"{self.sensor_id}: output {v} V outside "
                    f"[{self.v_min}, {self.v_max}] V"
                )

    def read(self, value: float) -> float:
        """Interpolated voltage; clamps outside the input span."""
        xs = np.array([p[0] for p in self.points])
        vs = np.array([p[1] for p in self.points])
        return float(np.interp(value, xs, vs))


def default_tables() -> dict[str, SensorTable]:
    """Placeholder tables with plausible automotive spans."""
    return {
        THROTTLE: SensorTable(THROTTLE, ((0.0, 0.5), (100.0, 4.5)), units="%"),
        OIL_PRESSURE: SensorTable(
            OIL_PRESSURE, ((0.0, 0.5), (10.0, 4.5)), units="bar"
        ),
        BOOST_PRESSURE: SensorTable(
            BOOST_PRESSURE, ((0.0, 0.4), (3.0, 4.6)), units="bar"
        ),
        RAIL_PRESSURE: SensorTable(
            RAIL_PRESSURE, ((0.0, 0.5), (1600.0, 4.5)), units="bar"
        ),
        # NTC-shaped: high voltage cold, low voltage hot
        COOLANT_TEMP: SensorTable(
            COOLANT_TEMP,
            ((-40.0, 4.8), (0.0, 4.2), (40.0, 3.0), (80.0, 1.5),
             (100.0, 0.9), (130.0, 0.3)),
            units="degC",
        ),
        BOOST_TEMP: SensorTable(
            BOOST_TEMP,
            ((-40.0, 4.7), (0.0, 4.0), (50.0, 2.4), (100.0, 1.1), (150.0, 0.4)),
            units="degC",
        ),
    }


@dataclass(frozen=True)
class OperatingPoint:
    """One value per sensor channel, in that sensor's engineering units."""

    throttle_position: float = 20.0
    oil_pressure: float = 3.0
    boost_pressure: float = 1.2
    rail_pressure: float = 600.0
    coolant_temperature: float = 85.0
    boost_temperature: float = 40.0

    def __post_init__(self) -> None:
        for f in fields(self):
            v = getattr(self, f.name)
            if not math.isfinite(v):
                raise SensorError(f"{f.name} must be finite, got {v}")

    def value_for(self, sensor_id: str) -> float:
        return getattr(self, sensor_id)


class SensorBank:
    """Holds the six sensor tables and the current operating point.

    Operating-point changes swap one immutable object, so a whole new set
    of six voltages takes effect atomically at the next sample.
    """

    def __init__(self, tables: dict[str, SensorTable] | None = None,
                 operating_point: OperatingPoint | None = None):
        self._tables: dict[str, SensorTable] = dict(
            default_tables() if tables is None else tables
        )
        self._op = operating_point or OperatingPoint()

    @property
    def operating_point(self) -> OperatingPoint:
        return self._op

    def load_table(self, sensor_id: str, points) -> SensorTable:
        """Install a new table for one sensor, replacing any prior table."""
        table = SensorTable(sensor_id, tuple(points))
        self._tables[sensor_id] = table
        return table

    def load_table_csv(self, sensor_id: str, path) -> SensorTable:
        """Load `input,output_volts` rows for one sensor."""
        points = []
        with open(path) as f:
            header = f.readline().strip()
            if header != "input,output_volts":
                raise SensorError(f"{path}: expected 'input,output_volts' header")
            for line in f:
                line = line.strip()
                if not line:
                    continue
                x, v = line.split(",")
                points.append((float(x), float(v)))
        return self.load_table(sensor_id, points)

    def read_sensor(self, sensor_id: str, value: float) -> float:
        if sensor_id not in self._tables:
            raise SensorError(f"no table loaded for {sensor_id!r}")
        return self._tables[sensor_id].read(value)

    def set_operating_point(self, op: OperatingPoint) -> None:
        self._op = op

    def voltages(self) -> np.ndarray:
        """Current voltage of every channel, in SENSOR_IDS order."""
        op = self._op
        return np.array(
            [self._tables[sid].read(op.value_for(sid)) for sid in SENSOR_IDS]
        )
