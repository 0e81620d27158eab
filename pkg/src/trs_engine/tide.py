"""Ocean elevation series: harmonic synthesis, CSV ingestion and calibration.

Series are stored as sampled absolute levels on their own vertical datum.
``datum_offset`` records the height of the series zero above the lowest
equinoctial low tide, so conversion to the tidal datum z used by the area
model is ``z = level + datum_offset``.  Operations that require pure
oscillations (the least-squares correction factor) remove the sample mean
explicitly.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

#: Periods of the common constituents, hours.
CONSTITUENT_PERIODS_H = {
    "M2": 12.4206012,
    "S2": 12.0,
    "N2": 12.65834751,
    "K2": 11.96723606,
    "K1": 23.93447213,
    "O1": 25.81933871,
}


@dataclass(frozen=True)
class HarmonicConstituent:
    """One cosine component of the tide: amplitude (m), period (h), phase (rad)."""

    amplitude_m: float
    period_h: float
    phase_rad: float = 0.0

    def __post_init__(self) -> None:
        if self.amplitude_m < 0:
            raise ValueError(f"amplitude must be >= 0, got {self.amplitude_m}")
        if self.period_h <= 0:
            raise ValueError(f"period must be > 0, got {self.period_h}")


@dataclass(frozen=True)
class TideSeries:
    """Uniformly sampled elevation record.

    ``levels_m`` are absolute levels on the series datum; ``datum_offset_m``
    converts them to the tidal datum (z = 0 at the lowest equinoctial low
    tide).  Instances are immutable and safe to share between parallel
    simulations.
    """

    start_time_s: float
    dt_s: float
    levels_m: np.ndarray = field(repr=False)
    datum_offset_m: float = 0.0

    def __post_init__(self) -> None:
        levels = np.asarray(self.levels_m, dtype=float)
        levels.setflags(write=False)
        object.__setattr__(self, "levels_m", levels)
        if self.dt_s <= 0:
            raise ValueError(f"dt must be > 0, got {self.dt_s}")
        if levels.ndim != 1 or levels.size == 0:
            raise ValueError("levels must be a non-empty 1-d sequence")
        if not np.all(np.isfinite(levels)):
            raise ValueError("levels must be finite")

    def __len__(self) -> int:
        return int(self.levels_m.size)

    @property
    def end_time_s(self) -> float:
        return self.start_time_s + (len(self) - 1) * self.dt_s

    @property
    def mean_level_m(self) -> float:
        return float(self.levels_m.mean())

    def times_s(self) -> np.ndarray:
        return self.start_time_s + self.dt_s * np.arange(len(self))

    def to_datum(self) -> np.ndarray:
        """Levels expressed on the tidal datum z."""
        return self.levels_m + self.datum_offset_m


def synthesize_tide(
    constituents: Sequence[HarmonicConstituent],
    mean_level_m: float,
    start_time_s: float,
    duration_s: float,
    dt_s: float,
    datum_offset_m: float = 0.0,
) -> TideSeries:
    """Sum-of-cosines elevation: mean + sum(a_i * cos(2*pi*t/T_i + phi_i)).

    The sample grid starts at ``start_time_s`` with phase argument t measured
    from the series start; ``duration_s`` must cover at least one step.
    """
    if dt_s <= 0:
        raise ValueError(f"dt must be > 0, got {dt_s}")
    if duration_s < dt_s:
        raise ValueError(f"duration {duration_s} s is shorter than one step {dt_s} s")
    n = int(math.floor(duration_s / dt_s)) + 1
    t = dt_s * np.arange(n)
    levels = np.full(n, float(mean_level_m))
    for c in constituents:
        omega = 2.0 * math.pi / (c.period_h * 3600.0)
        levels += c.amplitude_m * np.cos(omega * t + c.phase_rad)
    return TideSeries(start_time_s, dt_s, levels, datum_offset_m)


def calibrate_correction_factor(predicted: TideSeries, reference: TideSeries) -> float:
    """Least-squares scale between two series' oscillations about their means.

    Returns C_f = sum(o_pred * o_ref) / sum(o_pred^2) over all samples, the
    factor that minimises the RMS mismatch when the predicted oscillation is
    scaled onto the reference.
    """
    if len(predicted) != len(reference):
        raise ValueError("series must have equal length")
    if predicted.dt_s != reference.dt_s:
        raise ValueError("series must have equal dt")
    o_pred = predicted.levels_m - predicted.mean_level_m
    o_ref = reference.levels_m - reference.mean_level_m
    denom = float(np.dot(o_pred, o_pred))
    if denom == 0.0:
        raise ValueError("predicted series has no oscillation; scale is undefined")
    return float(np.dot(o_pred, o_ref) / denom)


def apply_correction(series: TideSeries, c_f: float) -> TideSeries:
    """Scale the oscillatory part of a series by C_f; the mean is untouched."""
    mean = series.mean_level_m
    levels = mean + c_f * (series.levels_m - mean)
    return TideSeries(series.start_time_s, series.dt_s, levels, series.datum_offset_m)


def level_at(series: TideSeries, t_s: float) -> float:
    """Elevation at time t by linear interpolation; exact at sample points."""
    if t_s < series.start_time_s or t_s > series.end_time_s:
        raise ValueError(
            f"t={t_s} outside series range [{series.start_time_s}, {series.end_time_s}]"
        )
    levels = series.levels_m
    if len(series) == 1:
        return float(levels[0])
    x = (t_s - series.start_time_s) / series.dt_s
    nearest = round(x)
    if abs(x - nearest) < 1e-9:  # snap to the grid so sample queries are exact
        return float(levels[int(nearest)])
    i = min(int(math.floor(x)), len(series) - 2)
    frac = x - i
    return float(levels[i] * (1.0 - frac) + levels[i + 1] * frac)


TIDE_CSV_HEADER = ["timestamp_s", "level_m"]

#: Relative jitter tolerated when inferring dt from timestamps (1 ppm).
_DT_JITTER = 1e-6


def ingest_tide_csv(path: str | Path, datum_offset_m: float = 0.0) -> TideSeries:
    """Read a `timestamp_s,level_m` CSV into a series, inferring dt.

    Timestamps must be strictly increasing and uniformly spaced to within
    1 ppm; the first offending row is named in the error.
    """
    times: list[float] = []
    levels: list[float] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != set(TIDE_CSV_HEADER):
            raise ValueError(f"{path}: expected header 'timestamp_s,level_m'")
        for i, row in enumerate(reader, start=2):
            try:
                times.append(float(row["timestamp_s"]))
                levels.append(float(row["level_m"]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: non-numeric value at row {i}") from exc
    if len(times) < 2:
        raise ValueError(f"{path}: need at least two samples")
    dt = times[1] - times[0]
    for i in range(1, len(times)):
        step = times[i] - times[i - 1]
        if step <= 0:
            raise ValueError(f"{path}: non-monotone timestamps at row {i + 2}")
        if abs(step - dt) > _DT_JITTER * dt:
            raise ValueError(
                f"{path}: irregular sampling at row {i + 2}: step {step} s, expected {dt} s"
            )
    return TideSeries(times[0], dt, np.array(levels), datum_offset_m)


def export_tide_csv(series: TideSeries, path: str | Path) -> None:
    """Write a series in the ingestion CSV contract (round-trips bit-exactly)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TIDE_CSV_HEADER)
        for t, level in zip(series.times_s(), series.levels_m):
            writer.writerow([repr(float(t)), repr(float(level))])
