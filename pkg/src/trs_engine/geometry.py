"""Equivalent lagoon wetted area from stage-storage data.

A tidal basin is reduced to a level-dependent plan area ``Al(z)`` that is
linear in the tidal datum ``z`` (height above the lowest equinoctial low
tide).  Integrating the linear area law from 0 to z makes the stored volume
a quadratic in z with no constant term, so the two area coefficients can be
recovered from stage-storage point measurements by linear least squares.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class FitError(ValueError):
    """Raised when a calibration problem is rank deficient or empty."""


@dataclass(frozen=True)
class StageStoragePoint:
    """One stage-storage measurement: stored volume above datum at level z."""

    z_m: float
    delta_v_m3: float

    def __post_init__(self) -> None:
        if self.z_m < 0:
            raise ValueError(f"z must be >= 0, got {self.z_m}")


@dataclass(frozen=True)
class AreaModel:
    """Linear wetted-area law Al(z) = slope_2s * z + al0.

    ``slope_2s`` is twice the quadratic coefficient of the stored-volume
    polynomial; ``al0`` is the wetted area at z = 0.  Levels outside
    ``z_range`` are evaluated at the nearest boundary so the area never
    goes negative during transient excursions.
    """

    slope_2s: float
    al0: float
    z_range: tuple[float, float] = (0.0, 13.5)

    def __post_init__(self) -> None:
        if self.al0 <= 0:
            raise ValueError(f"al0 must be positive, got {self.al0}")
        lo, hi = self.z_range
        if self.slope_2s * lo + self.al0 <= 0 or self.slope_2s * hi + self.al0 <= 0:
            raise ValueError("area law is non-positive inside the operating range")


def fit_area_model(
    points: Sequence[StageStoragePoint],
    z_range: tuple[float, float] = (0.0, 13.5),
) -> AreaModel:
    """Least-squares fit of delta_v = s*z^2 + al0*z through the origin.

    At least two distinct nonzero z values are required; with fewer the two
    coefficients are not identifiable and :class:`FitError` is raised.
    """
    z = np.array([p.z_m for p in points], dtype=float)
    dv = np.array([p.delta_v_m3 for p in points], dtype=float)
    if len({zi for zi in z if zi > 0}) < 2:
        raise FitError("need at least two distinct nonzero z values")
    design = np.column_stack([z**2, z])
    coef, _, rank, _ = np.linalg.lstsq(design, dv, rcond=None)
    if rank < 2:
        raise FitError("rank-deficient stage-storage design")
    s, al0 = float(coef[0]), float(coef[1])
    return AreaModel(slope_2s=2.0 * s, al0=al0, z_range=z_range)


def area_at(model: AreaModel, z: float) -> float:
    """Wetted area at level z, clamped to the model's operating range."""
    lo, hi = model.z_range
    zc = min(max(z, lo), hi)
    return model.slope_2s * zc + model.al0


def volume_between(model: AreaModel, z1: float, z2: float) -> float:
    """Stored volume between two levels: s*(z2^2 - z1^2) + al0*(z2 - z1)."""
    s = model.slope_2s / 2.0
    return s * (z2**2 - z1**2) + model.al0 * (z2 - z1)


def load_stage_storage_csv(path: str | Path) -> list[StageStoragePoint]:
    """Read stage-storage points from a `z_m,delta_v_m3` CSV file."""
    points: list[StageStoragePoint] = []
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or set(reader.fieldnames) != {"z_m", "delta_v_m3"}:
            raise ValueError(f"{path}: expected header 'z_m,delta_v_m3'")
        for i, row in enumerate(reader, start=2):
            try:
                points.append(StageStoragePoint(float(row["z_m"]), float(row["delta_v_m3"])))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}: bad row {i}: {exc}") from exc
    if not points:
        raise ValueError(f"{path}: no data rows")
    return points


def save_stage_storage_csv(points: Iterable[StageStoragePoint], path: str | Path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["z_m", "delta_v_m3"])
        for p in points:
            writer.writerow([repr(p.z_m), repr(p.delta_v_m3)])
