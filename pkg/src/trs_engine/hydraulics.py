"""Steady-state and ramped flow/power laws for sluices, turbines and pumps.

Flow through open gates and idling turbines follows the orifice equation.
Generating turbines follow a quadratic efficiency-vs-head law capped at unit
capacity; pumps follow a characteristic quadratic at reference input power,
rescaled to any input power with the single-postulate affinity laws (flow
scales with the cube root of power, head with the two-thirds power).  All
transient opening/closing behaviour is modelled by a first-order exponential
ramp toward the steady-state value.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .geometry import AreaModel, FitError, area_at

#: Seawater density, kg/m^3.
RHO_SEAWATER = 1024.0
#: Gravitational acceleration, m/s^2.
GRAVITY = 9.81

#: Lower bound for the ramp time constant (minutes); gives 1e-6 residual
#: over a 15-minute opening.
ZETA_FLOOR_MIN = 1.091

#: Fitted ramp time constants (minutes) per regime.
ZETA_ACCEL_EBB_MIN = 14.2
ZETA_ACCEL_FLOOD_MIN = 11.257
ZETA_DECEL_EBB_MIN = 1.355
ZETA_DECEL_FLOOD_MIN = 1.091
ZETA_SLUICE_MIN = 1.091
ZETA_PUMP_MIN = 1.091


class Direction(str, Enum):
    EBB = "ebb"
    FLOOD = "flood"


@dataclass(frozen=True)
class PlantSpec:
    """Plant design constants.  Defaults are the La Rance barrage."""

    n_turbines: int = 24
    turbine_diameter_m: float = 5.35
    turbine_capacity_w: float = 10e6
    turbine_speed_rpm: float = 94.0
    sluice_area_m2: float = 900.0
    max_pump_head_m: float = 6.0
    max_turbine_flow_m3s: float = 280.0
    rho_kgm3: float = RHO_SEAWATER
    g_ms2: float = GRAVITY

    def __post_init__(self) -> None:
        for name in (
            "n_turbines", "turbine_diameter_m", "turbine_capacity_w",
            "turbine_speed_rpm", "sluice_area_m2", "max_pump_head_m",
            "max_turbine_flow_m3s", "rho_kgm3", "g_ms2",
        ):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @property
    def turbine_area_m2(self) -> float:
        return math.pi * (self.turbine_diameter_m / 2.0) ** 2


@dataclass(frozen=True)
class HillChart:
    """Quadratic turbine efficiency vs head for one generating direction.

    ``eff_coeffs`` are (c2, c1, c0) of efficiency = c2*h^2 + c1*h + c0,
    clamped to [0, 1].  No power is produced below ``h_min``; controllers
    wait for ``h_start`` before engaging.
    """

    direction: Direction
    eff_coeffs: tuple[float, float, float]
    h_min_m: float = 1.0
    h_start_m: float = 2.0

    def __post_init__(self) -> None:
        if self.h_min_m > self.h_start_m:
            raise ValueError("h_min must not exceed h_start")

    def efficiency(self, h_m: float) -> float:
        c2, c1, c0 = self.eff_coeffs
        return min(max(c2 * h_m * h_m + c1 * h_m + c0, 0.0), 1.0)


def ebb_hill_chart(h_min_m: float = 1.0, h_start_m: float = 2.0) -> HillChart:
    return HillChart(Direction.EBB, (-0.0144, 0.2417, 0.0981), h_min_m, h_start_m)


def flood_hill_chart(h_min_m: float = 1.0, h_start_m: float = 2.0) -> HillChart:
    return HillChart(Direction.FLOOD, (-0.01, 0.167, 0.0259), h_min_m, h_start_m)


@dataclass(frozen=True)
class PumpCurve:
    """Characteristic pump flow quadratic at reference input power.

    ``q = a*h_p^2 + b*h_p + q_m_ref`` for adverse heads h_p <= 0, clamped at
    zero.  ``h_s_ref`` is the declared shutoff head at reference power; the
    quadratic's own root sits within a few centimetres of it and negative
    evaluations between the two are clamped.  Affinity scaling maps the
    curve to any input power.
    """

    direction: Direction
    a: float
    b: float
    q_m_ref_m3s: float
    h_s_ref_m: float = -6.0
    p_ref_w: float = 6e6

    def __post_init__(self) -> None:
        if self.h_s_ref_m >= 0:
            raise ValueError("shutoff head must be negative")
        if self.q_m_ref_m3s <= 0 or self.p_ref_w <= 0:
            raise ValueError("reference flow and power must be positive")

    def max_flow_m3s(self, p_in_w: float) -> float:
        """Peak flow at zero head: q_m_ref * (p_in/p_ref)^(1/3)."""
        _check_power(p_in_w)
        return self.q_m_ref_m3s * (p_in_w / self.p_ref_w) ** (1.0 / 3.0)

    def shutoff_head_m(self, p_in_w: float) -> float:
        """Adverse head of zero flow: h_s_ref * (p_in/p_ref)^(2/3)."""
        _check_power(p_in_w)
        return self.h_s_ref_m * (p_in_w / self.p_ref_w) ** (2.0 / 3.0)


def ebb_pump_curve() -> PumpCurve:
    return PumpCurve(Direction.EBB, 1.6, 51.8, 252.2)


def flood_pump_curve() -> PumpCurve:
    return PumpCurve(Direction.FLOOD, -0.6, 32.4, 215.8)


@dataclass(frozen=True)
class DischargeCoefficients:
    """Orifice discharge coefficients for sluice gates and idling turbines."""

    cd_sluice: float = 1.0
    cd_turbine: float = 1.0

    def __post_init__(self) -> None:
        if not (1.0 <= self.cd_sluice <= 1.077):
            raise ValueError(f"cd_sluice {self.cd_sluice} outside [1, 1.077]")
        if not (0.91 <= self.cd_turbine <= 1.4):
            raise ValueError(f"cd_turbine {self.cd_turbine} outside [0.91, 1.4]")


CD_SLUICE_BOUNDS = (1.0, 1.077)
CD_TURBINE_BOUNDS = (0.91, 1.4)


class PumpSingularHead(ValueError):
    """Idealized pump flow diverges as the adverse head goes to zero."""


def _check_power(p_in_w: float) -> None:
    if p_in_w <= 0:
        raise ValueError(f"input power must be positive, got {p_in_w}")


def orifice_flow(cd: float, area_m2: float, h_m: float, g_ms2: float = GRAVITY) -> float:
    """Signed orifice flow cd*A*sqrt(2g|h|) in the direction of the head."""
    if area_m2 <= 0:
        raise ValueError(f"area must be positive, got {area_m2}")
    return math.copysign(cd * area_m2 * math.sqrt(2.0 * g_ms2 * abs(h_m)), h_m)


def turbine_flow_ss(
    chart: HillChart, spec: PlantSpec, cd_turbine: float, h_m: float
) -> float:
    """Per-unit steady generating flow: orifice flow capped at the flow limit."""
    if h_m < 0:
        raise ValueError("head must be expressed >= 0 in the chart's direction")
    q = orifice_flow(cd_turbine, spec.turbine_area_m2, h_m, spec.g_ms2)
    return min(q, spec.max_turbine_flow_m3s)


def turbine_power_ss(
    chart: HillChart, spec: PlantSpec, cd_turbine: float, h_m: float
) -> float:
    """Per-unit steady power: efficiency * rho*g*h*Q, capped at capacity.

    Zero below the minimum generating head.
    """
    if h_m < 0:
        raise ValueError("head must be expressed >= 0 in the chart's direction")
    if h_m < chart.h_min_m:
        return 0.0
    q = turbine_flow_ss(chart, spec, cd_turbine, h_m)
    p = chart.efficiency(h_m) * spec.rho_kgm3 * spec.g_ms2 * h_m * q
    return min(p, spec.turbine_capacity_w)


def pump_flow(
    curve: PumpCurve,
    h_p_m: float,
    p_in_w: float,
    max_flow_m3s: float = 280.0,
) -> float:
    """Pump flow against an adverse head h_p <= 0 at input power p_in.

    The adverse head is mapped to its reference-power equivalent with the
    affinity head law, the reference quadratic is evaluated there, and the
    result is scaled back with the flow law.  Zero at or beyond the scaled
    shutoff head; clamped to [0, max_flow].
    """
    _check_power(p_in_w)
    if h_p_m > 0:
        raise ValueError("pump_flow expects h_p <= 0; use pump_flow_positive_head")
    if h_p_m <= curve.shutoff_head_m(p_in_w):
        return 0.0
    r = curve.p_ref_w / p_in_w
    h_ref = h_p_m * r ** (2.0 / 3.0)
    q_ref = curve.a * h_ref * h_ref + curve.b * h_ref + curve.q_m_ref_m3s
    q = q_ref / r ** (1.0 / 3.0)
    return min(max(q, 0.0), max_flow_m3s)


def pump_flow_positive_head(
    curve: PumpCurve,
    spec: PlantSpec,
    cd_turbine: float,
    h_m: float,
    p_in_w: float,
) -> float:
    """Gravity-aided pumping: peak pump flow plus the orifice flow, capped."""
    _check_power(p_in_w)
    if h_m <= 0:
        raise ValueError("pump_flow_positive_head expects h > 0")
    q_grav = orifice_flow(cd_turbine, spec.turbine_area_m2, h_m, spec.g_ms2)
    return min(curve.max_flow_m3s(p_in_w) + q_grav, spec.max_turbine_flow_m3s)


def pump_power_out(
    q_p_m3s: float,
    h_p_m: float,
    rho_kgm3: float = RHO_SEAWATER,
    g_ms2: float = GRAVITY,
) -> float:
    """Hydraulic power delivered to the fluid: rho*g*Q*|h_p|."""
    return rho_kgm3 * g_ms2 * q_p_m3s * abs(h_p_m)


def idealized_pump_flow(
    eta_p: float,
    p_in_w: float,
    h_p_m: float,
    rho_kgm3: float = RHO_SEAWATER,
    g_ms2: float = GRAVITY,
) -> float:
    """Fixed-efficiency pump flow eta*P_in/(rho*g*|h_p|).

    Singular at h_p = 0, which is the documented failure of the idealized
    model (it admits no shutoff head and no peak flow).
    """
    if h_p_m == 0:
        raise PumpSingularHead("idealized pump flow is singular at h_p = 0")
    return eta_p * p_in_w / (rho_kgm3 * g_ms2 * abs(h_p_m))


# --------------------------------------------------------------------------
# Momentum ramp
# --------------------------------------------------------------------------


@dataclass
class RampState:
    """First-order ramp state: current value and time constant in minutes."""

    current: float = 0.0
    zeta_min: float = ZETA_FLOOR_MIN

    def __post_init__(self) -> None:
        if self.zeta_min < ZETA_FLOOR_MIN - 1e-12:
            raise ValueError(f"zeta {self.zeta_min} below floor {ZETA_FLOOR_MIN} min")


def ramp_step(state: RampState, target_ss: float, dt_s: float) -> RampState:
    """Advance one step: next = target + (current - target) * exp(-dt/zeta)."""
    factor = math.exp(-dt_s / (state.zeta_min * 60.0))
    return replace(state, current=target_ss + (state.current - target_ss) * factor)


def select_zeta(process: str, direction: Direction | str | None = None) -> float:
    """Ramp time constant (minutes) for a regime transition.

    Generation transitions depend on whether power is accelerating or
    decelerating and on the generating direction; sluicing, idling and
    pumping always use the floor value.
    """
    if process in ("sluicing", "idling", "pumping"):
        return ZETA_FLOOR_MIN
    if process not in ("accelerating", "decelerating"):
        raise ValueError(f"unknown ramp process {process!r}")
    if direction is None:
        raise ValueError("generation ramp needs a direction")
    direction = Direction(direction)
    if process == "accelerating":
        return ZETA_ACCEL_EBB_MIN if direction is Direction.EBB else ZETA_ACCEL_FLOOD_MIN
    return ZETA_DECEL_EBB_MIN if direction is Direction.EBB else ZETA_DECEL_FLOOD_MIN


# --------------------------------------------------------------------------
# Calibration of ramp constants and discharge coefficients
# --------------------------------------------------------------------------


@dataclass(frozen=True)
class RampCalibrationTrace:
    """Reference head/power record of one generating phase at uniform dt."""

    dt_s: float
    head_m: np.ndarray
    power_w: np.ndarray

    def __post_init__(self) -> None:
        head = np.asarray(self.head_m, dtype=float)
        power = np.asarray(self.power_w, dtype=float)
        object.__setattr__(self, "head_m", head)
        object.__setattr__(self, "power_w", power)
        if head.shape != power.shape or head.ndim != 1 or head.size < 2:
            raise ValueError("head and power must be equal-length 1-d series")
        if self.dt_s <= 0:
            raise ValueError("dt must be positive")


@dataclass(frozen=True)
class ZetaFit:
    zeta_accel_min: float
    zeta_decel_min: float
    ssr: float
    degenerate: bool = False


ZETA_SEARCH_BOUNDS_MIN = (ZETA_FLOOR_MIN, 60.0)


def predict_ramped_power(
    trace: RampCalibrationTrace,
    chart: HillChart,
    spec: PlantSpec,
    cd_turbine: float,
    zeta_accel_min: float,
    zeta_decel_min: float,
) -> np.ndarray:
    """Hill-chart power pushed through the ramp along a recorded head series.

    The accelerating constant applies whenever the steady-state target sits
    above the current ramped value, the decelerating one otherwise.
    """
    n = trace.head_m.size
    out = np.empty(n)
    out[0] = trace.power_w[0]
    for k in range(1, n):
        target = turbine_power_ss(chart, spec, cd_turbine, max(trace.head_m[k], 0.0))
        zeta = zeta_accel_min if target > out[k - 1] else zeta_decel_min
        factor = math.exp(-trace.dt_s / (zeta * 60.0))
        out[k] = target + (out[k - 1] - target) * factor
    return out


def calibrate_zeta(
    traces: RampCalibrationTrace | Sequence[RampCalibrationTrace],
    chart: HillChart,
    spec: PlantSpec | None = None,
    cd_turbine: float = 1.0,
    bounds_min: tuple[float, float] = ZETA_SEARCH_BOUNDS_MIN,
    tol: float = 1e-4,
) -> ZetaFit:
    """Fit (zeta_accel, zeta_decel) by minimising the power-prediction SSR.

    Coarse grid over the bounded box, then alternating golden-section
    refinement per coordinate.  A trace whose steady-state target never
    moves gives an SSR independent of zeta; the floor values are then
    returned with the degenerate flag set.
    """
    if isinstance(traces, RampCalibrationTrace):
        traces = [traces]
    if not traces:
        raise ValueError("no calibration traces given")
    spec = spec or PlantSpec()

    def ssr(zeta_a: float, zeta_d: float) -> float:
        total = 0.0
        for tr in traces:
            pred = predict_ramped_power(tr, chart, spec, cd_turbine, zeta_a, zeta_d)
            total += float(np.sum((tr.power_w - pred) ** 2))
        return total

    lo, hi = bounds_min
    grid = np.linspace(lo, hi, 12)
    values = np.array([[ssr(za, zd) for zd in grid] for za in grid])
    spread = values.max() - values.min()
    if spread <= tol * max(values.max(), 1.0):
        return ZetaFit(lo, lo, float(values.min()), degenerate=True)

    ia, id_ = np.unravel_index(np.argmin(values), values.shape)
    za, zd = float(grid[ia]), float(grid[id_])
    step = float(grid[1] - grid[0])
    for _ in range(3):
        za = _golden_min(lambda x: ssr(x, zd), max(lo, za - step), min(hi, za + step), tol)
        zd = _golden_min(lambda x: ssr(za, x), max(lo, zd - step), min(hi, zd + step), tol)
        step /= 2.0
    return ZetaFit(za, zd, ssr(za, zd))


@dataclass(frozen=True)
class SluicingTrace:
    """One observed sluicing stage: ocean and lagoon levels on the z datum.

    ``sluices_online`` and ``n_idling_turbines`` record which structures
    were passing water; traces with different mixes make the two discharge
    coefficients separately identifiable.
    """

    dt_s: float
    ocean_m: np.ndarray
    lagoon_m: np.ndarray
    sluices_online: bool = True
    n_idling_turbines: int = 24

    def __post_init__(self) -> None:
        ocean = np.asarray(self.ocean_m, dtype=float)
        lagoon = np.asarray(self.lagoon_m, dtype=float)
        object.__setattr__(self, "ocean_m", ocean)
        object.__setattr__(self, "lagoon_m", lagoon)
        if ocean.shape != lagoon.shape or ocean.ndim != 1 or ocean.size < 2:
            raise ValueError("ocean and lagoon must be equal-length 1-d series")
        if self.dt_s <= 0:
            raise ValueError("dt must be positive")

    @property
    def duration_s(self) -> float:
        return (self.ocean_m.size - 1) * self.dt_s


def simulate_sluicing_levels(
    trace: SluicingTrace,
    coeffs: DischargeCoefficients,
    area_model: AreaModel,
    spec: PlantSpec,
    zeta_min: float = ZETA_SLUICE_MIN,
) -> np.ndarray:
    """Predicted lagoon levels for one sluicing stage.

    Starts from the measured initial level; sluice and idling-turbine flows
    follow the orifice equation, ramped from rest with the sluicing time
    constant, and drive the mass-balance level update.
    """
    n = trace.ocean_m.size
    out = np.empty(n)
    out[0] = trace.lagoon_m[0]
    factor = math.exp(-trace.dt_s / (zeta_min * 60.0))
    q_sluice = 0.0
    q_idle = 0.0
    for k in range(1, n):
        h = trace.ocean_m[k - 1] - out[k - 1]
        bound_s = abs(orifice_flow(coeffs.cd_sluice, spec.sluice_area_m2, h, spec.g_ms2))
        target_s = math.copysign(bound_s, h) if trace.sluices_online else 0.0
        per_unit = orifice_flow(coeffs.cd_turbine, spec.turbine_area_m2, h, spec.g_ms2)
        per_unit = math.copysign(min(abs(per_unit), spec.max_turbine_flow_m3s), h)
        bound_i = trace.n_idling_turbines * abs(per_unit) if trace.n_idling_turbines else 0.0
        target_i = trace.n_idling_turbines * per_unit
        q_sluice = target_s + (q_sluice - target_s) * factor
        q_idle = target_i + (q_idle - target_i) * factor
        # ramp residuals cannot exceed what the prevailing head supports
        applied_s = math.copysign(min(abs(q_sluice), bound_s), q_sluice)
        applied_i = math.copysign(min(abs(q_idle), bound_i), q_idle) if bound_i else 0.0
        out[k] = out[k - 1] + (applied_s + applied_i) / area_at(area_model, out[k - 1]) * trace.dt_s
    return out


def sluicing_nssd(
    traces: Sequence[SluicingTrace],
    coeffs: DischargeCoefficients,
    area_model: AreaModel,
    spec: PlantSpec,
) -> float:
    """Time-normalised sum of squared level deviations over all stages."""
    total = 0.0
    for tr in traces:
        pred = simulate_sluicing_levels(tr, coeffs, area_model, spec)
        total += float(np.sum((pred - tr.lagoon_m) ** 2)) / tr.duration_s
    return total


def fit_discharge_coefficients(
    traces: Sequence[SluicingTrace],
    area_model: AreaModel,
    spec: PlantSpec,
    tol: float = 1e-4,
) -> DischargeCoefficients:
    """Minimise the sluicing NSSD over the bounded (cd_sluice, cd_turbine) box.

    Coarse grid then alternating golden-section refinement, as for the ramp
    constants.
    """
    if not traces:
        raise ValueError("no sluicing traces given")

    def nssd(cd_s: float, cd_t: float) -> float:
        return sluicing_nssd(traces, DischargeCoefficients(cd_s, cd_t), area_model, spec)

    (s_lo, s_hi), (t_lo, t_hi) = CD_SLUICE_BOUNDS, CD_TURBINE_BOUNDS
    grid_s = np.linspace(s_lo, s_hi, 9)
    grid_t = np.linspace(t_lo, t_hi, 9)
    values = np.array([[nssd(cs, ct) for ct in grid_t] for cs in grid_s])
    i_s, i_t = np.unravel_index(np.argmin(values), values.shape)
    cd_s, cd_t = float(grid_s[i_s]), float(grid_t[i_t])
    step_s = float(grid_s[1] - grid_s[0])
    step_t = float(grid_t[1] - grid_t[0])
    for _ in range(4):
        cd_s = _golden_min(
            lambda x: nssd(x, cd_t), max(s_lo, cd_s - step_s), min(s_hi, cd_s + step_s), tol
        )
        cd_t = _golden_min(
            lambda x: nssd(cd_s, x), max(t_lo, cd_t - step_t), min(t_hi, cd_t + step_t), tol
        )
        step_s /= 2.0
        step_t /= 2.0
    return DischargeCoefficients(cd_s, cd_t)


_INV_PHI = (math.sqrt(5.0) - 1.0) / 2.0


def _golden_min(f: Callable[[float], float], lo: float, hi: float, tol: float) -> float:
    """Golden-section minimum of a unimodal objective on [lo, hi]."""
    a, b = lo, hi
    c = b - _INV_PHI * (b - a)
    d = a + _INV_PHI * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - _INV_PHI * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + _INV_PHI * (b - a)
            fd = f(d)
    return (a + b) / 2.0
