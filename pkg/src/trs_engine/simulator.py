"""0D plant simulation: mass balance, operational modes and trace recording.

The lagoon is a single storage node advanced by an explicit first-order
update ``L <- L + Q_T/Al(L) * dt`` where ``Q_T`` aggregates the signed flows
of every hydraulic structure.  Flows are positive into the lagoon: flood
generation, sluicing under positive head and ebb-oriented pumping fill it;
ebb generation and flood-oriented pumping drain it.

Each structure family owns a first-order ramp channel.  A mode command
retargets the channels; outgoing quantities decay to zero with their
decelerating constant while the incoming quantity rises, so flows never
jump across a mode switch.  Generation ramps power and derives flow from
it; sluicing, idling and pumping ramp flow (the pump drive power is ramped
alongside so electrical input is continuous too).  Generator power and pump
input power are mutually exclusive: the incoming one engages only once the
outgoing one has fully decayed.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from enum import IntEnum
from pathlib import Path
from typing import Callable, Iterable

from .geometry import AreaModel, StageStoragePoint, area_at, fit_area_model
from .hydraulics import (
    DischargeCoefficients,
    Direction,
    HillChart,
    PlantSpec,
    PumpCurve,
    RampState,
    ZETA_PUMP_MIN,
    ZETA_SLUICE_MIN,
    ebb_hill_chart,
    ebb_pump_curve,
    flood_hill_chart,
    flood_pump_curve,
    orifice_flow,
    pump_flow,
    pump_flow_positive_head,
    ramp_step,
    select_zeta,
    turbine_power_ss,
)
from .tide import TideSeries, level_at

#: Ramped values with a zero target snap to exactly zero below these, so
#: the generator/pump exclusivity gate can open within a few time constants.
POWER_SNAP_W = 100.0
FLOW_SNAP_M3S = 1e-3

#: Lagoon level guard band on the tidal datum, metres.
LEVEL_GUARD_M = (-0.5, 14.0)

#: Per-unit pump drive limit, watts.
PUMP_SETTING_MAX_W = 4e6


class SimulationError(RuntimeError):
    pass


class TurbineMode(IntEnum):
    OFFLINE = 0
    EBB_GENERATION = 1
    FLOOD_GENERATION = 2
    IDLING = 3
    PUMPING = 4


class SluiceMode(IntEnum):
    OFFLINE = 0
    ONLINE = 1


GENERATING_MODES = (TurbineMode.EBB_GENERATION, TurbineMode.FLOOD_GENERATION)


@dataclass(frozen=True)
class OperationalMode:
    """A joint command for the turbine bank, sluices and pump drive."""

    turbine_mode: TurbineMode = TurbineMode.OFFLINE
    sluice_mode: SluiceMode = SluiceMode.OFFLINE
    pump_setting_w: float = 0.0

    def __post_init__(self) -> None:
        if self.pump_setting_w < 0 or self.pump_setting_w > PUMP_SETTING_MAX_W:
            raise ValueError(
                f"pump setting {self.pump_setting_w} W outside [0, {PUMP_SETTING_MAX_W}]"
            )
        if self.pump_setting_w > 0 and self.turbine_mode is not TurbineMode.PUMPING:
            raise ValueError("pump setting requires turbine mode Pumping")
        if self.turbine_mode is TurbineMode.PUMPING and self.pump_setting_w <= 0:
            raise ValueError("Pumping mode requires a positive pump setting")


OFFLINE_MODE = OperationalMode()


@dataclass(frozen=True)
class PlantBundle:
    """Everything the plant step needs: design spec, laws and geometry."""

    spec: PlantSpec
    ebb_chart: HillChart
    flood_chart: HillChart
    ebb_pump: PumpCurve
    flood_pump: PumpCurve
    coeffs: DischargeCoefficients
    area_model: AreaModel

    def chart(self, direction: Direction) -> HillChart:
        return self.ebb_chart if direction is Direction.EBB else self.flood_chart

    def pump_curve(self, direction: Direction) -> PumpCurve:
        return self.ebb_pump if direction is Direction.EBB else self.flood_pump


#: Stage-storage measurements for the La Rance estuary (z datum, m / m^3).
LA_RANCE_STAGE_STORAGE = (
    StageStoragePoint(0.0, 0.0),
    StageStoragePoint(5.0, 65e6),
    StageStoragePoint(8.5, 110e6),
    StageStoragePoint(10.9, 150e6),
    StageStoragePoint(13.5, 184e6),
)


def la_rance_bundle(
    h_min_m: float = 1.0,
    h_start_m: float = 2.0,
    coeffs: DischargeCoefficients | None = None,
    area_model: AreaModel | None = None,
    spec: PlantSpec | None = None,
) -> PlantBundle:
    """Default plant bundle built from the published La Rance constants."""
    return PlantBundle(
        spec=spec or PlantSpec(),
        ebb_chart=ebb_hill_chart(h_min_m, h_start_m),
        flood_chart=flood_hill_chart(h_min_m, h_start_m),
        ebb_pump=ebb_pump_curve(),
        flood_pump=flood_pump_curve(),
        coeffs=coeffs or DischargeCoefficients(1.0, 1.0),
        area_model=area_model or fit_area_model(LA_RANCE_STAGE_STORAGE),
    )


def _pump_ramp() -> RampState:
    return RampState(zeta_min=ZETA_PUMP_MIN)


@dataclass(frozen=True)
class PlantState:
    """Plant state between steps.  step() returns a fresh instance, so
    independent rollouts share nothing mutable."""

    lagoon_level_m: float
    time_s: float
    mode: OperationalMode = OFFLINE_MODE
    gen_power: RampState = field(default_factory=RampState)
    gen_direction: Direction | None = None
    idle_flow: RampState = field(default_factory=RampState)
    sluice_flow: RampState = field(default_factory=RampState)
    pump_flow_mag: RampState = field(default_factory=_pump_ramp)
    pump_power_in: RampState = field(default_factory=_pump_ramp)
    pump_direction: Direction | None = None
    last_gen_direction: Direction | None = None
    clamp_events: int = 0


@dataclass(frozen=True)
class StepRecord:
    """Snapshot at a sample instant plus the flows of the elapsed step."""

    time_s: float
    ocean_m: float
    lagoon_m: float
    head_m: float
    turbine_mode: TurbineMode
    sluice_mode: SluiceMode
    q_turbine_m3s: float
    q_sluice_m3s: float
    p_gen_w: float
    p_pump_in_w: float

    @property
    def q_total_m3s(self) -> float:
        return self.q_turbine_m3s + self.q_sluice_m3s


class Trace:
    """Ordered step records at fixed dt."""

    def __init__(self, records: Iterable[StepRecord] = (), dt_s: float | None = None):
        self.records: list[StepRecord] = []
        self.dt_s = dt_s
        for record in records:
            self.append(record)

    def append(self, record: StepRecord) -> None:
        if self.records:
            prev = self.records[-1]
            step_s = record.time_s - prev.time_s
            if step_s <= 0:
                raise ValueError(
                    f"trace times must increase: {prev.time_s} -> {record.time_s}"
                )
            if self.dt_s is None:
                self.dt_s = step_s
            elif abs(step_s - self.dt_s) > 1e-6 * self.dt_s:
                raise ValueError(f"trace spacing {step_s} differs from dt {self.dt_s}")
        self.records.append(record)

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def __getitem__(self, idx):
        return self.records[idx]


@dataclass(frozen=True)
class ObservableState:
    """What a controller may see: current and previous levels and commands,
    plus the raw head.  Nothing about future forcing."""

    time_s: float
    ocean_m: float
    ocean_prev_m: float
    lagoon_m: float
    lagoon_prev_m: float
    head_m: float
    mode: OperationalMode
    mode_prev: OperationalMode


Controller = Callable[[ObservableState], OperationalMode]


def _direction_head(direction: Direction, ocean_m: float, lagoon_m: float) -> float:
    """Head in a generating direction's own convention (>= 0 when usable)."""
    if direction is Direction.EBB:
        return lagoon_m - ocean_m
    return ocean_m - lagoon_m


def _snap(state: RampState, target: float, threshold: float) -> RampState:
    if target == 0.0 and abs(state.current) < threshold:
        return replace(state, current=0.0)
    return state


def step(
    state: PlantState,
    ocean_level_m: float,
    action: OperationalMode,
    dt_s: float,
    bundle: PlantBundle,
    ocean_next_m: float | None = None,
) -> tuple[PlantState, StepRecord]:
    """Advance the plant one step under the given ocean level and command.

    ``ocean_level_m`` is the forcing over the step (it drives every flow
    law); ``ocean_next_m``, when given, is the level at the end of the step
    and is what the emitted record snapshots alongside the updated lagoon.
    """
    if dt_s <= 0:
        raise ValueError(f"dt must be positive, got {dt_s}")
    if not (math.isfinite(ocean_level_m) and math.isfinite(state.lagoon_level_m)):
        raise ValueError("non-finite ocean or lagoon level")
    spec = bundle.spec
    lagoon = state.lagoon_level_m
    h = ocean_level_m - lagoon
    n = spec.n_turbines

    tm, sm = action.turbine_mode, action.sluice_mode

    pump_stopped = state.pump_power_in.current == 0.0 and state.pump_flow_mag.current == 0.0
    gen_stopped = state.gen_power.current == 0.0

    # Generation power channel (total watts). Engages only with the pump
    # fully stopped; a direction reversal first decays the old direction.
    gen_dir = state.gen_direction
    gen_target = 0.0
    if tm in GENERATING_MODES and pump_stopped:
        want = Direction.EBB if tm is TurbineMode.EBB_GENERATION else Direction.FLOOD
        if gen_stopped or gen_dir == want:
            gen_dir = want
            h_dir = _direction_head(want, ocean_level_m, lagoon)
            if h_dir > 0:
                chart = bundle.chart(want)
                gen_target = n * turbine_power_ss(
                    chart, spec, bundle.coeffs.cd_turbine, h_dir
                )
    if gen_dir is None:
        zeta_gen = ZETA_SLUICE_MIN
    else:
        process = "accelerating" if gen_target > state.gen_power.current else "decelerating"
        zeta_gen = select_zeta(process, gen_dir)
    gen_power = ramp_step(RampState(state.gen_power.current, zeta_gen), gen_target, dt_s)
    gen_power = _snap(gen_power, gen_target, POWER_SNAP_W)
    last_gen = gen_dir if gen_dir is not None else state.last_gen_direction
    if gen_power.current == 0.0 and gen_target == 0.0:
        gen_dir = None

    # Idling flow channel (signed total m^3/s through the turbine passages).
    idle_target = 0.0
    if tm is TurbineMode.IDLING:
        per_unit = orifice_flow(bundle.coeffs.cd_turbine, spec.turbine_area_m2, h, spec.g_ms2)
        per_unit = math.copysign(min(abs(per_unit), spec.max_turbine_flow_m3s), h)
        idle_target = n * per_unit
    idle_flow = ramp_step(RampState(state.idle_flow.current, ZETA_SLUICE_MIN), idle_target, dt_s)
    idle_flow = _snap(idle_flow, idle_target, FLOW_SNAP_M3S)

    # Pump channels: flow magnitude plus drive power, both ramped. The
    # orientation is latched on engagement: after flood generation the pump
    # over-fills (ebb-oriented), after ebb generation it over-empties; with
    # no generation memory the gravity-aided orientation is taken.
    pump_dir = state.pump_direction
    pump_power_target = 0.0
    pump_flow_target = 0.0
    if tm is TurbineMode.PUMPING and gen_power.current == 0.0:
        if pump_dir is None:
            if last_gen is Direction.FLOOD:
                pump_dir = Direction.EBB
            elif last_gen is Direction.EBB:
                pump_dir = Direction.FLOOD
            else:
                pump_dir = Direction.EBB if h >= 0 else Direction.FLOOD
        curve = bundle.pump_curve(pump_dir)
        h_p = h if pump_dir is Direction.EBB else -h
        p_cmd = action.pump_setting_w
        if h_p > 0:
            q_unit = pump_flow_positive_head(curve, spec, bundle.coeffs.cd_turbine, h_p, p_cmd)
        else:
            q_unit = pump_flow(curve, h_p, p_cmd, spec.max_turbine_flow_m3s)
        pump_power_target = n * p_cmd
        pump_flow_target = n * q_unit
    pump_flow_mag = ramp_step(
        RampState(state.pump_flow_mag.current, ZETA_PUMP_MIN), pump_flow_target, dt_s
    )
    pump_flow_mag = _snap(pump_flow_mag, pump_flow_target, FLOW_SNAP_M3S)
    pump_power_in = ramp_step(
        RampState(state.pump_power_in.current, ZETA_PUMP_MIN), pump_power_target, dt_s
    )
    pump_power_in = _snap(pump_power_in, pump_power_target, POWER_SNAP_W)
    if pump_flow_mag.current == 0.0 and pump_power_in.current == 0.0 and pump_flow_target == 0.0:
        pump_dir = None

    # Sluice flow channel.
    sluice_bound = abs(orifice_flow(bundle.coeffs.cd_sluice, spec.sluice_area_m2, h, spec.g_ms2))
    sluice_target = math.copysign(sluice_bound, h) if sm is SluiceMode.ONLINE else 0.0
    sluice_flow = ramp_step(
        RampState(state.sluice_flow.current, ZETA_SLUICE_MIN), sluice_target, dt_s
    )
    sluice_flow = _snap(sluice_flow, sluice_target, FLOW_SNAP_M3S)

    # Flows applied this step. Ramp residuals may not exceed what the
    # prevailing head physically supports, so they are clipped at the
    # instantaneous capacity of each passage.
    q_gen = 0.0
    if gen_power.current > 0.0 and gen_dir is not None:
        chart = bundle.chart(gen_dir)
        h_eff = max(_direction_head(gen_dir, ocean_level_m, lagoon), chart.h_min_m)
        eta = max(chart.efficiency(h_eff), 1e-3)
        q_mag = gen_power.current / (eta * spec.rho_kgm3 * spec.g_ms2 * h_eff)
        q_mag = min(q_mag, n * spec.max_turbine_flow_m3s)
        q_gen = -q_mag if gen_dir is Direction.EBB else q_mag

    idle_bound = n * min(
        abs(orifice_flow(bundle.coeffs.cd_turbine, spec.turbine_area_m2, h, spec.g_ms2)),
        spec.max_turbine_flow_m3s,
    )
    q_idle = math.copysign(min(abs(idle_flow.current), idle_bound), idle_flow.current)

    pump_sign = 1.0 if pump_dir is Direction.EBB else -1.0
    q_pump = pump_sign * pump_flow_mag.current if pump_dir is not None else 0.0

    q_cap = n * spec.max_turbine_flow_m3s
    q_turbine = max(-q_cap, min(q_cap, q_gen + q_idle + q_pump))
    q_sluice = math.copysign(min(abs(sluice_flow.current), sluice_bound), sluice_flow.current)

    q_total = q_turbine + q_sluice
    new_level = lagoon + q_total / area_at(bundle.area_model, lagoon) * dt_s
    clamp_events = state.clamp_events
    lo, hi = LEVEL_GUARD_M
    if new_level < lo or new_level > hi:
        new_level = min(max(new_level, lo), hi)
        clamp_events += 1

    t_next = state.time_s + dt_s
    ocean_rec = ocean_level_m if ocean_next_m is None else ocean_next_m
    record = StepRecord(
        time_s=t_next,
        ocean_m=ocean_rec,
        lagoon_m=new_level,
        head_m=ocean_rec - new_level,
        turbine_mode=tm,
        sluice_mode=sm,
        q_turbine_m3s=q_turbine,
        q_sluice_m3s=q_sluice,
        p_gen_w=gen_power.current,
        p_pump_in_w=pump_power_in.current,
    )
    new_state = PlantState(
        lagoon_level_m=new_level,
        time_s=t_next,
        mode=action,
        gen_power=gen_power,
        gen_direction=gen_dir,
        idle_flow=idle_flow,
        sluice_flow=sluice_flow,
        pump_flow_mag=pump_flow_mag,
        pump_power_in=pump_power_in,
        pump_direction=pump_dir,
        last_gen_direction=last_gen,
        clamp_events=clamp_events,
    )
    return new_state, record


def initial_record(state: PlantState, ocean_m: float) -> StepRecord:
    return StepRecord(
        time_s=state.time_s,
        ocean_m=ocean_m,
        lagoon_m=state.lagoon_level_m,
        head_m=ocean_m - state.lagoon_level_m,
        turbine_mode=state.mode.turbine_mode,
        sluice_mode=state.mode.sluice_mode,
        q_turbine_m3s=0.0,
        q_sluice_m3s=0.0,
        p_gen_w=state.gen_power.current,
        p_pump_in_w=state.pump_power_in.current,
    )


def simulate(
    controller: Controller,
    tide: TideSeries,
    bundle: PlantBundle,
    initial_level_m: float | None = None,
    dt_s: float = 360.0,
    horizon_s: float | None = None,
) -> Trace:
    """Closed-loop run: the controller sees the latest observable state and
    commands the next step.  The trace starts with the initial snapshot and
    then carries one record per step.

    Lagoon levels live on the tidal datum; the tide's own datum offset is
    applied when sampling it.  The initial lagoon level defaults to the
    tide's mean level.
    """
    offset = tide.datum_offset_m
    t0 = tide.start_time_s
    if horizon_s is None:
        horizon_s = tide.end_time_s - t0
    n_steps = int(round(horizon_s / dt_s))
    if n_steps < 1:
        raise ValueError("horizon shorter than one step")
    if t0 + n_steps * dt_s > tide.end_time_s + 1e-9:
        raise ValueError("tide series does not cover the requested horizon")
    if initial_level_m is None:
        initial_level_m = tide.mean_level_m + offset

    state = PlantState(lagoon_level_m=initial_level_m, time_s=t0)
    ocean0 = level_at(tide, t0) + offset
    trace = Trace(dt_s=dt_s)
    rec = initial_record(state, ocean0)
    trace.append(rec)
    prev_rec = rec
    mode_now = mode_prev = OFFLINE_MODE

    for k in range(n_steps):
        obs = ObservableState(
            time_s=rec.time_s,
            ocean_m=rec.ocean_m,
            ocean_prev_m=prev_rec.ocean_m,
            lagoon_m=rec.lagoon_m,
            lagoon_prev_m=prev_rec.lagoon_m,
            head_m=rec.head_m,
            mode=mode_now,
            mode_prev=mode_prev,
        )
        action = controller(obs)
        if not isinstance(action, OperationalMode):
            raise SimulationError(f"step {k}: controller returned {type(action).__name__}")
        t_now = t0 + k * dt_s
        t_next = t0 + (k + 1) * dt_s
        ocean_now = level_at(tide, t_now) + offset
        ocean_next = level_at(tide, min(t_next, tide.end_time_s)) + offset
        try:
            state, new_rec = step(state, ocean_now, action, dt_s, bundle, ocean_next)
        except ValueError as exc:
            raise SimulationError(f"step {k}: {exc}") from exc
        trace.append(new_rec)
        prev_rec, rec = rec, new_rec
        mode_prev, mode_now = mode_now, action
    return trace


def energy_summary(trace: Trace) -> dict[str, float]:
    """Trapezoidal energy integrals over a trace, joules."""
    generated = 0.0
    pump_input = 0.0
    if len(trace) >= 2 and trace.dt_s:
        dt = trace.dt_s
        for prev, cur in zip(trace.records, trace.records[1:]):
            generated += 0.5 * (prev.p_gen_w + cur.p_gen_w) * dt
            pump_input += 0.5 * (prev.p_pump_in_w + cur.p_pump_in_w) * dt
    return {
        "generated_j": generated,
        "pump_input_j": pump_input,
        "net_j": generated - pump_input,
    }


TRACE_CSV_HEADER = [
    "time_s", "ocean_m", "lagoon_m", "head_m", "t_mode", "s_mode",
    "q_turb_m3s", "q_sluice_m3s", "p_gen_w", "p_pump_w",
]


def export_trace(trace: Trace, path: str | Path) -> None:
    """Write the trace CSV contract; floats round-trip bit-exactly."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(TRACE_CSV_HEADER)
        for r in trace:
            writer.writerow([
                repr(r.time_s), repr(r.ocean_m), repr(r.lagoon_m), repr(r.head_m),
                int(r.turbine_mode), int(r.sluice_mode),
                repr(r.q_turbine_m3s), repr(r.q_sluice_m3s),
                repr(r.p_gen_w), repr(r.p_pump_in_w),
            ])


def import_trace(path: str | Path) -> Trace:
    trace = Trace()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header != TRACE_CSV_HEADER:
            raise ValueError(f"{path}: unexpected header {header}")
        for i, row in enumerate(reader, start=2):
            if len(row) != len(TRACE_CSV_HEADER):
                raise ValueError(f"{path}: wrong column count at row {i}")
            try:
                record = StepRecord(
                    time_s=float(row[0]),
                    ocean_m=float(row[1]),
                    lagoon_m=float(row[2]),
                    head_m=float(row[3]),
                    turbine_mode=TurbineMode(int(row[4])),
                    sluice_mode=SluiceMode(int(row[5])),
                    q_turbine_m3s=float(row[6]),
                    q_sluice_m3s=float(row[7]),
                    p_gen_w=float(row[8]),
                    p_pump_in_w=float(row[9]),
                )
            except ValueError as exc:
                raise ValueError(f"{path}: bad value at row {i}: {exc}") from exc
            trace.append(record)
    return trace
