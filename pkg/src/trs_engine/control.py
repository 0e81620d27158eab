"""Action vocabulary and heuristic baseline controllers.

Actions are triples of discrete branch indices: sluice on/off, turbine mode,
and a pump drive index mapping to 0.25 MW increments per unit.  The two
baseline schemes are ebb-only generation (fill, hold, generate) and the
literature-constrained two-way-with-pumping scheme, whose defining
restriction is that it never pumps while gravity still assists.
"""

from __future__ import annotations

from dataclasses import dataclass, field

from .simulator import (
    ObservableState,
    OperationalMode,
    SluiceMode,
    TurbineMode,
)

#: Pump drive increment per index step, watts per unit.
PUMP_POWER_STEP_W = 0.25e6
PUMP_INDEX_MAX = 16

N_SLUICE_OPTIONS = 2
N_TURBINE_OPTIONS = 5
N_PUMP_OPTIONS = PUMP_INDEX_MAX + 1


class ActionError(ValueError):
    pass


@dataclass(frozen=True)
class Action:
    """Discrete control triple (sluice, turbine, pump index)."""

    n_os: int = 0
    n_ot: int = 0
    n_op: int = 0

    def __post_init__(self) -> None:
        if self.n_os not in (0, 1):
            raise ActionError(f"sluice branch {self.n_os} outside {{0,1}}")
        if not 0 <= self.n_ot < N_TURBINE_OPTIONS:
            raise ActionError(f"turbine branch {self.n_ot} outside 0..4")
        if not 0 <= self.n_op <= PUMP_INDEX_MAX:
            raise ActionError(f"pump branch {self.n_op} outside 0..16")

    @property
    def pump_power_w(self) -> float:
        return PUMP_POWER_STEP_W * self.n_op

    def to_mode(self) -> OperationalMode:
        turbine = TurbineMode(self.n_ot)
        pump_w = self.pump_power_w if turbine is TurbineMode.PUMPING else 0.0
        return OperationalMode(turbine, SluiceMode(self.n_os), pump_w)


def validate_action(action: Action, current_mode: OperationalMode | None = None) -> None:
    """Reject action tuples outside the plant's operating vocabulary.

    Pumping needs a positive drive setting, and sluices never run with the
    turbines fully offline (holding means everything closed).
    """
    turbine = TurbineMode(action.n_ot)
    if turbine is TurbineMode.PUMPING and action.n_op == 0:
        raise ActionError("zero-power pump request")
    if turbine is TurbineMode.OFFLINE and action.n_os == 1:
        raise ActionError("sluicing requested while holding (turbines offline)")


def coerce_action(action: Action) -> tuple[Action, bool]:
    """Map an illegal tuple to the nearest legal one.

    A pump request without drive power falls back to an offline turbine;
    sluices commanded during holding are closed.  Returns the action and
    whether anything changed.
    """
    n_os, n_ot, n_op = action.n_os, action.n_ot, action.n_op
    changed = False
    if TurbineMode(n_ot) is TurbineMode.PUMPING and n_op == 0:
        n_ot = int(TurbineMode.OFFLINE)
        changed = True
    if TurbineMode(n_ot) is TurbineMode.OFFLINE and n_os == 1:
        n_os = 0
        changed = True
    return (Action(n_os, n_ot, n_op) if changed else action), changed


def _ebb_head(obs: ObservableState) -> float:
    return obs.lagoon_m - obs.ocean_m


@dataclass
class EogController:
    """Ebb-only generation: fill on the flood, hold, generate on the ebb.

    Emits only Offline, Idling and EbbGeneration turbine modes; sluices run
    with idling turbines during the fill stage and the turbines operate
    alone while generating.
    """

    h_start_m: float = 2.0
    h_min_m: float = 1.0
    _generating: bool = field(default=False, repr=False)

    def __call__(self, obs: ObservableState) -> OperationalMode:
        ebb_head = _ebb_head(obs)
        if self._generating and ebb_head >= self.h_min_m:
            return OperationalMode(TurbineMode.EBB_GENERATION, SluiceMode.OFFLINE)
        self._generating = False
        if ebb_head >= self.h_start_m:
            self._generating = True
            return OperationalMode(TurbineMode.EBB_GENERATION, SluiceMode.OFFLINE)
        rising = obs.ocean_m > obs.ocean_prev_m
        if rising and obs.head_m > 0:
            return OperationalMode(TurbineMode.IDLING, SluiceMode.ONLINE)
        return OperationalMode(TurbineMode.OFFLINE, SluiceMode.OFFLINE)


@dataclass
class TwpConstrainedController:
    """Two-way generation with sluicing and gravity-opposed pumping only.

    After each generation stage the basin is equalised through sluices and
    idling turbines, then topped up (or drawn down) by pumping at a fixed
    drive setting.  Pumping runs only while the head opposes it, and stops
    once the lagoon is within ``pump_margin_m`` of the tracked ocean
    extreme or the adverse head approaches the scaled shutoff.
    """

    h_start_m: float = 2.0
    h_min_m: float = 1.0
    pump_margin_m: float = 0.3
    pump_setting_w: float = 4e6
    sluice_assist_m: float = 0.5
    _phase: str = field(default="", repr=False)
    _ocean_extreme_m: float = field(default=0.0, repr=False)

    def _pump_index(self) -> int:
        return max(1, min(PUMP_INDEX_MAX, round(self.pump_setting_w / PUMP_POWER_STEP_W)))

    def _pump_mode(self, sluice: SluiceMode = SluiceMode.OFFLINE) -> OperationalMode:
        return OperationalMode(
            TurbineMode.PUMPING, sluice, self._pump_index() * PUMP_POWER_STEP_W
        )

    def __call__(self, obs: ObservableState) -> OperationalMode:
        ebb_head = _ebb_head(obs)
        flood_head = obs.head_m
        if not self._phase:
            self._phase = "wait_ebb" if ebb_head >= 0 else "wait_flood"
            self._ocean_extreme_m = obs.ocean_m

        if self._phase == "wait_ebb":
            if ebb_head >= self.h_start_m:
                self._phase = "gen_ebb"
            else:
                return OperationalMode()
        if self._phase == "gen_ebb":
            if ebb_head >= self.h_min_m:
                sluice = (
                    SluiceMode.ONLINE
                    if ebb_head < self.h_min_m + self.sluice_assist_m
                    else SluiceMode.OFFLINE
                )
                return OperationalMode(TurbineMode.EBB_GENERATION, sluice)
            self._phase = "sluice_down"
            self._ocean_extreme_m = obs.ocean_m
        if self._phase == "sluice_down":
            self._ocean_extreme_m = min(self._ocean_extreme_m, obs.ocean_m)
            if ebb_head > self.pump_margin_m:
                return OperationalMode(TurbineMode.IDLING, SluiceMode.ONLINE)
            self._phase = "pump_down"
        if self._phase == "pump_down":
            self._ocean_extreme_m = min(self._ocean_extreme_m, obs.ocean_m)
            # flood-oriented pumping drains the lagoon; adverse once the
            # ocean is back above the lagoon (h_p = -head < 0)
            target = self._ocean_extreme_m + self.pump_margin_m
            h_p = -flood_head
            if obs.lagoon_m > target and not self._shutoff(h_p):
                if h_p < 0:
                    return self._pump_mode()
                # gravity still drains the basin; keep sluicing until the
                # head turns adverse (the defining literature constraint)
                return OperationalMode(TurbineMode.IDLING, SluiceMode.ONLINE)
            self._phase = "wait_flood"
        if self._phase == "wait_flood":
            if flood_head >= self.h_start_m:
                self._phase = "gen_flood"
            else:
                return OperationalMode()
        if self._phase == "gen_flood":
            if flood_head >= self.h_min_m:
                sluice = (
                    SluiceMode.ONLINE
                    if flood_head < self.h_min_m + self.sluice_assist_m
                    else SluiceMode.OFFLINE
                )
                return OperationalMode(TurbineMode.FLOOD_GENERATION, sluice)
            self._phase = "sluice_up"
            self._ocean_extreme_m = obs.ocean_m
        if self._phase == "sluice_up":
            self._ocean_extreme_m = max(self._ocean_extreme_m, obs.ocean_m)
            if flood_head > self.pump_margin_m:
                return OperationalMode(TurbineMode.IDLING, SluiceMode.ONLINE)
            self._phase = "pump_up"
        if self._phase == "pump_up":
            self._ocean_extreme_m = max(self._ocean_extreme_m, obs.ocean_m)
            # ebb-oriented pumping fills the lagoon; adverse once the lagoon
            # sits above the ocean (h_p = head < 0)
            target = self._ocean_extreme_m - self.pump_margin_m
            h_p = flood_head
            if obs.lagoon_m < target and not self._shutoff(h_p):
                if h_p < 0:
                    return self._pump_mode()
                return OperationalMode(TurbineMode.IDLING, SluiceMode.ONLINE)
            self._phase = "wait_ebb"
            return OperationalMode()
        return OperationalMode()

    def _shutoff(self, h_p_m: float) -> bool:
        # shutoff head scales as (p_in/6MW)^(2/3) from the 6 m reference
        limit = -6.0 * (self._pump_index() * PUMP_POWER_STEP_W / 6e6) ** (2.0 / 3.0)
        return h_p_m <= limit * 0.95


@dataclass
class ScheduleController:
    """Replays a fixed mode timetable: (switch time s, mode) pairs.

    Used for validation runs that vary the operational mode with a known
    timing; times repeat modulo the final entry plus ``cycle_s`` when set.
    """

    schedule: list[tuple[float, OperationalMode]]
    cycle_s: float | None = None

    def __post_init__(self) -> None:
        if not self.schedule:
            raise ValueError("empty schedule")
        times = [t for t, _ in self.schedule]
        if times != sorted(times):
            raise ValueError("schedule times must be sorted")

    def __call__(self, obs: ObservableState) -> OperationalMode:
        t = obs.time_s
        if self.cycle_s:
            t = t % self.cycle_s
        mode = self.schedule[0][1]
        for t_switch, m in self.schedule:
            if t >= t_switch:
                mode = m
            else:
                break
        return mode


def make_controller(scheme: str, **kwargs) -> EogController | TwpConstrainedController:
    """Controller factory for the CLI `--scheme` choices."""
    if scheme == "eog":
        return EogController(**kwargs)
    if scheme == "twp":
        return TwpConstrainedController(**kwargs)
    raise ValueError(f"unknown control scheme {scheme!r}")
