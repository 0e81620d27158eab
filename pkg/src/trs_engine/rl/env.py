"""MDP wrapper around the 0D plant.

Observations follow the plant's real-time instrument panel: ocean and
lagoon levels (normalized to [0, 1] by a fixed affine map) and the three
branch indices, each at the current and previous step.  The reward is the
step's net energy (generation minus pump input), scaled so a step of
full-capacity generation is O(1).  Episodes run a fixed number of steps
over a window of the forcing series.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..control import Action, coerce_action
from ..simulator import (
    OFFLINE_MODE,
    PlantBundle,
    PlantState,
    StepRecord,
    Trace,
    TurbineMode,
    initial_record,
    step as plant_step,
)
from ..tide import TideSeries

OBS_DIM = 10
BRANCH_SIZES = (2, 5, 17)

#: Raw observation entries are level, level, level, level, then the mode
#: index pairs; the policy's input scale maps them all to O(1).
INPUT_SCALE = np.array([1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 4.0, 4.0, 16.0, 16.0])


@dataclass(frozen=True)
class NormalizationSpec:
    """Affine map for levels, fixed from the forcing's span and recorded
    with any trained policy."""

    level_lo_m: float = -0.5
    level_hi_m: float = 14.0

    def normalize(self, level_m: float) -> float:
        return (level_m - self.level_lo_m) / (self.level_hi_m - self.level_lo_m)


class PlantEnv:
    """Gym-style episodic environment over a tide window.

    ``episode_steps`` plant steps of ``dt_s`` each; the window start is
    drawn uniformly from the forcing series on reset (or pinned with
    ``start_index``).  Rewards are trapezoidal net-energy increments times
    ``reward_scale``.
    """

    def __init__(
        self,
        tide: TideSeries,
        bundle: PlantBundle,
        episode_steps: int,
        dt_s: float = 360.0,
        seed: int = 0,
        norm: NormalizationSpec | None = None,
        random_start: bool = True,
        initial_level_m: float | None = None,
    ):
        if abs(tide.dt_s - dt_s) > 1e-9:
            raise ValueError(f"tide dt {tide.dt_s} must equal env dt {dt_s}")
        if len(tide) < episode_steps + 1:
            raise ValueError("forcing series shorter than one episode")
        self.tide = tide
        self.bundle = bundle
        self.episode_steps = int(episode_steps)
        self.dt_s = float(dt_s)
        self.norm = norm or NormalizationSpec()
        self.random_start = random_start
        self.initial_level_m = initial_level_m
        self.reward_scale = 1.0 / (
            bundle.spec.n_turbines * bundle.spec.turbine_capacity_w * dt_s
        )
        self._rng = np.random.default_rng(seed)
        self._ocean_z = tide.levels_m + tide.datum_offset_m
        self.coerced_actions = 0
        self._state: PlantState | None = None
        self.trace: Trace | None = None

    def seed(self, seed: int) -> None:
        self._rng = np.random.default_rng(seed)

    def reset(self, seed: int | None = None, start_index: int | None = None) -> np.ndarray:
        if seed is not None:
            self.seed(seed)
        max_start = len(self.tide) - self.episode_steps - 1
        if start_index is None:
            start_index = (
                int(self._rng.integers(0, max_start + 1)) if self.random_start else 0
            )
        if not 0 <= start_index <= max_start:
            raise ValueError(f"start index {start_index} outside [0, {max_start}]")
        self._k = start_index
        level0 = (
            self.initial_level_m
            if self.initial_level_m is not None
            else float(np.mean(self._ocean_z))
        )
        t0 = self.tide.start_time_s + start_index * self.dt_s
        self._state = PlantState(lagoon_level_m=level0, time_s=t0)
        self._steps_done = 0
        self._action = Action()
        self._action_prev = Action()
        rec = initial_record(self._state, float(self._ocean_z[start_index]))
        self._rec = rec
        self._rec_prev = rec
        self._p_net_prev = 0.0
        self.trace = Trace(dt_s=self.dt_s)
        self.trace.append(rec)
        return self._observe()

    def _observe(self) -> np.ndarray:
        n = self.norm.normalize
        a, ap = self._action, self._action_prev
        return np.array(
            [
                n(self._rec.ocean_m),
                n(self._rec_prev.ocean_m),
                n(self._rec.lagoon_m),
                n(self._rec_prev.lagoon_m),
                float(a.n_os),
                float(ap.n_os),
                float(a.n_ot),
                float(ap.n_ot),
                float(a.n_op),
                float(ap.n_op),
            ]
        )

    def step(self, action: Action | tuple[int, int, int]):
        """Apply one action; returns (observation, reward, done, info)."""
        if self._state is None:
            raise RuntimeError("call reset() before step()")
        if self._steps_done >= self.episode_steps:
            raise RuntimeError("episode finished; call reset()")
        if not isinstance(action, Action):
            action = Action(*map(int, action))
        legal, coerced = coerce_action(action)
        if coerced:
            self.coerced_actions += 1
        mode = legal.to_mode()
        k = self._k
        state, rec = plant_step(
            self._state,
            float(self._ocean_z[k]),
            mode,
            self.dt_s,
            self.bundle,
            ocean_next_m=float(self._ocean_z[k + 1]),
        )
        self._state = state
        self._k += 1
        self._steps_done += 1
        self._action_prev, self._action = self._action, legal
        self._rec_prev, self._rec = self._rec, rec
        self.trace.append(rec)

        p_net = rec.p_gen_w - rec.p_pump_in_w
        reward = 0.5 * (p_net + self._p_net_prev) * self.dt_s * self.reward_scale
        self._p_net_prev = p_net
        done = self._steps_done >= self.episode_steps
        info = {"record": rec, "coerced": coerced}
        return self._observe(), reward, done, info

    def episode_net_energy_j(self) -> float:
        """Unscaled net energy of the episode so far (reward identity)."""
        from ..simulator import energy_summary

        return energy_summary(self.trace)["net_j"]


def make_env(
    tide: TideSeries,
    bundle: PlantBundle,
    episode_steps: int,
    dt_s: float = 360.0,
    seed: int = 0,
    **kwargs,
) -> PlantEnv:
    return PlantEnv(tide, bundle, episode_steps, dt_s, seed=seed, **kwargs)
