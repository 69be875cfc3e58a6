"""Episode state machine: observations, raw and waypoint actions, reward,
termination, and the replayable episode log.

Update order within a step is fixed so replays are exact: agent action, then
target step, then audio render. The dense reward compares geodesic distances
before and after the step, measured to the target's current (post-move) cell,
or to a precomputed earliest-intersection cell in intersection-reward mode.
Stop ends the episode immediately (the target does not move) and succeeds
exactly when the agent shares the target's cell at that instant.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .acoustics import (SPECTROGRAM_SHAPES, AcousticParams,
                        compute_spectrogram, doa_and_distance, mix,
                        render_source)
from .dynamics import TargetState, spawn_target, step_target
from .gridmap import (FORWARD, ROTATE_LEFT, ROTATE_RIGHT, STOP, AgentPose,
                      Cell, GeodesicField, GeometricMap, GridMap, RangeScan,
                      geodesic_field, min_action_path, ray_scan,
                      update_geometric_map)
from .metrics import InterceptResult, intercept_oracle
from .scenario import (ScenarioConfig, StepAudioEvents, apply_mask_plan,
                       draw_mask_plan, plan_episode, plan_step)
from .soundbank import SoundBank, step_slice

RAW_ACTIONS = (FORWARD, ROTATE_LEFT, ROTATE_RIGHT, STOP)
WAIT = "Wait"  # time passes without an agent action (invalid waypoint)

# Reward constants: success bonus, dense distance shaping, per-step penalty.
SUCCESS_REWARD = 10.0
DENSE_REWARD = 0.25
STEP_PENALTY = 0.01

OUTCOMES = ("success", "failure_timeout", "failure_wrong_stop")

# 3x3 waypoint map, row-major over (dr, dc) offsets in map coordinates;
# index 4 (the agent's own cell) encodes Stop.
WAYPOINT_OFFSETS = tuple((dr, dc) for dr in (-1, 0, 1) for dc in (-1, 0, 1))
STOP_WAYPOINT = 4


@dataclass(frozen=True)
class ScanConfig:
    ray_count: int = 16
    fov_deg: float = 90.0
    max_range: float = 4.0


@dataclass(frozen=True)
class EpisodeConfig:
    grid: GridMap
    target_sound: str
    start: AgentPose
    seed: int
    sample_rate: int = 16000
    scenario: ScenarioConfig = field(default_factory=ScenarioConfig)
    move_prob: float = 0.30
    mode: str = "raw"  # "raw" | "waypoint"
    reward_mode: str = "current_position"  # | "intersection"
    step_limit: int = 500
    acoustics: AcousticParams = field(default_factory=AcousticParams)
    scan: ScanConfig = field(default_factory=ScanConfig)
    sound_pool: tuple[str, ...] | None = None  # second/distractor pool; None = bank train split
    bank_spec: dict | None = None  # how to rebuild the bank, for self-contained logs
    tags: dict | None = None  # condition labels (heard/unheard, clean/complex, ...)

    def __post_init__(self):
        if self.step_limit <= 0:
            raise ValueError("step_limit must be positive")
        if self.mode not in ("raw", "waypoint"):
            raise ValueError(f"bad mode {self.mode!r}")
        if self.reward_mode not in ("current_position", "intersection"):
            raise ValueError(f"bad reward_mode {self.reward_mode!r}")
        if not (0.0 <= self.move_prob <= 1.0):
            raise ValueError("move_prob must be in [0, 1]")
        if not self.grid.is_free(self.start.cell):
            raise ValueError("start pose is not on a free cell")


@dataclass(frozen=True)
class Observation:
    spectrogram: np.ndarray | None  # [65, T, 2]; None when audio rendering is off
    scan: RangeScan
    collided: bool
    step_index: int
    pose: AgentPose  # perfect odometry, as assumed by the upstream simulators


@dataclass(frozen=True)
class StepRecord:
    index: int
    action: str
    pose: AgentPose  # after the action
    target: Cell  # after the target's move
    reward: float
    collided: bool
    events: StepAudioEvents | None  # None on terminal steps (nothing rendered)
    waypoint: int | None = None  # set on the first raw step of a waypoint decision


@dataclass
class EpisodeLog:
    config: EpisodeConfig
    target_start: Cell
    second_sound_id: str | None
    reset_events: StepAudioEvents
    steps: list[StepRecord] = field(default_factory=list)
    outcome: str | None = None
    path_length_m: float = 0.0
    action_count: int = 0  # raw steps excluding the terminal Stop

    @property
    def trajectory(self) -> tuple[Cell, ...]:
        """Realized target cells, index = elapsed target steps (0 = spawn).
        The target does not move on the Stop step."""
        return (self.target_start,) + tuple(
            r.target for r in self.steps if r.action != STOP)

    @property
    def total_reward(self) -> float:
        return sum(r.reward for r in self.steps)


class Engine:
    """One episode. Construct, ``reset()``, then drive with ``step_raw`` or
    ``step_waypoint``; the finished episode is in ``.log``.

    ``render_audio=False`` skips waveform and spectrogram computation
    (observations carry spectrogram=None) while consuming the exact same
    random draws, so logs are bit-identical to rendered runs. Used by
    privileged baselines and bulk feasibility checks.
    """

    def __init__(self, config: EpisodeConfig, bank: SoundBank, render_audio: bool = True):
        if config.sample_rate != bank.sample_rate:
            raise ValueError(f"config rate {config.sample_rate} != bank rate {bank.sample_rate}")
        if config.target_sound not in bank:
            raise ValueError(f"target sound {config.target_sound!r} not in bank")
        if not config.grid.is_connected():
            raise ValueError("map free space must be a single connected component")
        self.config = config
        self.bank = bank
        self.render_audio = render_audio
        self.pool = list(config.sound_pool) if config.sound_pool is not None \
            else bank.ids("train")
        self._done = True
        self._field_cache: dict[Cell, GeodesicField] = {}

    # -- lifecycle ----------------------------------------------------------

    def reset(self) -> Observation:
        cfg = self.config
        ss = np.random.SeedSequence(cfg.seed)
        motion_ss, scenario_ss = ss.spawn(2)
        self._rng_motion = np.random.default_rng(motion_ss)
        self._rng_scenario = np.random.default_rng(scenario_ss)

        self.pose = cfg.start
        self.target = spawn_target(self._rng_motion, cfg.grid, cfg.start.cell,
                                   move_prob=cfg.move_prob)
        assert self.target.cell != self.pose.cell, "spawn excludes the agent's cell"
        self.plan = plan_episode(self._rng_scenario, cfg.scenario,
                                 cfg.target_sound, self.pool)
        self.gmap = GeometricMap.empty(cfg.grid.height, cfg.grid.width)
        self.step_index = 0
        self._done = False

        self._reward_goal: Cell | None = None
        if cfg.reward_mode == "intersection":
            preview = self.peek_target_trajectory([cfg.start.cell], cfg.step_limit - 1)
            intercept = intercept_oracle(cfg.grid, cfg.start, preview)
            if not intercept.feasible:
                raise ValueError("episode not catchable within the step limit; "
                                 "intersection reward undefined (regenerate the episode)")
            self._reward_goal = intercept.catch_cell
        self._prev_distance = self._reward_distance()

        obs = self._render_observation()
        self.log = EpisodeLog(config=cfg, target_start=self.target.cell,
                              second_sound_id=self.plan.second_sound_id,
                              reset_events=self._last_events)
        return obs

    @property
    def done(self) -> bool:
        return self._done

    # -- stepping -----------------------------------------------------------

    def step_raw(self, action: str, _waypoint: int | None = None):
        """Execute one raw action. Returns (observation, reward, done, info);
        the observation is None on terminal steps (no decision follows)."""
        self._require_active()
        if action not in RAW_ACTIONS and action != WAIT:
            raise ValueError(f"unknown action {action!r}")

        if action == STOP:
            success = self.pose.cell == self.target.cell
            reward = (SUCCESS_REWARD if success else 0.0) - STEP_PENALTY
            outcome = "success" if success else "failure_wrong_stop"
            self.step_index += 1
            self._finish(outcome)
            self.log.steps.append(StepRecord(
                index=self.step_index, action=STOP, pose=self.pose,
                target=self.target.cell, reward=reward, collided=False,
                events=None, waypoint=_waypoint))
            return None, reward, True, {"outcome": outcome}

        collided = False
        if action == FORWARD:
            nxt = self.pose.forward_cell()
            if self.config.grid.is_free(nxt):
                self.pose = replace(self.pose, cell=nxt)
                self.log.path_length_m += self.config.grid.resolution
            else:
                collided = True  # blocked forward: no motion, flag only
        elif action == ROTATE_LEFT:
            self.pose = replace(self.pose, heading=(self.pose.heading - 1) % 4)
        elif action == ROTATE_RIGHT:
            self.pose = replace(self.pose, heading=(self.pose.heading + 1) % 4)
        # WAIT: time passes, the agent holds pose (invalid-waypoint no-op)

        self.target = step_target(self._rng_motion, self.target,
                                  self.config.grid, self.pose.cell)

        d = self._reward_distance()
        if action == WAIT:
            reward = -STEP_PENALTY  # penalty only; the agent took no action
        else:
            dense = DENSE_REWARD if d < self._prev_distance else (
                -DENSE_REWARD if d > self._prev_distance else 0.0)
            reward = dense - STEP_PENALTY
        self._prev_distance = d

        self.step_index += 1
        self.log.action_count += 1
        done = self.step_index >= self.config.step_limit
        obs = None
        if done:
            self._finish("failure_timeout")
            events = None
        else:
            obs = self._render_observation(collided=collided)
            events = self._last_events
        self.log.steps.append(StepRecord(
            index=self.step_index, action=action, pose=self.pose,
            target=self.target.cell, reward=reward, collided=collided,
            events=events, waypoint=_waypoint))
        info = {"collided": collided, "events": events}
        if done:
            info["outcome"] = "failure_timeout"
        return obs, reward, done, info

    def step_waypoint(self, index: int):
        """Execute one 3x3 waypoint decision as up to four raw actions.

        The center index is Stop. An occupied or pose-unreachable waypoint
        costs one penalty step in which time still passes (the target moves,
        audio advances) and is flagged invalid_waypoint. Intermediate
        observations are exposed in info["observations"] so agents can
        process every raw step.
        """
        self._require_active()
        if not (0 <= index <= 8):
            raise ValueError(f"waypoint index {index} out of range")
        if index == STOP_WAYPOINT:
            return self.step_raw(STOP, _waypoint=index)

        dr, dc = WAYPOINT_OFFSETS[index]
        goal = (self.pose.cell[0] + dr, self.pose.cell[1] + dc)
        grid = self.config.grid
        actions = min_action_path(grid, self.pose, goal) if grid.is_free(goal) else None
        if not actions:
            obs, reward, done, info = self.step_raw(WAIT, _waypoint=index)
            info["invalid_waypoint"] = True
            info["observations"] = [] if obs is None else [obs]
            info["observation_rewards"] = [] if obs is None else [reward]
            info["raw_actions"] = [WAIT]
            return obs, reward, done, info

        total = 0.0
        observations = []
        obs_rewards = []
        executed = []
        obs, done, info = None, False, {}
        for k, act in enumerate(actions[:4]):
            obs, reward, done, info = self.step_raw(act, _waypoint=index if k == 0 else None)
            total += reward
            executed.append(act)
            if obs is not None:
                observations.append(obs)
                obs_rewards.append(reward)
            if done or info.get("collided"):
                break
        info = dict(info)
        info["observations"] = observations
        info["observation_rewards"] = obs_rewards
        info["raw_actions"] = executed
        return obs, total, done, info

    def abort(self):
        """End the episode as failure_wrong_stop without the co-location
        check (protocol violations, timeouts on the wire). Logs a Stop step
        carrying only the step penalty; aborted logs are excluded from the
        replay guarantee."""
        self._require_active()
        self.step_index += 1
        self._finish("failure_wrong_stop")
        self.log.steps.append(StepRecord(
            index=self.step_index, action=STOP, pose=self.pose,
            target=self.target.cell, reward=-STEP_PENALTY, collided=False,
            events=None, waypoint=None))

    # -- internals ----------------------------------------------------------

    def _require_active(self):
        if self._done:
            raise RuntimeError("episode is finished; reset() first")

    def _finish(self, outcome: str):
        assert outcome in OUTCOMES
        self._done = True
        self.log.outcome = outcome

    def _field_to(self, cell: Cell) -> GeodesicField:
        f = self._field_cache.get(cell)
        if f is None:
            f = geodesic_field(self.config.grid, cell)
            self._field_cache[cell] = f
        return f

    def _reward_distance(self) -> float:
        goal = self._reward_goal if self._reward_goal is not None else self.target.cell
        return self._field_to(goal).distance(self.pose.cell)

    def _render_observation(self, collided: bool = False) -> Observation:
        cfg = self.config
        events = plan_step(self._rng_scenario, cfg.scenario, self.plan,
                           cfg.target_sound, self.pool, cfg.grid)
        mask_plan = None
        if events.augmentation != "none":
            shape = SPECTROGRAM_SHAPES[cfg.sample_rate]
            mask_plan = draw_mask_plan(self._rng_scenario, events.augmentation,
                                       cfg.scenario, shape)
        self._last_events = events

        scan = ray_scan(cfg.grid, self.pose, ray_count=cfg.scan.ray_count,
                        fov_deg=cfg.scan.fov_deg, max_range=cfg.scan.max_range)
        update_geometric_map(self.gmap, self.pose, scan)

        spec = None
        if self.render_audio:
            t = self.step_index
            theta, dist = doa_and_distance(cfg.grid, self.pose, self.target.cell)
            frames = [render_source(
                step_slice(self.bank.get(cfg.target_sound), t), theta, dist,
                cfg.acoustics, cfg.sample_rate)]
            if self.plan.second_sound_id is not None:
                frames.append(render_source(
                    step_slice(self.bank.get(self.plan.second_sound_id), t),
                    theta, dist, cfg.acoustics, cfg.sample_rate))
            if events.distractor_active:
                d_theta, d_dist = doa_and_distance(cfg.grid, self.pose,
                                                   events.distractor_cell)
                frames.append(render_source(
                    step_slice(self.bank.get(events.distractor_id), t),
                    d_theta, d_dist, cfg.acoustics, cfg.sample_rate))
            spec = compute_spectrogram(mix(frames))
            if mask_plan is not None:
                spec = apply_mask_plan(spec, mask_plan)

        return Observation(spectrogram=spec, scan=scan, collided=collided,
                           step_index=self.step_index, pose=self.pose)

    # -- privileged access (oracle baseline, feasibility checks) -------------

    def peek_target_trajectory(self, agent_cells: Sequence[Cell], horizon: int) -> list[Cell]:
        """Simulate the target ``horizon`` steps ahead without disturbing the
        episode. agent_cells[k] is the agent's assumed cell during preview
        step k (the last entry repeats). Returns cells indexed 0..horizon,
        index 0 being the target's current cell.

        The preview consumes a cloned copy of the motion stream, so it is
        exact as long as the real agent occupies the assumed cells whenever
        the target resamples its goal.
        """
        rng = copy.deepcopy(self._rng_motion)
        state = self.target
        cells = [state.cell]
        for k in range(horizon):
            agent = agent_cells[min(k, len(agent_cells) - 1)]
            state = step_target(rng, state, self.config.grid, agent)
            cells.append(state.cell)
        return cells
