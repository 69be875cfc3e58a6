"""Wire protocol for external agents, episode-log serialization, and the
scripted in-process baselines (random, greedy, oracle).

Messages are UTF-8 JSON objects, one per line, LF-terminated. The session is
a strict alternation: the harness sends an observation, the agent replies
with exactly one action, until the harness sends episode_end. Spectrogram
tensors travel as base64-encoded little-endian float32 in row-major order
with declared dims. A malformed or late reply gets an error message and the
episode is aborted as a failure.

Episode logs use the same line-delimited convention: a header record with
the full (self-contained) episode config, one record per raw step, and an
end record, so any log can be replayed bit-for-bit without external files.
"""

from __future__ import annotations

import base64
import json
import queue
import socket
import subprocess
import threading
from dataclasses import dataclass

import numpy as np

from .acoustics import SPECTROGRAM_SHAPES, AcousticParams, DecayTail
from .engine import (RAW_ACTIONS, STOP, STOP_WAYPOINT, Engine, EpisodeConfig,
                     EpisodeLog, Observation, ScanConfig, StepRecord)
from .gridmap import (FORWARD, ROTATE_LEFT, ROTATE_RIGHT, AgentPose,
                      heading_from_name, min_action_path, parse_map,
                      serialize_map)
from .metrics import (EpisodeScores, InterceptResult, intercept_oracle,
                      score_episode)
from .scenario import ScenarioConfig, StepAudioEvents

PROTOCOL_VERSION = 1
LOG_VERSION = 1
DEFAULT_ACTION_TIMEOUT = 30.0


class ProtocolError(Exception):
    pass


# ---------------------------------------------------------------------------
# Tensor and structure codecs
# ---------------------------------------------------------------------------


def encode_tensor(arr: np.ndarray) -> dict:
    """Row-major little-endian float32 payload with declared dims."""
    a = np.ascontiguousarray(arr, dtype="<f4")
    return {"dims": list(a.shape), "dtype": "f4",
            "data": base64.b64encode(a.tobytes()).decode("ascii")}


def decode_tensor(obj: dict) -> np.ndarray:
    if obj.get("dtype") != "f4":
        raise ProtocolError(f"unsupported tensor dtype {obj.get('dtype')!r}")
    raw = base64.b64decode(obj["data"])
    arr = np.frombuffer(raw, dtype="<f4")
    return arr.reshape(obj["dims"]).copy()


def _cell(c) -> list | None:
    return None if c is None else [int(c[0]), int(c[1])]


def _pose_to_obj(pose: AgentPose) -> dict:
    return {"cell": _cell(pose.cell), "heading": pose.heading_name}


def _pose_from_obj(obj: dict) -> AgentPose:
    return AgentPose(cell=tuple(obj["cell"]), heading=heading_from_name(obj["heading"]))


def _scan_to_obj(scan) -> dict:
    return {
        "ray_count": scan.ray_count,
        "fov_deg": scan.fov_deg,
        "max_range": scan.max_range,
        "ranges": list(scan.ranges),
        "hit_cells": [_cell(h) for h in scan.hit_cells],
        "traversed": [[_cell(c) for c in ray] for ray in scan.traversed],
    }


def _events_to_obj(ev: StepAudioEvents | None) -> dict | None:
    if ev is None:
        return None
    return {"distractor_active": ev.distractor_active,
            "distractor_id": ev.distractor_id,
            "distractor_cell": _cell(ev.distractor_cell),
            "augmentation": ev.augmentation}


def _events_from_obj(obj: dict | None) -> StepAudioEvents | None:
    if obj is None:
        return None
    cell = obj["distractor_cell"]
    return StepAudioEvents(distractor_active=obj["distractor_active"],
                           distractor_id=obj["distractor_id"],
                           distractor_cell=None if cell is None else tuple(cell),
                           augmentation=obj["augmentation"])


def observation_to_obj(obs: Observation, reward: float,
                       intermediate: list | None = None) -> dict:
    """Wire form of one observation. ``reward`` is the reward accumulated
    since the previous action (0 for the reset observation). The pose rides
    along as perfect odometry, as in the upstream simulators."""
    out = {
        "kind": "observation",
        "step_index": obs.step_index,
        "spectrogram": None if obs.spectrogram is None else encode_tensor(obs.spectrogram),
        "scan": _scan_to_obj(obs.scan),
        "collided": obs.collided,
        "pose": _pose_to_obj(obs.pose),
        "reward": reward,
    }
    if intermediate is not None:
        out["intermediate"] = intermediate
    return out


# ---------------------------------------------------------------------------
# Episode config and log serialization (line-delimited records)
# ---------------------------------------------------------------------------


def config_to_obj(cfg: EpisodeConfig) -> dict:
    sc = cfg.scenario
    ac = cfg.acoustics
    return {
        "map_doc": serialize_map(cfg.grid),
        "target_sound": cfg.target_sound,
        "start": _pose_to_obj(cfg.start),
        "seed": cfg.seed,
        "sample_rate": cfg.sample_rate,
        "scenario": {
            "complex_enabled": sc.complex_enabled,
            "p_second_sound": sc.p_second_sound,
            "p_distractor_episode": sc.p_distractor_episode,
            "p_distractor_step": sc.p_distractor_step,
            "time_mask_param": sc.time_mask_param,
            "freq_mask_param": sc.freq_mask_param,
        },
        "move_prob": cfg.move_prob,
        "mode": cfg.mode,
        "reward_mode": cfg.reward_mode,
        "step_limit": cfg.step_limit,
        "acoustics": {
            "reference_gain": ac.reference_gain,
            "min_distance": ac.min_distance,
            "rear_attenuation": ac.rear_attenuation,
            "itd_max": ac.itd_max,
            "decay_tail": {
                "enabled": ac.decay_tail.enabled,
                "tail_gain": ac.decay_tail.tail_gain,
                "tail_time_constant": ac.decay_tail.tail_time_constant,
            },
        },
        "scan": {"ray_count": cfg.scan.ray_count, "fov_deg": cfg.scan.fov_deg,
                 "max_range": cfg.scan.max_range},
        "sound_pool": None if cfg.sound_pool is None else list(cfg.sound_pool),
        "bank_spec": cfg.bank_spec,
        "tags": cfg.tags,
    }


def config_from_obj(obj: dict) -> EpisodeConfig:
    sc = obj["scenario"]
    ac = obj["acoustics"]
    return EpisodeConfig(
        grid=parse_map(obj["map_doc"]),
        target_sound=obj["target_sound"],
        start=_pose_from_obj(obj["start"]),
        seed=obj["seed"],
        sample_rate=obj["sample_rate"],
        scenario=ScenarioConfig(**sc),
        move_prob=obj["move_prob"],
        mode=obj["mode"],
        reward_mode=obj["reward_mode"],
        step_limit=obj["step_limit"],
        acoustics=AcousticParams(
            reference_gain=ac["reference_gain"], min_distance=ac["min_distance"],
            rear_attenuation=ac["rear_attenuation"], itd_max=ac["itd_max"],
            decay_tail=DecayTail(**ac["decay_tail"])),
        scan=ScanConfig(**obj["scan"]),
        sound_pool=None if obj["sound_pool"] is None else tuple(obj["sound_pool"]),
        bank_spec=obj["bank_spec"],
        tags=obj["tags"],
    )


def _dumps(obj: dict) -> str:
    return json.dumps(obj, separators=(",", ":"))


def log_to_jsonl(log: EpisodeLog) -> str:
    lines = [_dumps({
        "kind": "header", "log_version": LOG_VERSION,
        "config": config_to_obj(log.config),
        "target_start": _cell(log.target_start),
        "second_sound_id": log.second_sound_id,
        "reset_events": _events_to_obj(log.reset_events),
    })]
    for r in log.steps:
        lines.append(_dumps({
            "kind": "step", "i": r.index, "action": r.action, "wp": r.waypoint,
            "pose": _pose_to_obj(r.pose), "target": _cell(r.target),
            "reward": r.reward, "collided": r.collided,
            "events": _events_to_obj(r.events),
        }))
    lines.append(_dumps({
        "kind": "end", "outcome": log.outcome,
        "path_length_m": log.path_length_m, "action_count": log.action_count,
    }))
    return "\n".join(lines) + "\n"


def log_from_jsonl(text: str) -> EpisodeLog:
    records = [json.loads(line) for line in text.strip().split("\n")]
    header = records[0]
    if header.get("kind") != "header" or header.get("log_version") != LOG_VERSION:
        raise ProtocolError("bad log header")
    log = EpisodeLog(
        config=config_from_obj(header["config"]),
        target_start=tuple(header["target_start"]),
        second_sound_id=header["second_sound_id"],
        reset_events=_events_from_obj(header["reset_events"]),
    )
    for rec in records[1:]:
        if rec["kind"] == "step":
            log.steps.append(StepRecord(
                index=rec["i"], action=rec["action"], waypoint=rec["wp"],
                pose=_pose_from_obj(rec["pose"]), target=tuple(rec["target"]),
                reward=rec["reward"], collided=rec["collided"],
                events=_events_from_obj(rec["events"])))
        elif rec["kind"] == "end":
            log.outcome = rec["outcome"]
            log.path_length_m = rec["path_length_m"]
            log.action_count = rec["action_count"]
        else:
            raise ProtocolError(f"unknown log record kind {rec.get('kind')!r}")
    return log


def score_log(log: EpisodeLog) -> tuple[EpisodeScores, InterceptResult]:
    """Score a finished log against the interception oracle on its realized
    target trajectory."""
    intercept = intercept_oracle(log.config.grid, log.config.start, log.trajectory)
    return score_episode(log, intercept), intercept


# ---------------------------------------------------------------------------
# In-process agents and the episode driver
# ---------------------------------------------------------------------------


class Agent:
    """Scripted or learned policy driven by run_episode.

    begin_episode receives the freshly reset Engine; privileged baselines may
    inspect it, honest ones should only read observations in act().
    """

    name = "agent"

    def begin_episode(self, engine: Engine) -> None:
        pass

    def act(self, obs: Observation):
        raise NotImplementedError


def run_episode(engine: Engine, agent: Agent) -> EpisodeLog:
    """Drive one episode with an in-process agent; returns the finished log."""
    obs = engine.reset()
    agent.begin_episode(engine)
    while not engine.done:
        action = agent.act(obs)
        if engine.config.mode == "waypoint":
            obs, _, _, _ = engine.step_waypoint(int(action))
        else:
            obs, _, _, _ = engine.step_raw(action)
    return engine.log


class RandomAgent(Agent):
    """Performance floor: Stop with probability 0.05, otherwise uniform over
    the non-Stop actions (or non-center waypoints)."""

    name = "random"

    def __init__(self, seed: int = 0):
        self.seed = seed

    def begin_episode(self, engine):
        self._rng = np.random.default_rng(self.seed)
        self._mode = engine.config.mode

    def act(self, obs):
        if self._rng.random() < 0.05:
            return STOP_WAYPOINT if self._mode == "waypoint" else STOP
        if self._mode == "waypoint":
            choices = [i for i in range(9) if i != STOP_WAYPOINT]
            return choices[self._rng.integers(8)]
        moves = (FORWARD, ROTATE_LEFT, ROTATE_RIGHT)
        return moves[self._rng.integers(3)]


@dataclass(frozen=True)
class GreedyParams:
    # A forward step that multiplies broadband magnitude by at least this
    # much halved the (gain-clamped) distance; sounds are peak- rather than
    # energy-normalized, so the near-field threshold is calibrated per
    # episode from these doubling events instead of an absolute level.
    doubling_ratio: float = 1.7
    turn_ratio: float = 0.1


class GreedyAgent(Agent):
    """Sound-intensity follower: rotate toward the louder ear, go forward
    when balanced, Stop once broadband energy crosses the near-field level.

    The near-field level is self-calibrated: loudness scales as 1/distance,
    so on the two final approach cells every forward step roughly doubles
    the broadband magnitude. The first doubling arms the detector (one cell
    out); the next one fires Stop (on the target). Decisions are computed on
    the float32-quantized spectrogram — the wire's element contract — so a
    remote copy of this policy reproduces the in-process logs bit for bit.
    Raw action mode only.
    """

    name = "greedy"

    def __init__(self, params: GreedyParams = GreedyParams()):
        self.params = params

    def begin_episode(self, engine):
        if engine.config.mode != "raw":
            raise ValueError("greedy baseline drives raw actions only")
        self._prev_energy: float | None = None
        self._last_action: str | None = None
        self._armed = False

    @staticmethod
    def _energy(obs) -> tuple[float, float]:
        spec = np.asarray(obs.spectrogram, dtype=np.float32)
        lin = np.expm1(spec)  # back to linear magnitude: gain-proportional
        return float(lin[:, :, 0].mean()), float(lin[:, :, 1].mean())

    def act(self, obs):
        left, right = self._energy(obs)
        energy = left + right
        moved = self._last_action == FORWARD and not obs.collided
        if moved and self._prev_energy:
            if energy / self._prev_energy >= self.params.doubling_ratio:
                if self._armed:
                    self._last_action = STOP
                    return STOP
                self._armed = True
        self._prev_energy = energy

        if obs.collided:
            action = ROTATE_LEFT
        else:
            imbalance = (left - right) / (energy + 1e-12)
            if imbalance > self.params.turn_ratio:
                action = ROTATE_LEFT
            elif imbalance < -self.params.turn_ratio:
                action = ROTATE_RIGHT
            else:
                action = FORWARD
        self._last_action = action
        return action


class InfeasibleEpisode(Exception):
    pass


class OracleAgent(Agent):
    """Privileged upper bound: reads the target's future via the engine's
    motion-stream preview, walks the minimum-action path to the earliest
    catchable intersection, waits in place if early, Stops on co-location.

    The target's goal resampling excludes the agent's current cell, so the
    future depends (weakly) on the agent's own plan; the plan is therefore
    iterated to a fixed point: simulate the target under the planned agent
    positions, replan, and stop when the trajectory prefix up to the catch
    step no longer changes. One iteration almost always suffices.
    """

    name = "oracle"

    def __init__(self, max_iters: int = 16):
        self.max_iters = max_iters

    def begin_episode(self, engine):
        if engine.config.mode != "raw":
            raise ValueError("oracle baseline drives raw actions only")
        grid = engine.config.grid
        start = engine.pose
        horizon = engine.config.step_limit - 1
        tau = engine.peek_target_trajectory([start.cell], horizon)
        for _ in range(self.max_iters):
            res = intercept_oracle(grid, start, tau)
            if not res.feasible:
                raise InfeasibleEpisode("target not catchable within the step limit")
            actions = min_action_path(grid, start, res.catch_cell, prefer_short=True)
            waits = res.t_star - len(actions)
            plan = actions + [ROTATE_LEFT] * waits + [STOP]
            agent_cells = _cells_along(start, actions)[1:] or [start.cell]
            tau2 = engine.peek_target_trajectory(agent_cells, horizon)
            if tau2[: res.t_star + 1] == tau[: res.t_star + 1]:
                self._plan = iter(plan)
                return
            tau = tau2
        raise RuntimeError("oracle plan did not reach a fixed point")

    def act(self, obs):
        return next(self._plan)


def _cells_along(start: AgentPose, actions: list[str]) -> list:
    """Agent cell after each action of a raw plan, including the start."""
    from .gridmap import HEADING_VECTORS
    cell, heading = start.cell, start.heading
    cells = [cell]
    for a in actions:
        if a == FORWARD:
            dr, dc = HEADING_VECTORS[heading]
            cell = (cell[0] + dr, cell[1] + dc)
        elif a == ROTATE_LEFT:
            heading = (heading - 1) % 4
        elif a == ROTATE_RIGHT:
            heading = (heading + 1) % 4
        cells.append(cell)
    return cells


BASELINES = {
    "random": RandomAgent,
    "greedy": GreedyAgent,
    "oracle": OracleAgent,
}


def make_baseline(name: str, seed: int = 0) -> Agent:
    if name == "random":
        return RandomAgent(seed=seed)
    if name in BASELINES:
        return BASELINES[name]()
    raise ValueError(f"unknown baseline {name!r}; available: {sorted(BASELINES)}")


# ---------------------------------------------------------------------------
# Line channels and the session server
# ---------------------------------------------------------------------------


class LineChannel:
    """One JSON object per LF-terminated UTF-8 line, with receive timeouts."""

    def send(self, obj: dict) -> None:
        raise NotImplementedError

    def recv(self, timeout: float) -> dict:
        raise NotImplementedError

    def close(self) -> None:
        pass


class SocketChannel(LineChannel):
    def __init__(self, sock: socket.socket):
        self._sock = sock
        self._rfile = sock.makefile("rb")

    def send(self, obj):
        self._sock.sendall((_dumps(obj) + "\n").encode("utf-8"))

    def recv(self, timeout):
        self._sock.settimeout(timeout)
        try:
            line = self._rfile.readline()
        except (TimeoutError, socket.timeout):
            raise ProtocolError("timed out waiting for the agent") from None
        if not line:
            raise ProtocolError("connection closed")
        try:
            return json.loads(line.decode("utf-8"))
        except ValueError:
            raise ProtocolError("reply is not valid JSON") from None

    def close(self):
        self._rfile.close()
        self._sock.close()


class PipeChannel(LineChannel):
    """Line channel over a subprocess's stdio (harness side)."""

    def __init__(self, proc: subprocess.Popen):
        self._proc = proc
        self._queue: queue.Queue = queue.Queue()
        self._reader = threading.Thread(target=self._pump, daemon=True)
        self._reader.start()

    def _pump(self):
        for line in self._proc.stdout:
            self._queue.put(line)
        self._queue.put(None)

    def send(self, obj):
        self._proc.stdin.write(_dumps(obj) + "\n")
        self._proc.stdin.flush()

    def recv(self, timeout):
        try:
            line = self._queue.get(timeout=timeout)
        except queue.Empty:
            raise ProtocolError("timed out waiting for the agent") from None
        if line is None:
            raise ProtocolError("agent process closed its stdout")
        try:
            return json.loads(line)
        except ValueError:
            raise ProtocolError("reply is not valid JSON") from None

    def close(self):
        try:
            self._proc.stdin.close()
        except OSError:
            pass


def _parse_action(reply: dict, mode: str):
    if reply.get("kind") != "action":
        raise ProtocolError(f"expected an action message, got {reply.get('kind')!r}")
    if mode == "waypoint":
        wp = reply.get("waypoint")
        if not isinstance(wp, int) or not (0 <= wp <= 8):
            raise ProtocolError(f"waypoint index {wp!r} out of range")
        return wp
    raw = reply.get("raw")
    if raw not in RAW_ACTIONS:
        raise ProtocolError(f"unknown raw action {raw!r}")
    return raw


def _scores_to_obj(scores: EpisodeScores) -> dict:
    return {"success": scores.success, "dspl": scores.dspl, "dsna": scores.dsna,
            "spl": scores.spl, "sna": scores.sna,
            "g_meters": scores.g_meters, "g_actions": scores.g_actions,
            "p_meters": scores.p_meters, "a_actions": scores.a_actions}


def episode_start_obj(engine: Engine, index: int) -> dict:
    cfg = engine.config
    return {
        "kind": "episode_start",
        "episode_index": index,
        "mode": cfg.mode,
        "sample_rate": cfg.sample_rate,
        "spectrogram_dims": list(SPECTROGRAM_SHAPES[cfg.sample_rate]),
        "scan_dims": {"ray_count": cfg.scan.ray_count, "fov_deg": cfg.scan.fov_deg,
                      "max_range": cfg.scan.max_range},
        "map": {"height": cfg.grid.height, "width": cfg.grid.width,
                "resolution": cfg.grid.resolution},
        "start": _pose_to_obj(cfg.start),
        "step_limit": cfg.step_limit,
    }


def serve_session(engines, channel: LineChannel,
                  timeout: float = DEFAULT_ACTION_TIMEOUT) -> list[EpisodeLog]:
    """Run every engine against one connected agent; returns the logs.

    Protocol: the agent opens with hello; per episode the harness sends
    episode_start, then alternates observation/action until done, then
    episode_end with the outcome and oracle scores; shutdown closes.
    """
    hello = channel.recv(timeout)
    if hello.get("kind") != "hello":
        channel.send({"kind": "error", "message": "expected hello"})
        raise ProtocolError("agent did not say hello")
    if hello.get("protocol_version") != PROTOCOL_VERSION:
        msg = (f"protocol version mismatch: harness {PROTOCOL_VERSION}, "
               f"agent {hello.get('protocol_version')}")
        channel.send({"kind": "error", "message": msg})
        raise ProtocolError(msg)

    logs = []
    for index, engine in enumerate(engines):
        obs = engine.reset()
        channel.send(episode_start_obj(engine, index))
        reward = 0.0
        intermediate = [] if engine.config.mode == "waypoint" else None
        while not engine.done:
            channel.send(observation_to_obj(obs, reward, intermediate))
            try:
                action = _parse_action(channel.recv(timeout), engine.config.mode)
            except ProtocolError as e:
                channel.send({"kind": "error", "message": str(e)})
                engine.abort()
                break
            if engine.config.mode == "waypoint":
                obs, reward, done, info = engine.step_waypoint(action)
                raw_objs = [observation_to_obj(o, r)
                            for o, r in zip(info["observations"],
                                            info["observation_rewards"])]
                # the final raw observation is the top-level payload
                intermediate = raw_objs[:-1] if obs is not None else raw_objs
            else:
                obs, reward, done, info = engine.step_raw(action)
        scores, _ = score_log(engine.log)
        channel.send({"kind": "episode_end", "outcome": engine.log.outcome,
                      "reward": reward, "scores": _scores_to_obj(scores),
                      "steps": len(engine.log.steps),
                      "total_reward": engine.log.total_reward})
        logs.append(engine.log)
    channel.send({"kind": "shutdown"})
    return logs


def serve_tcp(engines, host: str = "127.0.0.1", port: int = 0,
              timeout: float = DEFAULT_ACTION_TIMEOUT,
              announce=None) -> list[EpisodeLog]:
    """Listen, accept one agent connection, serve the episodes.

    Concurrent sessions are independent serve_tcp calls (engines are never
    shared). ``announce`` receives the bound (host, port) before accepting,
    so callers can use an ephemeral port.
    """
    with socket.create_server((host, port)) as srv:
        if announce is not None:
            announce(srv.getsockname())
        conn, _ = srv.accept()
        channel = SocketChannel(conn)
        try:
            return serve_session(engines, channel, timeout=timeout)
        finally:
            channel.close()


def serve_subprocess(engines, cmd: list[str],
                     timeout: float = DEFAULT_ACTION_TIMEOUT) -> list[EpisodeLog]:
    """Spawn an agent process and serve it over its stdin/stdout."""
    proc = subprocess.Popen(cmd, stdin=subprocess.PIPE, stdout=subprocess.PIPE,
                            text=True, bufsize=1)
    channel = PipeChannel(proc)
    try:
        return serve_session(engines, channel, timeout=timeout)
    finally:
        channel.close()
        proc.wait(timeout=10)
