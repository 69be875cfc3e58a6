import json
import socket
import threading

import numpy as np
import pytest

from davnav.engine import Engine, EpisodeConfig
from davnav.gridmap import EAST, AgentPose, MapGenParams, generate_map
from davnav.protocol import (PROTOCOL_VERSION, GreedyAgent, OracleAgent,
                             RandomAgent, SocketChannel, config_from_obj,
                             config_to_obj, decode_tensor, encode_tensor,
                             log_from_jsonl, log_to_jsonl, run_episode,
                             score_log, serve_session)
from davnav.scenario import ScenarioConfig
from davnav.soundbank import synthesize_bank

BANK = synthesize_bank(seed=3, count=10)
GRID = generate_map(seed=21, params=MapGenParams(width=16, height=16, rooms=4))


def make_config(seed=0, **kw):
    kw.setdefault("target_sound", "sound_000")
    kw.setdefault("start", AgentPose(GRID.free_cells()[0], EAST))
    kw.setdefault("step_limit", 50)
    kw.setdefault("move_prob", 0.0)
    return EpisodeConfig(grid=GRID, seed=seed, **kw)


# ---------------------------------------------------------------------------
# codecs
# ---------------------------------------------------------------------------

def test_tensor_round_trip_bit_identical():
    rng = np.random.default_rng(0)
    spec = np.log1p(np.abs(rng.standard_normal((65, 26, 2))))
    wire = encode_tensor(spec)
    back = decode_tensor(wire)
    assert back.shape == (65, 26, 2)
    assert np.array_equal(back, spec.astype(np.float32))
    assert encode_tensor(back) == wire  # serialize(parse(x)) == x


def test_config_round_trip():
    cfg = make_config(seed=17, scenario=ScenarioConfig(complex_enabled=True),
                      mode="waypoint", reward_mode="intersection",
                      tags={"motion": "static"})
    back = config_from_obj(config_to_obj(cfg))
    assert back == cfg


def test_log_round_trip_and_replay():
    cfg = make_config(seed=11, move_prob=0.3,
                      scenario=ScenarioConfig(complex_enabled=True))
    log = run_episode(Engine(cfg, BANK, render_audio=False), RandomAgent(seed=1))
    text = log_to_jsonl(log)
    assert log_to_jsonl(log_from_jsonl(text)) == text

    engine = Engine(cfg, BANK, render_audio=False)
    engine.reset()
    for rec in log.steps:
        engine.step_raw(rec.action)
    assert log_to_jsonl(engine.log) == text


def test_waypoint_log_replay():
    cfg = make_config(seed=13, mode="waypoint", move_prob=0.3)
    log = run_episode(Engine(cfg, BANK, render_audio=False), RandomAgent(seed=4))
    text = log_to_jsonl(log)
    engine = Engine(cfg, BANK, render_audio=False)
    engine.reset()
    for wp in [r.waypoint for r in log.steps if r.waypoint is not None]:
        engine.step_waypoint(wp)
    assert log_to_jsonl(engine.log) == text


# ---------------------------------------------------------------------------
# baselines
# ---------------------------------------------------------------------------

def test_random_agent_seeds_diverge_and_respect_limit():
    logs = [run_episode(Engine(make_config(seed=5), BANK, render_audio=False),
                        RandomAgent(seed=s)) for s in (1, 2, 3)]
    texts = {log_to_jsonl(lg) for lg in logs}
    assert len(texts) == 3
    for lg in logs:
        assert len(lg.steps) <= 50


def test_greedy_first_action_for_pure_left_source():
    # hard-left source: the right channel is all zeros, so the agent rotates left
    from davnav.acoustics import compute_spectrogram, render_source
    from davnav.engine import Observation
    from davnav.gridmap import ray_scan
    from davnav.soundbank import step_slice

    cfg = make_config(seed=0)
    frame = render_source(step_slice(BANK.get("sound_000"), 0), np.pi / 2, 2.0,
                          cfg.acoustics, cfg.sample_rate)
    assert np.all(frame.right == 0.0)
    obs = Observation(spectrogram=compute_spectrogram(frame),
                      scan=ray_scan(GRID, cfg.start), collided=False,
                      step_index=0, pose=cfg.start)
    agent = GreedyAgent()
    agent.begin_episode(Engine(cfg, BANK, render_audio=False))
    assert agent.act(obs) == "RotateLeft"


def test_oracle_succeeds_with_unit_dspl():
    for seed in (2, 9, 31):
        cfg = make_config(seed=seed, move_prob=0.3, step_limit=120)
        log = run_episode(Engine(cfg, BANK, render_audio=False), OracleAgent())
        assert log.outcome == "success"
        scores, intercept = score_log(log)
        assert scores.dspl == pytest.approx(1.0, abs=1e-9)
        assert log.steps[-1].action == "Stop"
        assert len(log.steps) == intercept.t_star + 1


def test_oracle_on_static_targets_gives_unit_spl():
    for seed in (4, 8):
        cfg = make_config(seed=seed, move_prob=0.0, step_limit=120)
        log = run_episode(Engine(cfg, BANK, render_audio=False), OracleAgent())
        scores, _ = score_log(log)
        assert log.outcome == "success"
        assert scores.spl == pytest.approx(1.0, abs=1e-9)


# ---------------------------------------------------------------------------
# wire sessions
# ---------------------------------------------------------------------------

class WireClient:
    def __init__(self):
        server, client = socket.socketpair()
        self.channel = SocketChannel(server)
        self._sock = client
        self._file = client.makefile("rwb")

    def send(self, obj):
        self._file.write((json.dumps(obj) + "\n").encode())
        self._file.flush()

    def recv(self):
        line = self._file.readline()
        assert line, "server closed"
        return json.loads(line)

    def serve(self, engines, timeout=5.0):
        out = {}

        def run():
            try:
                out["logs"] = serve_session(engines, self.channel, timeout=timeout)
            except Exception as e:  # surfaced by the test
                out["error"] = e

        t = threading.Thread(target=run)
        t.start()
        return t, out


def drive_scripted(client, decide):
    """Pump the client side; ``decide(obs_msg)`` returns the action object."""
    client.send({"kind": "hello", "protocol_version": PROTOCOL_VERSION,
                 "agent_name": "test"})
    transcript = []
    while True:
        msg = client.recv()
        transcript.append(msg)
        if msg["kind"] == "observation":
            client.send({"kind": "action", **decide(msg)})
        elif msg["kind"] == "shutdown":
            return transcript
        elif msg["kind"] == "error":
            pass  # harness aborts the episode; keep reading


def test_session_immediate_stop_fails():
    client = WireClient()
    engines = [Engine(make_config(seed=6), BANK)]
    thread, out = client.serve(engines)
    transcript = drive_scripted(client, lambda m: {"raw": "Stop"})
    thread.join(10)
    assert "error" not in out
    [log] = out["logs"]
    assert log.outcome == "failure_wrong_stop"  # spawn is never co-located
    ends = [m for m in transcript if m["kind"] == "episode_end"]
    assert len(ends) == 1 and ends[0]["outcome"] == "failure_wrong_stop"
    assert ends[0]["steps"] == 1


def test_session_bad_waypoint_aborts_episode():
    client = WireClient()
    engines = [Engine(make_config(seed=6, mode="waypoint"), BANK)]
    thread, out = client.serve(engines)
    client.send({"kind": "hello", "protocol_version": PROTOCOL_VERSION,
                 "agent_name": "bad"})
    errors = []
    while True:
        msg = client.recv()
        if msg["kind"] == "observation":
            client.send({"kind": "action", "waypoint": 9})
        elif msg["kind"] == "error":
            errors.append(msg)
        elif msg["kind"] == "shutdown":
            break
    thread.join(10)
    assert errors and "out of range" in errors[0]["message"]
    [log] = out["logs"]
    assert log.outcome == "failure_wrong_stop"


def test_session_version_mismatch_rejected():
    client = WireClient()
    engines = [Engine(make_config(seed=6), BANK)]
    thread, out = client.serve(engines)
    client.send({"kind": "hello", "protocol_version": 999, "agent_name": "old"})
    msg = client.recv()
    assert msg["kind"] == "error" and "version" in msg["message"]
    thread.join(10)
    assert isinstance(out.get("error"), Exception)


def test_remote_policy_matches_in_process_logs():
    # the same fixed action script, in-process and over the wire
    script = ["Forward", "RotateLeft", "Forward", "Forward", "Stop"]
    cfg = make_config(seed=19, move_prob=0.3)

    engine = Engine(cfg, BANK)
    engine.reset()
    for a in script:
        if engine.done:
            break
        engine.step_raw(a)
    local_text = log_to_jsonl(engine.log)

    client = WireClient()
    thread, out = client.serve([Engine(cfg, BANK)])
    it = iter(script)
    drive_scripted(client, lambda m: {"raw": next(it)})
    thread.join(10)
    assert log_to_jsonl(out["logs"][0]) == local_text


def test_observation_payload_carries_tensor_and_scan():
    client = WireClient()
    engines = [Engine(make_config(seed=6), BANK)]
    thread, out = client.serve(engines)
    seen = {}

    def decide(msg):
        if not seen:
            seen.update(msg)
        return {"raw": "Stop"}

    drive_scripted(client, decide)
    thread.join(10)
    spec = decode_tensor(seen["spectrogram"])
    assert spec.shape == (65, 26, 2)
    assert seen["reward"] == 0.0
    assert len(seen["scan"]["ranges"]) == seen["scan"]["ray_count"]
    assert seen["pose"]["heading"] == "East"
