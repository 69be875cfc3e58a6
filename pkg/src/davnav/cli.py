"""Benchmark command line: dataset generation, suite running, scoring,
replay verification, and trajectory plots.

Subcommands: gen-maps, gen-sounds, gen-suite, run-suite, score, replay, plot.
Suites and episode logs are self-contained (maps and sound-bank recipes are
embedded), so every artifact can be regenerated or replayed from the file
alone. All generation is reproducible from (seed, config); reruns produce
byte-identical logs and tables. Set DAVNAV_LOG=debug|info for logging.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .acoustics import AcousticParams, DecayTail
from .engine import Engine, EpisodeConfig, ScanConfig
from .gridmap import AgentPose, GridMap, MapGenParams, generate_map, parse_map, serialize_map
from .metrics import aggregate, intercept_oracle
from .protocol import (config_from_obj, config_to_obj, log_from_jsonl,
                       log_to_jsonl, make_baseline, min_action_path,
                       run_episode, score_log, serve_subprocess, serve_tcp)
from .scenario import ScenarioConfig
from .soundbank import SoundBank, save_split_manifest, save_wav, synthesize_bank

log = logging.getLogger("davnav")

CONFIG_VERSION = 1
SUITE_VERSION = 1

CONDITION_KEYS = ("sound_split", "scenario", "motion")
CONDITION_VALUES = {
    "sound_split": ("heard", "unheard"),
    "scenario": ("clean", "complex"),
    "motion": ("static", "dynamic"),
}


@dataclass
class BenchmarkSuite:
    name: str
    seed: int
    episodes: list[EpisodeConfig]


# ---------------------------------------------------------------------------
# Run config and suite generation
# ---------------------------------------------------------------------------

DEFAULT_CONFIG = {
    "version": CONFIG_VERSION,
    "name": "suite",
    "seed": 0,
    "episodes": 50,
    "sample_rate": 16000,
    "maps": {"generate": {"count": 4, "width": 20, "height": 20, "rooms": 5,
                          "room_min": 3, "room_max": 6, "resolution": 0.5}},
    "sounds": {"synthesize": {"count": 12, "duration": 2.0}},
    "sound_split": "heard",
    "scenario": {},
    "target_motion": "static",  # static | dynamic | mixed (half/half)
    "move_prob": 0.3,
    "mode": "raw",
    "reward_mode": "current_position",
    "step_limit": 500,
    "scan": {},
    "acoustics": {},
}


def load_run_config(path) -> dict:
    with open(path) as f:
        cfg = json.load(f)
    if cfg.get("version") != CONFIG_VERSION:
        raise ValueError(f"unsupported config version {cfg.get('version')!r}")
    merged = dict(DEFAULT_CONFIG)
    merged.update(cfg)
    return merged


def build_bank(bank_spec: dict) -> SoundBank:
    """Rebuild a sound bank from the recipe embedded in configs and logs."""
    if "synthesize" in bank_spec:
        return synthesize_bank(**bank_spec["synthesize"])
    raise ValueError(f"cannot rebuild bank from spec {bank_spec!r}")


def _build_maps(cfg: dict, rng: np.random.Generator) -> list[GridMap]:
    spec = cfg["maps"]
    if "paths" in spec:
        maps = []
        for p in spec["paths"]:
            with open(p) as f:
                maps.append(parse_map(f.read()))
        return maps
    gen = dict(spec["generate"])
    count = gen.pop("count", 1)
    resolution = gen.pop("resolution", 0.5)
    params = MapGenParams(**gen)
    seeds = [int(rng.integers(2**48)) for _ in range(count)]
    return [generate_map(seed=s, params=params, resolution=resolution) for s in seeds]


def _bank_spec(cfg: dict) -> dict:
    spec = dict(cfg["sounds"])
    if "synthesize" in spec:
        synth = dict(spec["synthesize"])
        synth.setdefault("seed", cfg["seed"] + 1)
        synth.setdefault("sample_rate", cfg["sample_rate"])
        return {"synthesize": synth}
    raise ValueError("sounds config must contain a 'synthesize' recipe")


def _episode_feasible(config: EpisodeConfig, bank: SoundBank) -> bool:
    """An episode is kept only if the intercept oracle can catch the
    previewed target trajectory within the step limit."""
    try:
        engine = Engine(config, bank, render_audio=False)
        engine.reset()
    except ValueError:
        return False
    tau = engine.peek_target_trajectory([config.start.cell], config.step_limit - 1)
    return intercept_oracle(config.grid, config.start, tau).feasible


def generate_suite(cfg: dict) -> tuple[BenchmarkSuite, SoundBank]:
    """Generate a seeded, feasibility-filtered episode suite from a run
    config. Infeasible draws are rejected and resampled deterministically."""
    rng = np.random.default_rng(np.random.SeedSequence(cfg["seed"]))
    maps = _build_maps(cfg, rng)
    bank_spec = _bank_spec(cfg)
    bank = build_bank(bank_spec)

    split = cfg["sound_split"]
    if split not in ("heard", "unheard"):
        raise ValueError("sound_split must be 'heard' or 'unheard'")
    # Unheard evaluation draws targets AND disturbances from the test split.
    pool_split = "train" if split == "heard" else "test"
    sound_ids = bank.ids(pool_split)
    if not sound_ids:
        raise ValueError(f"bank has no {pool_split} sounds")

    scenario = ScenarioConfig(**{
        **{"complex_enabled": False,
           "time_mask_param": 32 if cfg["sample_rate"] == 44100 else 12,
           "freq_mask_param": 12},
        **cfg["scenario"]})
    acoustics = AcousticParams(**{
        k: (DecayTail(**v) if k == "decay_tail" else v)
        for k, v in cfg["acoustics"].items()})
    scan = ScanConfig(**cfg["scan"])
    motion = cfg["target_motion"]
    if motion not in ("static", "dynamic", "mixed"):
        raise ValueError("target_motion must be static, dynamic or mixed")

    episodes: list[EpisodeConfig] = []
    used_seeds: set[int] = set()
    for i in range(cfg["episodes"]):
        if motion == "mixed":
            dynamic = i % 2 == 1
        else:
            dynamic = motion == "dynamic"
        p = cfg["move_prob"] if dynamic else 0.0
        for _ in range(200):
            grid = maps[int(rng.integers(len(maps)))]
            free = grid.free_cells()
            start = AgentPose(cell=free[int(rng.integers(len(free)))],
                              heading=int(rng.integers(4)))
            target_sound = sound_ids[int(rng.integers(len(sound_ids)))]
            seed = int(rng.integers(2**48))
            if seed in used_seeds:
                continue
            candidate = EpisodeConfig(
                grid=grid, target_sound=target_sound, start=start, seed=seed,
                sample_rate=cfg["sample_rate"], scenario=scenario,
                move_prob=p, mode=cfg["mode"], reward_mode=cfg["reward_mode"],
                step_limit=cfg["step_limit"], acoustics=acoustics, scan=scan,
                sound_pool=tuple(sound_ids), bank_spec=bank_spec,
                tags={"sound_split": split,
                      "scenario": "complex" if scenario.complex_enabled else "clean",
                      "motion": "dynamic" if dynamic else "static",
                      "p": repr(p)})
            if _episode_feasible(candidate, bank):
                used_seeds.add(seed)
                episodes.append(candidate)
                break
        else:
            raise RuntimeError(f"could not draw a feasible episode {i}")
    return BenchmarkSuite(cfg["name"], cfg["seed"], episodes), bank


def suite_to_json(suite: BenchmarkSuite) -> str:
    return json.dumps({
        "version": SUITE_VERSION, "name": suite.name, "seed": suite.seed,
        "episodes": [config_to_obj(c) for c in suite.episodes],
    }, indent=1)


def suite_from_json(text: str) -> BenchmarkSuite:
    obj = json.loads(text)
    if obj.get("version") != SUITE_VERSION:
        raise ValueError(f"unsupported suite version {obj.get('version')!r}")
    return BenchmarkSuite(obj["name"], obj["seed"],
                          [config_from_obj(o) for o in obj["episodes"]])


# ---------------------------------------------------------------------------
# Suite execution and scoring
# ---------------------------------------------------------------------------


def _write_atomic(path: Path, data: str):
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(data)
    os.replace(tmp, path)


def run_suite(suite: BenchmarkSuite, agent_spec: str, out_dir,
              render_audio: bool | None = None, timeout: float = 30.0) -> list[Path]:
    """Run every episode against an agent and write one log file each.

    agent_spec is a baseline name (random, greedy, oracle), ``tcp:host:port``
    (listen there and serve the connecting agent) or ``exec:cmd ...`` (spawn
    the agent process and serve it over stdio). The oracle never reads
    observations, so audio rendering is skipped for it unless forced.
    """
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    banks: dict[str, SoundBank] = {}

    def bank_for(cfg: EpisodeConfig) -> SoundBank:
        key = json.dumps(cfg.bank_spec, sort_keys=True)
        if key not in banks:
            banks[key] = build_bank(cfg.bank_spec)
        return banks[key]

    if render_audio is None:
        render_audio = agent_spec != "oracle"

    def engines():
        for cfg in suite.episodes:
            yield Engine(cfg, bank_for(cfg), render_audio=render_audio)

    if agent_spec.startswith("tcp:"):
        _, host, port = agent_spec.split(":")
        log.info("listening on %s:%s", host, port)
        logs = serve_tcp(engines(), host=host, port=int(port), timeout=timeout,
                         announce=lambda a: print(f"listening on {a[0]}:{a[1]}",
                                                  flush=True))
    elif agent_spec.startswith("exec:"):
        logs = serve_subprocess(engines(), agent_spec[5:].split(), timeout=timeout)
    else:
        logs = []
        for engine in engines():
            agent = make_baseline(agent_spec, seed=engine.config.seed)
            logs.append(run_episode(engine, agent))

    paths = []
    for i, episode_log in enumerate(logs):
        path = out / f"ep_{i:04d}.jsonl"
        _write_atomic(path, log_to_jsonl(episode_log))
        paths.append(path)
    return paths


def score_logs(log_dir) -> dict:
    """Aggregate scores per condition tag from a directory of episode logs.

    Every sound_split x scenario x motion combination appears in the result
    (n = 0 when absent) so downstream table schemas stay stable.
    """
    logs = []
    for path in sorted(Path(log_dir).glob("*.jsonl")):
        logs.append(log_from_jsonl(path.read_text()))
    if not logs:
        raise ValueError(f"no episode logs in {log_dir}")

    by_condition: dict[tuple, list] = {}
    for lg in logs:
        tags = lg.config.tags or {}
        key = tuple(tags.get(k, "?") for k in CONDITION_KEYS)
        by_condition.setdefault(key, []).append(score_log(lg)[0])

    conditions = {}
    for split in CONDITION_VALUES["sound_split"]:
        for scen in CONDITION_VALUES["scenario"]:
            for motion in CONDITION_VALUES["motion"]:
                key = (split, scen, motion)
                scores = by_condition.get(key)
                name = "/".join(key)
                if scores:
                    conditions[name] = aggregate(scores).as_dict()
                else:
                    conditions[name] = {"n": 0, "SR": None, "SPL": None,
                                        "SNA": None, "DSPL": None, "DSNA": None}
    for key, scores in by_condition.items():
        if key[0] not in CONDITION_VALUES["sound_split"]:
            conditions["/".join(key)] = aggregate(scores).as_dict()
    return {"episodes": len(logs), "conditions": conditions}


def format_results_table(results: dict) -> str:
    cols = ("n", "SR", "SPL", "SNA", "DSPL", "DSNA")
    width = max(len(name) for name in results["conditions"]) + 2
    lines = ["condition".ljust(width) + "".join(c.rjust(8) for c in cols)]
    for name, row in results["conditions"].items():
        cells = []
        for c in cols:
            v = row[c]
            if v is None:
                cells.append("-".rjust(8))
            elif c == "n":
                cells.append(str(v).rjust(8))
            else:
                cells.append(f"{v:.3f}".rjust(8))
        lines.append(name.ljust(width) + "".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Replay and plotting
# ---------------------------------------------------------------------------


def replay_log(text: str) -> bool:
    """Re-execute a log from its embedded config and compare byte-for-byte."""
    original = log_from_jsonl(text)
    bank = build_bank(original.config.bank_spec)
    engine = Engine(original.config, bank,
                    render_audio=False)  # rendering does not touch the log
    engine.reset()
    if original.config.mode == "waypoint":
        decisions = [r.waypoint for r in original.steps if r.waypoint is not None]
        for wp in decisions:
            engine.step_waypoint(wp)
    else:
        for rec in original.steps:
            engine.step_raw(rec.action)
    return log_to_jsonl(engine.log) == text


def plot_log(text: str, out_path):
    """Trajectory figure: agent path blue, target path red, the oracle's
    earliest-intersection path green; start poses marked as squares. The
    oracle path cells are listed in the figure so scores are auditable."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    episode = log_from_jsonl(text)
    grid = episode.config.grid
    scores, intercept = score_log(episode)

    fig, ax = plt.subplots(figsize=(6, 6))
    ax.imshow(grid.occupancy, cmap="gray_r", origin="upper")

    agent_cells = [episode.config.start.cell] + [r.pose.cell for r in episode.steps]
    target_cells = list(episode.trajectory)
    ax.plot([c[1] for c in agent_cells], [c[0] for c in agent_cells],
            "-o", color="tab:blue", markersize=2.5, linewidth=1.5, label="agent")
    ax.plot([c[1] for c in target_cells], [c[0] for c in target_cells],
            "-o", color="tab:red", markersize=2.5, linewidth=1.5, label="target")
    ax.plot(agent_cells[0][1], agent_cells[0][0], "s", color="tab:blue", markersize=8)
    ax.plot(target_cells[0][1], target_cells[0][0], "s", color="tab:red", markersize=8)

    oracle_cells = []
    if intercept.feasible:
        actions = min_action_path(grid, episode.config.start,
                                  intercept.catch_cell, prefer_short=True)
        pose = episode.config.start
        oracle_cells = [pose.cell]
        from .gridmap import HEADING_VECTORS
        heading = pose.heading
        for a in actions:
            if a == "Forward":
                dr, dc = HEADING_VECTORS[heading]
                oracle_cells.append((oracle_cells[-1][0] + dr, oracle_cells[-1][1] + dc))
            elif a == "RotateLeft":
                heading = (heading - 1) % 4
            elif a == "RotateRight":
                heading = (heading + 1) % 4
        ax.plot([c[1] for c in oracle_cells], [c[0] for c in oracle_cells],
                "--", color="tab:green", linewidth=2.0, label="oracle intercept")

    dspl = f"{scores.dspl:.3f}"
    title = (f"{grid.name}: {episode.outcome}, "
             f"g={scores.g_meters if scores.g_meters is not None else float('nan'):.2f} m, "
             f"p={scores.p_meters:.2f} m, DSPL={dspl}")
    ax.set_title(title, fontsize=9)
    path_note = " ".join(f"({r},{c})" for r, c in oracle_cells) or "infeasible"
    fig.text(0.01, 0.01, "oracle path: " + path_note, fontsize=6, wrap=True)
    ax.legend(loc="upper right", fontsize=7)
    fig.savefig(out_path, format=Path(str(out_path)).suffix.lstrip(".") or "svg")
    plt.close(fig)


# ---------------------------------------------------------------------------
# Argument parsing and subcommands
# ---------------------------------------------------------------------------


def _apply_overrides(cfg: dict, args) -> dict:
    cfg = dict(cfg)
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.episodes is not None:
        cfg["episodes"] = args.episodes
    if args.p is not None:
        cfg["move_prob"] = args.p
        if cfg["target_motion"] == "static" and args.p > 0:
            cfg["target_motion"] = "dynamic"
    if args.complex:
        cfg["scenario"] = {**cfg["scenario"], "complex_enabled": True}
    if args.mode is not None:
        cfg["mode"] = args.mode
    if args.reward is not None:
        cfg["reward_mode"] = ("current_position" if args.reward == "current"
                              else "intersection")
    return cfg


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", type=Path, help="run config JSON")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--episodes", type=int, default=None)
    p.add_argument("--p", type=float, default=None, help="target move probability")
    p.add_argument("--complex", action="store_true", help="enable complex audio scenarios")
    p.add_argument("--mode", choices=("raw", "waypoint"), default=None)
    p.add_argument("--reward", choices=("current", "intersection"), default=None)


def main(argv=None) -> int:
    level = {"debug": logging.DEBUG, "info": logging.INFO}.get(
        os.environ.get("DAVNAV_LOG", "").lower(), logging.WARNING)
    logging.basicConfig(level=level, format="%(name)s %(levelname)s %(message)s")

    ap = argparse.ArgumentParser(prog="davnav", description=__doc__)
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-maps", help="generate sealed room-and-corridor maps")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=4)
    p.add_argument("--width", type=int, default=20)
    p.add_argument("--height", type=int, default=20)
    p.add_argument("--rooms", type=int, default=5)
    p.add_argument("--resolution", type=float, default=0.5)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gen-sounds", help="synthesize a WAV sound bank with splits")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--count", type=int, default=12)
    p.add_argument("--rate", type=int, default=16000)
    p.add_argument("--duration", type=float, default=2.0)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("gen-suite", help="generate a feasibility-filtered episode suite")
    _add_config_flags(p)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("run-suite", help="run an agent over a suite and write logs")
    _add_config_flags(p)
    p.add_argument("--suite", type=Path, help="existing suite JSON (else built from --config)")
    p.add_argument("--agent", required=True,
                   help="random|greedy|oracle|tcp:host:port|exec:cmd ...")
    p.add_argument("--out", type=Path, required=True)
    p.add_argument("--timeout", type=float, default=30.0, help="seconds per agent action")
    p.add_argument("--audio", choices=("auto", "on", "off"), default="auto")

    p = sub.add_parser("score", help="aggregate logs into a results table")
    p.add_argument("--logs", type=Path, required=True)
    p.add_argument("--out", type=Path, help="write table + aggregate JSON here")

    p = sub.add_parser("replay", help="re-execute a log and verify bit-identity")
    p.add_argument("--log", type=Path, required=True)

    p = sub.add_parser("plot", help="render a trajectory figure from a log")
    p.add_argument("--log", type=Path, required=True)
    p.add_argument("--out", type=Path, required=True)

    args = ap.parse_args(argv)

    if args.command == "gen-maps":
        args.out.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng(args.seed)
        params = MapGenParams(width=args.width, height=args.height, rooms=args.rooms)
        for i in range(args.count):
            grid = generate_map(seed=int(rng.integers(2**48)), params=params,
                                resolution=args.resolution, name=f"map_{i:03d}")
            _write_atomic(args.out / f"map_{i:03d}.davmap", serialize_map(grid))
        print(f"wrote {args.count} maps to {args.out}")
        return 0

    if args.command == "gen-sounds":
        args.out.mkdir(parents=True, exist_ok=True)
        bank = synthesize_bank(seed=args.seed, count=args.count,
                               sample_rate=args.rate, duration=args.duration)
        for sid in bank.ids():
            save_wav(bank.get(sid), args.out / f"{sid}.wav")
        save_split_manifest(bank, args.out / "splits.txt")
        print(f"wrote {len(bank)} sounds to {args.out}")
        return 0

    if args.command == "gen-suite":
        cfg = _apply_overrides(load_run_config(args.config) if args.config
                               else dict(DEFAULT_CONFIG), args)
        suite, _ = generate_suite(cfg)
        _write_atomic(args.out, suite_to_json(suite))
        print(f"wrote suite {suite.name!r} with {len(suite.episodes)} episodes to {args.out}")
        return 0

    if args.command == "run-suite":
        if args.suite:
            suite = suite_from_json(args.suite.read_text())
        else:
            cfg = _apply_overrides(load_run_config(args.config) if args.config
                                   else dict(DEFAULT_CONFIG), args)
            suite, _ = generate_suite(cfg)
        render = {"auto": None, "on": True, "off": False}[args.audio]
        paths = run_suite(suite, args.agent, args.out, render_audio=render,
                          timeout=args.timeout)
        results = score_logs(args.out)
        table = format_results_table(results)
        _write_atomic(args.out / "results.txt", table)
        _write_atomic(args.out / "results.json",
                      json.dumps(results, indent=1, sort_keys=True) + "\n")
        print(f"wrote {len(paths)} logs to {args.out}")
        print(table, end="")
        return 0

    if args.command == "score":
        results = score_logs(args.logs)
        table = format_results_table(results)
        if args.out:
            args.out.mkdir(parents=True, exist_ok=True)
            _write_atomic(args.out / "results.txt", table)
            _write_atomic(args.out / "results.json",
                          json.dumps(results, indent=1, sort_keys=True) + "\n")
        print(table, end="")
        return 0

    if args.command == "replay":
        ok = replay_log(args.log.read_text())
        print("identical" if ok else "MISMATCH")
        return 0 if ok else 1

    if args.command == "plot":
        plot_log(args.log.read_text(), args.out)
        print(f"wrote {args.out}")
        return 0

    raise AssertionError("unhandled command")


if __name__ == "__main__":
    sys.exit(main())
