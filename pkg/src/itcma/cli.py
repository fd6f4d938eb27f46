"""Command-line entry point: generate, train, eval, trace.

Exit codes: 0 success, 2 usage error, 3 missing or protected file,
4 malformed input file (memory store, trace, config), 5 remote endpoint
misconfigured.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import replace
from pathlib import Path
from typing import Sequence

from . import __version__
from .agent import (
    TRAIN_SEED_OFFSET,
    AgentConfig,
    expert_script,
    read_trace,
    run_episode,
    train_bc,
    train_seeds,
    write_trace,
)
from .channel import render_prompt
from .decision import AblationMask, GreedyPolicy, RemotePolicy, ScriptedPolicy
from .drive import DriveWeights
from .field import FieldWeights
from .forecast import HeuristicForecaster, RemoteForecaster
from .llm import DEFAULT_TIMEOUT, ChatClient, ChatConfig, ChatError
from .memory import DiffCache, MemoryFormatError, MemoryStore
from .report import aggregate, format_table, plot_results, write_json
from .world import expert_trajectory, generate_world, legal_actions, load_world_def, observe

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

log = logging.getLogger("itcma")

EXIT_OK, EXIT_USAGE, EXIT_FILE, EXIT_FORMAT, EXIT_REMOTE = 0, 2, 3, 4, 5
SUITE_SIZES = {"seen": 140, "unseen": 34}

# flag defaults; flags > config file > these
DEFAULTS = {
    "split": "both",
    "episodes": None,
    "seed": 0,
    "max_steps": 20,
    "policy": "greedy",
    "forecaster": "heuristic",
    "trained": None,
    "ablate": "",
    "jobs": None,
    "out": "runs/eval",
    "online_memory": False,
    "llm_timeout": DEFAULT_TIMEOUT,
    "expert": False,
    "script": None,
    "plot": False,
    "world": None,
    "retention_capacity": 4,
    "window": 3,
    "threshold": None,
    "memory_gate": 0.01,
    "priors": False,
    "drive_weights": [1.0, 1.0, 1.0],
    "field_weights": [0.5, 0.5],
}


class CliError(Exception):
    def __init__(self, message: str, code: int):
        super().__init__(message)
        self.code = code


def _build_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty", "--tags"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True,
            text=True,
            timeout=5,
        )
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"itcma {__version__}"


def merge_settings(args: argparse.Namespace) -> dict:
    settings = dict(DEFAULTS)
    if getattr(args, "config", None):
        try:
            cfg = tomllib.loads(Path(args.config).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise CliError(f"config file not found: {args.config}", EXIT_FILE)
        except tomllib.TOMLDecodeError as exc:
            raise CliError(f"bad config file {args.config}: {exc}", EXIT_FORMAT)
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}", EXIT_FORMAT)
        settings.update(cfg)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None and val is not False:
            settings[key] = val
    return settings


def agent_config(settings: dict) -> AgentConfig:
    return AgentConfig(
        retention_capacity=int(settings["retention_capacity"]),
        window=int(settings["window"]),
        threshold=settings["threshold"],
        drive_weights=DriveWeights(*settings["drive_weights"]),
        field_weights=FieldWeights(*settings["field_weights"]),
        policy=settings["policy"],
        forecaster=settings["forecaster"],
        max_steps=int(settings["max_steps"]),
        memory_gate=float(settings["memory_gate"]),
        online_memory=bool(settings["online_memory"]),
        priors=bool(settings["priors"]),
    )


def _load_store(path: str | None, config: AgentConfig) -> MemoryStore:
    if path is None:
        return MemoryStore(embedding_dim=config.embedding_dim)
    if not Path(path).exists():
        raise CliError(f"memory file not found: {path}", EXIT_FILE)
    try:
        return MemoryStore.load(path, expected_dim=config.embedding_dim)
    except (MemoryFormatError, ValueError, KeyError) as exc:
        raise CliError(f"cannot load memory {path}: {exc}", EXIT_FORMAT)


# ---------------------------------------------------------------- workers

_WORKER: dict = {}


def _init_worker(store_path: str | None, config_dict: dict, world_path: str | None) -> None:
    config = AgentConfig.from_dict(config_dict)
    store = _load_store(store_path, config)
    _WORKER.update(
        store=store,
        cache=DiffCache(store, config.field_weights),
        world=load_world_def(world_path),
    )


def _make_chat(timeout: float) -> ChatClient:
    return ChatClient(ChatConfig.from_env(timeout))


def _run_job(job: dict) -> dict:
    config = AgentConfig.from_dict(job["config"])
    world = _WORKER["world"]
    seed, split = job["seed"], job["split"]
    if config.policy == "scripted":
        if job["expert"]:
            policy = ScriptedPolicy(expert_script(seed, split, config, world))
        else:
            policy = ScriptedPolicy(job["script"])
    elif config.policy == "remote":
        policy = RemotePolicy(_make_chat(job["llm_timeout"]))
    else:
        policy = GreedyPolicy()
    forecaster = HeuristicForecaster(config.memory_gate, config.field_weights)
    if config.forecaster == "remote":
        forecaster = RemoteForecaster(_make_chat(job["llm_timeout"]), forecaster)
    report = run_episode(config, seed, split, _WORKER["store"], policy, forecaster, world, _WORKER["cache"])
    if job["trace_dir"]:
        tdir = Path(job["trace_dir"])
        tdir.mkdir(parents=True, exist_ok=True)
        write_trace(tdir / f"{split}-{seed:04d}.jsonl", config, report)
    out = report.summary()
    out["config"] = job["label"]
    return out


# --------------------------------------------------------------- commands


def cmd_generate(args: argparse.Namespace) -> int:
    world = load_world_def(args.world)
    for seed in range(args.seed, args.seed + args.episodes):
        state, goal = generate_world(seed, args.split, world, max_steps=args.max_steps)
        steps, _, _ = expert_trajectory(state, goal, world)
        rec = {
            "seed": seed,
            "split": args.split,
            "layout_id": state.layout.layout_id,
            "task_type": goal.task_type,
            "goal": goal.text,
            "observation": observe(state, world),
            "action_space": legal_actions(state, world),
            "expert_plan": [a for _, a in steps],
        }
        if args.json:
            print(json.dumps(rec, sort_keys=True))
        else:
            print(f"seed {seed} [{args.split}] layout {rec['layout_id']} {goal.task_type}")
            print(f"  {rec['observation']}")
            print(f"  expert: {' | '.join(rec['expert_plan'])}")
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    settings = merge_settings(args)
    config = agent_config(settings)
    out = Path(args.out)
    if out.exists() and not args.force:
        raise CliError(f"{out} exists; pass --force to overwrite", EXIT_FILE)
    world = load_world_def(settings["world"])
    store = MemoryStore(embedding_dim=config.embedding_dim)
    train_bc(config, train_seeds(args.n, args.seed_offset), store, world)
    out.parent.mkdir(parents=True, exist_ok=True)
    store.save(out)
    print(f"{len(store)} records from {args.n} expert episodes -> {out}")
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    settings = merge_settings(args)
    config = agent_config(settings)
    if config.policy == "scripted" and not settings["expert"] and not settings["script"]:
        raise CliError("--policy scripted needs --expert or --script FILE", EXIT_USAGE)
    if "remote" in (config.policy, config.forecaster):
        try:
            ChatConfig.from_env(settings["llm_timeout"])
        except ChatError as exc:
            raise CliError(str(exc), EXIT_REMOTE)
    script = []
    if settings["script"]:
        try:
            script = ScriptedPolicy.from_file(settings["script"]).actions
        except FileNotFoundError:
            raise CliError(f"script file not found: {settings['script']}", EXIT_FILE)
    _load_store(settings["trained"], config)  # fail before any episode starts

    splits = ["seen", "unseen"] if settings["split"] == "both" else [settings["split"]]
    seeds = {
        s: list(range(settings["seed"], settings["seed"] + (settings["episodes"] or SUITE_SIZES[s])))
        for s in splits
    }
    try:
        extra = [AblationMask.parse(a) for a in str(settings["ablate"]).split(",") if a.strip()]
    except ValueError as exc:
        raise CliError(str(exc), EXIT_USAGE)
    masks = [AblationMask()] + [m for m in extra if m != AblationMask()]
    out = Path(settings["out"])
    out.mkdir(parents=True, exist_ok=True)
    jobs_n = settings["jobs"] or os.cpu_count() or 1

    manifest = {
        "command": "eval",
        "build": _build_describe(),
        "settings": {k: settings[k] for k in sorted(settings)},
        "config": config.to_dict(),
        "rows": [m.label for m in masks],
        "seeds": seeds,
        "outputs": {"results": str(out / "results.json"), "traces": str(out / "traces")},
    }
    write_json(out / "manifest.json", manifest)

    jobs = []
    for mask in masks:
        cfg = replace(config, mask=mask)
        for split in splits:
            for seed in seeds[split]:
                jobs.append(
                    {
                        "label": mask.label,
                        "config": cfg.to_dict(),
                        "split": split,
                        "seed": seed,
                        "expert": bool(settings["expert"]),
                        "script": script,
                        "llm_timeout": settings["llm_timeout"],
                        "trace_dir": str(out / "traces" / mask.label.replace(",", "+")),
                    }
                )
    init = (settings["trained"], config.to_dict(), settings["world"])
    if jobs_n <= 1:
        _init_worker(*init)
        episodes = [_run_job(j) for j in jobs]
    else:
        with ProcessPoolExecutor(max_workers=jobs_n, initializer=_init_worker, initargs=init) as pool:
            episodes = list(pool.map(_run_job, jobs, chunksize=4))

    rows = aggregate(episodes, [m.label for m in masks])
    write_json(out / "results.json", {"rows": rows, "episodes": episodes})
    print(format_table(rows))
    print(f"results: {out / 'results.json'}")
    if settings["plot"]:
        for p in plot_results(rows, out):
            print(f"figure: {p}")
    return EXIT_OK


def render_trace_step(record: dict) -> str:
    return render_prompt(
        record["observation"],
        record.get("goal", ""),
        record["action_space"],
        record["channel_text"],
        selected=record["chosen_action"],
    )


def cmd_trace(args: argparse.Namespace) -> int:
    try:
        header, steps = read_trace(args.path)
    except FileNotFoundError:
        raise CliError(f"trace file not found: {args.path}", EXIT_FILE)
    except (ValueError, json.JSONDecodeError) as exc:
        raise CliError(str(exc), EXIT_FORMAT)
    if args.step is not None:
        if not 0 <= args.step < len(steps):
            raise CliError(f"step {args.step} out of range (trace has {len(steps)} steps)", EXIT_USAGE)
        chosen = [steps[args.step]]
    else:
        chosen = steps
    for k, rec in enumerate(chosen):
        if args.json:
            print(json.dumps(rec, sort_keys=True))
        else:
            if k:
                print()
            sys.stdout.write(render_trace_step(rec))
    return EXIT_OK


# ------------------------------------------------------------------ parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="itcma", description="Internal time-consciousness agent on a household text world.")
    p.add_argument("--version", action="version", version=f"itcma {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate", help="print generated tasks and their expert plans")
    g.add_argument("--split", choices=["seen", "unseen"], default="seen")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--episodes", type=int, default=1)
    g.add_argument("--max-steps", type=int, default=20)
    g.add_argument("--world", help="TOML world-definition override")
    g.add_argument("--json", action="store_true")
    g.set_defaults(func=cmd_generate)

    t = sub.add_parser("train", help="fill a memory store with expert trajectories")
    t.add_argument("--out", required=True, help="memory store path (JSONL)")
    t.add_argument("-n", type=int, default=SUITE_SIZES["seen"], help="number of seen-split training seeds")
    t.add_argument("--seed-offset", type=int, default=TRAIN_SEED_OFFSET, help="first training seed")
    t.add_argument("--force", action="store_true", help="overwrite an existing store")
    t.add_argument("--config", help="TOML config file")
    t.add_argument("--max-steps", type=int)
    t.add_argument("--world", help="TOML world-definition override")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("eval", help="run evaluation suites and print the completion table")
    e.add_argument("--config", help="TOML config file (flags take precedence)")
    e.add_argument("--split", choices=["seen", "unseen", "both"])
    e.add_argument("--episodes", type=int, help="episodes per split (default: full suite)")
    e.add_argument("--seed", type=int, help="first evaluation seed")
    e.add_argument("--max-steps", type=int)
    e.add_argument("--policy", choices=["greedy", "scripted", "remote"])
    e.add_argument("--expert", action="store_true", help="scripted policy replays the expert plan")
    e.add_argument("--script", help="scripted policy: file with one action per line")
    e.add_argument("--forecaster", choices=["heuristic", "remote"])
    e.add_argument("--trained", help="memory store from `itcma train`")
    e.add_argument("--ablate", help="comma list of no-channel,no-memory,no-drive (each adds a row)")
    e.add_argument("--jobs", type=int, help="parallel episode workers (default: logical cores)")
    e.add_argument("--out", help="output directory")
    e.add_argument("--online-memory", action="store_true", help="append experiences to memory during episodes")
    e.add_argument("--priors", action="store_true", help="let forecasts guess object locations from commonsense places")
    e.add_argument("--llm-timeout", type=float, help="remote request timeout in seconds")
    e.add_argument("--plot", action="store_true", help="also save bar-chart PNGs of the table")
    e.add_argument("--world", help="TOML world-definition override")
    e.set_defaults(func=cmd_eval)

    r = sub.add_parser("trace", help="pretty-print an episode trace")
    r.add_argument("path")
    r.add_argument("--step", type=int, help="step index (default: all steps)")
    r.add_argument("--json", action="store_true", help="print raw trace records")
    r.set_defaults(func=cmd_trace)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CliError as exc:
        print(f"itcma: error: {exc}", file=sys.stderr)
        return exc.code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
