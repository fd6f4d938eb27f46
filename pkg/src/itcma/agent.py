"""The ITCMA loop: one agent step per observation, whole episodes, and BC training."""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path
from typing import Iterable, Sequence

from .channel import (
    DEFAULT_RETENTION,
    ChannelState,
    PrimalImpression,
    RetentionBuffer,
    assemble,
    push_impression,
)
from .decision import AblationMask, DecisionContext, DecisionPolicy, GreedyPolicy, PolicyExhausted, apply_mask, decide
from .drive import (
    DriveVector,
    DriveWeights,
    EmotionState,
    arousal,
    dominance,
    pleasure,
    score_actions,
    update_drive,
)
from .field import DEFAULT_DIM, Field, FieldWeights, HashEmbedder
from .forecast import ForecastRequest, HeuristicForecaster, ProtentionForecaster
from .memory import (
    ActivationResult,
    DiffCache,
    MemoryStore,
    TransitionRecord,
    activate,
    ingest_trajectory,
    render_record,
)
from .world import (
    ObservationParseError,
    WorldDef,
    WorldModel,
    default_world_def,
    expert_trajectory,
    generate_world,
    goal_satisfied,
    legal_actions,
    observe,
    step,
)

log = logging.getLogger(__name__)

TRAIN_SEED_OFFSET = 10_000
PHASES = ("perceive", "emotion", "activate", "forecast", "score", "decide")


@dataclass(frozen=True)
class AgentConfig:
    retention_capacity: int = DEFAULT_RETENTION
    window: int = 3
    threshold: float | None = None
    drive_weights: DriveWeights = DriveWeights()
    field_weights: FieldWeights = FieldWeights()
    mask: AblationMask = AblationMask()
    policy: str = "greedy"
    forecaster: str = "heuristic"
    max_steps: int = 20
    memory_gate: float = 0.01
    priors: bool = False
    online_memory: bool = False
    embedding_dim: int = DEFAULT_DIM

    def __post_init__(self) -> None:
        if self.retention_capacity < 1:
            raise ValueError("retention_capacity must be positive")
        if self.window < 0 or self.max_steps < 0:
            raise ValueError("window and max_steps must be nonnegative")
        if self.threshold is not None and self.threshold < 0:
            raise ValueError("threshold must be nonnegative")
        if self.embedding_dim < 1:
            raise ValueError("embedding_dim must be positive")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "AgentConfig":
        d = dict(d)
        if isinstance(d.get("drive_weights"), dict):
            d["drive_weights"] = DriveWeights(**d["drive_weights"])
        if isinstance(d.get("field_weights"), dict):
            d["field_weights"] = FieldWeights(**d["field_weights"])
        if isinstance(d.get("mask"), dict):
            d["mask"] = AblationMask(**d["mask"])
        return cls(**d)


class Agent:
    """Holds the channel, drive and per-episode bookkeeping of one agent.

    With the ``no_channel`` ablation the agent keeps no retention and its
    forecaster sees neither retention nor activated memory, so protentions
    come from the current impression alone.
    """

    def __init__(
        self,
        config: AgentConfig,
        world: WorldModel,
        store: MemoryStore | None = None,
        forecaster: ProtentionForecaster | None = None,
        policy: DecisionPolicy | None = None,
        goal_text: str = "",
        cache: DiffCache | None = None,
    ):
        self.config = config
        self.world = world
        self.store = store if store is not None else MemoryStore(embedding_dim=config.embedding_dim)
        self.forecaster = forecaster or HeuristicForecaster(config.memory_gate, config.field_weights)
        self.policy = policy or GreedyPolicy()
        self.goal_text = goal_text
        self.cache = cache
        self.drive = DriveVector()
        self.state: ChannelState | None = None
        self.step_index = -1
        self.prev_action: str | None = None
        self.prev_protention: Field | None = None
        self._pending: tuple[str, Field, str] | None = None
        self.trace: list[dict] = []

    @property
    def _capacity(self) -> int:
        return 0 if self.config.mask.no_channel else self.config.retention_capacity

    def _perceive(self, observation: str) -> PrimalImpression:
        fld = self.world.parse(observation)
        self.step_index += 1
        pi = PrimalImpression.perceive(fld, observation, self.step_index, after=self.prev_action)
        if self.state is None:
            self.state = assemble(RetentionBuffer((), self._capacity), pi)
        else:
            self.state = push_impression(self.state, pi, self.prev_action)
        return pi

    def _remember(self, observation: str) -> None:
        """Online memory: close the pending transition with its successor."""
        if self._pending is None:
            return
        obs, fld, act = self._pending
        self.store.append(
            TransitionRecord(
                field=fld,
                action_label=act,
                observation=obs,
                rendered_text=render_record(obs, act),
                successor_text=observation,
                sequence_index=self.store.next_index(),
                trajectory_id=self._trajectory_id,
            )
        )
        self._pending = None

    def agent_step(self, observation: str, action_space: Sequence[str]) -> str:
        """Run the full pipeline on one observation and return the chosen action."""
        cfg = self.config
        phases: list[str] = []
        if cfg.online_memory:
            if self.step_index < 0:
                self._trajectory_id = self.store.next_trajectory_id()
            self._remember(observation)

        pi = self._perceive(observation)
        phases.append("perceive")
        retention = self.state.retention.fields

        need = self.world.need(pi.field, observation)
        emotion = EmotionState(
            pleasure(need),
            arousal(pi.field, retention, cfg.field_weights),
            dominance(pi.field, self.prev_protention, cfg.field_weights),
        )
        self.drive = update_drive(self.drive, emotion, cfg.drive_weights)
        phases.append("emotion")

        activated = ActivationResult()
        if not cfg.mask.no_memory and len(self.store):
            query = retention + [pi.field]
            activated = activate(query, self.store, cfg.window, cfg.threshold, cfg.field_weights, self.cache)
            if self.cache is not None:
                self.cache.trim(query)
        self.state = assemble(self.state.retention, pi, activated)
        phases.append("activate")

        forecast_view = self.state
        if cfg.mask.no_channel:
            forecast_view = assemble(RetentionBuffer((), 0), pi)
        pre_text, _ = apply_mask(self.state, self.drive, {}, cfg.mask)
        req = ForecastRequest(pre_text, forecast_view, tuple(action_space), self.drive, self.world)
        protentions = self.forecaster.forecast(req)
        phases.append("forecast")

        raw_scores = score_actions(
            {a: (p.field, p.text) for a, p in protentions.items()},
            pi.field,
            retention,
            self.drive,
            self.world.need,
            prev_protention=self.prev_protention,
            current_arousal=emotion.arousal,
            weights=cfg.field_weights,
        )
        self.state = self.state.with_protentions(protentions)
        channel_text, scores = apply_mask(self.state, self.drive, raw_scores, cfg.mask)
        phases.append("score")

        ctx = DecisionContext(channel_text, scores, list(action_space), observation, self.goal_text)
        action = decide(self.policy, ctx)
        phases.append("decide")

        self.trace.append(
            {
                "step": self.step_index,
                "observation": observation,
                "goal": self.goal_text,
                "action_space": list(action_space),
                "channel_text": channel_text,
                "drive": self.drive.as_list(),
                "emotion": emotion.as_list(),
                "activated": {
                    "start": activated.start,
                    "end": activated.end,
                    "distance": activated.distance if activated else None,
                },
                "action_scores": scores,
                "chosen_action": action,
                "protention_texts": {a: p.text for a, p in protentions.items()},
                "dominance_reference": self.prev_action,
                "phases": phases,
            }
        )
        self.prev_protention = protentions[action].field
        self.prev_action = action
        if cfg.online_memory:
            self._pending = (observation, pi.field, action)
        return action

    def finish(self, final_observation: str) -> None:
        if self.config.online_memory:
            self._remember(final_observation)


@dataclass
class EpisodeReport:
    seed: int
    split: str
    task_type: str
    success: bool
    steps_taken: int
    error: str | None = None
    trace: list[dict] = dc_field(default_factory=list, repr=False)

    def summary(self) -> dict:
        return {
            "seed": self.seed,
            "split": self.split,
            "task_type": self.task_type,
            "success": self.success,
            "steps_taken": self.steps_taken,
            "error": self.error,
        }


def write_trace(path: str | Path, config: AgentConfig, report: EpisodeReport) -> None:
    """JSONL: a header line with the config and episode summary, then one line per step."""
    with Path(path).open("w", encoding="utf-8") as fh:
        fh.write(json.dumps({"config": config.to_dict(), "episode": report.summary()}, sort_keys=True) + "\n")
        for rec in report.trace:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_trace(path: str | Path) -> tuple[dict, list[dict]]:
    lines = [json.loads(ln) for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    if not lines or "config" not in lines[0]:
        raise ValueError(f"{path}: not a trace file")
    return lines[0], lines[1:]


def run_episode(
    config: AgentConfig,
    seed: int,
    split: str,
    store: MemoryStore | None = None,
    policy: DecisionPolicy | None = None,
    forecaster: ProtentionForecaster | None = None,
    world_def: WorldDef | None = None,
    cache: DiffCache | None = None,
) -> EpisodeReport:
    """Play one generated task until success or the step cap.

    The shared ``store`` is never mutated; online memory writes into a copy.
    """
    world_def = world_def or default_world_def()
    state, goal = generate_world(seed, split, world_def, max_steps=config.max_steps)
    store = store if store is not None else MemoryStore(embedding_dim=config.embedding_dim)
    if config.online_memory:
        store, cache = store.copy(), None
    model = WorldModel(state.layout, goal, HashEmbedder(config.embedding_dim), world_def, priors=config.priors)
    agent = Agent(config, model, store, forecaster, policy, goal.text, cache)
    report = EpisodeReport(seed, split, goal.task_type, False, 0)
    obs = observe(state, world_def)
    error = None
    try:
        while state.step_count < state.max_steps and not goal_satisfied(state, goal):
            action = agent.agent_step(obs, legal_actions(state, world_def))
            state, obs = step(state, action, world_def)
        agent.finish(obs)
    except ObservationParseError as exc:
        error = f"parse error: {exc}"
        log.error("episode %s/%d aborted: %s", split, seed, error)
    except PolicyExhausted as exc:
        error = f"policy exhausted: {exc}"
    report.success = error is None and goal_satisfied(state, goal)
    report.steps_taken = state.step_count
    report.error = error
    report.trace = agent.trace
    return report


def train_seeds(n: int, offset: int = TRAIN_SEED_OFFSET) -> list[int]:
    return list(range(offset, offset + n))


def train_bc(
    config: AgentConfig,
    seeds: Iterable[int],
    store: MemoryStore,
    world_def: WorldDef | None = None,
) -> MemoryStore:
    """Run the expert on each seen-split seed and ingest its trajectory into ``store``."""
    world_def = world_def or default_world_def()
    embedder = HashEmbedder(config.embedding_dim)
    for seed in seeds:
        state, goal = generate_world(seed, "seen", world_def, max_steps=config.max_steps)
        steps, final_obs, _ = expert_trajectory(state, goal, world_def)
        model = WorldModel(state.layout, goal, embedder, world_def)
        ingest_trajectory(store, steps, model.parse, final_observation=final_obs)
    return store


def expert_script(seed: int, split: str, config: AgentConfig, world_def: WorldDef | None = None) -> list[str]:
    state, goal = generate_world(seed, split, world_def, max_steps=config.max_steps)
    steps, _, _ = expert_trajectory(state, goal, world_def)
    return [a for _, a in steps]
