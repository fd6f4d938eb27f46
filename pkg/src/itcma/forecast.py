"""Protention forecasters: predict the next field/observation for every legal action."""
from __future__ import annotations

import json
import logging
import re
from dataclasses import dataclass
from typing import Protocol, Sequence

from .channel import ChannelState, Protention
from .drive import DriveVector
from .field import DEFAULT_WEIGHTS, Field, FieldWeights, diff
from .llm import ChatClient, ChatError

log = logging.getLogger(__name__)

MEMORY_GATE = 0.01


class PerceptionModel(Protocol):
    def parse(self, text: str) -> Field: ...

    def predict(self, observation: str, action: str, recall: Sequence[str] = ()) -> tuple[Field, str] | None: ...


@dataclass(frozen=True)
class ForecastRequest:
    channel_text: str
    channel_state: ChannelState
    action_space: tuple[str, ...]
    drive: DriveVector
    world: PerceptionModel | None = None

    def __post_init__(self) -> None:
        if not self.action_space:
            raise ValueError("action_space must be non-empty")
        object.__setattr__(self, "action_space", tuple(self.action_space))


ProtentionSet = dict[str, Protention]


class ProtentionForecaster(Protocol):
    mode: str

    def forecast(self, req: ForecastRequest) -> ProtentionSet: ...


def recall_texts(state: ChannelState) -> list[str]:
    """Past observations in the channel, lowest priority first.

    Templates read this list from the end. Retention comes last, newest at
    the very end, since it describes the present episode. Activated memory
    comes first in reverse order: the earliest remembered view of a place
    shows it before the remembered agent disturbed it.
    """
    mem = [r.observation for r in state.activated.records]
    if state.activated.records and state.activated.records[-1].successor_text:
        mem.append(state.activated.records[-1].successor_text)
    out = list(reversed(mem)) + [it.observation for it in state.retention.items]
    return [t for t in out if t]


class HeuristicForecaster:
    """Memory lookup, then the world's action templates, then persistence."""

    mode = "heuristic"

    def __init__(self, gate: float = MEMORY_GATE, weights: FieldWeights = DEFAULT_WEIGHTS):
        self.gate = gate
        self.weights = weights

    def _from_memory(self, req: ForecastRequest, action: str) -> tuple[Field, str] | None:
        pi = req.channel_state.primal
        best, best_d = None, None
        for rec in req.channel_state.activated.records:
            if rec.action_label != action or not rec.successor_text:
                continue
            d = diff(pi.field, rec.field, self.weights)
            if d <= self.gate and (best_d is None or d < best_d):
                best, best_d = rec, d
        if best is None:
            return None
        if req.world is None:
            return None
        try:
            return req.world.parse(best.successor_text), best.successor_text
        except ValueError as exc:
            log.debug("stored successor does not parse: %s", exc)
            return None

    def predict_one(self, req: ForecastRequest, action: str) -> Protention:
        step = req.channel_state.primal.step_index
        hit = self._from_memory(req, action)
        if hit is None and req.world is not None:
            pi = req.channel_state.primal
            recall = recall_texts(req.channel_state)
            hit = req.world.predict(pi.observation, action, recall)
        if hit is None:
            pi = req.channel_state.primal
            hit = (pi.field, pi.observation)
        return Protention(hit[0], hit[1], step)

    def forecast(self, req: ForecastRequest) -> ProtentionSet:
        return {a: self.predict_one(req, a) for a in req.action_space}


FORECAST_SYSTEM = (
    "You predict what a household agent will observe next. For every listed action, "
    "write the observation the environment would most likely return after it. "
    'Answer with one JSON object mapping each action string to its predicted observation.'
)


def forecast_messages(req: ForecastRequest) -> list[dict]:
    pi = req.channel_state.primal
    actions = "\n".join(f"- {a}" for a in req.action_space)
    user = f"Observation: {pi.observation}\n{req.channel_text}\nActions:\n{actions}"
    return [{"role": "system", "content": FORECAST_SYSTEM}, {"role": "user", "content": user}]


def extract_json_object(text: str) -> dict | None:
    """First JSON object embedded in ``text`` (code fences and chatter tolerated)."""
    m = re.search(r"\{.*\}", text, flags=re.DOTALL)
    if not m:
        return None
    try:
        obj = json.loads(m.group(0))
    except json.JSONDecodeError:
        return None
    return obj if isinstance(obj, dict) else None


class RemoteForecaster:
    """One batched chat request per step; gaps and failures fall back to the heuristic."""

    mode = "remote"

    def __init__(self, client: ChatClient, fallback: HeuristicForecaster | None = None):
        self.client = client
        self.fallback = fallback or HeuristicForecaster()

    def remote_forecast(self, req: ForecastRequest) -> dict[str, str]:
        """Raw predicted texts per action; raises :class:`ChatError` on transport failure."""
        content = self.client.complete(forecast_messages(req))
        obj = extract_json_object(content)
        if obj is None:
            log.warning("forecast completion carried no JSON object")
            return {}
        return {a: v for a, v in obj.items() if isinstance(v, str) and a in req.action_space}

    def forecast(self, req: ForecastRequest) -> ProtentionSet:
        try:
            texts = self.remote_forecast(req)
        except ChatError as exc:
            log.warning("remote forecaster unavailable, using heuristic: %s", exc)
            return self.fallback.forecast(req)
        out: ProtentionSet = {}
        step = req.channel_state.primal.step_index
        missing = []
        for action in req.action_space:
            text = texts.get(action)
            if text is not None and req.world is not None:
                try:
                    out[action] = Protention(req.world.parse(text), text, step)
                    continue
                except ValueError as exc:
                    log.warning("unparseable prediction for %r: %s", action, exc)
            missing.append(action)
            out[action] = self.fallback.predict_one(req, action)
        if missing:
            log.warning("heuristic filled %d of %d protentions", len(missing), len(req.action_space))
        return out
