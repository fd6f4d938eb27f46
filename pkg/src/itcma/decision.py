"""Decision policies over the scored action space, plus ablation masking."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import Mapping, Protocol, Sequence

from .channel import ChannelState, render_channel_text, render_prompt
from .drive import DriveVector
from .llm import ChatClient, ChatError

log = logging.getLogger(__name__)


class PolicyExhausted(RuntimeError):
    """A scripted policy ran out of usable actions."""


@dataclass(frozen=True)
class AblationMask:
    no_channel: bool = False
    no_memory: bool = False
    no_drive: bool = False

    @property
    def label(self) -> str:
        parts = [n for n, on in (("no-channel", self.no_channel), ("no-memory", self.no_memory), ("no-drive", self.no_drive)) if on]
        return ",".join(parts) or "full"

    @classmethod
    def parse(cls, text: str) -> "AblationMask":
        flags = {p.strip().replace("_", "-") for p in text.split(",") if p.strip()}
        flags.discard("full")
        unknown = flags - {"no-channel", "no-memory", "no-drive"}
        if unknown:
            raise ValueError(f"unknown ablation(s): {sorted(unknown)}")
        return cls("no-channel" in flags, "no-memory" in flags, "no-drive" in flags)


FULL = AblationMask()


def apply_mask(
    state: ChannelState,
    drive: DriveVector,
    scores: Mapping[str, float],
    mask: AblationMask,
) -> tuple[str, dict[str, float]]:
    """Rendered channel text and scores with the ablated parts removed."""
    text = render_channel_text(
        state,
        drive,
        show_drive=not mask.no_drive,
        show_memory=not mask.no_memory,
        show_channel=not mask.no_channel,
    )
    if mask.no_drive:
        return text, {a: 0.0 for a in scores}
    return text, dict(scores)


@dataclass(frozen=True)
class DecisionContext:
    channel_text: str
    action_scores: Mapping[str, float]
    action_space: Sequence[str]
    observation: str = ""
    goal: str = ""


class DecisionPolicy(Protocol):
    kind: str

    def choose(self, ctx: DecisionContext) -> str: ...


def greedy_choice(scores: Mapping[str, float], action_space: Sequence[str]) -> str:
    """Highest score; ties go to the lexicographically smallest action."""
    if not action_space:
        raise ValueError("empty action space")
    return min(action_space, key=lambda a: (-scores.get(a, -math.inf), a))


class GreedyPolicy:
    kind = "greedy"

    def choose(self, ctx: DecisionContext) -> str:
        return greedy_choice(ctx.action_scores, ctx.action_space)


class ScriptedPolicy:
    """Replays a fixed action list, skipping entries that are not currently legal."""

    kind = "scripted"

    def __init__(self, actions: Sequence[str]):
        self.actions = list(actions)
        self.cursor = 0

    @classmethod
    def from_file(cls, path) -> "ScriptedPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls([ln.strip() for ln in fh if ln.strip()])

    def reset(self) -> None:
        self.cursor = 0

    def choose(self, ctx: DecisionContext) -> str:
        while self.cursor < len(self.actions):
            act = self.actions[self.cursor]
            self.cursor += 1
            if act in ctx.action_space:
                return act
            log.info("scripted action %r is not legal here; skipped", act)
        raise PolicyExhausted(f"script exhausted after {len(self.actions)} entries")


DECISION_SYSTEM = (
    "You control a household agent. Read the environment and the agent's internal status, "
    "then reply with exactly one action copied from the action space."
)


def _normalize(s: str) -> str:
    return " ".join(s.strip().strip("'\"`.").lower().split())


def coerce_action(reply: str, action_space: Sequence[str]) -> str | None:
    """Exact match, then case/whitespace-insensitive match, per line; None if nothing fits."""
    lines = [reply] + [ln for ln in reply.splitlines() if ln.strip()]
    cands = []
    for ln in lines:
        s = ln.strip()
        if s.startswith(">"):
            s = s[1:].strip()
        cands.append(s)
    for c in cands:
        if c in action_space:
            return c
    norm = {_normalize(a): a for a in action_space}
    for c in cands:
        hit = norm.get(_normalize(c))
        if hit is not None:
            return hit
    return None


class RemotePolicy:
    kind = "remote"

    def __init__(self, client: ChatClient):
        self.client = client

    def messages(self, ctx: DecisionContext) -> list[dict]:
        prompt = render_prompt(ctx.observation, ctx.goal, ctx.action_space, ctx.channel_text)
        return [{"role": "system", "content": DECISION_SYSTEM}, {"role": "user", "content": prompt + "> Selected Action\n"}]

    def choose(self, ctx: DecisionContext) -> str:
        try:
            reply = self.client.complete(self.messages(ctx))
        except ChatError as exc:
            log.warning("remote policy unavailable, choosing greedily: %s", exc)
            return greedy_choice(ctx.action_scores, ctx.action_space)
        act = coerce_action(reply, ctx.action_space)
        if act is None:
            log.warning("reply %r matches no legal action; choosing greedily", reply[:80])
            return greedy_choice(ctx.action_scores, ctx.action_space)
        return act


def decide(policy: DecisionPolicy, ctx: DecisionContext) -> str:
    if not ctx.action_space:
        raise ValueError("empty action space")
    act = policy.choose(ctx)
    if act not in ctx.action_space:  # defensive: third-party policies
        log.warning("policy returned illegal action %r; choosing greedily", act)
        act = greedy_choice(ctx.action_scores, ctx.action_space)
    return act
