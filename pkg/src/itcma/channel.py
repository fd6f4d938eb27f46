"""Consciousness channel: retention, primal impression, activated memory, protentions.

Also owns the natural-language rendering of the channel handed to decision
and forecast backends. The block layout is frozen; see tests/golden/.
"""
from __future__ import annotations

from dataclasses import dataclass, field as dc_field, replace
from typing import Mapping, Sequence

from .drive import DriveVector
from .field import Field
from .memory import ActivationResult

DEFAULT_RETENTION = 4


class SequencingError(RuntimeError):
    pass


@dataclass(frozen=True)
class RetentionItem:
    field: Field
    action_label: str
    rendered_text: str
    observation: str = ""

    def line(self) -> str:
        return f"{self.rendered_text}, you did the action: {self.action_label}"


@dataclass(frozen=True)
class RetentionBuffer:
    items: tuple[RetentionItem, ...] = ()
    capacity: int = DEFAULT_RETENTION

    def __post_init__(self) -> None:
        if self.capacity < 0:
            raise ValueError("retention capacity must be nonnegative")
        if len(self.items) > self.capacity:
            object.__setattr__(self, "items", tuple(self.items[len(self.items) - self.capacity:]))

    def __len__(self) -> int:
        return len(self.items)

    def push(self, item: RetentionItem) -> "RetentionBuffer":
        if self.capacity == 0:
            return self
        items = (self.items + (item,))[-self.capacity:]
        return RetentionBuffer(items, self.capacity)

    @property
    def fields(self) -> list[Field]:
        return [it.field for it in self.items]


@dataclass(frozen=True)
class PrimalImpression:
    field: Field
    rendered_text: str
    step_index: int
    observation: str = ""

    @classmethod
    def perceive(cls, fld: Field, observation: str, step_index: int, after: str | None = None) -> "PrimalImpression":
        text = f"After {after}, {observation}" if after else observation
        return cls(fld, text, step_index, observation)


@dataclass(frozen=True)
class Protention:
    field: Field
    text: str
    step_tag: int = -1


@dataclass(frozen=True)
class ChannelState:
    retention: RetentionBuffer
    primal: PrimalImpression
    activated: ActivationResult = dc_field(default_factory=ActivationResult)
    protentions: Mapping[str, Protention] = dc_field(default_factory=dict)

    def with_protentions(self, protentions: Mapping[str, Protention]) -> "ChannelState":
        return replace(self, protentions=dict(protentions))

    def contents(self) -> list:
        """Channel contents in fixed order: retention items, primal, activated records."""
        return [*self.retention.items, self.primal, *self.activated.records]


def assemble(retention: RetentionBuffer, primal: PrimalImpression, activated: ActivationResult | None = None) -> ChannelState:
    return ChannelState(retention, primal, activated if activated is not None else ActivationResult(), {})


def push_impression(state: ChannelState, new_pi: PrimalImpression, executed_action: str) -> ChannelState:
    """Move the current primal impression into retention and install ``new_pi``."""
    if new_pi.step_index != state.primal.step_index + 1:
        raise SequencingError(
            f"expected step {state.primal.step_index + 1}, got {new_pi.step_index}"
        )
    old = state.primal
    retention = state.retention.push(RetentionItem(old.field, executed_action, old.rendered_text, old.observation))
    return ChannelState(retention, new_pi, ActivationResult(), {})


def format_drive(drive: DriveVector | Sequence[float]) -> str:
    vals = drive.as_list() if isinstance(drive, DriveVector) else list(drive)
    return "[" + " ".join(f"{v:.8f}" for v in vals) + "]"


def _list_block(label: str, items: Sequence[str]) -> list[str]:
    if not items:
        return [f"{label}: []"]
    body = [f"'{it}'," for it in items]
    body[-1] = body[-1][:-1]
    return [f"{label}: ["] + body + ["]"]


def _dict_block(label: str, items: Mapping[str, str]) -> list[str]:
    if not items:
        return [f"{label}: {{}}"]
    body = [f"'{k}': '{v}'," for k, v in items.items()]
    body[-1] = body[-1][:-1]
    return [f"{label}: {{"] + body + ["}"]


def render_channel_text(
    state: ChannelState,
    drive: DriveVector | Sequence[float],
    *,
    show_drive: bool = True,
    show_memory: bool = True,
    show_channel: bool = True,
) -> str:
    """Driver / Activated Memory / Retention / Protention blocks, in that order."""
    lines: list[str] = []
    if show_drive:
        lines.append(f"Driver: {format_drive(drive)}")
    if show_memory:
        lines += _list_block("Activated Memory", state.activated.rendered())
    if show_channel:
        lines += _list_block("Retention", [it.line() for it in state.retention.items])
        lines += _dict_block("Protention", {a: p.text for a, p in state.protentions.items()})
    return "\n".join(lines)


def render_prompt(
    observation: str,
    goal: str,
    action_space: Sequence[str],
    channel_text: str,
    selected: str | None = None,
) -> str:
    """Full status block: environment, ITCMA status, optionally the selected action."""
    lines = [
        "> Environmental Information",
        f"> Observation: {observation}",
        f"Goal: {goal}",
        "Action Space: " + ", ".join(f"'{a}'" for a in action_space),
    ]
    if channel_text:
        lines.append("> Status information of ITCMA")
        lines.append(channel_text)
    if selected is not None:
        lines.append("> Selected Action")
        lines.append(f"> {selected}")
    return "\n".join(lines) + "\n"
