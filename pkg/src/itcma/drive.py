"""PAD emotions, the accumulated drive vector, and drive-weighted action scoring."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Mapping, Sequence

from .field import DEFAULT_WEIGHTS, Field, FieldWeights, diff


class DriveDomainError(ValueError):
    pass


@dataclass(frozen=True)
class NeedSignal:
    desire: float = 0.0
    pain: float = 0.0

    def __post_init__(self) -> None:
        if self.desire < 0 or self.pain < 0:
            raise DriveDomainError(f"desire and pain must be nonnegative: {self}")


@dataclass(frozen=True)
class EmotionState:
    pleasure: float = 0.0
    arousal: float = 0.0
    dominance: float = 0.0

    def as_list(self) -> list[float]:
        return [self.pleasure, self.arousal, self.dominance]


@dataclass(frozen=True)
class DriveWeights:
    w_p: float = 1.0
    w_a: float = 1.0
    w_d: float = 1.0

    def __post_init__(self) -> None:
        if min(self.w_p, self.w_a, self.w_d) < 0:
            raise DriveDomainError("drive weights must be nonnegative")


@dataclass(frozen=True)
class DriveVector:
    p: float = 0.0
    a: float = 0.0
    d: float = 0.0

    def as_list(self) -> list[float]:
        return [self.p, self.a, self.d]


def pleasure(need: NeedSignal) -> float:
    return math.tanh(need.desire) - math.tanh(need.pain)


def recency_weights(t: int) -> list[float]:
    """Weights ``2n / (t (t - 1))`` for n = 1..t-1; they sum to 1."""
    if t <= 1:
        return []
    denom = t * (t - 1)
    return [2.0 * n / denom for n in range(1, t)]


def arousal(pi: Field, retention: Sequence[Field], weights: FieldWeights = DEFAULT_WEIGHTS) -> float:
    """Recency-weighted change from retained fields (oldest first) to ``pi``."""
    t = len(retention) + 1
    ws = recency_weights(t)
    if not ws:
        return 0.0
    return math.tanh(sum(wn * diff(pi, re, weights) for wn, re in zip(ws, retention)))


def dominance(pi: Field, prev_protention: Field | None, weights: FieldWeights = DEFAULT_WEIGHTS) -> float:
    if prev_protention is None:
        return 0.0
    return math.tanh(diff(pi, prev_protention, weights))


def update_drive(prev: DriveVector, e: EmotionState, w: DriveWeights, decay: float = 0.0) -> DriveVector:
    """``prev + e * w`` componentwise; ``decay`` in [0, 1) optionally shrinks ``prev`` first."""
    keep = 1.0 - decay
    return DriveVector(
        prev.p * keep + e.pleasure * w.w_p,
        prev.a * keep + e.arousal * w.w_a,
        prev.d * keep + e.dominance * w.w_d,
    )


NeedFn = Callable[[Field, str], NeedSignal]


def score_actions(
    protentions: Mapping[str, tuple[Field, str]],
    pi: Field,
    retention: Sequence[Field],
    drive: DriveVector,
    need_fn: NeedFn,
    prev_protention: Field | None = None,
    current_arousal: float | None = None,
    weights: FieldWeights = DEFAULT_WEIGHTS,
) -> dict[str, float]:
    """Score each candidate action by the emotions its predicted field would evoke.

    ``p * P + d * D - a * |A - A_now|``: pleasure and dominance of the
    predicted outcome are maximized while its arousal is kept near the
    current level.
    """
    if not protentions:
        raise DriveDomainError("cannot score an empty protention set")
    if current_arousal is None:
        current_arousal = arousal(pi, retention, weights)
    reference = prev_protention if prev_protention is not None else pi
    history = list(retention) + [pi]
    scores: dict[str, float] = {}
    for action, (g, text) in protentions.items():
        p_hat = pleasure(need_fn(g, text))
        d_hat = math.tanh(diff(g, reference, weights))
        a_hat = arousal(g, history, weights)
        scores[action] = drive.p * p_hat + drive.d * d_hat - drive.a * abs(a_hat - current_arousal)
    return scores
