"""Perceived-object fields and the similarity kernels defined over them.

A field is an ``m x (n + 3)`` matrix: one row per perceived object, holding
an ``n``-dimensional name embedding followed by the agent-centric spherical
position ``(theta, phi, gamma)`` of that object.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from functools import cached_property
from typing import Iterable, Protocol, Sequence

import numpy as np

TWO_PI = 2.0 * math.pi

# Positional weights: gamma and phi dominate, theta is weak.
W_GAMMA = 3.0 / 7.0
W_THETA = 1.0 / 7.0
W_PHI = 3.0 / 7.0

DEFAULT_DIM = 64


class FieldDomainError(ValueError):
    """Raised when a kernel is called outside its domain."""


@dataclass(frozen=True)
class SphericalPos:
    theta: float
    phi: float
    gamma: float

    def __post_init__(self) -> None:
        if not 0.0 <= self.theta <= math.pi:
            raise FieldDomainError(f"theta out of [0, pi]: {self.theta}")
        if not 0.0 <= self.phi < TWO_PI:
            raise FieldDomainError(f"phi out of [0, 2pi): {self.phi}")
        if not self.gamma >= 0.0:
            raise FieldDomainError(f"gamma must be nonnegative: {self.gamma}")

    @classmethod
    def planar(cls, phi: float, gamma: float) -> "SphericalPos":
        """Position on the agent's horizontal plane; phi is wrapped into [0, 2pi)."""
        phi = math.fmod(phi, TWO_PI)
        if phi < 0.0:
            phi += TWO_PI
        if phi >= TWO_PI:  # fmod of a value just below 0 can round up to 2pi
            phi = 0.0
        return cls(math.pi / 2.0, phi, max(0.0, gamma))

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.theta, self.phi, self.gamma)


@dataclass(frozen=True)
class ObjectEntry:
    name: str
    embedding: tuple[float, ...]
    pos: SphericalPos

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "embedding": list(self.embedding),
            "pos": {"theta": self.pos.theta, "phi": self.pos.phi, "gamma": self.pos.gamma},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ObjectEntry":
        p = d["pos"]
        return cls(
            name=d["name"],
            embedding=tuple(float(x) for x in d["embedding"]),
            pos=SphericalPos(float(p["theta"]), float(p["phi"]), float(p["gamma"])),
        )


@dataclass(frozen=True)
class Field:
    """Ordered rows of perceived objects. The empty field is the zero field."""

    entries: tuple[ObjectEntry, ...] = ()

    def __post_init__(self) -> None:
        if not isinstance(self.entries, tuple):
            object.__setattr__(self, "entries", tuple(self.entries))
        dims = {len(e.embedding) for e in self.entries}
        if len(dims) > 1:
            raise FieldDomainError(f"mixed embedding dimensions in field: {sorted(dims)}")

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def names(self) -> list[str]:
        return [e.name for e in self.entries]

    @property
    def dim(self) -> int | None:
        return len(self.entries[0].embedding) if self.entries else None

    @cached_property
    def embeddings(self) -> np.ndarray:
        if not self.entries:
            return np.zeros((0, 0))
        return np.array([e.embedding for e in self.entries], dtype=np.float64)

    @cached_property
    def positions(self) -> np.ndarray:
        """``(m, 3)`` array of (theta, phi, gamma)."""
        return np.array([e.pos.as_tuple() for e in self.entries], dtype=np.float64).reshape(-1, 3)

    @cached_property
    def unit_embeddings(self) -> np.ndarray:
        emb = self.embeddings
        if emb.size == 0:
            return emb
        norms = np.linalg.norm(emb, axis=1)
        if np.any(norms == 0.0):
            raise FieldDomainError("zero embedding vector in field")
        return emb / norms[:, None]

    def to_dict(self) -> dict:
        return {"entries": [e.to_dict() for e in self.entries]}

    @classmethod
    def from_dict(cls, d: dict) -> "Field":
        return cls(tuple(ObjectEntry.from_dict(e) for e in d.get("entries", [])))


EMPTY_FIELD = Field()


class EmbeddingProvider(Protocol):
    n: int
    deterministic: bool

    def embed(self, name: str) -> tuple[float, ...]: ...


class HashEmbedder:
    """Deterministic feature-hash embedding of object tokens.

    Features are whole words, character trigrams of each word, and a
    down-weighted instance-number feature, so ``lettuce 1`` and ``lettuce 2``
    land close together while unrelated classes are near-orthogonal.
    """

    deterministic = True

    def __init__(self, n: int = DEFAULT_DIM):
        if n < 1:
            raise ValueError("embedding dimension must be positive")
        self.n = n
        self._cache: dict[str, tuple[float, ...]] = {}

    def _slot(self, feature: str) -> tuple[int, float]:
        h = int.from_bytes(hashlib.blake2b(feature.encode("utf-8"), digest_size=8).digest(), "little")
        return h % self.n, (1.0 if (h >> 63) & 1 else -1.0)

    def _features(self, name: str) -> Iterable[tuple[str, float]]:
        for word in name.lower().split():
            if word.isdigit():
                yield f"#:{word}", 0.5
                continue
            yield f"w:{word}", 1.0
            padded = f"<{word}>"
            grams = [padded[i:i + 3] for i in range(len(padded) - 2)]
            for g in grams:
                yield f"g:{g}", 1.0 / len(grams)

    def embed(self, name: str) -> tuple[float, ...]:
        if not name or not name.strip():
            raise ValueError("cannot embed an empty token")
        cached = self._cache.get(name)
        if cached is not None:
            return cached
        vec = np.zeros(self.n)
        for feature, weight in self._features(name):
            idx, sign = self._slot(feature)
            vec[idx] += sign * weight
        norm = np.linalg.norm(vec)
        if norm == 0.0:
            # features cancelled out; fall back to a single hashed slot
            idx, sign = self._slot(f"raw:{name}")
            vec[idx] = sign
            norm = 1.0
        out = tuple(float(x) for x in vec / norm)
        self._cache[name] = out
        return out


def make_entry(embedder: EmbeddingProvider, name: str, pos: SphericalPos) -> ObjectEntry:
    return ObjectEntry(name, embedder.embed(name), pos)


def cosine(a: Sequence[float] | np.ndarray, b: Sequence[float] | np.ndarray) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise FieldDomainError(f"length mismatch: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise FieldDomainError("cosine of a zero vector is undefined")
    return float(np.clip(np.dot(a, b) / (na * nb), -1.0, 1.0))


def spherical_sim(a: SphericalPos, b: SphericalPos) -> float:
    loss = (
        W_GAMMA * math.tanh(abs(a.gamma - b.gamma))
        + W_THETA * abs(a.theta - b.theta) / math.pi
        + W_PHI * abs(a.phi - b.phi) / TWO_PI
    )
    return 1.0 - loss / 3.0


def _spherical_sim_rows(pa: np.ndarray, pb: np.ndarray) -> np.ndarray:
    loss = (
        W_GAMMA * np.tanh(np.abs(pa[:, 2] - pb[:, 2]))
        + W_THETA * np.abs(pa[:, 0] - pb[:, 0]) / math.pi
        + W_PHI * np.abs(pa[:, 1] - pb[:, 1]) / TWO_PI
    )
    return 1.0 - loss / 3.0


@dataclass(frozen=True)
class FieldWeights:
    name: float = 0.5
    pos: float = 0.5

    def __post_init__(self) -> None:
        if self.name < 0 or self.pos < 0 or not math.isclose(self.name + self.pos, 1.0):
            raise ValueError("field weights must be nonnegative and sum to 1")


DEFAULT_WEIGHTS = FieldWeights()


def field_sim(x: Field, y: Field, weights: FieldWeights = DEFAULT_WEIGHTS) -> float:
    """Row-matched similarity of ``x`` against ``y``, clamped into [0, 1].

    Each row of ``x`` is paired with the row of ``y`` whose name embedding is
    most cosine-similar (first index on ties). Not symmetric in general.
    """
    a, b = len(x), len(y)
    if a == 0 and b == 0:
        return 1.0
    if a == 0 or b == 0:
        return 0.0
    if x.dim != y.dim:
        raise FieldDomainError(f"embedding dimension mismatch: {x.dim} vs {y.dim}")
    cos = np.clip(x.unit_embeddings @ y.unit_embeddings.T, -1.0, 1.0)
    j = np.argmax(cos, axis=1)
    best = cos[np.arange(a), j]
    sph = _spherical_sim_rows(x.positions, y.positions[j])
    total = float(np.sum(weights.name * best + weights.pos * sph)) / max(a, b)
    # snap float noise so that identical fields compare exactly equal
    return min(1.0, max(0.0, round(total, 12)))


def diff(x: Field, y: Field, weights: FieldWeights = DEFAULT_WEIGHTS) -> float:
    return 1.0 - field_sim(x, y, weights)
