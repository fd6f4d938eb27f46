"""Long-term memory: field-string edit distance, involuntary activation, BC ingestion."""
from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field as dc_field
from pathlib import Path
from typing import Callable, Iterable, Sequence

from .field import DEFAULT_DIM, DEFAULT_WEIGHTS, EMPTY_FIELD, Field, FieldDomainError, FieldWeights, diff

log = logging.getLogger(__name__)

STORE_VERSION = 1
NEXT_ACTION = " The next action is {action}."


class MemoryFormatError(ValueError):
    """Memory file cannot be loaded into this run."""


@dataclass(frozen=True)
class TransitionRecord:
    field: Field
    action_label: str
    observation: str
    rendered_text: str
    successor_text: str
    sequence_index: int
    trajectory_id: int = 0

    def to_dict(self) -> dict:
        return {
            "sequence_index": self.sequence_index,
            "trajectory_id": self.trajectory_id,
            "observation": self.observation,
            "action": self.action_label,
            "rendered_text": self.rendered_text,
            "successor_text": self.successor_text,
            "field": self.field.to_dict(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionRecord":
        return cls(
            field=Field.from_dict(d["field"]),
            action_label=d["action"],
            observation=d["observation"],
            rendered_text=d["rendered_text"],
            successor_text=d["successor_text"],
            sequence_index=int(d["sequence_index"]),
            trajectory_id=int(d.get("trajectory_id", 0)),
        )

    def successor_rendering(self) -> str:
        """Text of the 'subsequent content' that follows this record."""
        return f"After {self.action_label}, {self.successor_text}"


def render_record(observation: str, action: str) -> str:
    return observation + NEXT_ACTION.format(action=action)


@dataclass
class MemoryStore:
    records: list[TransitionRecord] = dc_field(default_factory=list)
    embedding_dim: int = DEFAULT_DIM

    def __len__(self) -> int:
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    @property
    def fields(self) -> list[Field]:
        return [r.field for r in self.records]

    def next_index(self) -> int:
        return self.records[-1].sequence_index + 1 if self.records else 0

    def next_trajectory_id(self) -> int:
        return self.records[-1].trajectory_id + 1 if self.records else 0

    def append(self, record: TransitionRecord) -> None:
        dim = record.field.dim
        if dim is not None and dim != self.embedding_dim:
            raise FieldDomainError(f"record embedding dim {dim} != store dim {self.embedding_dim}")
        if self.records and record.sequence_index <= self.records[-1].sequence_index:
            raise ValueError("sequence_index must be strictly increasing")
        if not record.rendered_text:
            raise ValueError("rendered_text must be non-empty")
        self.records.append(record)

    def copy(self) -> "MemoryStore":
        return MemoryStore(list(self.records), self.embedding_dim)

    def save(self, path: str | Path, created_at: str | None = None) -> None:
        path = Path(path)
        header = {"version": STORE_VERSION, "embedding_dim": self.embedding_dim, "created_at": created_at}
        with path.open("w", encoding="utf-8") as fh:
            fh.write(json.dumps(header, sort_keys=True) + "\n")
            for rec in self.records:
                fh.write(json.dumps(rec.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path, expected_dim: int | None = None) -> "MemoryStore":
        path = Path(path)
        with path.open("r", encoding="utf-8") as fh:
            first = fh.readline()
            if not first.strip():
                raise MemoryFormatError(f"{path}: missing header line")
            header = json.loads(first)
            if header.get("version") != STORE_VERSION:
                raise MemoryFormatError(f"{path}: unsupported store version {header.get('version')!r}")
            dim = int(header["embedding_dim"])
            if expected_dim is not None and dim != expected_dim:
                raise MemoryFormatError(
                    f"{path}: embedding_dim {dim} does not match configured dimension {expected_dim}"
                )
            store = cls(embedding_dim=dim)
            for line in fh:
                if line.strip():
                    store.append(TransitionRecord.from_dict(json.loads(line)))
        return store


def _check_dims(fields: Iterable[Field]) -> None:
    dims = {f.dim for f in fields if f.dim is not None}
    if len(dims) > 1:
        raise FieldDomainError(f"embedding dimension mismatch across field strings: {sorted(dims)}")


def field_lev(
    a: Sequence[Field],
    b: Sequence[Field],
    weights: FieldWeights = DEFAULT_WEIGHTS,
    cost: Callable[[int, int], float] | None = None,
) -> float:
    """Edit distance between two field strings.

    Substituting ``a[i]`` for ``b[j]`` costs ``diff(a[i], b[j])``; inserting or
    deleting ``f`` costs ``diff(f, 0)``, which is 1 for any nonempty field.
    ``cost(i, j)`` may supply precomputed substitution costs.
    """
    _check_dims(list(a) + list(b))
    if cost is None:
        def cost(i: int, j: int) -> float:
            return diff(a[i], b[j], weights)
    del_a = [diff(f, EMPTY_FIELD, weights) for f in a]
    ins_b = [diff(f, EMPTY_FIELD, weights) for f in b]
    prev = [0.0]
    for j in range(len(b)):
        prev.append(prev[-1] + ins_b[j])
    for i in range(len(a)):
        cur = [prev[0] + del_a[i]]
        for j in range(len(b)):
            cur.append(min(prev[j + 1] + del_a[i], cur[j] + ins_b[j], prev[j] + cost(i, j)))
        prev = cur
    return prev[-1]


@dataclass(frozen=True)
class ActivationResult:
    records: tuple[TransitionRecord, ...] = ()
    distance: float = math.inf
    start: int = -1
    end: int = -1
    successor: TransitionRecord | None = None

    @property
    def normalized_distance(self) -> float:
        return self.distance / len(self.records) if self.records else math.inf

    def __bool__(self) -> bool:
        return bool(self.records)

    def rendered(self) -> list[str]:
        out = [r.rendered_text for r in self.records]
        if self.records:
            out.append(self.records[-1].successor_rendering())
        return out


class DiffCache:
    """Memoized ``diff(query_field, store[k])`` for one store and weight setting.

    Query fields are keyed by identity; the cache keeps them alive so ids are
    never recycled while cached.
    """

    def __init__(self, store: MemoryStore, weights: FieldWeights = DEFAULT_WEIGHTS):
        self.store = store
        self.weights = weights
        self._alive: dict[int, Field] = {}
        self._values: dict[tuple[int, int], float] = {}

    def __call__(self, q: Field, k: int) -> float:
        key = (id(q), k)
        val = self._values.get(key)
        if val is None:
            self._alive[id(q)] = q
            val = diff(q, self.store.records[k].field, self.weights)
            self._values[key] = val
        return val

    def trim(self, live: Iterable[Field]) -> None:
        """Drop entries for query fields no longer in use."""
        keep = {id(f) for f in live}
        self._alive = {i: f for i, f in self._alive.items() if i in keep}
        self._values = {k: v for k, v in self._values.items() if k[0] in keep}


def activate(
    query: Sequence[Field],
    store: MemoryStore,
    w: int = 3,
    threshold: float | None = None,
    weights: FieldWeights = DEFAULT_WEIGHTS,
    cache: DiffCache | None = None,
) -> ActivationResult:
    """Involuntary-memory activation over the long-term store.

    ``query`` is the retention fields followed by the primal impression.
    Scans records from most recent to oldest; for each end index ``i`` the
    windows ``store[i-j .. i]`` for ``j = 0..w`` are compared with the query
    by :func:`field_lev`. After each ``i``, stops if the best distance so far
    is below ``threshold``. Ties keep the first window found.
    """
    if w < 0:
        raise ValueError("window size must be nonnegative")
    if not store.records or not query:
        return ActivationResult()
    _check_dims(query)
    qdim = next((f.dim for f in query if f.dim is not None), None)
    if qdim is not None and qdim != store.embedding_dim:
        raise FieldDomainError(f"query dim {qdim} != store dim {store.embedding_dim}")
    if threshold is None:
        threshold = default_threshold(len(query))
    if cache is None or cache.store is not store or cache.weights != weights:
        cache = DiffCache(store, weights)

    # Windows all end at i, so reversing both strings turns them into prefixes
    # of one reversed segment: a single DP row sweep yields every j.
    rq = list(reversed(query))
    del_q = [diff(f, EMPTY_FIELD, weights) for f in rq]
    best = math.inf
    best_span = (-1, -1)
    recs = store.records
    n = len(recs)
    for i in range(n - 1, -1, -1):
        lo = max(0, i - w)
        seg = list(range(i, lo - 1, -1))  # store indices, newest first
        ins = [diff(recs[k].field, EMPTY_FIELD, weights) for k in seg]
        # column-major DP: col[qi] = lev(rq[:qi], seg[:s])
        col = [0.0]
        for qi in range(len(rq)):
            col.append(col[-1] + del_q[qi])
        for s, k in enumerate(seg):
            nxt = [col[0] + ins[s]]
            for qi in range(len(rq)):
                nxt.append(min(col[qi + 1] + ins[s], nxt[qi] + del_q[qi], col[qi] + cache(rq[qi], k)))
            col = nxt
            dist = col[-1]
            if dist < best:
                best = dist
                best_span = (k, i)
        # truncated windows (i - j < 0) repeat the full-prefix window; strict < ignores them
        if best < threshold:
            break
    start, end = best_span
    succ = recs[end + 1] if end + 1 < n and recs[end + 1].trajectory_id == recs[end].trajectory_id else None
    return ActivationResult(tuple(recs[start:end + 1]), best, start, end, succ)


def default_threshold(query_len: int, per_field: float = 0.05) -> float:
    return per_field * query_len


def ingest_trajectory(
    store: MemoryStore,
    trajectory: Sequence[tuple[str, str | None]],
    parse: Callable[[str], Field],
    final_observation: str | None = None,
) -> MemoryStore:
    """Append one record per (observation, action) step; returns ``store``.

    A trailing step whose action is ``None`` is taken as the terminal
    observation. Steps whose observation fails to parse are skipped with a
    warning.
    """
    steps = list(trajectory)
    if steps and steps[-1][1] is None:
        final_observation = steps[-1][0] if final_observation is None else final_observation
        steps = steps[:-1]
    if not steps:
        return store
    tid = store.next_trajectory_id()
    for k, (obs, action) in enumerate(steps):
        if action is None:
            log.warning("step %d of trajectory has no action; skipped", k)
            continue
        try:
            fld = parse(obs)
        except ValueError as exc:
            log.warning("rejected trajectory step %d: %s", k, exc)
            continue
        succ = steps[k + 1][0] if k + 1 < len(steps) else (final_observation or "")
        store.append(
            TransitionRecord(
                field=fld,
                action_label=action,
                observation=obs,
                rendered_text=render_record(obs, action),
                successor_text=succ,
                sequence_index=store.next_index(),
                trajectory_id=tid,
            )
        )
    return store


def read_trajectories(path: str | Path) -> list[list[tuple[str, str | None]]]:
    """Read BC trajectories from JSONL ``{observation, action}`` lines.

    A line with a null/absent action closes the current trajectory as its
    terminal observation; a blank line also separates trajectories.
    """
    out: list[list[tuple[str, str | None]]] = []
    cur: list[tuple[str, str | None]] = []
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            if cur:
                out.append(cur)
                cur = []
            continue
        d = json.loads(line)
        cur.append((d["observation"], d.get("action")))
        if d.get("action") is None:
            out.append(cur)
            cur = []
    if cur:
        out.append(cur)
    return out
