"""Desk-scale household text world with Alfworld-style primitives.

Six task types, one-handed agent, receptacles laid out on a 2-D floor plan.
Observations follow a small frozen grammar (see ``render_view`` /
``parse_observation``) and parse back into fields with agent-centric
spherical coordinates.
"""
from __future__ import annotations

import math
import re
import sys
from dataclasses import dataclass, replace
from functools import lru_cache
from importlib import resources
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .drive import NeedSignal
from .field import EmbeddingProvider, Field, HashEmbedder, ObjectEntry, SphericalPos

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

TASK_TYPES = ("pick&place", "cool&place", "heat&place", "clean&place", "examine", "pick-two&place")
_TASK_KEYS = {
    "pick": "pick&place",
    "cool": "cool&place",
    "heat": "heat&place",
    "clean": "clean&place",
    "examine": "examine",
    "pick_two": "pick-two&place",
}
PROCESS_OF_TASK = {"cool&place": "cool", "heat&place": "heat", "clean&place": "clean"}
STATE_OF_PROCESS = {"cool": "cool", "heat": "hot", "clean": "clean"}
DEST_CLASSES = ("countertop", "diningtable", "cabinet", "shelf", "drawer", "sidetable")
ADJECTIVES = ("cool", "hot", "clean")
DEFAULT_MAX_STEPS = 20

NOTHING_HAPPENS = "Nothing happens."
GOAL_NOTE = "The goal may be achievable."
HOLDING_NOTHING = "You are holding nothing in your hands."
ROOM_CENTER = "You are in the middle of a room. Looking quickly around you, you see"

_TOKEN_RE = re.compile(r"^(?:(cool|hot|clean) )?([a-z]+) (\d+)$")


class WorldError(RuntimeError):
    pass


class EpisodeOver(WorldError):
    pass


class ObservationParseError(ValueError):
    def __init__(self, message: str, token: str | None = None):
        super().__init__(message if token is None else f"{message}: {token!r}")
        self.token = token


# ---------------------------------------------------------------- definition


@dataclass(frozen=True)
class ObjectClass:
    name: str
    places: tuple[str, ...]
    tasks: tuple[str, ...]


@dataclass(frozen=True)
class WorldDef:
    room_size: float
    nearby_radius: float
    home_probability: float
    receptacles: tuple[tuple[str, int, int], ...]
    appliances: tuple[tuple[str, str], ...]
    objects: tuple[ObjectClass, ...]
    seen_pool: tuple[int, ...]
    unseen_pool: tuple[int, ...]

    @property
    def receptacle_classes(self) -> frozenset[str]:
        return frozenset(c for c, _, _ in self.receptacles)

    def appliance(self, process: str) -> str:
        return dict(self.appliances)[process]

    def object_class(self, name: str) -> ObjectClass:
        for oc in self.objects:
            if oc.name == name:
                return oc
        raise KeyError(name)

    def pool(self, split: str) -> tuple[int, ...]:
        if split == "seen":
            return self.seen_pool
        if split == "unseen":
            return self.unseen_pool
        raise ValueError(f"unknown split {split!r}")


def _merge(base: dict, override: Mapping) -> dict:
    out = dict(base)
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_world_def(path: str | Path | None = None) -> WorldDef:
    """Default world definition, optionally overridden by a TOML file."""
    raw = tomllib.loads(resources.files("itcma").joinpath("data/world.toml").read_text(encoding="utf-8"))
    if path is not None:
        raw = _merge(raw, tomllib.loads(Path(path).read_text(encoding="utf-8")))
    objects = tuple(
        ObjectClass(name, tuple(spec["places"]), tuple(_TASK_KEYS[t] for t in spec["tasks"]))
        for name, spec in sorted(raw["objects"].items())
    )
    seen, unseen = tuple(raw["pools"]["seen"]), tuple(raw["pools"]["unseen"])
    if set(seen) & set(unseen):
        raise ValueError("seen and unseen layout pools must be disjoint")
    return WorldDef(
        room_size=float(raw["room_size"]),
        nearby_radius=float(raw["nearby_radius"]),
        home_probability=float(raw["home_probability"]),
        receptacles=tuple((c, int(lo), int(hi)) for c, (lo, hi) in raw["receptacles"].items()),
        appliances=tuple(sorted(raw["appliances"].items())),
        objects=objects,
        seen_pool=seen,
        unseen_pool=unseen,
    )


@lru_cache(maxsize=None)
def default_world_def() -> WorldDef:
    return load_world_def()


# -------------------------------------------------------------------- layout


@dataclass(frozen=True)
class Receptacle:
    rid: str
    cls: str
    x: float
    y: float


@dataclass(frozen=True)
class Layout:
    layout_id: int
    receptacles: tuple[Receptacle, ...]
    homes: tuple[tuple[str, str], ...]
    room_size: float
    nearby_radius: float

    def get(self, rid: str) -> Receptacle | None:
        for r in self.receptacles:
            if r.rid == rid:
                return r
        return None

    @property
    def ids(self) -> list[str]:
        return [r.rid for r in self.receptacles]

    def of_class(self, cls: str) -> list[str]:
        return sorted((r.rid for r in self.receptacles if r.cls == cls), key=_id_key)

    def home(self, obj_cls: str) -> str | None:
        return dict(self.homes).get(obj_cls)

    def nearby(self, rid: str) -> list[str]:
        me = self.get(rid)
        if me is None:
            return []
        out = []
        for r in self.receptacles:
            if r.rid == rid:
                continue
            d = math.hypot(r.x - me.x, r.y - me.y)
            if d <= self.nearby_radius:
                out.append((round(d, 9), _id_key(r.rid), r.rid))
        return [rid for _, _, rid in sorted(out)]

    def agent_pose(self, location: str | None) -> tuple[float, float, float]:
        c = self.room_size / 2.0
        r = self.get(location) if location else None
        if r is None:
            return (c, c, 0.0)
        dx, dy = c - r.x, c - r.y
        norm = math.hypot(dx, dy) or 1.0
        ax, ay = r.x + 0.8 * dx / norm, r.y + 0.8 * dy / norm
        return (ax, ay, math.atan2(r.y - ay, r.x - ax))


def _id_key(rid: str) -> tuple[str, int]:
    cls, _, idx = rid.rpartition(" ")
    return (cls, int(idx) if idx.isdigit() else 0)


@lru_cache(maxsize=256)
def make_layout(layout_id: int, world: WorldDef | None = None) -> Layout:
    world = world or default_world_def()
    rng = np.random.default_rng([layout_id, 0x1A7])
    recs: list[tuple[str, str]] = []
    for cls, lo, hi in world.receptacles:
        for k in range(int(rng.integers(lo, hi + 1))):
            recs.append((f"{cls} {k + 1}", cls))
    order = rng.permutation(len(recs))
    size = world.room_size
    inset = 0.5
    side = size - 2 * inset
    offset = float(rng.uniform(0, 4 * side / len(recs)))
    placed = []
    for slot, idx in enumerate(order):
        s = (offset + slot * 4 * side / len(recs)) % (4 * side)
        edge, u = divmod(s, side)
        x, y = [(inset + u, inset), (size - inset, inset + u), (size - inset - u, size - inset), (inset, size - inset - u)][int(edge)]
        rid, cls = recs[idx]
        placed.append(Receptacle(rid, cls, round(x, 6), round(y, 6)))
    placed.sort(key=lambda r: _id_key(r.rid))
    homes = []
    for oc in world.objects:
        cands = sorted((r.rid for r in placed if r.cls in oc.places), key=_id_key)
        if cands:
            homes.append((oc.name, cands[int(rng.integers(len(cands)))]))
    return Layout(layout_id, tuple(placed), tuple(homes), size, world.nearby_radius)


# --------------------------------------------------------------------- state


@dataclass(frozen=True)
class ObjectState:
    oid: str
    cls: str
    state: str = ""
    examined: bool = False

    @property
    def token(self) -> str:
        return f"{self.state} {self.oid}" if self.state else self.oid


@dataclass(frozen=True)
class TaskGoal:
    task_type: str
    target_object_class: str
    target_receptacle: str = ""

    @property
    def required_state(self) -> str:
        proc = PROCESS_OF_TASK.get(self.task_type)
        return STATE_OF_PROCESS[proc] if proc else ""

    @property
    def process(self) -> str | None:
        return PROCESS_OF_TASK.get(self.task_type)

    @property
    def count(self) -> int:
        return 2 if self.task_type == "pick-two&place" else 1

    @property
    def text(self) -> str:
        c, d = self.target_object_class, self.target_receptacle
        if self.task_type == "examine":
            return f"Your task is to: examine a {c}."
        if self.task_type == "pick-two&place":
            return f"Your task is to: put two {c} in {d}."
        adj = self.required_state
        return f"Your task is to: put a {adj + ' ' if adj else ''}{c} in {d}."

    def mentions(self) -> list[str]:
        adj = self.required_state
        out = [f"{adj} {self.target_object_class}".strip()]
        if self.target_receptacle:
            out.append(self.target_receptacle)
        return out

    @classmethod
    def from_text(cls, text: str) -> "TaskGoal":
        m = re.search(r"Your task is to: (?:put (a|two) (?:(cool|hot|clean) )?([a-z]+) in ([a-z]+)|examine a ([a-z]+))\.", text)
        if not m:
            raise ObservationParseError("unrecognized goal", text)
        if m.group(5):
            return cls("examine", m.group(5))
        if m.group(1) == "two":
            return cls("pick-two&place", m.group(3), m.group(4))
        task = {"cool": "cool&place", "hot": "heat&place", "clean": "clean&place"}.get(m.group(2) or "", "pick&place")
        return cls(task, m.group(3), m.group(4))


@dataclass(frozen=True)
class WorldState:
    layout: Layout
    objects: tuple[ObjectState, ...]
    contents: tuple[tuple[str, tuple[str, ...]], ...]
    location: str | None = None
    held: str | None = None
    step_count: int = 0
    max_steps: int = DEFAULT_MAX_STEPS
    goal_text: str = ""

    def obj(self, oid: str) -> ObjectState:
        for o in self.objects:
            if o.oid == oid:
                return o
        raise KeyError(oid)

    def contents_of(self, rid: str | None) -> tuple[str, ...]:
        if rid is None:
            return ()
        return dict(self.contents).get(rid, ())

    def where(self, oid: str) -> str | None:
        if self.held == oid:
            return None
        for rid, oids in self.contents:
            if oid in oids:
                return rid
        raise KeyError(oid)

    def _set_contents(self, rid: str, oids: tuple[str, ...]) -> tuple[tuple[str, tuple[str, ...]], ...]:
        return tuple((r, oids if r == rid else os_) for r, os_ in self.contents)

    def _set_obj(self, new: ObjectState) -> tuple[ObjectState, ...]:
        return tuple(new if o.oid == new.oid else o for o in self.objects)


@dataclass(frozen=True)
class ActionPrimitive:
    verb: str
    obj: str = ""
    receptacle: str = ""

    @property
    def label(self) -> str:
        if self.verb == "go to":
            return f"go to {self.receptacle}"
        if self.verb == "take":
            return f"take {self.obj} from {self.receptacle}"
        if self.verb == "put":
            return f"put {self.obj} in/on {self.receptacle}"
        if self.verb in ("cool", "heat", "clean"):
            return f"{self.verb} {self.obj} with {self.receptacle}"
        return f"examine {self.obj}"

    @classmethod
    def parse(cls, label: str) -> "ActionPrimitive | None":
        label = label.strip()
        for pattern, build in (
            (r"go to ([a-z]+ \d+)", lambda m: cls("go to", receptacle=m.group(1))),
            (r"take ([a-z]+ \d+) from ([a-z]+ \d+)", lambda m: cls("take", m.group(1), m.group(2))),
            (r"put ([a-z]+ \d+) in/on ([a-z]+ \d+)", lambda m: cls("put", m.group(1), m.group(2))),
            (r"(cool|heat|clean) ([a-z]+ \d+) with ([a-z]+ \d+)", lambda m: cls(m.group(1), m.group(2), m.group(3))),
            (r"examine ([a-z]+ \d+)", lambda m: cls("examine", m.group(1))),
        ):
            m = re.fullmatch(pattern, label)
            if m:
                return build(m)
        return None


# --------------------------------------------------------------- generation


def generate_world(
    seed: int,
    split: str = "seen",
    world: WorldDef | None = None,
    max_steps: int = DEFAULT_MAX_STEPS,
) -> tuple[WorldState, TaskGoal]:
    """Deterministic (world, goal) for a seed; layouts come from the split's pool."""
    world = world or default_world_def()
    pool = world.pool(split)
    split_code = 0 if split == "seen" else 1
    rng = np.random.default_rng([seed, split_code, 0x1C3A])
    layout = make_layout(int(pool[int(rng.integers(len(pool)))]), world)
    task_type = TASK_TYPES[(seed + 3 * split_code) % len(TASK_TYPES)]
    present = {r.cls for r in layout.receptacles}

    def feasible_dests(oc: ObjectClass) -> list[str]:
        if task_type == "examine":
            return [""]
        out = []
        for d in DEST_CLASSES:
            if d in present and any(p in present and p != d for p in oc.places):
                out.append(d)
        return out

    choices = [oc for oc in world.objects if task_type in oc.tasks and feasible_dests(oc)]
    target = choices[int(rng.integers(len(choices)))]
    dests = feasible_dests(target)
    dest = dests[int(rng.integers(len(dests)))]
    goal = TaskGoal(task_type, target.name, dest)

    classes: list[ObjectClass] = [target] * goal.count
    others = [oc for oc in world.objects if oc.name != target.name]
    for _ in range(int(rng.integers(5, 9))):
        classes.append(others[int(rng.integers(len(others)))])

    counters: dict[str, int] = {}
    objects: list[ObjectState] = []
    contents: dict[str, list[str]] = {r.rid: [] for r in layout.receptacles}
    for k, oc in enumerate(classes):
        counters[oc.name] = counters.get(oc.name, 0) + 1
        oid = f"{oc.name} {counters[oc.name]}"
        cands = sorted((r.rid for r in layout.receptacles if r.cls in oc.places), key=_id_key)
        if oc.name == target.name and dest:
            cands = [c for c in cands if layout.get(c).cls != dest]
        home = layout.home(oc.name)
        if home in cands and rng.random() < world.home_probability:
            rid = home
        else:
            rid = cands[int(rng.integers(len(cands)))]
        contents[rid].append(oid)
        objects.append(ObjectState(oid, oc.name))
    state = WorldState(
        layout=layout,
        objects=tuple(objects),
        contents=tuple((r.rid, tuple(contents[r.rid])) for r in layout.receptacles),
        max_steps=max_steps,
        goal_text=goal.text,
    )
    return state, goal


# ---------------------------------------------------------------- mechanics


def legal_actions(state: WorldState, world: WorldDef | None = None) -> list[str]:
    world = world or default_world_def()
    acts: list[ActionPrimitive] = []
    for rid in state.layout.ids:
        if rid != state.location:
            acts.append(ActionPrimitive("go to", receptacle=rid))
    here = state.contents_of(state.location)
    if state.location is not None:
        loc_cls = state.layout.get(state.location).cls
        if state.held is None:
            acts += [ActionPrimitive("take", oid, state.location) for oid in here]
        else:
            acts.append(ActionPrimitive("put", state.held, state.location))
            for proc, app in world.appliances:
                if app == loc_cls:
                    acts.append(ActionPrimitive(proc, state.held, state.location))
        acts += [ActionPrimitive("examine", oid) for oid in here]
    if state.held is not None:
        acts.append(ActionPrimitive("examine", state.held))
    return sorted({a.label for a in acts})


def step(state: WorldState, action: str, world: WorldDef | None = None) -> tuple[WorldState, str]:
    """Apply one action; illegal actions leave the state unchanged and yield 'Nothing happens.'"""
    world = world or default_world_def()
    if state.step_count >= state.max_steps:
        raise EpisodeOver(f"step limit {state.max_steps} reached")
    nxt = replace(state, step_count=state.step_count + 1)
    if action not in legal_actions(state, world):
        return nxt, NOTHING_HAPPENS
    act = ActionPrimitive.parse(action)
    examined = None
    if act.verb == "go to":
        nxt = replace(nxt, location=act.receptacle)
    elif act.verb == "take":
        here = tuple(o for o in state.contents_of(act.receptacle) if o != act.obj)
        nxt = replace(nxt, contents=state._set_contents(act.receptacle, here), held=act.obj)
    elif act.verb == "put":
        here = state.contents_of(act.receptacle) + (act.obj,)
        nxt = replace(nxt, contents=state._set_contents(act.receptacle, here), held=None)
    elif act.verb in STATE_OF_PROCESS:
        o = state.obj(act.obj)
        nxt = replace(nxt, objects=state._set_obj(replace(o, state=STATE_OF_PROCESS[act.verb])))
    elif act.verb == "examine":
        o = state.obj(act.obj)
        nxt = replace(nxt, objects=state._set_obj(replace(o, examined=True)))
        examined = replace(o, examined=True).token
    return nxt, render_view(observe_view(nxt, world, examined=examined))


def goal_satisfied(state: WorldState, goal: TaskGoal) -> bool:
    if goal.task_type == "examine":
        return any(o.cls == goal.target_object_class and o.examined for o in state.objects)
    return placed_count(state, goal) >= goal.count


def placed_count(state: WorldState, goal: TaskGoal) -> int:
    if goal.task_type == "examine":
        return 0
    n = 0
    for rid, oids in state.contents:
        if state.layout.get(rid).cls != goal.target_receptacle:
            continue
        for oid in oids:
            o = state.obj(oid)
            if o.cls == goal.target_object_class and (not goal.required_state or o.state == goal.required_state):
                n += 1
    return n


# ------------------------------------------------------------------- views


@dataclass(frozen=True)
class ViewItem:
    token: str
    receptacle: bool
    anchor: str | None = None
    slot: int = 0


@dataclass(frozen=True)
class View:
    location: str | None = None
    room_center: bool = False
    items: tuple[ViewItem, ...] = ()
    held: str | None = None
    examined: str | None = None
    goal: str | None = None
    goal_note: bool = False
    nothing_happens: bool = False
    holding_known: bool = True

    @property
    def objects(self) -> list[ViewItem]:
        return [it for it in self.items if not it.receptacle]


def observe_view(state: WorldState, world: WorldDef | None = None, examined: str | None = None) -> View:
    items: list[ViewItem] = []
    if state.location is None:
        items = [ViewItem(rid, True, rid) for rid in state.layout.ids]
    else:
        for k, oid in enumerate(state.contents_of(state.location)):
            items.append(ViewItem(state.obj(oid).token, False, state.location, k))
        items += [ViewItem(rid, True, rid) for rid in state.layout.nearby(state.location)]
    held = state.obj(state.held).token if state.held else None
    goal = state.goal_text if state.step_count == 0 and state.goal_text else None
    return View(state.location, state.location is None, tuple(items), held, examined, goal)


def observe(state: WorldState, world: WorldDef | None = None) -> str:
    return render_view(observe_view(state, world))


def visible_tokens(state: WorldState) -> list[str]:
    """Names the observation of ``state`` should parse into, in field order."""
    view = observe_view(state)
    out = [it.token for it in view.items]
    if view.held:
        out.append(view.held)
    if view.goal:
        out += TaskGoal.from_text(view.goal).mentions()
    return out


def _join(tokens: Sequence[str]) -> str:
    if not tokens:
        return "nothing"
    if len(tokens) == 1:
        return f"a {tokens[0]}"
    return ", ".join(f"a {t}" for t in tokens[:-1]) + f", and a {tokens[-1]}"


def render_view(view: View) -> str:
    if view.nothing_happens:
        return NOTHING_HAPPENS
    parts = []
    if view.examined:
        parts.append(f"You examine the {view.examined}.")
    listed = _join([it.token for it in view.items])
    if view.room_center:
        parts.append(f"{ROOM_CENTER} {listed}.")
    elif view.location:
        parts.append(f"On the {view.location}, you see {listed}.")
    else:
        parts.append(f"You see {listed}.")
    if view.holding_known:
        parts.append(f"You are holding a {view.held}." if view.held else HOLDING_NOTHING)
    if view.goal:
        parts.append(view.goal)
    if view.goal_note:
        parts.append(GOAL_NOTE)
    return " ".join(parts)


def token_parts(token: str) -> tuple[str, str, str]:
    """``(adjective, class, index)`` of an object/receptacle token."""
    m = _TOKEN_RE.match(token)
    if not m:
        raise ObservationParseError("unparseable token", token)
    return (m.group(1) or "", m.group(2), m.group(3))


def _split_list(body: str) -> list[str]:
    body = body.strip()
    if body == "nothing":
        return []
    out = []
    for piece in re.split(r",\s*(?:and\s+)?|\s+and\s+", body):
        piece = piece.strip()
        if not piece:
            continue
        if not piece.startswith("a ") and not piece.startswith("an "):
            raise ObservationParseError("list item without article", piece)
        tok = piece.split(" ", 1)[1]
        token_parts(tok)
        out.append(tok)
    return out


def parse_observation(text: str, receptacle_classes: Iterable[str] | None = None) -> View:
    """Parse an observation in the frozen grammar into a :class:`View`."""
    rc = frozenset(receptacle_classes if receptacle_classes is not None else default_world_def().receptacle_classes)
    t = " ".join(text.strip().split())
    if t == NOTHING_HAPPENS:
        return View(nothing_happens=True)
    note = False
    if t.endswith(GOAL_NOTE):
        note = True
        t = t[: -len(GOAL_NOTE)].strip()
    goal = None
    m = re.search(r"\s*(Your task is to: [^.]*\.)", t)
    if m:
        goal = m.group(1)
        TaskGoal.from_text(goal)
        t = (t[: m.start()] + t[m.end():]).strip()
    examined = None
    m = re.match(r"You examine the ([a-z]+(?: [a-z]+)? \d+)\.\s*", t)
    if m:
        examined = m.group(1)
        token_parts(examined)
        t = t[m.end():]
    held, holding_known = None, False
    m = re.search(r"\s*You are holding (nothing(?: in your hands)?|an? ([^.]+))\.$", t)
    if m:
        holding_known = True
        if m.group(2):
            held = m.group(2)
            token_parts(held)
        t = t[: m.start()].strip()
    location, center = None, False
    if (m := re.fullmatch(r"On the ([^,]+), you see (.*)\.", t)):
        location = m.group(1)
        token_parts(location)
        listed = _split_list(m.group(2))
    elif (m := re.fullmatch(re.escape(ROOM_CENTER) + r" (.*)\.", t)):
        center = True
        listed = _split_list(m.group(1))
    elif (m := re.fullmatch(r"You see (.*)\.", t)):
        listed = _split_list(m.group(1))
    else:
        raise ObservationParseError("unrecognized observation", t[:60])
    items = []
    slot = 0
    for tok in listed:
        is_rec = token_parts(tok)[1] in rc
        if is_rec:
            items.append(ViewItem(tok, True, tok))
        else:
            items.append(ViewItem(tok, False, location, slot))
            slot += 1
    return View(location, center, tuple(items), held, examined, goal, note, False, holding_known)


HELD_POS = SphericalPos(math.pi / 2.0, 0.0, 0.0)


def _canonical(view: View, embedder: EmbeddingProvider) -> list[ObjectEntry]:
    objs = [it for it in view.items if not it.receptacle]
    recs = [it for it in view.items if it.receptacle]
    out = []
    for group, gamma in ((objs, 1.0), (recs, 3.0)):
        for k, it in enumerate(group):
            out.append(ObjectEntry(it.token, embedder.embed(it.token), SphericalPos.planar(2 * math.pi * k / len(group), gamma)))
    return out


def view_to_field(view: View, layout: Layout | None, embedder: EmbeddingProvider) -> Field:
    """Field of a view: listed items, then the held item, then goal mentions."""
    if view.nothing_happens:
        return Field()
    if layout is None or (view.location is None and not view.room_center) or (
        view.location is not None and layout.get(view.location) is None
    ):
        entries = _canonical(view, embedder)
    else:
        ax, ay, heading = layout.agent_pose(view.location)
        entries = []
        for it in view.items:
            anchor = layout.get(it.anchor) if it.anchor else None
            if anchor is None:
                entries += _canonical(View(items=(it,)), embedder)
                continue
            x, y = anchor.x, anchor.y
            if not it.receptacle:
                ang = 2 * math.pi * it.slot / 8.0
                x, y = x + 0.3 * math.cos(ang), y + 0.3 * math.sin(ang)
            pos = SphericalPos.planar(math.atan2(y - ay, x - ax) - heading, math.hypot(x - ax, y - ay))
            entries.append(ObjectEntry(it.token, embedder.embed(it.token), pos))
    if view.held:
        entries.append(ObjectEntry(view.held, embedder.embed(view.held), HELD_POS))
    if view.goal:
        for name in TaskGoal.from_text(view.goal).mentions():
            entries.append(ObjectEntry(name, embedder.embed(name), HELD_POS))
    return Field(tuple(entries))


def observation_to_field(
    text: str,
    layout: Layout | None = None,
    embedder: EmbeddingProvider | None = None,
    world: WorldDef | None = None,
) -> Field:
    world = world or default_world_def()
    return view_to_field(parse_observation(text, world.receptacle_classes), layout, embedder or _default_embedder())


@lru_cache(maxsize=1)
def _default_embedder() -> HashEmbedder:
    return HashEmbedder()


# ----------------------------------------------------------------- progress


def stage_count(goal: TaskGoal) -> int:
    if goal.task_type == "examine":
        return 2
    per = 6 if goal.process else 4
    return per * goal.count


def _matches(token: str, goal: TaskGoal, need_state: bool) -> bool:
    adj, cls, _ = token_parts(token)
    return cls == goal.target_object_class and (not need_state or not goal.required_state or adj == goal.required_state)


def view_progress(view: View, goal: TaskGoal, world: WorldDef | None = None, placed: int | None = None) -> int:
    """Number of goal stages a single view evidences, in [0, stage_count(goal)].

    Stages per target object: located, held, [at appliance, processed],
    at destination, placed. ``placed`` overrides the count of finished
    objects (the world state knows it; a lone view only sees what is here).
    """
    world = world or default_world_def()
    total = stage_count(goal)
    if view.nothing_happens:
        return 0
    visible = [it.token for it in view.objects]
    loc_cls = token_parts(view.location)[1] if view.location else ""
    if goal.task_type == "examine":
        if view.examined and _matches(view.examined, goal, False):
            return 2
        held_hit = view.held is not None and _matches(view.held, goal, False)
        return 1 if held_hit or any(_matches(t, goal, False) for t in visible) else 0
    per = total // goal.count
    at_dest = loc_cls == goal.target_receptacle
    here_done = sum(1 for t in visible if _matches(t, goal, True)) if at_dest else 0
    done = here_done if placed is None else placed
    done = min(done, goal.count)
    if done >= goal.count:
        return total
    stage = 0
    if view.held is not None and _matches(view.held, goal, False):
        if goal.process:
            if _matches(view.held, goal, True):
                stage = 5 if at_dest else 4
            else:
                stage = 3 if loc_cls == world.appliance(goal.process) else 2
        else:
            stage = 3 if at_dest else 2
    else:
        pending = [t for t in visible if _matches(t, goal, False)]
        if at_dest:
            pending = [t for t in pending if not _matches(t, goal, True)]
        if pending or (here_done and placed is not None and placed < here_done):
            stage = 1
    return done * per + stage


def state_progress(state: WorldState, goal: TaskGoal, world: WorldDef | None = None) -> int:
    if goal_satisfied(state, goal):
        return stage_count(goal)
    view = observe_view(state, world)
    if goal.task_type == "examine":
        return view_progress(view, goal, world)
    return view_progress(view, goal, world, placed=placed_count(state, goal))


# ------------------------------------------------------------------- expert


def expert_policy(state: WorldState, goal: TaskGoal, world: WorldDef | None = None) -> str | None:
    """Next action of a planner with full knowledge of the layout; None once the goal holds."""
    world = world or default_world_def()
    if goal_satisfied(state, goal):
        return None
    c, req = goal.target_object_class, goal.required_state
    layout = state.layout

    def done(o: ObjectState) -> bool:
        w = state.where(o.oid) if state.held != o.oid else None
        return (
            w is not None
            and layout.get(w).cls == goal.target_receptacle
            and (not req or o.state == req)
        )

    if state.held is not None:
        h = state.obj(state.held)
        if h.cls != c:
            return ActionPrimitive("put", h.oid, state.location).label
        if goal.task_type == "examine":
            return ActionPrimitive("examine", h.oid).label
        if req and h.state != req:
            app = layout.of_class(world.appliance(goal.process))[0]
            if state.location != app:
                return ActionPrimitive("go to", receptacle=app).label
            return ActionPrimitive(goal.process, h.oid, app).label
        dests = layout.of_class(goal.target_receptacle)
        if state.location in dests:
            return ActionPrimitive("put", h.oid, state.location).label
        return ActionPrimitive("go to", receptacle=dests[0]).label
    cands = [o for o in state.objects if o.cls == c and not done(o)]
    here = state.contents_of(state.location)
    cands.sort(key=lambda o: (o.oid not in here, _id_key(o.oid)))
    o = cands[0]
    loc = state.where(o.oid)
    if state.location != loc:
        return ActionPrimitive("go to", receptacle=loc).label
    if goal.task_type == "examine":
        return ActionPrimitive("examine", o.oid).label
    return ActionPrimitive("take", o.oid, loc).label


def expert_trajectory(state: WorldState, goal: TaskGoal, world: WorldDef | None = None) -> tuple[list[tuple[str, str]], str, WorldState]:
    """Roll the expert out: ``(steps, final_observation, final_state)``."""
    world = world or default_world_def()
    steps: list[tuple[str, str]] = []
    obs = observe(state, world)
    while state.step_count < state.max_steps:
        act = expert_policy(state, goal, world)
        if act is None:
            break
        steps.append((obs, act))
        state, obs = step(state, act, world)
    return steps, obs, state


# ----------------------------------------------------------- agent adapter


class WorldModel:
    """What the agent knows about its world: grammar, floor plan, goal, effects.

    Supplies the parser, the symbolic action-effect templates used for
    protention, and the need signal (desire = goal progress, pain = failed
    action).
    """

    def __init__(
        self,
        layout: Layout | None,
        goal: TaskGoal,
        embedder: EmbeddingProvider,
        world: WorldDef | None = None,
        keep_goal: bool = True,
        priors: bool = False,
        desire_scale: float = 2.0,
    ):
        self.layout = layout
        self.goal = goal
        self.embedder = embedder
        self.world = world or default_world_def()
        self.keep_goal = keep_goal
        self.priors = priors
        self.desire_scale = desire_scale
        self._rc = self.world.receptacle_classes
        try:
            self._places = set(self.world.object_class(goal.target_object_class).places)
        except KeyError:
            self._places = set()

    def parse_view(self, text: str) -> View:
        return parse_observation(text, self._rc)

    def parse(self, text: str) -> Field:
        return self.field_of(self.parse_view(text))

    def field_of(self, view: View) -> Field:
        """Field of a view; the standing goal stays in mind after its sentence scrolls away."""
        if self.keep_goal and not view.goal and not view.nothing_happens:
            view = replace(view, goal=self.goal.text)
        return view_to_field(view, self.layout, self.embedder)

    def _likely_holds_target(self, rid: str, view: View) -> bool:
        """Commonsense guess that an unvisited receptacle holds a wanted object."""
        if not self.priors or self.goal.task_type == "examine" and view.examined:
            return False
        cls = token_parts(rid)[1]
        if cls not in self._places or cls == self.goal.target_receptacle:
            return False
        if view.held is not None and _matches(view.held, self.goal, False):
            return False
        return not any(_matches(it.token, self.goal, False) for it in view.objects)

    def _safe_view(self, text: str) -> View | None:
        try:
            return self.parse_view(text)
        except ObservationParseError:
            return None

    def progress(self, view: View) -> int:
        return view_progress(view, self.goal, self.world)

    def need(self, fld: Field, text: str) -> NeedSignal:
        view = self.parse_view(text)
        if view.nothing_happens:
            return NeedSignal(0.0, 1.0)
        total = stage_count(self.goal)
        # the standing task counts as one satisfied predicate
        return NeedSignal(self.desire_scale * (1 + self.progress(view)) / (1 + total), 0.0)

    def predict(self, observation: str, action: str, recall: Sequence[str] = ()) -> tuple[Field, str] | None:
        """Symbolic effect of ``action`` on the current view; None if no template applies."""
        act = ActionPrimitive.parse(action)
        if act is None:
            return None
        try:
            view = self.parse_view(observation)
        except ObservationParseError:
            return None
        if view.nothing_happens:
            return None
        cur_objs = [it for it in view.objects]
        held = view.held
        if act.verb == "go to":
            if self.layout is not None and self.layout.get(act.receptacle) is None:
                return None
            remembered: list[ViewItem] = []
            for past in reversed(recall):
                try:
                    pv = self.parse_view(past)
                except ObservationParseError:
                    continue
                if pv.location == act.receptacle:
                    remembered = pv.objects
                    break
            latest: dict[str, View] = {}
            for pv in map(self._safe_view, reversed(recall)):
                if pv is not None and pv.location and pv.location not in latest:
                    latest[pv.location] = pv
            visited = act.receptacle in latest
            # a recalled sighting of the target beats the commonsense guess,
            # unless a later look at the same place shows it gone
            sighted = any(
                _matches(it.token, self.goal, False) and token_parts(loc)[1] != self.goal.target_receptacle
                for loc, pv in latest.items()
                for it in pv.objects
            )
            if not visited and not sighted and self._likely_holds_target(act.receptacle, view):
                remembered = [ViewItem(f"{self.goal.target_object_class} 1", False, act.receptacle, 0)]
            near = self.layout.nearby(act.receptacle) if self.layout else []
            items = tuple(remembered) + tuple(ViewItem(r, True, r) for r in near)
            new = View(act.receptacle, False, items, held)
        elif act.verb == "take":
            tok = next((it for it in cur_objs if token_parts(it.token)[1:] == token_parts(act.obj)[1:]), None)
            if tok is None or held is not None:
                return None
            items = tuple(it for it in view.items if it is not tok)
            new = View(view.location, view.room_center, items, tok.token)
        elif act.verb == "put":
            if held is None or view.location is None:
                return None
            slot = len(cur_objs)
            items = tuple(view.items) + (ViewItem(held, False, view.location, slot),)
            new = View(view.location, False, items, None)
        elif act.verb in STATE_OF_PROCESS:
            if held is None:
                return None
            adj, cls, idx = token_parts(held)
            new = replace(view, held=f"{STATE_OF_PROCESS[act.verb]} {cls} {idx}", examined=None, goal=None)
        elif act.verb == "examine":
            target = next((it.token for it in cur_objs if token_parts(it.token)[1:] == token_parts(act.obj)[1:]), None)
            if target is None and held and token_parts(held)[1:] == token_parts(act.obj)[1:]:
                target = held
            if target is None:
                return None
            new = replace(view, examined=target, goal=None)
        else:
            return None
        new = replace(new, goal=None, goal_note=False)
        if self.progress(new) >= stage_count(self.goal):
            new = replace(new, goal_note=True)
        return self.field_of(new), render_view(new)
