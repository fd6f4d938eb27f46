"""Acceptance suite: one pass/fail line per criterion in the terminal summary.

Tolerances and budgets are pinned here. Criteria 6 and 7 use the
heuristic forecaster and the greedy policy with the default configuration.
"""
import math
import time
from fractions import Fraction

import numpy as np
import pytest

from itcma.agent import AgentConfig, run_episode, train_bc, train_seeds
from itcma.channel import render_channel_text, render_prompt
from itcma.cli import main
from itcma.decision import AblationMask
from itcma.drive import (
    DriveVector,
    DriveWeights,
    EmotionState,
    NeedSignal,
    arousal,
    dominance,
    pleasure,
    recency_weights,
    update_drive,
)
from itcma.field import EMPTY_FIELD, FieldWeights, SphericalPos, diff, field_sim, spherical_sim
from itcma.memory import DiffCache, MemoryStore, activate, field_lev
from itcma.world import expert_trajectory, generate_world, goal_satisfied

from conftest import ACCEPTANCE, random_field
from test_channel import COUNTER, DRIVE, PUT, lettuce_state
from test_memory import brute_force, levenshtein, make_store, to_fields

TOL = 1e-9
LEV_TOL = 1e-12
BUDGET_KERNELS = 5.0
BUDGET_ACTIVATION = 10.0
BUDGET_ABLATION = 120.0
BUDGET_TRAINING = 300.0
ABLATION_SEEDS = range(10)
SEEN_SUITE = 140
UNSEEN_SUITE = 34


def record(n, ok, detail):
    ACCEPTANCE[n] = (bool(ok), detail)
    assert ok, detail


@pytest.fixture(scope="module")
def trained():
    return train_bc(AgentConfig(), train_seeds(SEEN_SUITE), MemoryStore())


def test_criterion_1_kernel_identities():
    rng = np.random.default_rng(101)
    t0 = time.perf_counter()
    bad = []
    for k in range(1000):
        a = SphericalPos(rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi - 1e-9), rng.exponential(3))
        b = SphericalPos(rng.uniform(0, math.pi), rng.uniform(0, 2 * math.pi - 1e-9), rng.exponential(3))
        s = spherical_sim(a, b)
        if abs(s - spherical_sim(b, a)) > TOL or not (2 / 3 - TOL <= s <= 1 + TOL) or abs(spherical_sim(a, a) - 1) > TOL:
            bad.append(("spherical", k))
        f = random_field(rng, min_rows=1)
        g = random_field(rng)
        fs = field_sim(f, g)
        if abs(diff(f, f)) > TOL or abs(field_sim(f, f) - 1) > TOL:
            bad.append(("identity", k))
        if not (-TOL <= fs <= 1 + TOL) or abs(diff(f, g) - (1 - fs)) > TOL:
            bad.append(("range", k))
        if abs(diff(f, EMPTY_FIELD) - 1) > TOL:
            bad.append(("empty", k))
    dt = time.perf_counter() - t0
    record(1, not bad and dt < BUDGET_KERNELS, f"1000 random cases, {len(bad)} violations, {dt:.2f}s (budget {BUDGET_KERNELS:.0f}s)")


def test_criterion_2_levenshtein_oracle():
    rng = np.random.default_rng(202)
    alphabet = "abcdefg"
    w = FieldWeights(1.0, 0.0)
    mismatches = 0
    for _ in range(120):
        a = "".join(rng.choice(list(alphabet), size=int(rng.integers(0, 10))))
        b = "".join(rng.choice(list(alphabet), size=int(rng.integers(0, 10))))
        fa, fb = to_fields(a, alphabet), to_fields(b, alphabet)
        if field_lev(fa, fb, w) != levenshtein(a, b):
            mismatches += 1
        if field_lev(fa, fa, w) != 0:
            mismatches += 1
        for i in range(len(fa) + 1):
            if field_lev(fa[:i], [], w) != i:
                mismatches += 1
        for j in range(len(fb) + 1):
            if field_lev([], fb[:j], w) != j:
                mismatches += 1
    record(2, mismatches == 0, f"120 string pairs against textbook DP, {mismatches} mismatches")


def test_criterion_3_activation_oracle():
    rng = np.random.default_rng(303)
    t0 = time.perf_counter()
    wrong = exact_span = 0
    for _ in range(50):
        n = int(rng.integers(1, 31))
        store = make_store([random_field(rng, max_rows=3) for _ in range(n)])
        query = [random_field(rng, max_rows=3) for _ in range(int(rng.integers(1, 5)))]
        w = int(rng.integers(1, 5))
        res = activate(query, store, w=w, threshold=0.0)
        best, span = brute_force(query, store, w)
        window = [r.field for r in store.records[res.start:res.end + 1]]
        if abs(res.distance - best) > LEV_TOL or abs(field_lev(query, window) - best) > LEV_TOL:
            wrong += 1
        exact_span += (res.start, res.end) == span
    dt = time.perf_counter() - t0
    record(3, wrong == 0 and dt < BUDGET_ACTIVATION, f"50 stores, {wrong} disagreements beyond {LEV_TOL:g} ({exact_span}/50 identical windows), {dt:.2f}s (budget {BUDGET_ACTIVATION:.0f}s)")


def test_criterion_4_drive_math():
    problems = []
    for t in range(2, 51):
        if sum(Fraction(2 * n, t * (t - 1)) for n in range(1, t)) != 1:
            problems.append(f"exact sum t={t}")
        if abs(math.fsum(recency_weights(t)) - 1) > 1e-15:
            problems.append(f"float sum t={t}")
    rng = np.random.default_rng(404)
    th1 = math.tanh(1)
    for _ in range(500):
        p = pleasure(NeedSignal(*rng.exponential(2, size=2)))
        pi = random_field(rng)
        a = arousal(pi, [random_field(rng) for _ in range(int(rng.integers(0, 6)))])
        d = dominance(pi, random_field(rng))
        if not (-1 < p < 1 and 0 <= a <= th1 + TOL and 0 <= d <= th1 + TOL):
            problems.append("range")
    w = DriveWeights(*rng.uniform(0, 2, size=3))
    es = [EmotionState(*rng.uniform(-1, 1, size=3)) for _ in range(100)]
    acc = DriveVector()
    for e in es:
        acc = update_drive(acc, e, w)
    closed = [math.fsum(getattr(e, k) * wk for e in es) for k, wk in (("pleasure", w.w_p), ("arousal", w.w_a), ("dominance", w.w_d))]
    if max(abs(x - y) for x, y in zip(acc.as_list(), closed)) > TOL:
        problems.append("accumulation")
    record(4, not problems, f"weights t=2..50, 500 fuzzed emotions, 100-step accumulation; problems: {problems or 'none'}")


def test_criterion_5_expert_completeness():
    done = {}
    for split, n in (("seen", SEEN_SUITE), ("unseen", UNSEEN_SUITE)):
        ok = 0
        for seed in range(n):
            state, goal = generate_world(seed, split)
            steps, _, final = expert_trajectory(state, goal)
            ok += final.step_count <= 20 and len(steps) <= 20 and goal_satisfied(final, goal)
        done[split] = (ok, n)
    passed = all(ok == n for ok, n in done.values())
    record(5, passed, f"seen {done['seen'][0]}/{done['seen'][1]}, unseen {done['unseen'][0]}/{done['unseen'][1]} within 20 steps")


def test_criterion_6_ablation_ordering(trained):
    t0 = time.perf_counter()
    cache = DiffCache(trained)
    counts = {}
    for label in ("full", "no-drive", "no-memory", "no-channel"):
        cfg = AgentConfig(mask=AblationMask.parse(label))
        counts[label] = sum(run_episode(cfg, s, "seen", trained, cache=cache).success for s in ABLATION_SEEDS)
    dt = time.perf_counter() - t0
    c = counts
    ordered = c["full"] >= c["no-drive"] >= c["no-memory"] >= c["no-channel"] and c["full"] > c["no-channel"]
    detail = ", ".join(f"{k} {v}/10" for k, v in c.items()) + f"; {dt:.1f}s (budget {BUDGET_ABLATION:.0f}s)"
    record(6, ordered and dt < BUDGET_ABLATION, detail)


def test_criterion_7_training_effect(trained):
    t0 = time.perf_counter()
    cfg = AgentConfig()
    cache = DiffCache(trained)
    with_mem = [run_episode(cfg, s, "seen", trained, cache=cache) for s in range(SEEN_SUITE)]
    without = [run_episode(cfg, s, "seen", MemoryStore()) for s in range(SEEN_SUITE)]
    dt = time.perf_counter() - t0
    steps_t = sum(r.steps_taken for r in with_mem) / SEEN_SUITE
    steps_u = sum(r.steps_taken for r in without) / SEEN_SUITE
    ok_t = sum(r.success for r in with_mem)
    ok_u = sum(r.success for r in without)
    passed = steps_t < steps_u and ok_t >= ok_u and dt < BUDGET_TRAINING
    record(7, passed, f"trained {ok_t}/{SEEN_SUITE} mean steps {steps_t:.2f}; untrained {ok_u}/{SEEN_SUITE} mean steps {steps_u:.2f}; {dt:.1f}s (budget {BUDGET_TRAINING:.0f}s)")


def test_criterion_8_format_fidelity(golden_dir):
    state = lettuce_state()
    text = render_channel_text(state, DRIVE)
    prompt = render_prompt(COUNTER, "Your task is to: put a cool lettuce in countertop.", list(state.protentions), text, selected=PUT)
    same_block = text.encode() == (golden_dir / "channel_block.txt").read_bytes().rstrip(b"\n")
    same_prompt = prompt.encode() == (golden_dir / "prompt_block.txt").read_bytes()
    labels = all(lbl in prompt for lbl in ("Driver:", "Activated Memory:", "Retention:", "Protention:", "> Selected Action"))
    record(8, same_block and same_prompt and labels, f"channel block {'matches' if same_block else 'differs'}, prompt block {'matches' if same_prompt else 'differs'}")


def test_criterion_9_determinism(tmp_path, capsys):
    store = tmp_path / "mem.jsonl"
    main(["train", "--out", str(store), "-n", "20"])
    out = tmp_path / "run"
    argv = ["eval", "--trained", str(store), "--episodes", "4", "--ablate", "no-memory", "--jobs", "1", "--out", str(out)]
    main(argv)
    first = (out / "results.json").read_bytes()
    manifest = (out / "manifest.json").read_bytes()
    main(argv)
    capsys.readouterr()
    same = first == (out / "results.json").read_bytes()
    same_manifest = manifest == (out / "manifest.json").read_bytes()
    record(9, same and same_manifest, f"results.json byte-identical across two runs: {same}; manifests identical: {same_manifest}")
