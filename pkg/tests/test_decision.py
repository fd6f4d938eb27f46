import httpx
import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from itcma.channel import PrimalImpression, RetentionBuffer, assemble
from itcma.decision import (
    AblationMask,
    DecisionContext,
    GreedyPolicy,
    PolicyExhausted,
    RemotePolicy,
    ScriptedPolicy,
    apply_mask,
    coerce_action,
    decide,
    greedy_choice,
)
from itcma.drive import score_actions
from itcma.field import HashEmbedder
from itcma.forecast import ForecastRequest, HeuristicForecaster
from itcma.llm import ChatClient, ChatConfig
from itcma.world import TaskGoal, WorldModel

from test_channel import DRIVE, lettuce_state

actions = st.lists(st.text(min_size=1, max_size=12), min_size=1, max_size=8, unique=True)


def ctx(scores, space=None, text=""):
    return DecisionContext(text, scores, list(space or scores), "obs", "goal")


def remote(reply):
    cfg = ChatConfig(base_url="http://llm.test", retries=0, backoff=0.0)
    return RemotePolicy(ChatClient(cfg, transport=httpx.MockTransport(
        lambda req: httpx.Response(200, json={"choices": [{"message": {"content": reply}}]}))))


# ---------------------------------------------------------------- greedy


def test_greedy_examples():
    assert decide(GreedyPolicy(), ctx({"a": 1.0, "b": 2.0})) == "b"
    assert decide(GreedyPolicy(), ctx({"b": 0.0, "a": 0.0, "c": 0.0})) == "a"


@given(actions, st.data())
def test_greedy_returns_member_and_is_affine_invariant(space, data):
    scores = {a: data.draw(st.floats(-100, 100)) for a in space}
    k = data.draw(st.floats(0.1, 10))
    c = data.draw(st.floats(-10, 10))
    choice = greedy_choice(scores, space)
    assert choice in space
    best = max(scores.values())
    assert scores[choice] == best
    shifted = {a: k * s + c for a, s in scores.items()}
    # rounding keeps order but may merge near-ties into exact ties
    if len(set(shifted.values())) == len(shifted):
        assert greedy_choice(shifted, space) == choice


def test_cool_lettuce_at_counter_is_put_down():
    obs = "On the countertop 3, you see a bread 1, and a egg 1. You are holding a cool lettuce 1."
    goal = TaskGoal.from_text("Your task is to: put a cool lettuce in countertop.")
    model = WorldModel(None, goal, HashEmbedder())
    space = ("go to fridge 1", "go to garbagecan 1", "go to microwave 1", "go to sinkbasin 1",
             "go to stoveburner 1", "go to toaster 1", "put lettuce 1 in/on countertop 3")
    pi = PrimalImpression.perceive(model.parse(obs), obs, 0)
    state = assemble(RetentionBuffer(), pi)
    prot = HeuristicForecaster().forecast(ForecastRequest("", state, space, DRIVE, model))
    scores = score_actions({a: (p.field, p.text) for a, p in prot.items()}, pi.field, [], DRIVE, model.need)
    assert decide(GreedyPolicy(), DecisionContext("", scores, list(space))) == "put lettuce 1 in/on countertop 3"


# -------------------------------------------------------------- scripted


def test_scripted_skips_illegal_and_exhausts():
    pol = ScriptedPolicy(["x", "a", "b"])
    assert decide(pol, ctx({"a": 0, "b": 0})) == "a"
    assert decide(pol, ctx({"a": 0, "b": 0})) == "b"
    with pytest.raises(PolicyExhausted):
        decide(pol, ctx({"a": 0, "b": 0}))
    pol.reset()
    assert decide(pol, ctx({"b": 0}, ["b"])) == "b"


def test_scripted_from_file(tmp_path):
    path = tmp_path / "s.txt"
    path.write_text("go to fridge 1\n\ntake egg 1 from fridge 1\n")
    assert ScriptedPolicy.from_file(path).actions == ["go to fridge 1", "take egg 1 from fridge 1"]


# ---------------------------------------------------------------- remote


def test_coercion_ladder():
    space = ["go to fridge 1", "Put X"]
    assert coerce_action("go to fridge 1", space) == "go to fridge 1"
    assert coerce_action("> GO TO  Fridge 1.", space) == "go to fridge 1"
    assert coerce_action("I think:\nput x", space) == "Put X"
    assert coerce_action("fly away", space) is None


def test_remote_policy_uses_reply():
    assert decide(remote("> put lettuce 1 in/on countertop 3"), ctx({"go to fridge 1": 5.0, "put lettuce 1 in/on countertop 3": 0.0})) == (
        "put lettuce 1 in/on countertop 3"
    )


@pytest.mark.parametrize("reply", ["", "rm -rf /", "{'json': 1}", "a" * 5000, "go to mars 1"])
def test_remote_policy_adversarial_replies_fall_back(reply):
    assert decide(remote(reply), ctx({"a": 1.0, "b": 2.0})) == "b"


def test_remote_policy_transport_failure_falls_back():
    cfg = ChatConfig(base_url="http://llm.test", retries=0, backoff=0.0)
    pol = RemotePolicy(ChatClient(cfg, transport=httpx.MockTransport(lambda req: httpx.Response(500))))
    assert decide(pol, ctx({"a": 3.0, "b": 2.0})) == "a"


def test_remote_prompt_ends_with_selection_header():
    msgs = remote("x").messages(ctx({"a": 0.0}, text="Driver: [1 2 3]"))
    assert msgs[-1]["content"].startswith("> Environmental Information")
    assert msgs[-1]["content"].endswith("> Selected Action\n")


# ---------------------------------------------------------------- masks


def test_mask_parse_and_label():
    m = AblationMask.parse("no-channel, no_drive")
    assert m == AblationMask(no_channel=True, no_drive=True)
    assert m.label == "no-channel,no-drive"
    assert AblationMask.parse("").label == "full"
    with pytest.raises(ValueError):
        AblationMask.parse("no-brain")


def test_mask_rules():
    state = lettuce_state()
    scores = {"go to fridge 1": 0.3, "put lettuce 1 in/on countertop 3": 1.2}
    text, out = apply_mask(state, DRIVE, scores, AblationMask())
    assert out == scores
    assert all(lbl in text for lbl in ("Driver:", "Activated Memory:", "Retention:", "Protention:"))
    text, out = apply_mask(state, DRIVE, scores, AblationMask(no_drive=True))
    assert "Driver:" not in text and set(out.values()) == {0.0}
    text, _ = apply_mask(state, DRIVE, scores, AblationMask(no_memory=True))
    assert "Activated Memory:" not in text and "Retention:" in text
    text, _ = apply_mask(state, DRIVE, scores, AblationMask(no_channel=True))
    assert "Retention:" not in text and "Protention:" not in text
    text, _ = apply_mask(state, DRIVE, scores, AblationMask(True, True, True))
    assert text == ""


def test_masked_sections_are_a_subsequence():
    state = lettuce_state()
    full, _ = apply_mask(state, DRIVE, {}, AblationMask())
    rng = np.random.default_rng(0)
    for _ in range(8):
        mask = AblationMask(*(bool(x) for x in rng.integers(0, 2, size=3)))
        masked, _ = apply_mask(state, DRIVE, {}, mask)
        it = iter(full.splitlines())
        assert all(line in it for line in masked.splitlines())


def test_zero_drive_scores_fall_back_to_tie_break():
    assert greedy_choice({a: 0.0 for a in ["c", "a", "b"]}, ["c", "a", "b"]) == "a"
