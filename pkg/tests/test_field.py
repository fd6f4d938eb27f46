import json
import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from itcma.field import (
    EMPTY_FIELD,
    Field,
    FieldDomainError,
    FieldWeights,
    HashEmbedder,
    ObjectEntry,
    SphericalPos,
    cosine,
    diff,
    field_sim,
    spherical_sim,
)

from conftest import random_field

positions = st.builds(
    SphericalPos,
    st.floats(0, math.pi),
    st.floats(0, 2 * math.pi, exclude_max=True),
    st.floats(0, 1e6),
)


def entry(name, vec, theta=math.pi / 2, phi=0.0, gamma=1.0):
    return ObjectEntry(name, tuple(vec), SphericalPos(theta, phi, gamma))


# ------------------------------------------------------------------ embed


def test_embed_is_deterministic_and_unit_norm():
    e = HashEmbedder()
    a, b = e.embed("lettuce"), e.embed("lettuce")
    assert a == b
    assert len(a) == 64
    assert np.linalg.norm(a) == pytest.approx(1.0, abs=1e-12)
    assert cosine(a, b) == pytest.approx(1.0, abs=1e-12)


def test_embed_matches_golden_cosine(golden_dir):
    golden = json.loads((golden_dir / "embedding.json").read_text())
    e = HashEmbedder(golden["dim"])
    for pair in golden["pairs"]:
        assert cosine(e.embed(pair["a"]), e.embed(pair["b"])) == pytest.approx(pair["cosine"], abs=1e-12)


def test_embed_rejects_empty_token():
    with pytest.raises(ValueError):
        HashEmbedder().embed("")


# ----------------------------------------------------------------- cosine


def test_cosine_examples():
    assert cosine([1, 0], [1, 0]) == 1.0
    assert cosine([1, 0], [0, 1]) == 0.0
    assert cosine([1, 1], [1, 0]) == pytest.approx(1 / math.sqrt(2), abs=1e-9)


def test_cosine_domain_errors():
    with pytest.raises(FieldDomainError):
        cosine([0, 0], [1, 0])
    with pytest.raises(FieldDomainError):
        cosine([1, 0, 0], [1, 0])


# --------------------------------------------------------- spherical_sim


def test_spherical_sim_examples():
    a = SphericalPos(0.0, 0.0, 1.0)
    assert spherical_sim(a, a) == 1.0
    b = SphericalPos(math.pi, 0.0, 1.0)
    assert spherical_sim(a, b) == pytest.approx(1 - (1 / 3) * (1 / 7), abs=1e-9)


def test_spherical_sim_lower_limit():
    # tanh saturates, so approach the limit with a huge radial gap
    a = SphericalPos(0.0, 0.0, 0.0)
    b = SphericalPos(math.pi, math.nextafter(2 * math.pi, 0), 1e6)
    assert spherical_sim(a, b) == pytest.approx(2 / 3, abs=1e-9)


@given(positions, positions)
def test_spherical_sim_symmetric_and_bounded(a, b):
    s = spherical_sim(a, b)
    assert s == spherical_sim(b, a)
    assert 2 / 3 - 1e-12 <= s <= 1.0


def test_position_domain_checked():
    with pytest.raises(FieldDomainError):
        SphericalPos(4.0, 0.0, 1.0)
    with pytest.raises(FieldDomainError):
        SphericalPos(0.0, 2 * math.pi, 1.0)
    with pytest.raises(FieldDomainError):
        SphericalPos(0.0, 0.0, -1.0)


def test_planar_wraps_angle():
    p = SphericalPos.planar(-math.pi / 2, 2.0)
    assert p.phi == pytest.approx(3 * math.pi / 2)
    assert p.theta == pytest.approx(math.pi / 2)


# -------------------------------------------------------- field_sim, diff


def test_field_sim_displaced_object():
    x = Field((entry("a", [1, 0], theta=0.0),))
    y = Field((entry("a", [1, 0], theta=math.pi),))
    expected = 0.5 * 1 + 0.5 * (1 - (1 / 3) * (1 / 7))
    assert field_sim(x, y) == pytest.approx(expected, abs=1e-9)


def test_field_sim_subset_halves():
    a = entry("a", [1, 0])
    b = entry("b", [0, 1], phi=1.0)
    x, y = Field((a,)), Field((a, b))
    assert field_sim(x, y) == pytest.approx(0.5, abs=1e-9)
    assert diff(x, y) == pytest.approx(0.5, abs=1e-9)


def test_empty_conventions():
    f = Field((entry("a", [1, 0]),))
    assert field_sim(EMPTY_FIELD, EMPTY_FIELD) == 1.0
    assert field_sim(f, EMPTY_FIELD) == 0.0
    assert field_sim(EMPTY_FIELD, f) == 0.0
    assert diff(f, EMPTY_FIELD) == 1.0
    assert diff(f, f) == 0.0


def test_field_sim_not_assumed_symmetric():
    # x's rows drive the matching; swapping arguments can change the value
    x = Field((entry("a", [1, 0]), entry("a2", [1, 0.01], gamma=5.0)))
    y = Field((entry("a", [1, 0]),))
    assert 0.0 <= field_sim(x, y) <= 1.0
    assert 0.0 <= field_sim(y, x) <= 1.0


def test_mixed_dimensions_rejected():
    with pytest.raises(FieldDomainError):
        Field((entry("a", [1, 0]), entry("b", [1, 0, 0])))
    with pytest.raises(FieldDomainError):
        field_sim(Field((entry("a", [1, 0]),)), Field((entry("b", [1, 0, 0]),)))


def test_weights_must_sum_to_one():
    with pytest.raises(ValueError):
        FieldWeights(0.7, 0.7)


@settings(max_examples=50)
@given(st.integers(0, 2**32 - 1))
def test_identity_and_range(seed):
    rng = np.random.default_rng(seed)
    f = random_field(rng, min_rows=1)
    g = random_field(rng)
    assert diff(f, f) == 0.0
    assert 0.0 <= field_sim(f, g) <= 1.0
    assert 0.0 <= diff(f, g) <= 1.0


def test_monotone_in_positional_gap():
    rng = np.random.default_rng(7)
    for _ in range(100):
        x = random_field(rng, min_rows=1)
        prev = 1.0
        for gap in (0.0, 0.5, 1.0, 2.0, 4.0):
            y = Field(tuple(ObjectEntry(e.name, e.embedding, SphericalPos(e.pos.theta, e.pos.phi, e.pos.gamma + gap)) for e in x.entries))
            s = field_sim(x, y)
            assert s <= prev + 1e-12
            prev = s


def test_field_json_round_trip():
    rng = np.random.default_rng(3)
    f = random_field(rng, min_rows=2)
    assert Field.from_dict(json.loads(json.dumps(f.to_dict()))) == f
