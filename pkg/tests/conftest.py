from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from itcma.field import Field, ObjectEntry, SphericalPos

GOLDEN = Path(__file__).parent / "golden"


def one_hot(k: int, n: int = 8) -> tuple[float, ...]:
    v = [0.0] * n
    v[k] = 1.0
    return tuple(v)


def symbol_field(sym: int, n: int = 8) -> Field:
    """One-object field whose name vector is the basis vector ``sym``."""
    return Field((ObjectEntry(f"s{sym}", one_hot(sym, n), SphericalPos(math.pi / 2, 0.0, 1.0)),))


def random_field(rng: np.random.Generator, n: int = 8, max_rows: int = 5, min_rows: int = 0) -> Field:
    m = int(rng.integers(min_rows, max_rows + 1))
    rows = []
    for k in range(m):
        v = rng.normal(size=n)
        v /= np.linalg.norm(v)
        pos = SphericalPos(float(rng.uniform(0, math.pi)), float(rng.uniform(0, 2 * math.pi - 1e-9)), float(rng.exponential(2.0)))
        rows.append(ObjectEntry(f"o{k}", tuple(float(x) for x in v), pos))
    return Field(tuple(rows))


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def golden_dir() -> Path:
    return GOLDEN


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}")
