from __future__ import annotations

from pathlib import Path

import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from tsstrat.data import LongFrame
from tsstrat.transforms import TransformSpec

settings.register_profile("repo", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("repo")

DATA = Path(__file__).parent / "data"


def lag(history: int) -> TransformSpec:
    return TransformSpec("lag", params={"history": history})


SS = TransformSpec("standard_scaler")
DN = TransformSpec("difference_normalizer", mode="delta")
DN_RATIO = TransformSpec("difference_normalizer", mode="ratio")
LKN = TransformSpec("last_known_normalizer", mode="delta")
LKN_RATIO = TransformSpec("last_known_normalizer", mode="ratio")


@pytest.fixture
def two_series() -> LongFrame:
    rng = np.random.default_rng(0)
    return LongFrame.from_arrays(
        {"a": 50 + np.cumsum(rng.normal(0.1, 1, 80)), "b": 20 + np.cumsum(rng.normal(-0.1, 1, 80))},
        "2021-01-04", "D",
    )


@pytest.fixture
def ili_path() -> Path:
    return DATA / "ili_sample.csv"


# -- acceptance reporting ----------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


@pytest.fixture
def criterion():
    """``criterion(n, ok, detail)`` records and prints one pass/fail line."""

    def record(number: int, ok: bool, detail: str) -> bool:
        line = f"criterion {number}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE[number] = line
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[n])
