from __future__ import annotations

import numpy as np
import pytest

from imac.config import RunConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_config() -> RunConfig:
    """Small enough for a full pipeline in a few seconds."""
    return RunConfig().replace(
        data={"total_transitions": 3000},
        world_model={"steps": 20, "hidden": (32,)},
        rt={"steps": 20, "hidden": (16,), "lstm": 8},
        agent={"hidden": (16,), "lstm": 8, "batch_size": 4},
        train={"epochs": 3, "steps_per_epoch": 3, "eval_every": 2, "eval_train_levels": 2, "eval_test_levels": 2,
               "eval_episodes": 1},
        bc={"steps": 5},
    )


# one line per acceptance criterion, printed after the run
ACCEPTANCE: dict[int, tuple[bool, str]] = {}
CRITERIA = 10


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, CRITERIA + 1):
        if n in ACCEPTANCE:
            ok, detail = ACCEPTANCE[n]
            terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
        else:
            terminalreporter.write_line(f"criterion {n:2d}: NOT RUN")
