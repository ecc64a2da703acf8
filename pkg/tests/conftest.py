"""Shared fixtures: the trained-model suite used by the acceptance and trained-model tests."""

import pytest

from stepmono.experiment import train_and_evaluate
from stepmono.toy.config import ToyTaskSpec, TrainConfig
from stepmono.toy.data import generate_dataset

SUITE_SEEDS = (0, 1, 2, 3, 4)
SUITE_STEPS = 4000
SUITE_MODES = {
    "lsa": ["soft"], "gmm": ["soft"], "fa": ["soft"], "fa_ta": ["soft"],
    "ma": ["soft", "hard_greedy"], "sma": ["soft", "hard_greedy"],
}
STRESS_MODES = {"lsa": ["soft"], "ma": ["hard_greedy"], "sma": ["soft"]}

ACCEPTANCE_LINES: dict[int, str] = {}


@pytest.fixture(scope="session")
def suite_task():
    return ToyTaskSpec()


@pytest.fixture(scope="session")
def suite_splits(suite_task):
    return {s: generate_dataset(suite_task, s) for s in ("train", "heldout", "stress")}


@pytest.fixture(scope="session")
def trained_suite(suite_task, suite_splits):
    """Every mechanism trained over five seeds; keyed by (mechanism, seed).

    Each run records its wall-clock training time in ``train_seconds``.
    """
    runs = {}
    for seed in SUITE_SEEDS:
        for mech, modes in SUITE_MODES.items():
            runs[(mech, seed)] = train_and_evaluate(suite_task, mech, modes, seed, TrainConfig(steps=SUITE_STEPS),
                                     splits=suite_splits, stress_modes=STRESS_MODES.get(mech, []))
    return runs


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[k])
