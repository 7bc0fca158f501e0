import dataclasses

import pytest

from focallab.config import ExperimentConfig
from focallab.datagen import GenSpec, generate_corpus
from focallab.experiments import cmd_generate
from focallab.trainer import TrainSpec

SMALL_GEN = GenSpec(n_train=2000, n_val=300, n_test=600, n_challenge_per_cell=40, n_pool_per_cell=40, seed=3)


@pytest.fixture(scope="session")
def small_bundle():
    return generate_corpus(SMALL_GEN)


def small_config(out_dir, **changes) -> ExperimentConfig:
    base = ExperimentConfig(
        name="small",
        output_dir=str(out_dir),
        gen=SMALL_GEN,
        train=TrainSpec(max_epochs=2),
        gamma_grid=(0.0, 2.0),
        injection_grid=(0, 40),
        seeds=(0, 1),
    )
    return dataclasses.replace(base, **changes)


@pytest.fixture(scope="session")
def small_experiment(tmp_path_factory):
    cfg = small_config(tmp_path_factory.mktemp("exp"))
    cmd_generate(cfg)
    return cfg


# One line per acceptance criterion, echoed in the terminal summary.
CRITERIA_LINES: list[str] = []


def record_criterion(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    CRITERIA_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if CRITERIA_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERIA_LINES:
            terminalreporter.write_line(line)
