import sys
from pathlib import Path

import pytest

from pareto_tuner.experiment import ExperimentConfig, run_experiment
from pareto_tuner.space import default_space

STUBS_DIR = Path(__file__).parent / "stubs"


def stub_command(name: str, *args: str) -> list[str]:
    return [sys.executable, str(STUBS_DIR / name), *args]


@pytest.fixture(scope="session")
def space():
    return default_space()


@pytest.fixture(scope="session")
def small_experiment(tmp_path_factory):
    """Three short surrogate runs, reused by archive/metrics/importance tests."""
    out = tmp_path_factory.mktemp("small-runs")
    config = ExperimentConfig(repeats=3, generations=8, master_seed=11, output_dir=str(out))
    return run_experiment(config)
