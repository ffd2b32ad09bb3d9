"""Shared fixtures: one healthy simulation and one trained model per session.

Training is the expensive step (a few seconds of numpy SGD), so every test
that needs a fitted detector shares the same 84 h healthy run: 60 h of
training data and 24 h held out for calibration checks.
"""

import pytest

from faultline.config import PipelineConfig
from faultline.detector import TrainingConfig
from faultline.pipeline import train_model
from faultline.simulator import LoadConfig, composepost_topology, run
from faultline.telemetry import load_metrics

TRAIN_END = 216000   # 60 h
SIM_END = 302400     # 84 h: training span + 24 h hold-out
BASE_SEED = 42

# One line per acceptance criterion, printed after the run so the verdicts
# survive output capture.
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def topology():
    return composepost_topology()


@pytest.fixture(scope="session")
def healthy_sim(topology, tmp_path_factory):
    out = tmp_path_factory.mktemp("healthy-sim")
    return run(topology, LoadConfig(), [], [], duration_s=SIM_END,
               seed=BASE_SEED, out_dir=out)


@pytest.fixture(scope="session")
def healthy_store(healthy_sim):
    return load_metrics(healthy_sim.metrics_path)


@pytest.fixture(scope="session")
def base_config():
    return PipelineConfig()


@pytest.fixture(scope="session")
def trained_model(healthy_store, base_config):
    return train_model(healthy_store, 0, TRAIN_END, base_config,
                       TrainingConfig())
