import numpy as np
import pytest

from strata_lab import PipelineConfig, SeedSpec, SimConfig, generate, run_pipeline

_ACCEPTANCE = {}


def record_acceptance(criterion: str, passed: bool, detail: str) -> None:
    _ACCEPTANCE[criterion] = (passed, detail)


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not _ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(_ACCEPTANCE):
        passed, detail = _ACCEPTANCE[name]
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'}  {name}: {detail}")


@pytest.fixture(scope="session")
def default_cfg():
    return SimConfig()


@pytest.fixture(scope="session")
def data_1000(default_cfg):
    return generate(default_cfg, SeedSpec(101), 1000)


@pytest.fixture(scope="session")
def report_1000(data_1000):
    return run_pipeline(data_1000, PipelineConfig())


@pytest.fixture(scope="session")
def data_big(default_cfg):
    return generate(default_cfg, SeedSpec(202), 100_000)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
