import os

import pytest

from visioncomm.config import ExperimentConfig

TINY_CONFIG = os.path.join(os.path.dirname(__file__), "data", "tiny_config.json")


@pytest.fixture(scope="session")
def tiny_cfg() -> ExperimentConfig:
    return ExperimentConfig.load(TINY_CONFIG)


@pytest.fixture(scope="session")
def tiny_data(tiny_cfg, tmp_path_factory):
    from visioncomm.dataset import generate
    out = str(tmp_path_factory.mktemp("tiny") / "data")
    manifest = generate(tiny_cfg, out, threads=1)
    return out, manifest


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


@pytest.fixture
def criterion():
    """Record the verdict of one acceptance criterion and echo it."""
    def record(number: int, ok: bool, detail: str):
        ACCEPTANCE[number] = (ok, detail)
        print(f"criterion {number}: {'PASS' if ok else 'FAIL'} - {detail}")
    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n}: {'PASS' if ok else 'FAIL'} - {detail}")
