import os
from pathlib import Path

import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", deadline=None, max_examples=100,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

ROOT = Path(__file__).resolve().parent.parent


@pytest.fixture
def repo_root():
    return ROOT


@pytest.fixture
def write_tsv(tmp_path):
    def _write(lines, name="data.tsv", newline="\n"):
        path = tmp_path / name
        path.write_bytes("".join(l + newline for l in lines).encode("utf-8"))
        return path
    return _write


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(RESULTS):
        terminalreporter.write_line(RESULTS[num])
