from __future__ import annotations

import time

import pytest
from helpers import ACCEPTANCE

from edgefleet.simulator import default_config, run_scenario

# --------------------------------------------------------------------------- scenarios
# 45-day runs are expensive, so each distinct configuration runs once per session.


def _timed_run(config, out):
    start = time.monotonic()
    result = run_scenario(config, out)
    return result, time.monotonic() - start


@pytest.fixture(scope="session")
def shift_run(tmp_path_factory):
    return _timed_run(default_config(), tmp_path_factory.mktemp("shift_a"))


@pytest.fixture(scope="session")
def shift_rerun(tmp_path_factory):
    return _timed_run(default_config(), tmp_path_factory.mktemp("shift_b"))


@pytest.fixture(scope="session")
def stationary_run(tmp_path_factory):
    return _timed_run(default_config(shift_day=None), tmp_path_factory.mktemp("stationary"))


# --------------------------------------------------------------------------- acceptance summary


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, text = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {text}")
