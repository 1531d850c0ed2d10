"""Shared fixtures, plus a per-criterion PASS/FAIL report for the acceptance suite."""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from unipool.autodiff import set_precision  # noqa: E402

ACCEPTANCE_TITLES = {
    1: "block normalization of pooling weights",
    2: "zero-parameter universal pooling equals average pooling",
    3: "identity scoring network converges to max pooling",
    4: "one-hot bias reproduces stride pooling",
    5: "finite-difference gradient checks",
    6: "naive-loop oracle equivalence",
    7: "desk-scale learning on synthetic data",
    8: "pooling-behaviour taxonomy",
    9: "determinism and checkpoint persistence",
    10: "CIFAR-10 ingestion",
}

_outcomes: dict[int, list[str]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "acceptance(n): test belongs to acceptance criterion n")


def pytest_runtest_logreport(report):
    crit = getattr(report, "acceptance", None)
    if crit is None:
        return
    if report.when == "call" or (report.when == "setup" and report.outcome != "passed"):
        _outcomes.setdefault(crit, []).append(report.outcome)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("acceptance")
    if marker is not None:
        report.acceptance = marker.args[0]


def pytest_terminal_summary(terminalreporter):
    if not _outcomes:
        return
    tr = terminalreporter
    tr.section("acceptance criteria")
    for crit in sorted(ACCEPTANCE_TITLES):
        results = _outcomes.get(crit)
        if not results:
            status = "NOT RUN"
        elif any(r == "failed" for r in results):
            status = "FAIL"
        elif all(r == "skipped" for r in results):
            status = "SKIP"
        else:
            status = "PASS"
        note = ""
        n_skip = sum(r == "skipped" for r in results or [])
        if status == "PASS" and n_skip:
            note = f" ({n_skip} of {len(results)} parts skipped)"
        tr.write_line(f"criterion {crit:2d} {status:<7} {ACCEPTANCE_TITLES[crit]}{note}")


@pytest.fixture(autouse=True)
def _float64():
    """Every test starts (and ends) at 64-bit precision."""
    set_precision(64)
    yield
    set_precision(64)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
