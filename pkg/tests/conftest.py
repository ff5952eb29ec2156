import re

import numpy as np
import pytest

from streamal import data
from streamal.model import ClassifierState, TrainConfig, train

CRITERION = re.compile(r"test_acceptance\.py::test_criterion_(\d+)_(\w+)")
_acceptance: dict[int, tuple[str, str, str]] = {}


@pytest.fixture
def small_splits():
    ds = data.generate_synthetic(800, 0.2, 3)
    sp = data.split(ds, data.SplitSpec(0.05, 0.75, 0.10, 0.10), 3)
    parts, _ = data.standardize(sp.initial, list(sp))
    return data.Splits(*parts)


@pytest.fixture
def trained_model(small_splits):
    cfg = TrainConfig(epochs=5, lr=0.5, seed=1)
    return train(ClassifierState.zeros(2, 2, cfg), small_splits.initial, epochs=100)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_runtest_logreport(report):
    m = CRITERION.search(report.nodeid)
    if not m:
        return
    if report.when == "call" or (report.when == "setup" and report.skipped):
        status = "PASS" if report.passed else "SKIP" if report.skipped else "FAIL"
        detail = "; ".join(f"{k}={v}" for k, v in report.user_properties)
        if report.skipped and isinstance(report.longrepr, tuple):
            detail = report.longrepr[2]
        _acceptance[int(m.group(1))] = (m.group(2), status, detail)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(_acceptance):
        name, status, detail = _acceptance[k]
        terminalreporter.write_line(f"criterion {k} [{status}] {name}" + (f": {detail}" if detail else ""))
