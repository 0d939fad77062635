from __future__ import annotations

import pytest

from gainrag.comms import Pipeline
from gainrag.kinematics import default_model
from gainrag.scenario_db import load_default_database
from gainrag.sim import SimConfig, load_script, run_scenario


@pytest.fixture(scope="session")
def db():
    return load_default_database()


@pytest.fixture(scope="session")
def model():
    return default_model()


@pytest.fixture(scope="session")
def pipeline(db):
    return Pipeline(db)


class _RunCache:
    """Shipped-script runs are a few seconds each; share them across test modules."""

    def __init__(self, pipeline, model):
        self.pipeline = pipeline
        self.model = model
        self._runs = {}

    def __call__(self, name: str, **config):
        key = (name, tuple(sorted(config.items())))
        if key not in self._runs:
            self._runs[key] = run_scenario(load_script(name), SimConfig(**config), self.pipeline, self.model)
        return self._runs[key]


@pytest.fixture(scope="session")
def shipped_run(pipeline, model):
    return _RunCache(pipeline, model)


ACCEPTANCE: dict[int, tuple[str, bool, str]] = {}


@pytest.fixture
def criterion(request):
    """Record the outcome of one acceptance criterion for the end-of-run summary."""
    holder = {}

    def register(number: int, title: str):
        holder["key"] = (number, title)
        ACCEPTANCE[number] = (title, False, "did not finish")

    yield holder, register
    if "key" in holder:
        number, title = holder["key"]
        rep = getattr(request.node, "rep_call", None)
        passed = rep is not None and rep.passed
        detail = holder.get("detail", "")
        if rep is not None and rep.failed:
            detail = str(rep.longrepr.reprcrash.message).splitlines()[0] if rep.longrepr else "failed"
        ACCEPTANCE[number] = (title, passed, detail)


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n} {'PASS' if ok else 'FAIL'}: {title}" + (f" ({detail})" if detail else ""))
