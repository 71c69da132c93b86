from __future__ import annotations

import os
import stat
import sys
import textwrap
from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from charter.gateway import ClusterGateway
from charter.gateway.server import MockControlPlane, create_app
from charter.release import ReleaseManager


@pytest.fixture(autouse=True)
def isolated_dirs(tmp_path, monkeypatch):
    """Keep repository config and cache out of the real home directory."""
    monkeypatch.setenv("CHARTER_CONFIG_DIR", str(tmp_path / "config"))
    monkeypatch.setenv("CHARTER_CACHE_DIR", str(tmp_path / "cache"))
    for var in ("CHARTER_NAMESPACE", "CHARTER_CLUSTER_URL"):
        monkeypatch.delenv(var, raising=False)


@pytest.fixture
def plane() -> MockControlPlane:
    return MockControlPlane()


@pytest.fixture
def gateway(plane):
    with TestClient(create_app(plane), base_url="http://testserver") as client:
        yield ClusterGateway("http://testserver", client=client)


@pytest.fixture
def manager(gateway) -> ReleaseManager:
    return ReleaseManager(gateway)


def write_script(path: Path, body: str) -> str:
    """Write an executable Python script and return its path."""
    path.write_text(f"#!{sys.executable}\n" + textwrap.dedent(body))
    path.chmod(path.stat().st_mode | stat.S_IXUSR)
    return os.fspath(path)


@pytest.fixture
def script(tmp_path):
    counter = iter(range(1000))

    def make(body: str) -> str:
        return write_script(tmp_path / f"hook{next(counter)}.py", body)

    return make


# -- acceptance report -------------------------------------------------------

_CRITERIA: dict[int, dict] = {}


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    report = outcome.get_result()
    marker = item.get_closest_marker("criterion")
    if marker is None or (report.when != "call" and not report.failed):
        return
    number, label = marker.args
    entry = _CRITERIA.setdefault(number, {"label": label, "failed": False, "duration": 0.0})
    entry["failed"] |= report.failed
    entry["duration"] += report.duration


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(_CRITERIA):
        entry = _CRITERIA[number]
        verdict = "FAIL" if entry["failed"] else "PASS"
        terminalreporter.write_line(f"criterion {number}: {verdict}  {entry['label']}  ({entry['duration']:.2f}s)")
