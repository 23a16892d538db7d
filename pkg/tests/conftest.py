"""Shared pytest setup: the ``criterion`` marker and its PASS/FAIL summary."""

from __future__ import annotations

import sys
from pathlib import Path

sys.path.insert(0, str(Path(__file__).resolve().parent))

_CRITERIA: dict[str, str] = {}
_NODES: dict[str, str] = {}
_OUTCOMES: dict[str, list[bool]] = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(cid, title): acceptance criterion covered by the test")


def pytest_collection_modifyitems(session, config, items):
    for item in items:
        mark = item.get_closest_marker("criterion")
        if mark is None:
            continue
        cid, title = mark.args
        _CRITERIA.setdefault(cid, title)
        _NODES[item.nodeid] = cid


def pytest_runtest_logreport(report):
    cid = _NODES.get(report.nodeid)
    if cid is None:
        return
    if report.when == "call" or report.failed:
        _OUTCOMES.setdefault(cid, []).append(report.passed and not report.skipped)


def _order(cid: str):
    return int(cid[1:]) if cid[1:].isdigit() else cid


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for cid in sorted(_CRITERIA, key=_order):
        results = _OUTCOMES.get(cid)
        if not results:
            status = "NOT RUN"
        else:
            status = "PASS" if all(results) else "FAIL"
        terminalreporter.write_line(f"{cid:<4} {status:<7} {_CRITERIA[cid]}")
