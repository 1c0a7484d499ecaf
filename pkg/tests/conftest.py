"""Shared fixtures and the acceptance-summary reporting hook."""

from __future__ import annotations

import re

import pytest

# Species detection counts for the headline desk-check dataset: twelve
# species, 18,520 detections, £185.20 at a penny per detection.
TABLE7_COUNTS = {
    "Canis mesomelas": 34,
    "Hystrix cristata": 37,
    "Crocuta crocuta": 58,
    "Loxodonta africana": 148,
    "Acinonyx jubatus": 222,
    "Papio sp": 748,
    "Rhinocerotidae": 998,
    "Connochaetes taurinus": 1022,
    "Tragelaphus oryx": 1058,
    "Giraffa camelopardalis": 2646,
    "Panthera leo": 4391,
    "Equus quagga": 7158,
}

TABLE7_TOTAL = 18520


@pytest.fixture
def table7_counts() -> dict[str, int]:
    return dict(TABLE7_COUNTS)


# ---------------------------------------------------------------------------
# Acceptance reporting: tests named test_criterion_NN_* in test_acceptance.py
# each get one PASS/FAIL line in the terminal summary.
# ---------------------------------------------------------------------------

_CRITERION_RE = re.compile(r"test_criterion_(\d+)_([a-z0-9_]+)")
_acceptance_results: dict[int, tuple[str, str]] = {}


def pytest_runtest_logreport(report):
    if report.when != "call" or "test_acceptance" not in report.nodeid:
        return
    match = _CRITERION_RE.search(report.nodeid)
    if not match:
        return
    number = int(match.group(1))
    label = match.group(2).replace("_", " ")
    outcome = "PASS" if report.passed else "FAIL"
    _acceptance_results[number] = (outcome, label)


def pytest_terminal_summary(terminalreporter):
    if not _acceptance_results:
        return
    terminalreporter.write_sep("-", "acceptance criteria")
    for number in sorted(_acceptance_results):
        outcome, label = _acceptance_results[number]
        terminalreporter.write_line(f"criterion {number:02d} {outcome} - {label}")
