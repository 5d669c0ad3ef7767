"""Shared pytest configuration: LYAGRAPH_FAST=1 skips the slow marker, and
the acceptance-criteria report lines are echoed in the terminal summary."""

import os
import sys

import pytest


def pytest_collection_modifyitems(config, items):
    if os.environ.get("LYAGRAPH_FAST") == "1":
        skip = pytest.mark.skip(reason="LYAGRAPH_FAST=1 skips slow tests")
        for item in items:
            if "slow" in item.keywords:
                item.add_marker(skip)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    lines = getattr(mod, "CRITERION_RESULTS", None) if mod else None
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
