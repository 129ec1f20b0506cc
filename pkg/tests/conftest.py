"""Shared pytest configuration: long benchmark runs only execute with MMOC_RUN_SLOW=1."""

import os

import pytest


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long benchmark acceptance run (set MMOC_RUN_SLOW=1)")


def pytest_collection_modifyitems(config, items):
    if os.getenv("MMOC_RUN_SLOW") == "1":
        return
    skip_slow = pytest.mark.skip(reason="set MMOC_RUN_SLOW=1 to run benchmark acceptance tests")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)
