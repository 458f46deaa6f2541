"""Shared fixtures: each example metric is built once per test session."""

import pytest

from finslerlab.metrics import BUILTIN_NAMES, build_metric, builtin


@pytest.fixture(scope="session")
def corpus():
    """Mapping name -> built metric for the whole example registry."""
    return {name: build_metric(builtin(name)) for name in BUILTIN_NAMES}
