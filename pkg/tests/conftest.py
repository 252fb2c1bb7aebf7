import warnings

import pytest

from dmdtrack.dynamics import ExpansiveDynamicsWarning
from dmdtrack.harness.config import load


def make_config(preset="custom", **overrides):
    """RunConfig from a preset plus key=value overrides."""
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ExpansiveDynamicsWarning)
        _, cfg = load(preset=preset, overrides={k: str(v) for k, v in overrides.items()})
    return cfg


@pytest.fixture
def config_factory():
    return make_config


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    results = getattr(mod, "RESULTS", None)
    if results:
        terminalreporter.section("acceptance criteria")
        for key in sorted(results):
            terminalreporter.write_line(results[key])
