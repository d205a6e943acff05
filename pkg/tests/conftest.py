from __future__ import annotations

import pytest

from reciprosim.cli import preset_text
from reciprosim.config import parse_config
from reciprosim.simulator import simulate


@pytest.fixture(scope="session")
def preset_runs():
    """The three shipped protocols at calibrated defaults, simulated once."""
    out = {}
    for name in ("direct_1mms", "recip_4mms", "recip_1mms"):
        cfg = parse_config(preset_text(name))
        out[name] = simulate(cfg.sim_config())
    return out


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for n in sorted(RESULTS):
            terminalreporter.write_line(RESULTS[n])
