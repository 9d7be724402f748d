import numpy as np
import pytest

from propimpact import synth
from propimpact.events import EventSeries


def series_from(signs, returns, bounds=None, start=100.0, instrument="T"):
    """Event series with mids rebuilt from returns; one day unless ``bounds`` is given."""
    signs = np.asarray(signs)
    returns = np.asarray(returns, dtype=float)
    mids = start + np.concatenate([[0.0], np.cumsum(returns)])
    n = len(signs)
    bounds = [0, n] if bounds is None else bounds
    ts = np.arange(n, dtype=np.int64) * 1_000_000_000
    return EventSeries(ts, signs, mids[:-1], mids[1:], np.asarray(bounds), instrument)


def series_with_types(signs, types, bounds=None):
    """Series whose C events move the mid by one unit in the sign direction."""
    signs = np.asarray(signs)
    types = np.asarray(types, dtype=bool)
    return series_from(signs, np.where(types, signs, 0).astype(float), bounds)


@pytest.fixture(scope="session")
def small_tick_series():
    return synth.generate(synth.preset("small-tick", 200_000, 21))


@pytest.fixture(scope="session")
def large_tick_series():
    return synth.generate(synth.preset("large-tick", 200_000, 22))


def pytest_terminal_summary(terminalreporter, config):
    from test_acceptance import ACCEPTANCE_LINES
    lines = config.stash.get(ACCEPTANCE_LINES, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
