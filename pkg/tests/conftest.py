import numpy as np
import pytest

from netsense.scenario import draw_samples, make_scenario


@pytest.fixture(scope="session")
def small():
    """Default geometry with five draws: quick but non-trivial."""
    sc = make_scenario(mc_samples=5)
    return sc, draw_samples(sc)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def rand_psd(rng, M, scale=1.0, n=None):
    shape = (M, M) if n is None else (n, M, M)
    X = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return scale * X @ np.swapaxes(X.conj(), -1, -2) / M


def iso(sc):
    return np.stack([p / sc.Mt * np.eye(sc.Mt, dtype=complex) for p in sc.power_budget])


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import LINES
    except ImportError:
        return
    if LINES:
        terminalreporter.section("acceptance")
        for line in LINES:
            terminalreporter.write_line(line)
