import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from frcap.network import Network, forward

settings.register_profile("frcap", deadline=None, derandomize=True, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("frcap")


def random_net(rng, depth, act="relu", K=1, max_width=16, p=None, output="linear"):
    p = int(rng.integers(1, 6)) if p is None else p
    dims = [p] + [int(rng.integers(1, max_width + 1)) for _ in range(depth)] + [K]
    weights = [rng.standard_normal((a, b)) / np.sqrt(a) for a, b in zip(dims[:-1], dims[1:])]
    return Network.from_weights(weights, act, output)


def away_from_kinks(net, rng, n=1, margin=1e-6, tries=200):
    """Inputs whose hidden pre-activations all sit at least ``margin`` from 0.

    A unit fed only by dead units sits at 0 for every input; such nets are
    rejected (inside hypothesis) or skipped.
    """
    for _ in range(tries):
        X = rng.standard_normal((n, net.input_dim))
        if all(np.all(np.abs(N) >= margin) for N in forward(net, X).pre):
            return X
    reject()
    pytest.skip("could not sample inputs away from kinks")


def reject():
    from hypothesis import reject as _reject
    from hypothesis.control import currently_in_test_context
    if currently_in_test_context():
        _reject()


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[n])
