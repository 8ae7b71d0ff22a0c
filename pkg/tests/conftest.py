import numpy as np
import pytest

from cesbound.rng import stream


def crandn(rng, *shape):
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def rel_err(a, b):
    a, b = np.asarray(a), np.asarray(b)
    return float(np.max(np.abs(a - b)) / max(np.max(np.abs(b)), 1e-300))


def within_3se(estimate, target, se):
    estimate, target, se = map(np.asarray, (estimate, target, se))
    return np.all(np.abs(estimate - target) <= 3 * se + 1e-15)


@pytest.fixture
def rng(request):
    # one stream per test, keyed by its name, so tests do not share draws
    key = sum(map(ord, request.node.name)) % (2**31)
    return stream(424242, key)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
