import numpy as np
import pytest

from dp_ipw.core import Dataset


def make_dataset(gen, n, d, *, y_scale=1.0, both_arms=True):
    """Random rows inside the unit ball with binary treatments."""
    x = gen.standard_normal((n, d))
    radius = gen.uniform(0.0, 1.0, size=(n, 1))
    x = x / np.maximum(np.linalg.norm(x, axis=1, keepdims=True), 1e-300) * radius
    t = (gen.random(n) < 0.5).astype(float)
    if both_arms and n >= 2:
        t[0], t[1] = 1.0, 0.0
    y = y_scale * gen.standard_normal(n)
    return Dataset(x, t, y)


@pytest.fixture
def gen():
    return np.random.default_rng(20240601)


_ACCEPTANCE = pytest.StashKey[list]()


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for a criterion; printed in the summary."""
    lines = request.config.stash.setdefault(_ACCEPTANCE, [])

    def record(criterion, passed, detail):
        status = "PASS" if passed is True else ("FAIL" if passed is False else passed)
        line = f"criterion {criterion}: {status}  {detail}"
        lines.append((criterion, line))
        print(line)
        return passed

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(_ACCEPTANCE, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
