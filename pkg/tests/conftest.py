import numpy as np
import pytest

from twinspring.model import OscillatorMode, build_pair


def make_pair(g1=1.0, g2=1.0, gbar=0.0, q1=5e4, q2=5e4, m1=2e-7, m2=1e-7, w1=1e6, w2=1.3e6, temperature=300.0):
    a = OscillatorMode(m1, w1, q1, g1, temperature)
    b = OscillatorMode(m2, w2, q2, g2, temperature)
    return build_pair(a, b, gbar=gbar)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_COUNT = 10


@pytest.fixture
def acceptance(request):
    """Record one PASS/FAIL line for an acceptance criterion and assert it."""
    lines = request.config.__dict__.setdefault("_acceptance_lines", {})

    def record(number, passed, detail):
        line = f"criterion {number:2d} {'PASS' if passed else 'FAIL'}: {detail}"
        lines[number] = line
        print(line)
        assert passed, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.__dict__.get("_acceptance_lines")
    if not lines:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, ACCEPTANCE_COUNT + 1):
        terminalreporter.write_line(lines.get(n, f"criterion {n:2d} FAIL: not reached"))
