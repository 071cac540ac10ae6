import numpy as np
import pytest

from thinhomog.profiles import Profile


@pytest.fixture
def sine_profile():
    return Profile.from_expr("1 + 0.5*sin(2*pi*y)", G0=0.5, G1=1.5)


@pytest.fixture
def lp_profile():
    # locally periodic: slow drift in x plus a periodic ripple
    return Profile.from_expr("1 + 0.2*x + 0.1*sin(2*pi*y)", G0=0.9, G1=1.3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_AC_LINES = []


@pytest.fixture
def ac_report():
    """Record one acceptance line; the lines are repeated in the terminal summary."""
    def report(name, ok, detail=""):
        line = f"{name} {'PASS' if ok else 'FAIL'} {detail}".rstrip()
        print(line)
        _AC_LINES.append(line)
        return ok
    return report


def pytest_terminal_summary(terminalreporter):
    if _AC_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(_AC_LINES, key=lambda s: int(s.split()[0][3:])):
            terminalreporter.write_line(line)
