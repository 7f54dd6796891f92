import math

import pytest

from wpt_intercept import SystemParams

DESK = dict(l_t=45e-6, l_r=38e-6, m_r=9e-6, c_r1=22e-9, c_r2=147e-9, r_load=5.0)
WIDEBAND = dict(l_t=100e-6, l_r=80e-6, m_r=15e-6, c_r1=3e-9, c_r2=130e-9, r_load=10.0,
                i_t_amplitude=1.0)


@pytest.fixture
def desk():
    return SystemParams(**DESK)


@pytest.fixture
def wideband():
    return SystemParams(**WIDEBAND)


def rel(a, b):
    return abs(a - b) / abs(b)


def wrap_deg(x):
    return math.remainder(x, 360.0)


# acceptance criteria report one line each; printed after the run
ACCEPTANCE = {}


def record(number, ok, detail):
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
