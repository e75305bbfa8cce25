import numpy as np
import pytest


def random_spd(rng, n, cond=10.0):
    q, _ = np.linalg.qr(rng.standard_normal((n, n)))
    ev = np.exp(rng.uniform(0, np.log(cond), n))
    P = (q * ev) @ q.T
    return (P + P.T) / 2


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def spd(rng):
    return lambda n, cond=10.0: random_spd(rng, n, cond)


# one line per acceptance criterion, printed after the run
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
