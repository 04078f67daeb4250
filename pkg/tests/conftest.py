import numpy as np
import pytest

# criterion number -> (passed, detail), filled by test_acceptance.py
ACCEPTANCE: dict = {}


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_points(rng, n, scale=3.0):
    return scale * (rng.standard_normal(n) + 1j * rng.standard_normal(n))


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.write_sep("=", "acceptance criteria")
    for k in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[k]
        terminalreporter.write_line(f"criterion {k:2d}: {'PASS' if ok else 'FAIL'}  {detail}")
