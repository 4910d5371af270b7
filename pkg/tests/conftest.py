import numpy as np
import pytest

from convrec.catalog import SyntheticConfig, generate_synthetic
from convrec.numcore import set_checked


@pytest.fixture(autouse=True)
def _checked_mode():
    prev = set_checked(True)
    yield
    set_checked(prev)


@pytest.fixture(scope="session")
def fixture_data():
    return generate_synthetic(SyntheticConfig(), 1)


@pytest.fixture(scope="session")
def small_data():
    cfg = SyntheticConfig(users=8, items=30, attributes=8, attrs_per_item=(1, 3), interactions_per_user=(2, 5))
    return generate_synthetic(cfg, 3)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_verdict(n: int, ok: bool, detail: str) -> None:
    ACCEPTANCE[n] = (ok, detail)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        ok, detail = ACCEPTANCE[n]
        terminalreporter.write_line(f"criterion {n:>2}: {'PASS' if ok else 'FAIL'}  {detail}")
