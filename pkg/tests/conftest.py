import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from splatfield.field import GaussianField

settings.register_profile(
    "default", max_examples=200, deadline=None,
    suppress_health_check=[HealthCheck.too_slow],
)
settings.load_profile("default")


def random_field(rng, q, p, n, spread=1.0, log_h=(-1.0, 0.3), z_threshold=0.0):
    mu = rng.uniform(-spread, spread, (n, q))
    lh = rng.normal(log_h[0], log_h[1], (n, q))
    values = rng.normal(size=(n, p))
    return GaussianField(mu, lh, values, z_threshold)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def pair_field():
    """Two 1D Gaussians with h=12 at 5 and 25 carrying values 1 and 3."""
    return GaussianField(np.array([[5.0], [25.0]]), np.full((2, 1), np.log(12.0)),
                         np.array([[1.0], [3.0]]), 0.0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def acceptance(capsys):
    """Record one pass/fail line for an acceptance criterion and assert it."""

    def record(number: int, title: str, ok: bool, detail: str):
        line = f"ACCEPTANCE {number} {'PASS' if ok else 'FAIL'}: {title}: {detail}"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
