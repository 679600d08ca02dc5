import os

from hypothesis import HealthCheck, settings

settings.register_profile(
    "arwlab",
    deadline=None,
    max_examples=int(os.environ.get("ARWLAB_HYPOTHESIS_EXAMPLES", "60")),
    suppress_health_check=[HealthCheck.too_slow],
    derandomize=True,
)
settings.load_profile("arwlab")


import pytest

from arwlab.layer_percolation import estimate_rho_star


@pytest.fixture(scope="session")
def rho_star_lam1():
    """Greedy estimate at lambda = 1, k = 32, horizon 4096, 64 replicas."""
    return estimate_rho_star(1.0, 32, 4096, 64, seed=0)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def acceptance_report():
    """Record one pass/fail line per acceptance criterion."""

    def record(number: int, ok: bool, detail: str):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        ACCEPTANCE_LINES.append(line)
        print(line)

    return record


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
