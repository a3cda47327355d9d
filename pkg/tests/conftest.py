import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("ficlab", deadline=None, max_examples=60,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("ficlab")


def random_spd(rng, q, cond=50.0):
    A = rng.standard_normal((q, q))
    U, _ = np.linalg.qr(A)
    ev = np.exp(rng.uniform(0, np.log(cond), q))
    return (U * ev) @ U.T


def random_experiment(rng, q=None, with_D=True, with_delta=False):
    from ficlab.limitcore import LimitExperiment

    q = q or int(rng.integers(1, 5))
    Q = random_spd(rng, q)
    omega = rng.standard_normal(q)
    tau0 = float(abs(rng.standard_normal()))
    D = rng.standard_normal(q) * 2 if with_D else None
    delta = rng.standard_normal(q) * 2 if with_delta else None
    return LimitExperiment(tau0, omega, Q, delta=delta, D=D)


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


ACCEPTANCE_LINES: list[str] = []


def report(criterion: str, ok: bool, detail: str) -> None:
    """Record and print one acceptance line, then fail the test if needed."""
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {criterion}: {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
