import numpy as np
import pytest

from oewt.datamodel import BigSample, ReferenceSample, add_intercept

ACCEPTANCE_LINES: list[str] = []


def record_criterion(name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE_LINES.append(f"[{'PASS' if passed else 'FAIL'}] {name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def make_samples(rng, n_A=40, n_B=30, p=3, overlap=0.3, dA_on_B=True):
    """Small random reference/big pair with shared ids for the overlap."""
    XA = add_intercept(rng.normal(size=(n_A, p - 1)))
    XB = add_intercept(rng.normal(size=(n_B, p - 1)))
    idsA = np.arange(n_A)
    n_ov = max(1, int(overlap * min(n_A, n_B)))
    idsB = np.concatenate([idsA[:n_ov], 1000 + np.arange(n_B - n_ov)])
    XB[:n_ov] = XA[:n_ov]
    d = rng.uniform(1.0, 8.0, size=n_A)
    A = ReferenceSample(ids=idsA, d=d, delta=np.isin(idsA, idsB), X=XA)
    B = BigSample(
        ids=idsB, X=XB, y=rng.normal(size=n_B) + XB[:, 1],
        dA=rng.uniform(1.0, 8.0, size=n_B) if dA_on_B else None,
    )
    return A, B


@pytest.fixture
def samples():
    return make_samples(np.random.default_rng(11))
