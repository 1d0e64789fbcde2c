import numpy as np
import pytest

from regione.pipeline import RegionEConfig
from regione.scenario import BenchScenario


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_small():
    """Small toy scenario: 8x8 grid, top half edited."""
    return BenchScenario(
        model="toy-dit",
        grid=(8, 8),
        edited_block=(0, 0, 4, 8),
        dim=32,
        heads=4,
        layers=2,
        prompt_tokens=4,
        config=RegionEConfig(T=12, t_st=3, t_sm=2, forced_steps=(6,)),
    )


@pytest.fixture(scope="session")
def analytic_default():
    return BenchScenario(model="analytic", grid=(16, 16), edited_block=(4, 4, 8, 8), dim=16)


ACCEPTANCE_LINES: dict[int, str] = {}


def record(n: int, ok: bool, detail: str) -> bool:
    line = f"criterion {n:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES[n] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for n in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(ACCEPTANCE_LINES[n])
