import numpy as np
import pytest
from hypothesis import settings

from unisparse import AttentionInputs

settings.register_profile("default", deadline=None, max_examples=40)
settings.load_profile("default")


def random_inputs(L=256, H=2, d=16, S=32, seed=0, scale=1.0):
    rng = np.random.default_rng(seed)
    Q, K, V = (scale * rng.standard_normal((H, L, d)) for _ in range(3))
    return AttentionInputs(Q, K, V, S)


@pytest.fixture
def small_inputs():
    return random_inputs()


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
