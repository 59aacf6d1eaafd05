import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from curvexpand.nets import ModelConfig

settings.register_profile(
    "default", deadline=None, max_examples=40, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile(os.environ.get("HYPOTHESIS_PROFILE", "default"))

torch.set_num_threads(max(1, torch.get_num_threads()))


@pytest.fixture
def tiny_cfg() -> ModelConfig:
    return ModelConfig(
        base_channels=8, channel_mults=(1, 2, 2), attention_stages=(1,), cond_channels=8,
        spade_hidden=8, time_dim=16, text_dim=16, vocab_size=257, resolution=16,
        spade_stages=frozenset({"down1", "down2", "down3", "middle"}),
    )


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(1234)


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def verdict(capsys):
    """Record and print one PASS/FAIL line for an acceptance criterion."""

    def emit(number: int, title: str, passed: bool, detail: str) -> bool:
        line = f"criterion {number} {'PASS' if passed else 'FAIL'}: {title} ({detail})"
        ACCEPTANCE_LINES.append(line)
        with capsys.disabled():
            print("\n" + line)
        return passed

    return emit


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
