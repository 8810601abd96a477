import numpy as np
import pytest
import torch

from salmrec.segnet import ModelConfig
from salmrec.synthdata import WarpSpec, generate_sample


def pytest_configure(config):
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tiny_cfg():
    """Smallest model that still exercises every code path (32 px input)."""
    return ModelConfig(input_size=32, width=0.125, attn_layers=1, attn_heads=2, flow_depth=1, flow_heads=2)


@pytest.fixture(scope="session")
def sample():
    return generate_sample(WarpSpec(seed=3, severity=0.5))


@pytest.fixture(scope="session")
def samples4():
    return [generate_sample(WarpSpec(seed=s, severity=0.4)) for s in range(4)]


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod is not None and mod.RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in mod.RESULTS:
            terminalreporter.write_line(line)
