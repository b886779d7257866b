import pytest

from burstdiff.burst import generate_dataset
from burstdiff.config import RunConfig
from burstdiff.training import TrainData

TINY_INI = """
[data]
hr_size = 32
burst_size = 4
max_shift = 4.0
[model]
feat_dim = 4
cond_channels = 8
widths = 8,16
temb_dim = 16
baseline_blocks = 1
search_radius = 2
[optim]
batch_size = 2
iters = 4
ckpt_every = 2
[diffusion]
tau_train = 20
"""


@pytest.fixture
def tiny_cfg():
    return RunConfig.from_ini(TINY_INI)


@pytest.fixture
def tiny_data(tiny_cfg):
    return TrainData.from_samples(generate_dataset(4, tiny_cfg.degradation(), 0, hr_size=32))


@pytest.fixture
def tiny_ini(tmp_path):
    path = tmp_path / "tiny.ini"
    path.write_text(TINY_INI)
    return path


# one pass/fail line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda l: int(l.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
