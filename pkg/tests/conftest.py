import numpy as np
import pytest

from sisa_itscf.conditions import NUM_CONDITIONS, FaultCondition
from sisa_itscf.dataset import WindowSet
from sisa_itscf.lstm import ModelConfig
from sisa_itscf.sisa import TrainConfig

TINY_MODEL = ModelConfig(lstm1_hidden=4, lstm2_hidden=3, fc_hidden=5, window_len=6, dropout_rate=0.3)
TINY_TRAIN = TrainConfig(epochs_total=4, batch_size=8, lr=1e-2)


def random_windows(per_condition=5, window_len=6, seed=0) -> WindowSet:
    """Small labelled window set covering all 48 conditions."""
    rng = np.random.default_rng(seed)
    n = per_condition * NUM_CONDITIONS
    cids = np.repeat(np.arange(NUM_CONDITIONS), per_condition)
    labels = np.array([FaultCondition.from_id(c).label for c in cids])
    starts = np.tile(np.arange(per_condition) * window_len, NUM_CONDITIONS)
    x = rng.standard_normal((n, window_len, 6)) + labels[:, None, None] * 0.3
    perm = rng.permutation(n)  # storage order must not matter
    return WindowSet(x[perm], labels[perm], cids[perm], starts[perm], np.zeros(n, bool))


@pytest.fixture(scope="session")
def tiny_data() -> WindowSet:
    return random_windows()


# one line per acceptance criterion, printed after the test summary
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
