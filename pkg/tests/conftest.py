import numpy as np
import pytest

from behavior_forecast.skeleton import N_LANDMARKS, SequenceArrays

# widths small enough for finite differences and quick training
TINY = dict(embed_dim=8, hidden=8, head_widths=(8,), tcn_channels=8, heads=2, depth=1, joint_dim=4,
            mlp_ratio=2, stgnn_channels=(8, 8, 8, 8), stgnn_end=8, stgnn_node_dim=4, dropout=0.0)


def random_arrays(rng, n, n_gaze=2, present=None, scale=50.0, offset=400.0):
    """Random dense sequence; ``present`` is an optional (n, 4) bool array."""
    pres = np.ones((n, 4), bool) if present is None else np.asarray(present, bool)
    coords = rng.normal(size=(n, N_LANDMARKS, 3)) * scale + offset
    from behavior_forecast.skeleton import landmark_part_index
    coords *= pres[:, landmark_part_index()][..., None]
    return SequenceArrays(coords, pres.copy(), pres.copy(), rng.normal(size=(n, n_gaze, 3)), np.ones(n, bool))


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_VERDICTS = pytest.StashKey[dict]()


def pytest_configure(config):
    config.stash[_VERDICTS] = {}


@pytest.fixture
def criterion(request):
    """Record and print one pass/fail line for an acceptance criterion, then assert it."""
    def record(number, ok, detail):
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
        print(line)
        request.config.stash[_VERDICTS][number] = line
        assert ok, line
    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_VERDICTS, {})
    if lines:
        terminalreporter.section("acceptance criteria")
        for n in sorted(lines):
            terminalreporter.write_line(lines[n])
