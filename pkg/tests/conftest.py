import numpy as np
import pytest

from dkseld.toy import make_toy_dataset


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running training runs")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def toy_catalog(tmp_path_factory):
    """The 16-clip, 2-class toy set shared by the training tests."""
    return make_toy_dataset(tmp_path_factory.mktemp("toy"), n_clips=16, n_classes=2, seed=0)


@pytest.fixture(scope="session")
def small_catalog(tmp_path_factory):
    """Synthetic train clips plus real train/validation clips, for strategy tests."""
    from dkseld.audio_io import DatasetCatalog

    root = tmp_path_factory.mktemp("scenes")
    syn = make_toy_dataset(root / "syn", n_clips=4, seed=1, duration_s=1.0, prefix="syn")
    real = make_toy_dataset(root / "real", n_clips=2, seed=2, duration_s=1.0, scene="real", prefix="real")
    val = make_toy_dataset(root / "val", n_clips=2, seed=3, duration_s=1.0, scene="real",
                           split="validation", prefix="val")
    return DatasetCatalog(syn.entries + real.entries + val.entries)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
