import sys
from pathlib import Path

import numpy as np
import pytest
import torch

torch.set_num_threads(1)

sys.path.insert(0, str(Path(__file__).parent))

from dimae.data import SyntheticSpec, generate_synthetic, load_folder


# one pass/fail line per top-level acceptance claim, printed after the run
# (regular prints are swallowed by pytest's capture)
CRITERION_LINES = []


def pytest_terminal_summary(terminalreporter):
    if CRITERION_LINES:
        terminalreporter.section("acceptance criteria")
        for line in CRITERION_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def bench_dirs(tmp_path_factory):
    """Default synthetic benchmark: 3 source domains plus a held-out style."""
    root = tmp_path_factory.mktemp("bench")
    generate_synthetic(
        SyntheticSpec(seed=100, domains=("solid", "stripes", "sketch")), root / "src"
    )
    generate_synthetic(SyntheticSpec(seed=100, domains=("speckle",)), root / "tgt")
    return root / "src", root / "tgt"


@pytest.fixture(scope="session")
def bench_source(bench_dirs):
    return load_folder(bench_dirs[0])


@pytest.fixture(scope="session")
def bench_target(bench_dirs):
    return load_folder(bench_dirs[1])


@pytest.fixture(scope="session")
def small_dataset(tmp_path_factory):
    """Tiny 3-domain set for fast training-loop tests."""
    root = tmp_path_factory.mktemp("small")
    generate_synthetic(
        SyntheticSpec(
            num_classes=4, samples_per_class_per_domain=4, seed=7,
            domains=("solid", "stripes", "sketch"),
        ),
        root,
    )
    return load_folder(root)
