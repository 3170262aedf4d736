import numpy as np
import pytest

# PASS/FAIL lines emitted by test_acceptance.py, echoed after the run
ACCEPTANCE = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def corpus(tmp_path_factory):
    from cartolab.synthetic import make_corpus

    root = tmp_path_factory.mktemp("corpus")
    make_corpus(root, n_maps=20, seed=0)
    return root
