import numpy as np
import pytest

from octds.phantom import PhantomModel, build_phantom

# one line per acceptance criterion, printed in the terminal summary
ACCEPTANCE_LINES = []


def record(label, passed, detail=""):
    line = f"{'PASS' if passed else 'FAIL'}  {label}" + (f"  ({detail})" if detail else "")
    ACCEPTANCE_LINES.append(line)
    print(line)
    return passed


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


def desk_model(seed=3):
    return PhantomModel.random(seed, n_pockets=30, radius_range=(300, 700), max_depth=650)


@pytest.fixture(scope="session")
def desk_geom():
    return build_phantom(desk_model(3))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
