import numpy as np
import pytest

from hrc_priority.scene import default_scene_path, load_scene, preliminary_scene_path


@pytest.fixture(scope="session")
def default_scene():
    return load_scene(default_scene_path())


@pytest.fixture(scope="session")
def preliminary_scene():
    return load_scene(preliminary_scene_path())


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_KEY = pytest.StashKey[list]()


def pytest_configure(config):
    config.stash[ACCEPTANCE_KEY] = []


@pytest.fixture
def criterion(request):
    """Record one acceptance line, then fail the test if it did not hold."""
    lines = request.config.stash[ACCEPTANCE_KEY]

    def record(number, ok, detail):
        line = f"C{number:<2} {'PASS' if ok else 'FAIL'}  {detail}"
        lines.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(lines):
            terminalreporter.write_line(line)
