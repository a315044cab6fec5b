import numpy as np
import pytest
from hypothesis import settings

from pdmplil.gallery import load_gallery

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")

_VERDICTS = []


@pytest.fixture(scope="session")
def relaxation():
    return load_gallery("relaxation")


@pytest.fixture(scope="session")
def two_flow():
    return load_gallery("two-flow-switch")


@pytest.fixture(scope="session")
def iid():
    return load_gallery("iid-jump")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def verdict():
    """Record one acceptance line, print it, then assert it."""

    def record(number, title, ok, detail):
        line = f"criterion {number:>2} {'PASS' if ok else 'FAIL'}  {title}: {detail}"
        _VERDICTS.append((number, line))
        print(line)
        assert ok, line

    return record


def pytest_terminal_summary(terminalreporter):
    if not _VERDICTS:
        return
    terminalreporter.section("acceptance criteria")
    for _, line in sorted(_VERDICTS):
        terminalreporter.write_line(line)
