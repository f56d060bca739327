import numpy as np
import pytest

from slufuse import numcore as nc
from slufuse.synthetic import write_corpus


@pytest.fixture
def f64():
    with nc.precision(64):
        yield


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def tiny_dir(tmp_path):
    return write_corpus(tmp_path / "tiny")


def write_config(path, **values):
    path.write_text("".join(f"{k} = {v}\n" for k, v in values.items()), "utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    mod = __import__("sys").modules.get("test_acceptance")
    lines = getattr(mod, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
