import numpy as np
import pytest
from hypothesis import settings

from paramsindy.library import build_library, library_preset
from paramsindy.simulate import case_preset, generate_dataset

settings.register_profile("default", deadline=None, max_examples=50)
settings.load_profile("default")


@pytest.fixture(scope="session")
def burgers_small():
    """Six Burgers realizations on the reference grid."""
    return generate_dataset(case_preset("burgers", n_realizations=6, seed=3))


@pytest.fixture(scope="session")
def burgers_terms():
    return build_library(library_preset("burgers"))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_configure(config):
    config.acceptance_lines = []


@pytest.fixture
def acceptance(request):
    """Record one pass/fail line for an acceptance criterion."""

    def record(number, ok, detail, seconds=None):
        timing = f" [{seconds:.1f} s]" if seconds is not None else ""
        line = f"criterion {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}{timing}"
        request.config.acceptance_lines.append(line)
        print(line)
        return ok

    return record


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = getattr(config, "acceptance_lines", [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines, key=lambda s: int(s.split(":")[0].split()[1])):
            terminalreporter.write_line(line)
