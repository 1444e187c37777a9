import numpy as np
import pytest

from snsc.datasets import export_sample_sources, generate_dataset, load_dataset


@pytest.fixture(scope="session")
def sources(tmp_path_factory):
    out = tmp_path_factory.mktemp("sources")
    export_sample_sources(out, names=("astronaut", "coffee", "camera"))
    return out


@pytest.fixture(scope="session")
def blurnoise_root(sources, tmp_path_factory):
    out = tmp_path_factory.mktemp("bn")
    generate_dataset("blurnoise", sources, out, count=12, size=(32, 32), seed=5)
    return out


@pytest.fixture(scope="session")
def blurnoise(blurnoise_root):
    return load_dataset(blurnoise_root)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


_REPORT = pytest.StashKey()


@pytest.fixture(scope="session")
def criterion_report(request):
    """Collects one pass/fail line per acceptance criterion for the terminal summary."""
    lines = request.config.stash.setdefault(_REPORT, [])
    return lines.append


def pytest_terminal_summary(terminalreporter, config):
    lines = config.stash.get(_REPORT, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in sorted(lines):
            terminalreporter.write_line(line)
