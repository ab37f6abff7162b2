import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from h2rat import scenarios  # noqa: E402
from h2rat.model import ModelDims, init_params  # noqa: E402
from h2rat.rng import RngStream  # noqa: E402


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_corpus():
    return scenarios.generate_corpus(scenarios.CorpusDefinition(), 48, RngStream(5))


def random_params(seed, m=4, k=3, f=5, rows=2, cols=2, vocab=7, layers=2, scale=1.0):
    """Seeded parameters with non-zero biases, so every term of the graph is exercised."""
    dims = ModelDims(vocab=vocab, m=m, k=k, f=f, rows=rows, cols=cols, classes=4, layers=layers)
    params = init_params(dims, RngStream(seed))
    gen = np.random.default_rng(seed)
    for name, value in params.items():
        params[name] = value * scale + 0.3 * gen.standard_normal(value.shape)
    return dims, params


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split("criterion")[1].split(":")[0])):
            terminalreporter.write_line(line)
