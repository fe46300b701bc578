import numpy as np
import pytest

from drysvs.fixtures import SyntheticFixtureSpec, generate_fixtures


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def small_fixtures(tmp_path_factory):
    """Tiny corpus: 3 train, 1 valid, 2 test clips of 2 s."""
    out = tmp_path_factory.mktemp("fixtures_small")
    spec = SyntheticFixtureSpec(n_train=3, n_valid=1, n_test=2, clip_seconds=2.0, seed=7)
    return generate_fixtures(out, spec)


ACCEPTANCE = pytest.StashKey[dict]()


@pytest.fixture(scope="session")
def acceptance_log(request):
    """Criterion number -> result line, echoed in the terminal summary."""
    return request.config.stash.setdefault(ACCEPTANCE, {})


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    results = config.stash.get(ACCEPTANCE, None)
    if results is None:
        return
    terminalreporter.section("acceptance criteria")
    for n in range(1, 11):
        terminalreporter.write_line(results.get(n, f"criterion {n}: FAIL - no result recorded"))
