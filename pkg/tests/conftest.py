import pytest

from qmlbench.data import synth_dataset

ACCEPTANCE_KEY = pytest.StashKey[list]()


@pytest.fixture(scope="session")
def synth_dir(tmp_path_factory):
    """250 synthetic images per class, generated once per session."""
    out = tmp_path_factory.mktemp("synth250")
    synth_dataset(250, 0, out)
    return out


@pytest.fixture(scope="session")
def acceptance_log(pytestconfig):
    """Collects one PASS/FAIL/SKIP line per acceptance criterion."""
    return pytestconfig.stash.setdefault(ACCEPTANCE_KEY, [])


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    lines = config.stash.get(ACCEPTANCE_KEY, [])
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
