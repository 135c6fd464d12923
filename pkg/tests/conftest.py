import pytest

TINY = """
dataset.num_samples = 200
dataset.class_separation = 4
model.hidden = 8
optim.epochs = 15
optim.batch_size = 32
optim.lr = 0.1
refine.e0_mode = fixed
refine.e0_fixed = 5
metrics.bins = 20
"""


@pytest.fixture
def tiny_config(tmp_path):
    path = tmp_path / "tiny.cfg"
    path.write_text(TINY)
    return path


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(RESULTS, key=lambda s: int(s.split()[1])):
            terminalreporter.write_line(line)
