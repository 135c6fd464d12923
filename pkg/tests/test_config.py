import math

import pytest

from noisypll.config import ConfigError, RunConfig, env_overrides, load_config, parse_config_text


def test_defaults():
    cfg = RunConfig()
    assert cfg["run.seeds"] == [0]
    assert cfg["optim.lr"] == 0.01
    assert cfg["refine.aug_sigma"] is None


def test_file_parsing_and_comments():
    cfg = parse_config_text("# header\noptim.lr = 0.05  # faster\nmodel.hidden = 32, 16\n\nrefine.tau_eps = inf\n")
    assert cfg["optim.lr"] == 0.05
    assert cfg["model.hidden"] == [32, 16]
    assert math.isinf(cfg["refine.tau_eps"])


@pytest.mark.parametrize("text", ["nope.key = 1", "optim.lr = fast", "optim.lr"])
def test_bad_lines(text):
    with pytest.raises(ConfigError):
        parse_config_text(text)


def test_environment_overrides_file(tmp_path):
    path = tmp_path / "c.cfg"
    path.write_text("optim.epochs = 10\nrefine.swapping = no\n")
    cfg = load_config(path, environ={"NOISYPLL_OPTIM__EPOCHS": "20", "HOME": "/x"})
    assert cfg["optim.epochs"] == 20
    assert cfg["refine.swapping"] is False


def test_unknown_environment_key():
    with pytest.raises(ConfigError):
        env_overrides(RunConfig(), {"NOISYPLL_OPTIM__LR_TYPO": "1"})


def test_dumps_round_trips():
    cfg = parse_config_text("run.seeds = 1,2\nrefine.e0_fixed = 4\nsweep.tau_eps = 0.001,0.01\n")
    again = parse_config_text(cfg.dumps())
    assert again.values == cfg.values


def test_overrides_leave_original():
    cfg = RunConfig()
    other = cfg.with_overrides(**{"optim.lr": "0.2"})
    assert other["optim.lr"] == 0.2 and cfg["optim.lr"] == 0.01
