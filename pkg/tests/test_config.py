import json

import pytest

from pngan.config import RUN_DIR_ENV, ConfigError, RunConfig, apply_overrides, load_config
from pngan.noise import AwgnConfig, ToyCameraConfig


def test_defaults():
    cfg = load_config()
    assert cfg.gan.lr_init == 2e-4 and cfg.gan.weights.lambda_p == 6e-3
    assert cfg.noise_config == AwgnConfig(50.0, 0)
    assert cfg.finetune.q == 0.6


def test_file_and_overrides(tmp_path):
    path = tmp_path / "c.json"
    path.write_text(json.dumps({"run_dir": "x", "gan": {"batch": 4, "generator": {"channels": 16}}}))
    cfg = load_config(path, ["--gan.total_steps=7", "--gan.weights.lambda_ra=0",
                             "--noise.kind=toy_camera", "--data.train=some/dir"])
    assert cfg.gan.batch == 4 and cfg.gan.total_steps == 7 and cfg.gan.generator.channels == 16
    assert cfg.gan.weights.lambda_ra == 0
    assert isinstance(cfg.noise_config, ToyCameraConfig)
    assert cfg.data.train == "some/dir"


@pytest.mark.parametrize("overrides", [["--gan.bogus=1"], ["--nosuch.key=1"], ["--gan.patch=30"],
                                       ["--noise.kind=laplace"], ["gan.batch"]])
def test_invalid_configs(overrides):
    with pytest.raises(ConfigError):
        load_config(None, overrides)


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "none.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_echo_roundtrip():
    cfg = load_config(None, ["--gan.total_steps=3", "--eval.bandwidth=0.5"])
    tree = cfg.to_dict()
    assert load_config(None, []) != cfg
    again = load_config(None, [f"--{k}={json.dumps(v)}" for k, v in _flatten(tree)])
    assert again == cfg


def _flatten(tree, prefix=""):
    for k, v in tree.items():
        if isinstance(v, dict) and k != "noise":
            yield from _flatten(v, f"{prefix}{k}.")
        else:
            yield f"{prefix}{k}", v


def test_run_dir_env(monkeypatch, tmp_path):
    cfg = RunConfig(run_dir="a")
    assert str(cfg.resolved_run_dir()) == "a"
    monkeypatch.setenv(RUN_DIR_ENV, str(tmp_path))
    assert cfg.resolved_run_dir() == tmp_path


def test_apply_overrides_does_not_mutate():
    tree = {"gan": {"batch": 1}}
    apply_overrides(tree, ["gan.batch=2"])
    assert tree == {"gan": {"batch": 1}}
