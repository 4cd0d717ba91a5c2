import pytest

from dyndiff.config import ConfigError, KEYS, load_config


def test_defaults():
    cfg = load_config()
    assert cfg.model.diffusion_steps == 50 and cfg.model.beta_min == 1e-4 and cfg.model.beta_max == 0.5
    assert cfg.model.d_model == 128 and cfg.model.heads == 4
    assert cfg.train.lr == 1e-3 and cfg.train.batch == 64 and cfg.train.context == 120
    assert cfg.forecast.samples == 100 and cfg.forecast.horizon == 10
    assert cfg.eval.horizons == (1, 4, 7, 10)


def test_file_and_overrides(tmp_path):
    p = tmp_path / "run.ini"
    p.write_text("[diffusion]\nsteps = 20\n[train]\nseed = 3\nunconditional = yes\n"
                 "[data]\ntargets = latency, jitter\nsplit = 0.7,0.2,0.1\n", encoding="utf-8")
    cfg = load_config(p, {"train.seed": "9"})
    assert cfg.model.diffusion_steps == 20
    assert cfg.train.seed == 9 and cfg.train.unconditional is True
    assert cfg.data.targets == ["latency", "jitter"] and cfg.data.split == (0.7, 0.2, 0.1)


def test_unknown_key_rejected(tmp_path):
    p = tmp_path / "bad.ini"
    p.write_text("[train]\nlearning_rate = 0.1\n", encoding="utf-8")
    with pytest.raises(ConfigError, match="train.learning_rate"):
        load_config(p)
    with pytest.raises(ConfigError):
        load_config(None, {"decoder.depth": "2"})


@pytest.mark.parametrize("key,value", [("train.steps", "many"), ("train.unconditional", "maybe"),
                                       ("train.batch", "0"), ("encoder.latent_dim", "64")])
def test_invalid_values(key, value):
    with pytest.raises(ConfigError):
        load_config(None, {key: value})


def test_every_key_is_settable():
    for key in KEYS:
        if key == "encoder.latent_dim":
            continue
        section, name, _ = KEYS[key]
        cfg = load_config()
        current = getattr(getattr(cfg, section), name)
        load_config(None, {key: current})
