import pytest
import yaml

from memtrack.errors import ConfigError
from memtrack.harness.config import ExperimentConfig, config_from_dict, load_config


def test_empty_config_has_defaults(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("")
    cfg = load_config(p)
    assert cfg == ExperimentConfig()
    assert (cfg.memory.delta, cfg.memory.gamma_iou, cfg.memory.n_long, cfg.memory.n_short) == (5, 0.95, 4, 6)
    assert (cfg.losses.lambda_arl, cfg.losses.lambda_tsl, cfg.losses.sigma, cfg.losses.kernel_size) == (20, 0.1, 1, 5)
    assert cfg.sampler.image_video_ratio == [1, 4] and cfg.sampler.frames_per_clip == 8


def test_docstring_example_round_trips():
    import memtrack.harness.config as mod

    text = mod.__doc__.split("::", 1)[1]
    cfg = config_from_dict(yaml.safe_load(text))
    assert cfg == ExperimentConfig()
    assert config_from_dict(cfg.to_dict()) == cfg


def test_overrides_and_int_to_float():
    cfg = config_from_dict({"memory": {"delta": 3, "gamma_iou": 1}, "seed": 7})
    assert cfg.memory.delta == 3 and cfg.memory.gamma_iou == 1.0 and isinstance(cfg.memory.gamma_iou, float)
    assert cfg.seed == 7


@pytest.mark.parametrize("data, path", [
    ({"memory": {"modes": ["divemem", "bogus"]}}, "memory.modes[1]"),
    ({"memory": {"delta": "5"}}, "memory.delta"),
    ({"memory": {"delta": True}}, "memory.delta"),
    ({"memory": {"n_long": 0}}, "memory.n_long"),
    ({"memory": {"gamma_iou": 1.5}}, "memory.gamma_iou"),
    ({"memroy": {}}, "memroy"),
    ({"losses": {"kernel_size": 4}}, "losses.kernel_size"),
    ({"losses": {"tau_mode": "x"}}, "losses.tau_mode"),
    ({"scenes": {"duration": 5}}, "scenes.duration"),
    ({"scenes": []}, "scenes"),
    ({"prompt": {"type": "scribble"}}, "prompt.type"),
    ({"sampler": {"image_video_ratio": [1]}}, "sampler.image_video_ratio"),
    ({"tracker": {"color_sigma": 0}}, "tracker.color_sigma"),
    ({"memory": {"modes": []}}, "memory.modes"),
])
def test_errors_name_the_field(data, path):
    with pytest.raises(ConfigError) as exc:
        config_from_dict(data)
    assert exc.value.path == path
    assert str(exc.value).startswith(path + ":")


def test_file_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.yaml")
    p = tmp_path / "bad.yaml"
    p.write_text("memory: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(p)
    p.write_text("- 1\n- 2\n")
    with pytest.raises(ConfigError):
        load_config(p)
