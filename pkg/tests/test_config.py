import pytest

from predprofile.config import ExperimentConfig, load_config, parse_config, resolve_path
from predprofile.errors import ConfigError


def test_defaults_mirror_experiment_settings():
    cfg = ExperimentConfig()
    assert (cfg.alpha, cfg.eta, cfg.beta, cfg.kappa) == (1e-5, 0.01, 0.95, 0.001)
    assert (cfg.flat_states, cfg.flat_iters, cfg.episode_length) == (30, 50, 10)


def test_text_round_trip_preserves_hash():
    cfg = parse_config("env = gallery\nenv.crosshairs = 3,4\nepisodes = 50\nsources = pp,som\nsom_joint = yes\n")
    assert cfg.env_params == {"crosshairs": (3, 4)}
    assert cfg.sources == ("pp", "som") and cfg.som_joint is True
    again = parse_config(cfg.to_text())
    assert again == cfg and again.hash == cfg.hash


def test_hash_changes_with_any_setting():
    base = ExperimentConfig()
    assert base.hash != base.replace(seed=1).hash
    assert base.hash != base.replace(kappa=0.01).hash
    assert base.hash == ExperimentConfig().hash


@pytest.mark.parametrize("text, msg", [
    ("episodez = 5", "unknown key"),
    ("episodes = five", "bad value"),
    ("env = poker", "env must be"),
    ("strategy = vote", "strategy"),
    ("alpha = 0", "alpha"),
    ("beta = 1.0", "beta"),
    ("flat_restarts = 0", "flat_restarts"),
    ("sources = pp,psr", "sources"),
    ("just words", "key = value"),
    ("som_joint = maybe", "bad value"),
])
def test_invalid_configs(text, msg):
    with pytest.raises(ConfigError, match=msg):
        parse_config(text)


def test_comments_and_blank_lines_ignored():
    cfg = parse_config("# header\n\nepisodes = 7  # trailing\n")
    assert cfg.episodes == 7


def test_load_config_resolves_relative_paths(tmp_path):
    (tmp_path / "x.cfg").write_text("machine = m.txt\n")
    cfg = load_config(tmp_path / "x.cfg")
    assert resolve_path(cfg, cfg.machine) == tmp_path / "m.txt"
    with pytest.raises(ConfigError):
        load_config(tmp_path / "missing.cfg")
