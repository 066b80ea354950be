"""Experiment configuration: a flat ``key = value`` text file.

Unknown keys are rejected so that typos fail loudly.  Keys of the form
``env.<name>`` are passed to the environment constructor.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, fields
from pathlib import Path

from .envs import ENV_IDS
from .errors import ConfigError

PP_MODELS = ("lpst", "pomdp")
STRATEGIES = ("kld", "cut")
SOURCES = ("pp", "flat", "oracle", "som", "expert")


@dataclass
class ExperimentConfig:
    env: str = "threecard"
    env_params: dict = field(default_factory=dict)
    episode_length: int = 10
    episodes: int = 20000
    abstraction: str = "default"  # the environment's own map, or "none"
    alpha: float = 1e-5
    min_trials: int = 10
    max_search_len: int = 10
    strategy: str = "kld"
    pp_model: str = "lpst"
    pp_states: int = 0  # 0 = twice the number of profiles
    lpst_max_depth: int = 8
    em_iters: int = 50
    em_restarts: int = 3
    flat_states: int = 30
    flat_iters: int = 50
    flat_restarts: int = 3
    flat_episodes: int = 0  # 0 = train the flat model on every episode
    eta: float = 0.01
    beta: float = 0.95
    kappa: float = 0.001
    eval_steps: int = 100000
    sources: tuple = ("pp", "flat", "oracle", "som")
    som_joint: bool = False
    machine: str = ""  # machine file for sdm-check
    sdm_lh: int = 4
    sdm_lt: int = 2
    trials: int = 1
    seed: int = 0

    def __post_init__(self):
        self.sources = tuple(self.sources)
        self.validate()

    def validate(self) -> None:
        def need(cond, msg):
            if not cond:
                raise ConfigError(msg)

        need(self.env in ENV_IDS, f"env must be one of {ENV_IDS}, got {self.env!r}")
        need(self.abstraction in ("default", "none"), "abstraction must be 'default' or 'none'")
        need(self.strategy in STRATEGIES, f"strategy must be one of {STRATEGIES}")
        need(self.pp_model in PP_MODELS, f"pp_model must be one of {PP_MODELS}")
        need(all(s in SOURCES for s in self.sources), f"sources must be drawn from {SOURCES}")
        need(0.0 < self.alpha < 1.0, "alpha must lie in (0, 1)")
        for name in ("episode_length", "episodes", "max_search_len", "lpst_max_depth",
                     "em_restarts", "flat_states", "flat_restarts", "trials", "sdm_lh", "sdm_lt"):
            need(getattr(self, name) >= 1, f"{name} must be >= 1")
        for name in ("min_trials", "pp_states", "em_iters", "flat_iters", "flat_episodes", "eval_steps", "seed"):
            need(getattr(self, name) >= 0, f"{name} must be >= 0")
        need(self.eta > 0.0, "eta must be positive")
        need(0.0 <= self.beta < 1.0, "beta must lie in [0, 1)")
        need(0.0 < self.kappa <= 1.0, "kappa must lie in (0, 1]")

    # ------------------------------------------------------------ text form

    def items(self) -> list:
        out = []
        for f in fields(self):
            if f.name == "env_params":
                out += [(f"env.{k}", v) for k, v in sorted(self.env_params.items())]
            else:
                out.append((f.name, getattr(self, f.name)))
        return out

    def to_text(self) -> str:
        return "".join(f"{k} = {_format(v)}\n" for k, v in self.items())

    @property
    def hash(self) -> str:
        """Stable digest of every setting (the master seed included)."""
        return hashlib.sha256(self.to_text().encode()).hexdigest()[:16]

    def replace(self, **changes) -> "ExperimentConfig":
        vals = {f.name: getattr(self, f.name) for f in fields(self)}
        vals.update(changes)
        out = ExperimentConfig(**vals)
        if hasattr(self, "base_dir"):
            out.base_dir = self.base_dir
        return out


def _format(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, tuple):
        return ",".join(map(str, v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}


def _coerce(key: str, raw: str):
    kind = _TYPES[key]
    try:
        if kind == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        if kind == "tuple":
            return tuple(s.strip() for s in raw.split(",") if s.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key}: {raw!r}") from None


def _env_value(raw: str):
    for conv in (int, float):
        try:
            return conv(raw)
        except ValueError:
            pass
    if "," in raw:
        return tuple(_env_value(s.strip()) for s in raw.split(","))
    return raw


def parse_config(text: str, source: str = "<config>") -> ExperimentConfig:
    vals: dict = {}
    env_params: dict = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key, value = key.strip(), value.strip()
        if not sep or not key:
            raise ConfigError(f"{source}:{lineno}: expected 'key = value'")
        if key.startswith("env."):
            env_params[key[4:]] = _env_value(value)
        elif key in _TYPES and key != "env_params":
            vals[key] = _coerce(key, value)
        else:
            raise ConfigError(f"{source}:{lineno}: unknown key {key!r}")
    return ExperimentConfig(env_params=env_params, **vals)


def load_config(path) -> ExperimentConfig:
    p = Path(path)
    try:
        text = p.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    cfg = parse_config(text, str(p))
    cfg.base_dir = p.parent  # relative paths inside the config resolve from here
    return cfg


def resolve_path(cfg: ExperimentConfig, value: str) -> Path:
    path = Path(value)
    if path.is_absolute():
        return path
    return Path(getattr(cfg, "base_dir", ".")) / path
