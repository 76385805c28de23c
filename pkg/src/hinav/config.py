"""INI configuration with env / high / low / eval sections.

Every field has a default, unknown sections and keys are rejected, and the
resolved configuration is written next to each command's outputs so a run can
be repeated from its own echo.
"""
import configparser
from dataclasses import dataclass, field, fields, replace

from .errors import ConfigInvalid
from .highlevel import HighTrainConfig
from .lowlevel import DDPGConfig


@dataclass
class EnvConfig:
    map: str = "building"
    spacing: float = 0.5
    corridor_width: float = 2.0
    cell_size: float = 0.5
    blocks_x: int = 2
    blocks_y: int = 2
    block_size: float = 5.0
    corridor_length: float = 12.0
    loop_width: float = 10.0
    loop_height: float = 6.0
    num_orientations: int = 24
    forward_step: float = 1.0
    forward_match_radius: float = 0.7
    descriptor_dim: int = 128
    noise_level: float = 0.05
    alias_fraction: float = 0.0
    graph_seed: int = 0
    grid_rows: int = 10
    grid_cols: int = 10
    num_targets: int = 3
    snap_radius: float = 0.7

    def map_kwargs(self):
        if self.map == "building":
            return {"blocks": (self.blocks_x, self.blocks_y), "block_size": (self.block_size, self.block_size)}
        if self.map == "corridor":
            return {"length": self.corridor_length}
        if self.map == "loop":
            return {"width": self.loop_width, "height": self.loop_height}
        return {}

    def validate(self):
        from .traversal import MAPS
        if self.map not in MAPS:
            raise ConfigInvalid(f"unknown map {self.map!r}; choose from {sorted(MAPS)}")
        if self.spacing <= 0 or self.cell_size <= 0 or self.num_orientations < 1:
            raise ConfigInvalid("spacing, cell_size and num_orientations must be positive")
        if not 0 < self.forward_match_radius < self.forward_step:
            raise ConfigInvalid("need 0 < forward_match_radius < forward_step")
        return self


@dataclass
class EvalConfig:
    runs_per_target: int = 20
    min_start_distance: float = 15.0
    success_radius: float = 3.0
    max_steps: int = 150
    noise: bool = True
    num_obstacles: int = 6
    obstacle_radius: float = 0.35
    seed: int = 0

    def validate(self):
        if self.runs_per_target < 1 or self.max_steps < 1:
            raise ConfigInvalid("runs_per_target and max_steps must be positive")
        if self.success_radius <= 0 or self.min_start_distance < 0:
            raise ConfigInvalid("success_radius must be positive, min_start_distance non-negative")
        return self


SECTIONS = {"env": EnvConfig, "high": HighTrainConfig, "low": DDPGConfig, "eval": EvalConfig}


@dataclass
class Config:
    env: EnvConfig = field(default_factory=EnvConfig)
    high: HighTrainConfig = field(default_factory=HighTrainConfig)
    low: DDPGConfig = field(default_factory=DDPGConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def validate(self):
        for name in SECTIONS:
            getattr(self, name).validate()
        return self

    def with_seed(self, seed):
        """One seed for every stochastic stage except graph descriptors."""
        return Config(self.env, replace(self.high, seed=seed), replace(self.low, seed=seed),
                      replace(self.eval, seed=seed))

    def set(self, section, key, value):
        if section not in SECTIONS:
            raise ConfigInvalid(f"unknown config section [{section}]")
        obj = getattr(self, section)
        types = {f.name: f.type for f in fields(obj)}
        if key not in types:
            raise ConfigInvalid(f"unknown key {key!r} in [{section}]")
        setattr(self, section, replace(obj, **{key: _coerce(types[key], value, section, key)}))

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        for name in SECTIONS:
            obj = getattr(self, name)
            cp[name] = {f.name: _format(getattr(obj, f.name)) for f in fields(obj)}
        return cp

    def write(self, path):
        with open(path, "w") as f:
            self.to_ini().write(f)


def _type_name(t):
    return t if isinstance(t, str) else t.__name__


def _coerce(t, value, section, key):
    name = _type_name(t)
    if not isinstance(value, str):
        value = str(value)
    try:
        if name == "bool":
            low = value.strip().lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(value)
        if name == "int":
            return int(value)
        if name == "float":
            return float(value)
        return value.strip()
    except ValueError:
        raise ConfigInvalid(f"[{section}] {key} = {value!r} is not a valid {name}") from None


def _format(v):
    return repr(v) if isinstance(v, float) else str(v)


def parse_config(text):
    cp = configparser.ConfigParser(interpolation=None)
    try:
        cp.read_string(text)
    except configparser.Error as e:
        raise ConfigInvalid(f"malformed config: {e}") from None
    cfg = Config()
    for section in cp.sections():
        for key, value in cp[section].items():
            cfg.set(section, key, value)
    return cfg


def load_config(path=None):
    if path is None:
        return Config()
    with open(path) as f:
        return parse_config(f.read())
