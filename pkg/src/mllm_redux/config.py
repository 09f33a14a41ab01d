"""Model configuration and its strict YAML loader."""

import math
from dataclasses import asdict, dataclass, field, fields, is_dataclass, replace

import yaml

from .cmai import FOCUS_BASES, FOCUS_MODES
from .errors import ConfigError, ScheduleError
from .vmtc import KMeansConfig, VmtcConfig, insertion_layers, schedule_stages

COMPRESSION_MODES = ("none", "vmtc", "spd", "llp")


@dataclass
class CmaiConfig:
    enabled: bool = True
    gamma_max: float = 0.6
    mode: str = "focus"
    discount: float = 0.5
    focus_basis: str = "weights"


@dataclass
class ModelConfig:
    d_model: int = 64
    n_heads: int = 4
    d_ff: int = 128
    vit_depth: int = 6
    llm_depth: int = 6
    n_patches: int = 64
    vocab_size: int = 256
    max_text_len: int = 32
    patch_dim: int = 16
    d_llm: int = 64
    compression: str = "vmtc"
    spd_factor: int = 2
    keep_cls: bool = False
    prompt_len: int = 8
    generate_steps: int = 4
    vmtc: VmtcConfig = field(default_factory=VmtcConfig)
    cmai: CmaiConfig = field(default_factory=CmaiConfig)
    literal_equations: bool = False
    seed: int = 0

    @property
    def grid_side(self):
        return math.isqrt(self.n_patches)

    @property
    def n_image_max(self):
        return self.n_patches + int(self.keep_cls)

    def to_dict(self):
        return asdict(self)

    def with_seed(self, seed):
        return replace(self, seed=seed)

    def validate(self):
        def need(cond, key, msg):
            if not cond:
                raise ConfigError(key, msg)

        for key in ("d_model", "n_heads", "d_ff", "vit_depth", "llm_depth", "n_patches",
                    "vocab_size", "max_text_len", "patch_dim", "d_llm"):
            need(getattr(self, key) >= 1, key, "must be at least 1")
        need(self.grid_side ** 2 == self.n_patches, "n_patches", "must be a perfect square")
        need(self.d_model % self.n_heads == 0, "n_heads", "must divide d_model")
        need(self.d_llm % self.n_heads == 0, "n_heads", "must divide d_llm")
        need(self.compression in COMPRESSION_MODES, "compression", f"must be one of {COMPRESSION_MODES}")
        if self.compression == "spd":
            need(self.spd_factor >= 1 and self.grid_side % self.spd_factor == 0,
                 "spd_factor", f"must divide the grid side {self.grid_side}")
        need(self.prompt_len >= 0, "prompt_len", "must be non-negative")
        need(self.generate_steps >= 0, "generate_steps", "must be non-negative")
        need(self.prompt_len + self.generate_steps <= self.max_text_len,
             "max_text_len", "must hold prompt_len + generate_steps tokens")
        need(self.generate_steps == 0 or self.prompt_len >= 1, "prompt_len", "generation needs a prompt")

        v = self.vmtc
        need(0.0 < v.target_keep_ratio <= 1.0, "vmtc.target_keep_ratio", "must lie in (0, 1]")
        need(v.num_stages >= 1, "vmtc.num_stages", "must be at least 1")
        need(v.clusters_per_stage >= 1, "vmtc.clusters_per_stage", "must be at least 1")
        need(v.ips_direction in ("row", "column"), "vmtc.ips_direction", "must be 'row' or 'column'")
        need(v.kmeans.max_iter >= 1, "vmtc.kmeans.max_iter", "must be at least 1")
        need(v.kmeans.tol >= 0.0, "vmtc.kmeans.tol", "must be non-negative")
        need(v.kmeans.n_init >= 1, "vmtc.kmeans.n_init", "must be at least 1")
        if v.insertion_layers is not None:
            layers = list(v.insertion_layers)
            need(len(layers) == v.num_stages, "vmtc.insertion_layers", "needs one entry per stage")
            need(all(b > a for a, b in zip(layers, layers[1:])), "vmtc.insertion_layers",
                 "must be strictly increasing")
            need(all(0 <= x < self.vit_depth for x in layers), "vmtc.insertion_layers",
                 "must index encoder blocks")
        if self.compression == "vmtc":
            try:
                schedule_stages(self.n_patches, v)
                if v.insertion_layers is None:
                    insertion_layers(self.vit_depth, v.num_stages)
            except ScheduleError as exc:
                raise ConfigError("vmtc.num_stages", str(exc)) from exc

        c = self.cmai
        need(0.0 <= c.gamma_max < 1.0, "cmai.gamma_max", "must lie in [0, 1)")
        need(c.mode in FOCUS_MODES, "cmai.mode", f"must be one of {FOCUS_MODES}")
        need(c.focus_basis in FOCUS_BASES, "cmai.focus_basis", f"must be one of {FOCUS_BASES}")
        need(0.0 < c.discount < 1.0, "cmai.discount", "must lie in (0, 1)")
        return self


def _build(cls, data, prefix):
    if not isinstance(data, dict):
        raise ConfigError(prefix.rstrip(".") or "<root>", "expected a mapping")
    known = {f.name: f for f in fields(cls)}
    kwargs = {}
    for key, value in data.items():
        name = f"{prefix}{key}"
        if key not in known:
            raise ConfigError(name, "unknown key")
        default = getattr(cls(), key)
        if is_dataclass(default):
            kwargs[key] = _build(type(default), value, f"{name}.")
        else:
            kwargs[key] = _coerce(name, default, value)
    return cls(**kwargs)


def _coerce(name, default, value):
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    if default is None:  # insertion_layers
        if value is None:
            return None
        if not isinstance(value, list) or not all(isinstance(v, int) and not isinstance(v, bool) for v in value):
            raise ConfigError(name, "expected a list of integers")
        return list(value)
    raise ConfigError(name, "unsupported field")


def config_from_dict(data):
    """Build and validate a :class:`ModelConfig`; errors name the dotted key."""
    return _build(ModelConfig, data or {}, "").validate()


def load_config(path):
    with open(path) as fh:
        try:
            data = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise ConfigError("<file>", f"not valid YAML: {exc}") from exc
    return config_from_dict(data)


__all__ = ["CmaiConfig", "ModelConfig", "VmtcConfig", "KMeansConfig", "config_from_dict", "load_config"]
