"""Training configuration: a flat dataclass read from sectioned ``key = value`` text.

Parsing is strict: unknown sections or keys, malformed values and out-of-range
settings all raise :class:`ConfigError`.
"""

from __future__ import annotations

import configparser
import dataclasses
import hashlib
import math
from dataclasses import dataclass, fields

from .datasets import preset as dataset_preset
from .flowmath import LSchedule, NoisingSchedule, SolutionParameterization
from .guidance import GuidanceConfig
from .network import NetworkConfig
from .objectives import LossConfig


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    # [data]
    preset: str = "ring8"
    data_dim: int = 2
    conditional: bool = True
    # [network]
    hidden: tuple[int, ...] = (128, 128, 128)
    embed_dim: int = 32
    label_dim: int = 16
    freq_base: float = 1e4
    freq_scale: float = 20.0
    # [flow]
    schedule: str = "linear"
    parameterization: str = "euler"
    # [loss]
    lam: float = 0.75
    p: float = 1.0
    epsilon: float = 1e-3
    # [lschedule]
    lschedule: str = "exponential"
    r_init: float = 0.1
    r_end: float = 0.002
    # [time]
    mu_fm: float = -0.2
    sigma_fm: float = 1.0
    mu_t: float = 0.2
    sigma_t: float = 0.8
    mu_s: float = -1.0
    sigma_s: float = 0.8
    # [guidance]
    w: float = 2.0
    m: float = 0.25
    drop_rate: float = 0.1
    t_decay: float = 0.8
    # [optim]
    lr: float = 2e-3
    lr_decay: str = "cosine"
    lr_final: float = 0.01
    beta1: float = 0.9
    beta2: float = 0.99
    adam_eps: float = 1e-8
    ema_decay: float = 0.998
    # [train]
    batch_size: int = 256
    steps: int = 20000
    seed: int = 0
    log_every: int = 100
    eval_every: int = 0
    checkpoint_every: int = 0
    checkpoint: str = ""
    log: str = ""

    def __post_init__(self):
        self.validate()

    # -- derived module configs -------------------------------------------------
    def network_config(self, num_classes: int | None = None) -> NetworkConfig:
        if num_classes is None:
            num_classes = self.dataset().num_classes
        return NetworkConfig(self.data_dim, tuple(self.hidden), self.embed_dim, self.label_dim,
                             num_classes, self.freq_base, self.freq_scale)

    def noising(self) -> NoisingSchedule:
        return NoisingSchedule(self.schedule)

    def solution_param(self) -> SolutionParameterization:
        return SolutionParameterization(self.parameterization)

    def loss_config(self) -> LossConfig:
        return LossConfig(self.lam, self.p, self.epsilon, self.noising(), self.solution_param(),
                          LSchedule(self.lschedule, self.r_init, self.r_end))

    def guidance(self) -> GuidanceConfig:
        return GuidanceConfig(self.w, self.m, self.drop_rate, self.t_decay)

    def dataset(self):
        return dataset_preset(self.preset)

    def validate(self) -> None:
        try:
            ds = self.dataset()
            if ds.dim != self.data_dim:
                raise ValueError(f"data_dim={self.data_dim} but preset {self.preset!r} is {ds.dim}-D")
            self.network_config(ds.num_classes)
            self.loss_config()
            self.guidance()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None
        if self.batch_size < 1 or self.steps < 0:
            raise ConfigError("batch_size must be >= 1 and steps >= 0")
        if 0 < self.lam < 1 and self.batch_size < 2:
            raise ConfigError("batch_size must be >= 2 when 0 < lambda < 1")
        if not (0 <= self.ema_decay <= 1 and self.lr > 0 and 0 <= self.beta1 < 1
                and 0 <= self.beta2 < 1):
            raise ConfigError("optimizer/EMA settings out of range")
        if self.lr_decay not in ("constant", "cosine") or not 0 <= self.lr_final <= 1:
            raise ConfigError("lr_decay must be constant|cosine and 0 <= lr_final <= 1")
        if min(self.sigma_fm, self.sigma_t, self.sigma_s) < 0:
            raise ConfigError("time-sampler sigmas must be non-negative")
        if min(self.log_every, self.eval_every, self.checkpoint_every) < 0:
            raise ConfigError("logging intervals must be >= 0")

    def learning_rate(self, k: int) -> float:
        """Step size for update ``k`` (0-based); cosine runs from ``lr`` down to ``lr * lr_final``."""
        if self.lr_decay == "constant" or self.steps <= 1:
            return self.lr
        frac = 0.5 * (1.0 + math.cos(math.pi * min(k, self.steps - 1) / (self.steps - 1)))
        return self.lr * (self.lr_final + (1.0 - self.lr_final) * frac)

    def replace(self, **changes) -> TrainConfig:
        return dataclasses.replace(self, **changes)

    # -- text form ----------------------------------------------------------------
    def to_text(self) -> str:
        out = []
        for section, keys in SECTIONS.items():
            out.append(f"[{section}]")
            for key in keys:
                out.append(f"{key} = {_format(getattr(self, FIELD_OF.get(key, key)))}")
            out.append("")
        return "\n".join(out)

    def content_hash(self) -> str:
        return hashlib.sha256(self.to_text().encode()).hexdigest()


SECTIONS: dict[str, list[str]] = {
    "data": ["preset", "data_dim", "conditional"],
    "network": ["hidden", "embed_dim", "label_dim", "freq_base", "freq_scale"],
    "flow": ["schedule", "parameterization"],
    "loss": ["lambda", "p", "epsilon"],
    "lschedule": ["kind", "r_init", "r_end"],
    "time": ["mu_fm", "sigma_fm", "mu_t", "sigma_t", "mu_s", "sigma_s"],
    "guidance": ["w", "m", "drop_rate", "t_decay"],
    "optim": ["lr", "lr_decay", "lr_final", "beta1", "beta2", "adam_eps", "ema_decay"],
    "train": ["batch_size", "steps", "seed", "log_every", "eval_every", "checkpoint_every",
              "checkpoint", "log"],
}

# Text keys whose dataclass field has a different name.
FIELD_OF = {"lambda": "lam", "kind": "lschedule"}

_TYPES = {f.name: f.type for f in fields(TrainConfig)}


def _format(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _convert(key: str, raw: str, typ: str):
    raw = raw.strip()
    try:
        if typ == "bool":
            low = raw.lower()
            if low not in ("true", "false", "1", "0", "yes", "no"):
                raise ValueError(raw)
            return low in ("true", "1", "yes")
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
        if typ.startswith("tuple"):
            return tuple(int(v) for v in raw.split(",") if v.strip())
        return raw
    except ValueError:
        raise ConfigError(f"bad value for {key!r}: {raw!r} (expected {typ})") from None


def parse_config(text: str) -> TrainConfig:
    parser = configparser.ConfigParser(interpolation=None, strict=True)
    parser.optionxform = str
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"unreadable config: {exc}".replace("\n", " ")) from None
    values = {}
    for section in parser.sections():
        if section not in SECTIONS:
            raise ConfigError(f"unknown section [{section}]")
        for key, raw in parser.items(section):
            if key not in SECTIONS[section]:
                raise ConfigError(f"unknown key {key!r} in [{section}]")
            name = FIELD_OF.get(key, key)
            values[name] = _convert(key, raw, _TYPES[name])
    return TrainConfig(**values)


def load_config(path) -> TrainConfig:
    with open(path) as fh:
        return parse_config(fh.read())
