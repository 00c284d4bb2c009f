"""Raw network F(x, t, s, c), the solution wrapper f = a x + b F, and EMA weights."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradtape as gt
from .flowmath import SolutionParameterization


@dataclass(frozen=True)
class TimeEmbedding:
    """Sinusoidal features [sin(u w_j), cos(u w_j)] with w_j = scale * base**(-j / half)."""

    embed_dim: int = 32
    base: float = 1e4
    scale: float = 20.0

    def __post_init__(self):
        if self.embed_dim <= 0 or self.embed_dim % 2:
            raise ValueError(f"embed_dim must be a positive even integer, got {self.embed_dim}")
        if self.base <= 0:
            raise ValueError("frequency base must be positive")

    @property
    def frequencies(self) -> np.ndarray:
        half = self.embed_dim // 2
        return self.scale * self.base ** (-np.arange(half) / half)

    def __call__(self, u) -> np.ndarray:
        u = np.asarray(u, dtype=np.float64).reshape(-1, 1)
        arg = u * self.frequencies[None, :]
        return np.concatenate([np.sin(arg), np.cos(arg)], axis=1)


@dataclass(frozen=True)
class NetworkConfig:
    data_dim: int = 2
    hidden: tuple[int, ...] = (128, 128, 128)
    embed_dim: int = 32
    label_dim: int = 16
    num_classes: int = 1
    freq_base: float = 1e4
    freq_scale: float = 20.0

    @property
    def null_label(self) -> int:
        """Row of the label table reserved for the empty label."""
        return self.num_classes

    @property
    def input_dim(self) -> int:
        return self.data_dim + 2 * self.embed_dim + self.label_dim

    @property
    def embedding(self) -> TimeEmbedding:
        return TimeEmbedding(self.embed_dim, self.freq_base, self.freq_scale)

    def param_shapes(self) -> dict[str, tuple[int, ...]]:
        shapes = {"label_table": (self.num_classes + 1, self.label_dim)}
        widths = (self.input_dim, *self.hidden, self.data_dim)
        for i, (fan_in, fan_out) in enumerate(zip(widths[:-1], widths[1:])):
            shapes[f"w{i}"] = (fan_in, fan_out)
            shapes[f"b{i}"] = (1, fan_out)
        return shapes


@dataclass
class ModelParams:
    """Named float64 arrays of an MLP; ``arrays`` keeps a fixed insertion order."""

    config: NetworkConfig
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def n_layers(self) -> int:
        return len(self.config.hidden) + 1

    def copy(self) -> ModelParams:
        return ModelParams(self.config, {k: v.copy() for k, v in self.arrays.items()})

    def is_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays.values())

    def watch(self, tape: gt.Tape) -> ModelParams:
        """Same config, every array replaced by a tape leaf."""
        return ModelParams(self.config, {k: tape.param(v) for k, v in self.arrays.items()})

    def num_parameters(self) -> int:
        return int(sum(np.size(v.data if isinstance(v, gt.Value) else v)
                       for v in self.arrays.values()))


def init_params(config: NetworkConfig, rng: np.random.Generator, zero_last: bool = True) -> ModelParams:
    """Fan-in scaled uniform hidden layers; the output layer is zero unless ``zero_last`` is off."""
    arrays = {}
    last = len(config.hidden)
    for name, shape in config.param_shapes().items():
        if name == "label_table":
            arrays[name] = rng.standard_normal(shape)
            continue
        layer = int(name[1:])
        if layer == last and zero_last:
            arrays[name] = np.zeros(shape)
        elif name.startswith("w"):
            bound = 1.0 / np.sqrt(shape[0])
            arrays[name] = rng.uniform(-bound, bound, size=shape)
        else:
            fan_in = config.param_shapes()[f"w{layer}"][0]
            bound = 1.0 / np.sqrt(fan_in)
            arrays[name] = rng.uniform(-bound, bound, size=shape)
    return ModelParams(config, arrays)


def _batch_inputs(config: NetworkConfig, x, t, s, labels):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != config.data_dim:
        raise gt.ShapeError("forward", x.shape, (None, config.data_dim))
    n = x.shape[0]
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (n,))
    s = np.broadcast_to(np.asarray(s, dtype=np.float64), (n,))
    labels = np.broadcast_to(np.asarray(labels), (n,))
    if labels.size and (labels.min() < 0 or labels.max() > config.null_label):
        raise ValueError(f"labels must lie in [0, {config.null_label}], got "
                         f"[{labels.min()}, {labels.max()}]")
    return x, t, s, labels.astype(np.int64)


def raw_value(params: ModelParams, x, t, s, labels) -> gt.Value:
    """F(x, t, s, c) as a tape value (tracked when ``params`` came from ``watch``)."""
    cfg = params.config
    x, t, s, labels = _batch_inputs(cfg, x, t, s, labels)
    emb = cfg.embedding
    onehot = np.zeros((x.shape[0], cfg.num_classes + 1))
    onehot[np.arange(x.shape[0]), labels] = 1.0
    label_rows = gt.matmul(onehot, params.arrays["label_table"])
    h = gt.concat([x, emb(t), emb(s - t), label_rows], axis=1)
    n_layers = params.n_layers
    for i in range(n_layers):
        h = gt.matmul(h, params.arrays[f"w{i}"]) + params.arrays[f"b{i}"]
        if i < n_layers - 1:
            h = gt.silu(h)
    return h


def solution_value(params: ModelParams, param: SolutionParameterization, x, t, s, labels) -> gt.Value:
    x, t, s, labels = _batch_inputs(params.config, x, t, s, labels)
    a = param.a(t, s)[:, None]
    b = param.b(t, s)[:, None]
    return gt.add(a * x, gt.mul(b, raw_value(params, x, t, s, labels)))


def velocity_value(params: ModelParams, param: SolutionParameterization, x, t, labels) -> gt.Value:
    x, t, _, labels = _batch_inputs(params.config, x, t, t, labels)
    da, db = param.diag_partials(t)
    return gt.add(da[:, None] * x, gt.mul(db[:, None], raw_value(params, x, t, t, labels)))


def forward_raw(params: ModelParams, x, t, s, labels) -> np.ndarray:
    return raw_value(params, x, t, s, labels).data


def forward_solution(params: ModelParams, param: SolutionParameterization, x, t, s, labels) -> np.ndarray:
    return solution_value(params, param, x, t, s, labels).data


def predicted_velocity(params: ModelParams, param: SolutionParameterization, x, t, labels) -> np.ndarray:
    """d/ds f(x, t, s) at s = t, which reduces to a'(t) x + b'(t) F(x, t, t)."""
    return velocity_value(params, param, x, t, labels).data


@dataclass
class EmaParams:
    shadow: ModelParams
    decay: float

    @classmethod
    def from_live(cls, live: ModelParams, decay: float) -> EmaParams:
        return cls(live.copy(), decay)


def ema_update(ema: EmaParams, live: ModelParams, decay: float | None = None) -> EmaParams:
    """shadow <- decay * shadow + (1 - decay) * live, in place."""
    decay = ema.decay if decay is None else decay
    if not 0.0 <= decay <= 1.0:
        raise ValueError(f"decay must be in [0, 1], got {decay}")
    for name, sh in ema.shadow.arrays.items():
        lv = live.arrays[name]
        if sh.shape != lv.shape:
            raise gt.ShapeError(f"ema_update[{name}]", sh.shape, lv.shape)
        sh *= decay
        sh += (1.0 - decay) * lv
    return ema
