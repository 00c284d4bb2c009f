"""Flow Matching and solution consistency losses with adaptive weighting.

Both losses return a :class:`LossOutput` whose ``loss`` is a tape value; the
adaptive weights are computed from detached per-sample errors, so gradients
flow only through the raw squared error.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import gradtape as gt
from .flowmath import (
    LSchedule,
    NoisingSchedule,
    SolutionParameterization,
    conditional_velocity,
    interpolate,
)
from .network import ModelParams, solution_value, velocity_value


class NonFiniteLossError(FloatingPointError):
    def __init__(self, which: str, index: int, detail: str = ""):
        self.which = which
        self.index = index
        super().__init__(f"non-finite {which} loss at sample {index}{detail}")


@dataclass(frozen=True)
class LossConfig:
    lam: float = 0.75
    p: float = 1.0
    epsilon: float = 1e-3
    schedule: NoisingSchedule = field(default_factory=NoisingSchedule)
    param: SolutionParameterization = field(default_factory=SolutionParameterization)
    lschedule: LSchedule = field(default_factory=LSchedule)

    def __post_init__(self):
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must be in [0, 1], got {self.lam}")
        if self.p < 0:
            raise ValueError(f"p must be >= 0, got {self.p}")
        if not self.epsilon > 0:
            raise ValueError(f"epsilon must be > 0, got {self.epsilon}")

    def split(self, batch_size: int) -> int:
        """Number of leading batch rows routed to the Flow Matching loss."""
        return int(np.floor(self.lam * batch_size + 1e-9))


@dataclass
class LossOutput:
    loss: gt.Value
    mse: np.ndarray
    weight: np.ndarray
    kind: str
    times: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def value(self) -> float:
        return float(self.loss.data)


def detached(params: ModelParams) -> ModelParams:
    """Parameters cut from any tape (the theta-minus copy)."""
    return ModelParams(params.config,
                       {k: gt.stop_gradient(v) for k, v in params.arrays.items()})


def _check_finite(which, per_sample):
    bad = np.flatnonzero(~np.isfinite(per_sample))
    if bad.size:
        raise NonFiniteLossError(which, int(bad[0]))


def _weighted_mean(mse: gt.Value, weight: np.ndarray) -> gt.Value:
    return gt.mean(gt.mul(mse, weight))


def fm_loss(params: ModelParams, cfg: LossConfig, x0, x1, labels, t,
            velocity_target=None) -> LossOutput:
    """Adaptive-weighted regression of the s = t velocity onto a target velocity.

    ``velocity_target`` defaults to the conditional velocity a'x0 + b'x1; the
    guided path passes its mixed estimate instead.
    """
    x0 = np.asarray(x0, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    x_t = interpolate(cfg.schedule, x0, x1, t)
    if velocity_target is None:
        velocity_target = conditional_velocity(cfg.schedule, x0, x1, t)
    pred = velocity_value(params, cfg.param, x_t, t, labels)
    mse = gt.mean(gt.square(gt.sub(pred, velocity_target)), axis=1)
    _, db = cfg.param.diag_partials(t)
    weight = 1.0 / (np.abs(db) * (mse.data + cfg.epsilon) ** cfg.p)
    _check_finite("fm", weight * mse.data)
    return LossOutput(_weighted_mean(mse, weight), mse.data, weight, "fm", {"t": t})


def scm_loss(params: ModelParams, cfg: LossConfig, x0, x1, labels, t, l, s,
             velocity_target=None, target_params: ModelParams | None = None) -> LossOutput:
    """Consistency between f(x_t, t, s) and a detached f at the flow-advanced point (x_l, l, s)."""
    x0 = np.asarray(x0, dtype=np.float64)
    t, l, s = (np.asarray(a, dtype=np.float64) for a in (t, l, s))
    gap = t - l
    if gap.size and gap.min() < 1e-12:
        raise ValueError(f"t - l too small ({gap.min():.3g}); expected s <= l < t")
    x_t = interpolate(cfg.schedule, x0, x1, t)
    if velocity_target is None:
        velocity_target = conditional_velocity(cfg.schedule, x0, x1, t)
    x_l = x_t + np.asarray(velocity_target) * (l - t)[:, None]
    if target_params is None:
        target_params = detached(params)
    target = solution_value(target_params, cfg.param, x_l, l, s, labels).data
    pred = solution_value(params, cfg.param, x_t, t, s, labels)
    mse = gt.mean(gt.square(gt.sub(pred, target)), axis=1)
    weight = 1.0 / (gap * np.abs(cfg.param.b(t, s)))
    weight = weight / (mse.data / gap**2 + cfg.epsilon) ** cfg.p
    _check_finite("scm", weight * mse.data)
    return LossOutput(_weighted_mean(mse, weight), mse.data, weight, "scm",
                      {"t": t, "l": l, "s": s})


@dataclass
class Batch:
    """One training batch, already split: the first ``n_fm`` rows feed the FM loss."""

    x0: np.ndarray
    x1: np.ndarray
    labels: np.ndarray
    n_fm: int
    t_fm: np.ndarray
    t: np.ndarray
    l: np.ndarray
    s: np.ndarray
    velocity: np.ndarray | None = None

    @property
    def size(self) -> int:
        return self.x0.shape[0]

    def times(self) -> np.ndarray:
        """Per-row time at which x_t is formed (FM rows then SCM rows)."""
        return np.concatenate([self.t_fm, self.t])


@dataclass
class CombinedOutput:
    loss: gt.Value
    fm: LossOutput | None
    scm: LossOutput | None

    @property
    def value(self) -> float:
        return float(self.loss.data)


def combined_loss(params: ModelParams, cfg: LossConfig, batch: Batch) -> CombinedOutput:
    """lam * L_FM + (1 - lam) * L_SCM, each a mean over its own sub-batch."""
    n = batch.n_fm
    vel = batch.velocity
    fm = scm = None
    terms = []
    if n > 0 and cfg.lam > 0:
        fm = fm_loss(params, cfg, batch.x0[:n], batch.x1[:n], batch.labels[:n], batch.t_fm,
                     None if vel is None else vel[:n])
        terms.append(gt.scale(fm.loss, cfg.lam))
    if batch.size > n and cfg.lam < 1:
        scm = scm_loss(params, cfg, batch.x0[n:], batch.x1[n:], batch.labels[n:],
                       batch.t, batch.l, batch.s, None if vel is None else vel[n:])
        terms.append(gt.scale(scm.loss, 1.0 - cfg.lam))
    if not terms:
        raise ValueError("batch routes no samples to any loss")
    total = terms[0] if len(terms) == 1 else gt.add(terms[0], terms[1])
    return CombinedOutput(total, fm, scm)
