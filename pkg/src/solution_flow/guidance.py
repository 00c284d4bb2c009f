"""Classifier-free guidance folded into the training targets."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flowmath import NoisingSchedule, SolutionParameterization, conditional_velocity, interpolate
from .network import ModelParams, predicted_velocity
from .objectives import Batch


@dataclass(frozen=True)
class GuidanceConfig:
    w: float = 2.0
    m: float = 0.25
    drop_rate: float = 0.1
    t_decay: float = 0.8

    def __post_init__(self):
        if self.w < 1:
            raise ValueError(f"w must be >= 1, got {self.w}")
        if not 0 < self.m <= 1:
            raise ValueError(f"m must be in (0, 1], got {self.m}")
        if not 0 <= self.drop_rate <= 1:
            raise ValueError(f"drop_rate must be in [0, 1], got {self.drop_rate}")
        if not 0 < self.t_decay < 1:
            raise ValueError(f"t_decay must be in (0, 1), got {self.t_decay}")


def decay_factor(t, t_decay: float):
    """1 below the threshold, smoothly falling to 0 as t -> 1 above it."""
    t = np.asarray(t, dtype=np.float64)
    tp = np.minimum((1.0 - t) / (1.0 - t_decay), 1.0 - 1e-6)
    g = 1.0 - np.exp(-(1.0 / 40.0) * tp / (1.0 - tp))
    return np.where(t <= t_decay, 1.0, g)


def effective_strength(cfg: GuidanceConfig, t):
    """Guidance strength at time t: w up to t_decay, then decaying towards 1."""
    return 1.0 + (cfg.w - 1.0) * decay_factor(t, cfg.t_decay)


def v_mix(cfg: GuidanceConfig, cond_target, v_uncond, v_guided, t):
    """m (w_eff v_cond + (1 - w_eff) v_uncond) + (1 - m) v_guided, per sample."""
    w_eff = np.asarray(effective_strength(cfg, t))
    if w_eff.ndim == 1:
        w_eff = w_eff[:, None]
    guided = w_eff * cond_target + (1.0 - w_eff) * v_uncond
    return cfg.m * guided + (1.0 - cfg.m) * v_guided


def model_v_mix(cfg: GuidanceConfig, params: ModelParams, param: SolutionParameterization,
                x_t, t, labels, cond_target):
    """v_mix with both model velocities taken from ``params`` (never on a tape)."""
    null = np.full(len(labels), params.config.null_label)
    v_uncond = predicted_velocity(params, param, x_t, t, null)
    v_guided = predicted_velocity(params, param, x_t, t, labels)
    return v_mix(cfg, cond_target, v_uncond, v_guided, t)


def guided_batch_prepare(cfg: GuidanceConfig, batch: Batch, params: ModelParams,
                         schedule: NoisingSchedule, param: SolutionParameterization,
                         rng: np.random.Generator) -> Batch:
    """Attach per-row velocity targets and labels for guided training.

    Dropped rows (probability ``drop_rate``) keep the raw conditional velocity
    and switch to the empty label; the rest get the v_mix estimate.
    """
    t = batch.times()
    cond = conditional_velocity(schedule, batch.x0, batch.x1, t)
    drop = rng.random(batch.size) < cfg.drop_rate
    labels = batch.labels.copy()
    labels[drop] = params.config.null_label
    velocity = cond.copy()
    keep = np.flatnonzero(~drop)
    if keep.size:
        x_t = interpolate(schedule, batch.x0[keep], batch.x1[keep], t[keep])
        velocity[keep] = model_v_mix(cfg, params, param, x_t, t[keep], labels[keep], cond[keep])
    return Batch(batch.x0, batch.x1, labels, batch.n_fm, batch.t_fm, batch.t, batch.l, batch.s,
                 velocity)
