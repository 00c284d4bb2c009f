"""Noising schedules, solution parameterizations, time samplers and l-schedules.

All derivatives here are closed forms. Time arguments may be python floats or
numpy arrays; outputs broadcast accordingly.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

HALF_PI = 0.5 * np.pi

# Minimum gap kept between t and the sampled s and l.
TIME_GAP = 1e-4


class ScheduleKind(str, Enum):
    LINEAR = "linear"
    TRIGONOMETRIC = "trigonometric"


class ParamKind(str, Enum):
    EULER = "euler"
    TRIGONOMETRIC = "trigonometric"


class LScheduleKind(str, Enum):
    EXPONENTIAL = "exponential"
    COSINE = "cosine"
    LINEAR = "linear"
    CONSTANT = "constant"


@dataclass(frozen=True)
class NoisingSchedule:
    """x_t = alpha(t) x0 + beta(t) x1 with alpha(0)=beta(1)=1, alpha(1)=beta(0)=0."""

    kind: ScheduleKind = ScheduleKind.LINEAR

    def __post_init__(self):
        object.__setattr__(self, "kind", ScheduleKind(self.kind))

    def alpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind is ScheduleKind.LINEAR:
            return 1.0 - t
        # cos(pi/2) is 6e-17, not 0; pin the endpoint.
        return np.where(t == 1.0, 0.0, np.cos(HALF_PI * t))

    def beta(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind is ScheduleKind.LINEAR:
            return t.copy()
        return np.sin(HALF_PI * t)

    def dalpha(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind is ScheduleKind.LINEAR:
            return np.full_like(t, -1.0)
        return -HALF_PI * np.sin(HALF_PI * t)

    def dbeta(self, t):
        t = np.asarray(t, dtype=np.float64)
        if self.kind is ScheduleKind.LINEAR:
            return np.ones_like(t)
        return HALF_PI * np.cos(HALF_PI * t)


@dataclass(frozen=True)
class SolutionParameterization:
    """f(x, t, s) = a(t, s) x + b(t, s) F(x, t, s), with a(t,t)=1 and b(t,t)=0."""

    kind: ParamKind = ParamKind.EULER

    def __post_init__(self):
        object.__setattr__(self, "kind", ParamKind(self.kind))

    def a(self, t, s):
        d = np.asarray(s, dtype=np.float64) - np.asarray(t, dtype=np.float64)
        if self.kind is ParamKind.EULER:
            return np.ones_like(d)
        return np.cos(HALF_PI * d)

    def b(self, t, s):
        d = np.asarray(s, dtype=np.float64) - np.asarray(t, dtype=np.float64)
        if self.kind is ParamKind.EULER:
            return d
        return np.sin(HALF_PI * d)

    def diag_partials(self, t):
        """(d a / d s, d b / d s) evaluated at s = t."""
        t = np.asarray(t, dtype=np.float64)
        if self.kind is ParamKind.EULER:
            return np.zeros_like(t), np.ones_like(t)
        return np.zeros_like(t), np.full_like(t, HALF_PI)


def _check_same_shape(x0, x1):
    x0 = np.asarray(x0, dtype=np.float64)
    x1 = np.asarray(x1, dtype=np.float64)
    if x0.shape != x1.shape:
        raise ValueError(f"x0 and x1 shapes differ: {x0.shape} vs {x1.shape}")
    return x0, x1


def _column(t, x):
    """Per-sample times as a column broadcastable against batched ``x``."""
    t = np.asarray(t, dtype=np.float64)
    if t.ndim == 1 and x.ndim == 2:
        return t[:, None]
    return t


def interpolate(schedule: NoisingSchedule, x0, x1, t):
    x0, x1 = _check_same_shape(x0, x1)
    tc = _column(t, x0)
    return schedule.alpha(tc) * x0 + schedule.beta(tc) * x1


def conditional_velocity(schedule: NoisingSchedule, x0, x1, t):
    x0, x1 = _check_same_shape(x0, x1)
    tc = _column(t, x0)
    return schedule.dalpha(tc) * x0 + schedule.dbeta(tc) * x1


def diag_partials(param: SolutionParameterization, t):
    return param.diag_partials(t)


def sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * (1.0 + np.tanh(0.5 * z))


@dataclass
class LogitNormalSampler:
    """Draws sigmoid(mu + sigma z) with z ~ N(0, 1) from its own stream."""

    mu: float
    sigma: float
    rng: np.random.Generator

    def __post_init__(self):
        if not self.sigma >= 0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma}")

    def sample(self, count: int) -> np.ndarray:
        if count < 0:
            raise ValueError("count must be non-negative")
        u = sigmoid(self.mu + self.sigma * self.rng.standard_normal(count))
        # tanh saturates to exactly +-1 far in the tails.
        return np.clip(u, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def sample_time(sampler: LogitNormalSampler, count: int) -> np.ndarray:
    return sampler.sample(count)


@dataclass(frozen=True)
class LSchedule:
    """r(k, K): fraction of (s - t) placed between t and the intermediate time l."""

    kind: LScheduleKind = LScheduleKind.EXPONENTIAL
    r_init: float = 0.1
    r_end: float = 0.002

    def __post_init__(self):
        object.__setattr__(self, "kind", LScheduleKind(self.kind))
        if not (0 < self.r_end <= self.r_init <= 1):
            raise ValueError(f"need 0 < r_end <= r_init <= 1, got {self.r_init}, {self.r_end}")

    def value(self, k, K):
        if K < 1 or not 0 <= k <= K:
            raise ValueError(f"need 0 <= k <= K and K >= 1, got k={k}, K={K}")
        frac = k / K
        if self.kind is LScheduleKind.EXPONENTIAL:
            return self.r_init * (self.r_end / self.r_init) ** frac
        if self.kind is LScheduleKind.COSINE:
            return self.r_end + (self.r_init - self.r_end) * 0.5 * (1.0 + np.cos(np.pi * frac))
        if self.kind is LScheduleKind.LINEAR:
            return self.r_init + (self.r_end - self.r_init) * frac
        return self.r_end


def schedule_value(ls: LSchedule, k, K) -> float:
    return float(ls.value(k, K))


def clamp_tls(t, s, r):
    """Build l from (t, s) and r, applying both clamps (s first, then l)."""
    t = np.asarray(t, dtype=np.float64)
    s = np.minimum(np.asarray(s, dtype=np.float64), t - TIME_GAP)
    l = np.minimum(t + (s - t) * r, t - TIME_GAP)
    return l, s


def sample_tls(t_sampler: LogitNormalSampler, s_sampler: LogitNormalSampler,
               lschedule: LSchedule, k: int, K: int, count: int):
    """Draw (t, l, s) with s <= l <= t - TIME_GAP elementwise."""
    r = lschedule.value(k, K)
    t = t_sampler.sample(count)
    s = s_sampler.sample(count)
    l, s = clamp_tls(t, s, r)
    return t, l, s
