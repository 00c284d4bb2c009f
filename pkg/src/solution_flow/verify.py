"""Finite-difference checks of the solution-function identities and error bounds.

Nothing here uses the tape: every derivative is a finite difference of
forward evaluations. A *solution function* below is any callable
``f(x, t, s) -> array`` with per-row ``t`` and ``s``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .flowmath import SolutionParameterization
from .network import ModelParams, forward_solution, predicted_velocity
from .sampler import ode_reference_sample

SolutionFn = Callable[[np.ndarray, np.ndarray, np.ndarray], np.ndarray]
VelocityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


def model_solution(params: ModelParams, param: SolutionParameterization, labels) -> SolutionFn:
    def f(x, t, s):
        return forward_solution(params, param, x, t, s, labels)

    return f


def _rows(v, n):
    return np.broadcast_to(np.asarray(v, dtype=np.float64), (n,)).copy()


def flow_residual(solution_fn: SolutionFn, velocity_fn: VelocityFn, x, t, s, h: float,
                  central: bool = False) -> np.ndarray:
    """Directional derivative of f(., ., s) along the flow: d1 f . v + d2 f, by differences."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    t, s = _rows(t, n), _rows(s, n)
    if not h > 0:
        raise ValueError("h must be positive")
    v = velocity_fn(x, t)
    if central:
        up = solution_fn(x + v * h, t + h, s)
        down = solution_fn(x - v * h, t - h, s)
        return (up - down) / (2.0 * h)
    if np.any(h >= t - s):
        raise ValueError("forward residual needs h < t - s")
    return (solution_fn(x - v * h, t - h, s) - solution_fn(x, t, s)) / (-h)


def pde_residual(params: ModelParams, param: SolutionParameterization, velocity_fn: VelocityFn,
                 x, t, s, h: float = 1e-3, labels=None, central: bool = False) -> np.ndarray:
    labels = params.config.null_label if labels is None else labels
    return flow_residual(model_solution(params, param, labels), velocity_fn, x, t, s, h, central)


@dataclass
class ResidualReport:
    norms: np.ndarray
    h: float
    t: np.ndarray
    s: np.ndarray

    @property
    def median(self) -> float:
        return float(np.median(self.norms))

    @property
    def delta_hat(self) -> float:
        return float(self.norms.max())


def residual_report(params: ModelParams, param: SolutionParameterization, velocity_fn: VelocityFn,
                    x, t, s, labels, h: float = 1e-3) -> ResidualReport:
    r = pde_residual(params, param, velocity_fn, x, t, s, h, labels, central=True)
    norms = np.linalg.norm(r, axis=1)
    if not np.isfinite(norms).all():
        raise FloatingPointError("non-finite residual")
    return ResidualReport(norms, h, _rows(t, len(norms)), _rows(s, len(norms)))


@dataclass
class ProbeGrid:
    x: np.ndarray
    t: np.ndarray
    s: np.ndarray
    labels: np.ndarray


def make_probe_grid(x0, labels, x1, rng: np.random.Generator, schedule, min_gap: float = 0.05) -> ProbeGrid:
    """Probe points x_t with t ~ U(min_gap, 1), s ~ U(0, t - min_gap)."""
    n = len(x0)
    t = rng.uniform(min_gap, 1.0, n)
    s = rng.uniform(0.0, 1.0, n) * (t - min_gap)
    x = schedule.alpha(t)[:, None] * x0 + schedule.beta(t)[:, None] * x1
    return ProbeGrid(x, t, s, np.asarray(labels))


def boundary_check(params: ModelParams, param: SolutionParameterization, x, t, labels) -> float:
    """max ||f(x, t, t) - x|| over the probes."""
    out = forward_solution(params, param, x, t, t, labels)
    return float(np.linalg.norm(out - x, axis=1).max())


def velocity_identity_error(params: ModelParams, param: SolutionParameterization, x, t, labels,
                            h: float) -> np.ndarray:
    """Per-probe ||central difference of f in s at s = t  -  predicted velocity||."""
    t = _rows(t, len(x))
    up = forward_solution(params, param, x, t, t + h, labels)
    down = forward_solution(params, param, x, t, t - h, labels)
    fd = (up - down) / (2.0 * h)
    return np.linalg.norm(fd - predicted_velocity(params, param, x, t, labels), axis=1)


@dataclass
class GlobalErrorReport:
    errors: np.ndarray
    delta_hat: np.ndarray
    slack: float
    span: float
    notes: str = field(default="delta_hat is a finite-probe maximum; slack absorbs the "
                                "gap to the true supremum")

    @property
    def satisfied(self) -> np.ndarray:
        return self.errors <= self.slack * self.span * self.delta_hat

    @property
    def fraction(self) -> float:
        return float(self.satisfied.mean())


def global_error_check(solution_fn: SolutionFn, velocity_fn: VelocityFn, x, t: float = 1.0,
                       s: float = 0.0, rk4_steps: int = 200, n_probe: int = 16, h: float = 1e-3,
                       slack: float = 3.0) -> GlobalErrorReport:
    """Compare f(x, t, s) with RK4 on the true field and bound it by |s - t| * max residual.

    The residual maximum is taken per trajectory over ``n_probe`` points of the
    reference path, evaluated at (path(l), l, s).
    """
    if rk4_steps < 1 or n_probe < 2:
        raise ValueError("need rk4_steps >= 1 and n_probe >= 2")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    truth, path = ode_reference_sample(velocity_fn, x, rk4_steps, "rk4", t, s, return_path=True)
    model = solution_fn(x, np.full(n, t), np.full(n, s))
    errors = np.linalg.norm(truth - model, axis=1)
    idx = np.unique(np.round(np.linspace(0, rk4_steps, n_probe)).astype(int))
    delta = np.zeros(n)
    for i in idx:
        l = t + (s - t) * i / rk4_steps
        r = flow_residual(solution_fn, velocity_fn, path[i], np.full(n, l), np.full(n, s), h,
                          central=True)
        delta = np.maximum(delta, np.linalg.norm(r, axis=1))
    return GlobalErrorReport(errors, delta, slack, abs(s - t))


@dataclass
class OdeErrorReport:
    errors: np.ndarray
    h: float
    delta_hat: float | None = None

    @property
    def median(self) -> float:
        return float(np.median(self.errors))

    @property
    def ratio_to_sqrt_delta(self) -> float | None:
        if self.delta_hat is None or self.delta_hat <= 0:
            return None
        return float(np.median(self.errors) / np.sqrt(self.delta_hat))


def ode_error_check(solution_fn: SolutionFn, velocity_fn: VelocityFn, x, t, s, h: float = 1e-3,
                    delta_hat: float | None = None) -> OdeErrorReport:
    """||d3 f(x, t, s) - v(f(x, t, s), s)|| with d3 f by central differences in s."""
    if not h > 0:
        raise ValueError("h must be positive")
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[0]
    t, s = _rows(t, n), _rows(s, n)
    d3 = (solution_fn(x, t, s + h) - solution_fn(x, t, s - h)) / (2.0 * h)
    v = velocity_fn(solution_fn(x, t, s), s)
    return OdeErrorReport(np.linalg.norm(d3 - v, axis=1), h, delta_hat)
