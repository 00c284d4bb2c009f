"""Generation with a trained solution model, plus reference ODE integration.

The analytic Gaussian-mixture velocity lives here as well: it is the ground
truth that the reference integrator and the verification checks run on.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .datasets import GmmSpec
from .flowmath import NoisingSchedule, SolutionParameterization
from .guidance import GuidanceConfig, effective_strength
from .network import ModelParams, forward_solution

VelocityFn = Callable[[np.ndarray, np.ndarray], np.ndarray]


@dataclass
class SampleRequest:
    count: int
    label: int | np.ndarray | None = None  # None means the empty label
    nfe: int = 1
    seed: int = 0
    grid: tuple[float, ...] | None = None

    def __post_init__(self):
        if self.count < 1:
            raise ValueError(f"count must be >= 1, got {self.count}")
        if self.nfe < 1:
            raise ValueError(f"nfe must be >= 1, got {self.nfe}")
        grid = self.time_grid()
        if len(grid) != self.nfe or grid[0] != 1.0 or grid[-1] <= 0 or np.any(np.diff(grid) >= 0):
            raise ValueError(f"time grid must decrease strictly from 1 to (0, 1): {grid}")

    def time_grid(self) -> np.ndarray:
        if self.grid is not None:
            return np.asarray(self.grid, dtype=np.float64)
        return 1.0 - np.arange(self.nfe) / self.nfe

    def labels(self, null_label: int) -> np.ndarray:
        if self.label is None:
            return np.full(self.count, null_label)
        return np.broadcast_to(np.asarray(self.label, dtype=np.int64), (self.count,)).copy()


def one_step_sample(params: ModelParams, param: SolutionParameterization,
                    request: SampleRequest) -> np.ndarray:
    """x1 ~ N(0, I) mapped straight to t = 0 with one network call."""
    if request.nfe != 1:
        raise ValueError("one_step_sample needs nfe == 1")
    rng = np.random.default_rng(request.seed)
    x1 = rng.standard_normal((request.count, params.config.data_dim))
    return forward_solution(params, param, x1, 1.0, 0.0, request.labels(params.config.null_label))


def multi_step_sample(params: ModelParams, param: SolutionParameterization,
                      schedule: NoisingSchedule, request: SampleRequest) -> np.ndarray:
    """Predict x0, re-noise to the next grid time with fresh noise, repeat."""
    rng = np.random.default_rng(request.seed)
    labels = request.labels(params.config.null_label)
    grid = request.time_grid()
    x = rng.standard_normal((request.count, params.config.data_dim))
    x0_hat = x
    for i, t in enumerate(grid):
        x0_hat = forward_solution(params, param, x, t, 0.0, labels)
        if i < len(grid) - 1:
            t_next = grid[i + 1]
            z = rng.standard_normal(x.shape)
            x = schedule.alpha(t_next) * x0_hat + schedule.beta(t_next) * z
    return x0_hat


def ode_reference_sample(velocity_fn: VelocityFn, x1, steps: int, method: str = "rk4",
                         t_start: float = 1.0, t_end: float = 0.0, return_path: bool = False):
    """Integrate dX/dt = v(X, t) from ``t_start`` to ``t_end`` on a uniform grid.

    ``velocity_fn`` receives the state and a per-row time array. With
    ``return_path`` the states at every grid time are returned as well.
    """
    if steps < 1:
        raise ValueError("steps must be >= 1")
    method = method.lower()
    if method not in ("euler", "rk4"):
        raise ValueError(f"unknown method {method!r}")
    x = np.array(x1, dtype=np.float64)
    n = x.shape[0]
    h = (t_end - t_start) / steps
    path = [x.copy()] if return_path else None

    def v(state, t):
        return velocity_fn(state, np.full(n, t))

    for i in range(steps):
        t = t_start + i * h
        if method == "euler":
            x = x + h * v(x, t)
        else:
            k1 = v(x, t)
            k2 = v(x + 0.5 * h * k1, t + 0.5 * h)
            k3 = v(x + 0.5 * h * k2, t + 0.5 * h)
            k4 = v(x + h * k3, t + h)
            x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.isfinite(x).all():
            raise FloatingPointError(f"non-finite ODE state at step {i}")
        if return_path:
            path.append(x.copy())
    if return_path:
        return x, np.stack(path)
    return x


def analytic_gmm_velocity(gmm: GmmSpec, schedule: NoisingSchedule, x, t,
                          components: np.ndarray | None = None) -> np.ndarray:
    """Marginal velocity a'(t) E[x0|x_t] + b'(t) E[x1|x_t] of an isotropic mixture.

    Responsibilities use x_t | k ~ N(alpha mu_k, (alpha^2 sigma^2 + beta^2) I).
    E[x1 | x_t] is formed as beta (x - alpha mu_k) / var_k rather than
    (x - alpha E[x0|x_t]) / beta, so the field is finite on all of [0, 1].
    ``components`` restricts the mixture (e.g. to a single class).
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    if np.any((t < 0) | (t > 1)):
        raise ValueError("t must lie in [0, 1]")
    means, weights = gmm.means, gmm.weights
    if components is not None:
        means, weights = means[components], weights[components]
    live = weights > 0
    means, weights = means[live], weights[live] / weights[live].sum()
    a = schedule.alpha(t)[:, None, None]
    b = schedule.beta(t)[:, None, None]
    var = a * a * gmm.sigma**2 + b * b
    diff = x[:, None, :] - a * means[None]           # (N, K, n)
    logr = np.log(weights)[None] - 0.5 * (diff**2).sum(-1) / var[..., 0]
    logr -= logr.max(axis=1, keepdims=True)
    r = np.exp(logr)
    r /= r.sum(axis=1, keepdims=True)
    e0 = means[None] + (a * gmm.sigma**2 / var) * diff
    e1 = (b / var) * diff
    E0 = np.einsum("nk,nkd->nd", r, e0)
    E1 = np.einsum("nk,nkd->nd", r, e1)
    return schedule.dalpha(t)[:, None] * E0 + schedule.dbeta(t)[:, None] * E1


def class_components(gmm: GmmSpec, label: int) -> np.ndarray:
    return np.flatnonzero(gmm.classes == label)


def analytic_guided_velocity(gmm: GmmSpec, schedule: NoisingSchedule, guidance: GuidanceConfig,
                             x, t, labels) -> np.ndarray:
    """w_eff v(x, t | c) + (1 - w_eff) v(x, t); empty-label rows get the unconditional field."""
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    t = np.broadcast_to(np.asarray(t, dtype=np.float64), (x.shape[0],))
    labels = np.broadcast_to(np.asarray(labels), (x.shape[0],))
    out = analytic_gmm_velocity(gmm, schedule, x, t)
    w_eff = effective_strength(guidance, t)
    for c in np.unique(labels):
        if c >= gmm.num_classes:
            continue
        rows = np.flatnonzero(labels == c)
        vc = analytic_gmm_velocity(gmm, schedule, x[rows], t[rows], class_components(gmm, c))
        w = w_eff[rows, None]
        out[rows] = w * vc + (1.0 - w) * out[rows]
    return out


def write_samples_csv(path, points: np.ndarray, labels: np.ndarray, seed: int, nfe: int) -> None:
    """Dump samples with header ``x0,x1,...,label,seed,nfe``."""
    points = np.atleast_2d(points)
    header = [f"x{i}" for i in range(points.shape[1])] + ["label", "seed", "nfe"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for p, c in zip(points, labels):
            w.writerow([repr(float(v)) for v in p] + [int(c), seed, nfe])


def read_samples_csv(path):
    """Inverse of :func:`write_samples_csv`; returns ``(points, labels)``."""
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    dim = sum(1 for h in header if h.startswith("x"))
    points = np.array([[float(v) for v in r[:dim]] for r in body]).reshape(-1, dim)
    labels = np.array([int(r[dim]) for r in body], dtype=np.int64)
    return points, labels
