"""Training loop, random-stream bookkeeping and metrics logging."""

from __future__ import annotations

import csv
import logging
import os
import time
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from . import gradtape as gt
from .config import TrainConfig
from .datasets import sample_data
from .flowmath import LogitNormalSampler, sample_tls
from .guidance import guided_batch_prepare
from .metrics import energy_distance
from .network import EmaParams, ModelParams, ema_update, init_params
from .objectives import Batch, NonFiniteLossError, combined_loss
from .optim import Adam
from .sampler import SampleRequest, analytic_gmm_velocity, analytic_guided_velocity, one_step_sample
from .verify import make_probe_grid, residual_report

log = logging.getLogger(__name__)

# Each role draws from its own stream so that toggling one feature leaves the others untouched.
STREAM_ROLES = ("init", "data", "noise", "fm_t", "scm_t", "scm_s", "dropout")

METRIC_COLUMNS = ("step", "fm_loss", "scm_loss", "total", "residual_median", "energy_distance")

# Fixed seeds for periodic evaluation; never derived from training streams.
EVAL_SEED = 20251
EVAL_COUNT = 2000


class TrainingError(RuntimeError):
    def __init__(self, step: int, cause: Exception, dump_path: str | None = None):
        self.step = step
        self.dump_path = dump_path
        msg = f"training aborted at step {step}: {cause}"
        if dump_path:
            msg += f" (sub-batch dumped to {dump_path})"
        super().__init__(msg)


@dataclass
class TrainState:
    config: TrainConfig
    step: int
    params: ModelParams
    ema: EmaParams
    optimizer: Adam
    streams: dict[str, np.random.Generator]
    history: list[dict] = field(default_factory=list)


def make_streams(seed: int) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(seed).spawn(len(STREAM_ROLES))
    return {role: np.random.Generator(np.random.PCG64(ss)) for role, ss in zip(STREAM_ROLES, children)}


def init_state(config: TrainConfig) -> TrainState:
    streams = make_streams(config.seed)
    params = init_params(config.network_config(), streams["init"])
    opt = Adam(config.lr, config.beta1, config.beta2, config.adam_eps)
    for name, arr in params.arrays.items():
        opt.m[name] = np.zeros_like(arr)
        opt.v[name] = np.zeros_like(arr)
    return TrainState(config, 0, params, EmaParams.from_live(params, config.ema_decay), opt, streams)


def draw_batch(config: TrainConfig, streams, k: int) -> Batch:
    """Data, noise and times for step ``k``; guidance targets are attached separately."""
    gmm = config.dataset()
    B = config.batch_size
    x0, labels = sample_data(gmm, B, streams["data"])
    if not config.conditional:
        labels = np.full(B, gmm.num_classes)
    x1 = streams["noise"].standard_normal(x0.shape)
    loss_cfg = config.loss_config()
    n_fm = loss_cfg.split(B)
    t_fm = LogitNormalSampler(config.mu_fm, config.sigma_fm, streams["fm_t"]).sample(n_fm)
    t, l, s = sample_tls(LogitNormalSampler(config.mu_t, config.sigma_t, streams["scm_t"]),
                         LogitNormalSampler(config.mu_s, config.sigma_s, streams["scm_s"]),
                         loss_cfg.lschedule, k, max(config.steps, 1), B - n_fm)
    return Batch(x0, x1, labels, n_fm, t_fm, t, l, s)


def prepare_batch(state: TrainState, k: int) -> Batch:
    cfg = state.config
    batch = draw_batch(cfg, state.streams, k)
    if cfg.conditional:
        batch = guided_batch_prepare(cfg.guidance(), batch, state.params, cfg.noising(),
                                     cfg.solution_param(), state.streams["dropout"])
    return batch


def loss_and_grads(params: ModelParams, config: TrainConfig, batch: Batch):
    tape = gt.Tape()
    watched = params.watch(tape)
    out = combined_loss(watched, config.loss_config(), batch)
    grads = tape.backward(out.loss)
    return out, {name: grads[v] for name, v in watched.arrays.items()}


def _dump_batch(path: str | None, step: int, batch: Batch) -> str | None:
    if not path:
        return None
    dump = f"{path}.step{step}.npz"
    np.savez(dump, x0=batch.x0, x1=batch.x1, labels=batch.labels, t_fm=batch.t_fm, t=batch.t,
             l=batch.l, s=batch.s,
             velocity=np.zeros(0) if batch.velocity is None else batch.velocity)
    return dump


def train_step(state: TrainState) -> dict:
    """One optimizer + EMA update; returns the loss row for this step."""
    k = state.step
    cfg = state.config
    batch = prepare_batch(state, k)
    try:
        out, grads = loss_and_grads(state.params, cfg, batch)
        if not np.isfinite(out.value):
            raise NonFiniteLossError("total", -1)
    except NonFiniteLossError as exc:
        raise TrainingError(k, exc, _dump_batch(cfg.log or cfg.checkpoint, k, batch)) from exc
    state.optimizer.step(state.params.arrays, grads, cfg.learning_rate(k))
    if not state.params.is_finite():
        raise TrainingError(k, FloatingPointError("non-finite parameters after update"),
                            _dump_batch(cfg.log or cfg.checkpoint, k, batch))
    ema_update(state.ema, state.params)
    state.step += 1
    return {
        "step": state.step,
        "fm_loss": out.fm.value if out.fm is not None else float("nan"),
        "scm_loss": out.scm.value if out.scm is not None else float("nan"),
        "total": out.value,
    }


# -- evaluation helpers --------------------------------------------------------


def true_velocity_fn(config: TrainConfig, labels=None) -> Callable:
    """Analytic field the model is meant to solve (guided when training is conditional)."""
    gmm, sched = config.dataset(), config.noising()
    if not config.conditional:
        return lambda x, t: analytic_gmm_velocity(gmm, sched, x, t)
    g = config.guidance()
    return lambda x, t: analytic_guided_velocity(gmm, sched, g, x, t, labels)


def eval_probe_grid(config: TrainConfig, count: int = 1024, seed: int = EVAL_SEED):
    rng = np.random.default_rng(seed)
    gmm = config.dataset()
    x0, labels = sample_data(gmm, count, rng)
    if not config.conditional:
        labels = np.full(count, gmm.num_classes)
    x1 = rng.standard_normal(x0.shape)
    return make_probe_grid(x0, labels, x1, rng, config.noising())


def median_residual(params: ModelParams, config: TrainConfig, grid=None, h: float = 1e-3) -> float:
    grid = eval_probe_grid(config) if grid is None else grid
    vf = true_velocity_fn(config, grid.labels)
    return residual_report(params, config.solution_param(), vf, grid.x, grid.t, grid.s,
                           grid.labels, h).median


def sample_labels(config: TrainConfig, count: int, seed: int) -> np.ndarray:
    gmm = config.dataset()
    if not config.conditional:
        return np.full(count, gmm.num_classes)
    rng = np.random.default_rng(seed)
    return gmm.classes[rng.choice(len(gmm.weights), size=count, p=gmm.weights)]


def one_step_energy(params: ModelParams, config: TrainConfig, count: int = EVAL_COUNT,
                    seed: int = EVAL_SEED) -> float:
    labels = sample_labels(config, count, seed + 1)
    gen = one_step_sample(params, config.solution_param(), SampleRequest(count, labels, 1, seed + 2))
    data, _ = sample_data(config.dataset(), count, np.random.default_rng(seed + 3))
    return energy_distance(gen, data)


# -- logging -------------------------------------------------------------------


def _fmt(v) -> str:
    if isinstance(v, float):
        return "" if np.isnan(v) else repr(v)
    return str(v)


class MetricsLog:
    """Append-only CSV of deterministic metrics; wall-clock goes to a ``.timing.csv`` sidecar."""

    def __init__(self, path: str | None):
        self.path = path
        if path and not os.path.exists(path):
            with open(path, "w", newline="") as fh:
                csv.writer(fh).writerow(METRIC_COLUMNS)
            with open(path + ".timing.csv", "w", newline="") as fh:
                csv.writer(fh).writerow(("step", "wall_clock"))

    def append(self, row: dict, wall: float) -> None:
        if not self.path:
            return
        line = [_fmt(row.get(c, float("nan"))) for c in METRIC_COLUMNS]
        with open(self.path, "a", newline="") as fh:
            csv.writer(fh).writerow(line)
            fh.flush()
        with open(self.path + ".timing.csv", "a", newline="") as fh:
            csv.writer(fh).writerow((row["step"], f"{wall:.6f}"))


def train(config: TrainConfig, state: TrainState | None = None, until: int | None = None,
          callback: Callable[[TrainState], None] | None = None) -> TrainState:
    """Run steps ``state.step .. until`` (default: all ``config.steps``).

    ``callback`` fires after every step, e.g. to snapshot intermediate models.
    Checkpoints are written every ``checkpoint_every`` steps and at the end when
    ``config.checkpoint`` is set.
    """
    from .checkpoint import save_checkpoint

    state = init_state(config) if state is None else state
    until = config.steps if until is None else min(until, config.steps)
    logger = MetricsLog(config.log or None)
    grid = eval_probe_grid(config) if config.eval_every else None
    t0 = time.perf_counter()
    while state.step < until:
        row = train_step(state)
        k = state.step
        if config.eval_every and (k % config.eval_every == 0 or k == config.steps):
            row["residual_median"] = median_residual(state.ema.shadow, config, grid)
            row["energy_distance"] = one_step_energy(state.ema.shadow, config)
        if config.log_every and (k % config.log_every == 0 or k == config.steps):
            logger.append(row, time.perf_counter() - t0)
            state.history.append(row)
            log.debug("step %d total %.5g", k, row["total"])
        if config.checkpoint and config.checkpoint_every and k % config.checkpoint_every == 0:
            save_checkpoint(state, config.checkpoint)
        if callback is not None:
            callback(state)
    if config.checkpoint:
        save_checkpoint(state, config.checkpoint)
    return state
