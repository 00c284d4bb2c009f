"""
One-step generation on the eight-Gaussian ring
===============================================

Train a conditional solution model with guidance folded into the targets,
then draw samples with one and two network evaluations and compare them
with fresh data. Run with a step count, e.g. ``python one_step_ring.py 20000``.
"""

import sys

import numpy as np

from solution_flow import TrainConfig, SampleRequest, multi_step_sample, one_step_sample, train
from solution_flow.datasets import sample_data
from solution_flow.metrics import energy_distance
from solution_flow.sampler import write_samples_csv

steps = int(sys.argv[1]) if len(sys.argv) > 1 else 3000

# Same objective as the full run; only the step count is shortened by default.
config = TrainConfig(preset="ring8", steps=steps, log_every=500)
state = train(config)
print(f"trained {state.step} steps, last total loss {state.history[-1]['total']:.4f}")

# Sampling always uses the EMA weights.
params, param = state.ema.shadow, config.solution_param()
gmm = config.dataset()
count = 4000
labels = np.random.default_rng(1).integers(0, gmm.num_classes, count)
data, _ = sample_data(gmm, count, np.random.default_rng(2))

one = one_step_sample(params, param, SampleRequest(count, labels, nfe=1, seed=3))
two = multi_step_sample(params, param, config.noising(), SampleRequest(count, labels, nfe=2, seed=3))
print(f"energy distance  1-NFE {energy_distance(one, data):.4f}   2-NFE {energy_distance(two, data):.4f}")

# Each class should land on its own mode.
nearest = np.argmin(((one[:, None] - gmm.class_means()[None]) ** 2).sum(-1), axis=1)
print(f"nearest-mode accuracy {np.mean(nearest == labels):.4f}")

write_samples_csv("ring_one_step.csv", one, labels, seed=3, nfe=1)
print("samples written to ring_one_step.csv")
