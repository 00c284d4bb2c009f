"""One-step generative models that learn the solution map of a flow-matching ODE.

Toy-scale laboratory: a numpy reverse-mode tape, the training objectives,
classifier-free guidance in the targets, samplers, and finite-difference
verification against closed-form Gaussian-mixture velocity fields.
"""

from .config import ConfigError, TrainConfig, load_config, parse_config
from .datasets import GmmSpec, preset, sample_data
from .flowmath import LSchedule, NoisingSchedule, SolutionParameterization
from .guidance import GuidanceConfig
from .network import ModelParams, NetworkConfig, forward_solution, predicted_velocity
from .objectives import LossConfig, combined_loss, fm_loss, scm_loss
from .sampler import SampleRequest, multi_step_sample, one_step_sample
from .training import TrainState, train

__version__ = "0.1.0"
