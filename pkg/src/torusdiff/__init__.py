"""Nonparametric drift and diffusion estimation for SDEs on the flat torus.

Simulate a periodic Itô diffusion, fit residual ReLU networks to the drift
and then to the diffusion matrix from one discretely observed trajectory,
and measure how the error falls with the number of observations.
"""

from .errors import (
    ConfigError,
    EmptyDatasetError,
    InsufficientDataError,
    IntegrationDivergedError,
    InvalidInputError,
    InvalidStrideError,
    TorusDiffError,
    TrainingDivergedError,
    UndefinedCorrelationError,
)
from .estimation import (
    EstimatorPair,
    build_diffusion_dataset,
    build_drift_dataset,
    evaluate_population_loss,
    pack_symmetric,
    run_algorithm1,
    unpack_symmetric,
)
from .harness import InstanceConfig, SweepResult, fit_rate, parse_config, run_instance, sweep
from .models import SdeModel, make_constant_model, make_example_model, make_model
from .nn import Network, NetworkArch, TrainConfig, init_network, suggest_network_size
from .simulate import ObservationSet, Trajectory, simulate, subsample
from .torus import periodic_eval, sample_boundary_pairs, wrap

__version__ = "0.1.0"
