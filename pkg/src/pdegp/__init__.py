"""
Bayesian inference of PDE parameters with linear-operator Gaussian processes.

The latent field ``y(x, t)`` has a squared-exponential prior and the forcing
``f = -D y_xx + alpha y_t + beta y`` inherits a joint Gaussian prior through
the operator.  Noisy observations of either field constrain ``(D, alpha,
beta)`` and the kernel hyperparameters, which are sampled with Hamiltonian
Monte Carlo.
"""

__version__ = "0.1.0"

from .errors import (  # noqa: E402
    AdaptationError,
    ConfigError,
    DatasetParseError,
    DatasetValidationError,
    IllConditionedKernelError,
    InvalidInputError,
    NegativeVarianceError,
    PdeGpError,
)
from .kernels import PARAM_NAMES, KernelHypers, PdeParams, assemble_joint  # noqa: E402
from .gp import (  # noqa: E402
    LogPosterior,
    NoiseModel,
    Observations,
    fit_map,
    log_marginal_likelihood,
    predict,
    predict_y_from_f,
)
from .hmc import HmcConfig, run_chain, run_chains, summarize  # noqa: E402
from .data import Dataset, GridSpec, generate_simulation, load_dataset, save_dataset  # noqa: E402

__all__ = [
    "__version__",
    "PARAM_NAMES",
    "PdeParams",
    "KernelHypers",
    "assemble_joint",
    "Observations",
    "NoiseModel",
    "LogPosterior",
    "log_marginal_likelihood",
    "fit_map",
    "predict",
    "predict_y_from_f",
    "HmcConfig",
    "run_chain",
    "run_chains",
    "summarize",
    "Dataset",
    "GridSpec",
    "generate_simulation",
    "load_dataset",
    "save_dataset",
    "PdeGpError",
    "InvalidInputError",
    "IllConditionedKernelError",
    "NegativeVarianceError",
    "AdaptationError",
    "DatasetParseError",
    "DatasetValidationError",
    "ConfigError",
]
