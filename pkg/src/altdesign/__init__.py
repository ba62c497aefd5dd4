"""Bayesian design of experiments under an alternative (designer) model.

Designs are chosen to minimise the expected loss of inferences made with a
*fitted* model, where the expectation is taken under a possibly different
*designer* model. The package provides closed-form objectives for normal
linear models, nested Monte Carlo estimators for general models, large-sample
approximations, and a grid coordinate-exchange optimiser.
"""

__version__ = "0.1.0"

from .core import (  # noqa: E402
    ENTROPY,
    PSE,
    SE,
    SI,
    TV,
    Compatibility,
    ConjugateNormalModel,
    Design,
    ExpectedLossEstimate,
    LossKind,
    LossSpec,
    Model,
    ModelPair,
    efficiency,
    mc_external_loss,
    mc_internal_loss,
    snis_posterior_moments,
)
from .errors import AltDesignError, ConfigError, NumericalError  # noqa: E402
from .numerics import RandomStream  # noqa: E402
from .optimize import ExchangeConfig, coordinate_exchange, multistart  # noqa: E402

__all__ = [
    "__version__",
    "Design",
    "LossKind",
    "LossSpec",
    "SI",
    "SE",
    "ENTROPY",
    "TV",
    "PSE",
    "Model",
    "ModelPair",
    "Compatibility",
    "ConjugateNormalModel",
    "ExpectedLossEstimate",
    "mc_internal_loss",
    "mc_external_loss",
    "snis_posterior_moments",
    "efficiency",
    "RandomStream",
    "ExchangeConfig",
    "coordinate_exchange",
    "multistart",
    "AltDesignError",
    "ConfigError",
    "NumericalError",
]
