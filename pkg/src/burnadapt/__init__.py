"""burnadapt: parameter-efficient bi-temporal burned-area segmentation,
self-contained at desk scale."""

from .autodiff import Parameter, Rng, Tensor
from .errors import (BurnAdaptError, ConfigurationError, ContractError,
                     DataError, DimensionError, FormatError, TrainingDiverged)

__version__ = "0.1.0"

__all__ = [
    "Tensor", "Parameter", "Rng",
    "BurnAdaptError", "DimensionError", "ConfigurationError", "DataError",
    "FormatError", "ContractError", "TrainingDiverged",
    "__version__",
]
