"""Lane-change intention and insertion-motion prediction with a mixture density network.

The network scores five insertion areas around a vehicle and, per area, a
bivariate Gaussian mixture over insertion distance and time to lane change.
"""

__version__ = "0.1.0"

from .errors import InputError, NumericError, SimpError, StructuralError, TrainingError
from .features import FEATURE_NAMES, extract_features, merge_intentions
from .mdn import MixtureParams, constrain, simp_loss
from .trainer import Model, TrainConfig, predict, train

__all__ = [
    "FEATURE_NAMES", "InputError", "MixtureParams", "Model", "NumericError", "SimpError",
    "StructuralError", "TrainConfig", "TrainingError", "constrain", "extract_features",
    "merge_intentions", "predict", "simp_loss", "train",
]
