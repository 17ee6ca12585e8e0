"""Video-based engagement measurement from per-frame affect and behavioral
features: ingestion, feature engineering, LSTM/TCN sequence models, ordinal
classification, training, evaluation, and a synthetic benchmark generator."""

from .errors import EngageError

__version__ = "0.1.0"

__all__ = ["EngageError", "__version__"]
