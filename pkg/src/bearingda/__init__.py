"""Synthetic-to-real domain adaptation for bearing fault diagnosis.

Modules:

- ``siggen``: pulse-train fault synthesis on healthy carriers
- ``dsp``: envelope spectra on a shaft-order axis
- ``tensor``: small reverse-mode autodiff engine, Adam, checkpoints
- ``model``: 1-D CNN feature extractor, classifier and domain discriminator
- ``adapt``: source-only, DANN, conditional and mixup-augmented conditional training
- ``metrics``: imbalance-aware scores
- ``datastore``: segmentation, healthy split, imbalance protocol, containers
"""
from .errors import (BearingDAError, DegenerateInputError, FormatError, ParameterError, ShapeError,
                     StateError)
from .segment import DomainTag, FaultClass, Segment

__version__ = "0.1.0"

__all__ = ["BearingDAError", "DegenerateInputError", "FormatError", "ParameterError", "ShapeError",
           "StateError", "DomainTag", "FaultClass", "Segment", "__version__"]
