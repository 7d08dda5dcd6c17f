"""Depth-aware salient object detection trained with auxiliary depth, edge and
multi-scale supervision, inferring from RGB alone."""

from uta.core import Config

__version__ = "0.1.0"

__all__ = ["Config", "__version__"]
