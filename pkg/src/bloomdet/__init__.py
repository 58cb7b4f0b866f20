"""Sparse pixel-wise bloom detection in large multispectral rasters.

A fully convolutional multi-scale detector trained under extreme class
imbalance, with cascaded online hard example mining and an adversarially
trained hard-negative generator, plus sliding-window inference and
threshold-free evaluation.
"""

__version__ = "0.1.0"

from . import errors

__all__ = ["errors", "__version__"]
