"""Hybrid bio-hardware neural network toolkit.

Subpackages: biophys (two-compartment cell and culture-network simulation),
varfit (variability transfer via minPreNum), hybrid (constrained
hard-threshold network and training), preprocess (MNIST ingestion and
pooling/binarization), harness (presets, experiment runner, CLI).
"""

from . import biophys, harness, hybrid, preprocess, varfit

__version__ = "0.1.0"
__all__ = ["biophys", "harness", "hybrid", "preprocess", "varfit", "__version__"]
