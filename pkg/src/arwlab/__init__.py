"""Activated random walk on the line and the layer-percolation process that encodes it."""

from . import arw_engine, branching, correspondence, experiments, instructions, layer_percolation, odometer_core, stats
from .stats import DensityEstimate

__version__ = "0.1.0"

__all__ = [
    "arw_engine",
    "branching",
    "correspondence",
    "experiments",
    "instructions",
    "layer_percolation",
    "odometer_core",
    "stats",
    "DensityEstimate",
]
