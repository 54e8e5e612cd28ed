"""Monte Carlo laboratory for critical biased walks on heavy-tailed Galton-Watson forests."""

from .heavy_tail import (
    OffspringLaw,
    PowerTail,
    TailEstimate,
    critical_offspring_law,
    hill_estimate,
    make_offspring_law,
    offspring_law_from_pmf,
    sample_offspring,
    scale_seq,
    size_biased,
)
from .gw_forest import LazyForest, VertexId
from .walk import MarkedForest, Trajectory, run_walk

__all__ = [
    "OffspringLaw",
    "PowerTail",
    "TailEstimate",
    "critical_offspring_law",
    "hill_estimate",
    "make_offspring_law",
    "offspring_law_from_pmf",
    "sample_offspring",
    "scale_seq",
    "size_biased",
    "LazyForest",
    "VertexId",
    "MarkedForest",
    "Trajectory",
    "run_walk",
]

__version__ = "0.1.0"
