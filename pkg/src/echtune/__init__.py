"""Between-shot ECH tuning against tearing instabilities.

Synthetic plant -> preprocessing -> two-timescale surrogates (recurrent
probabilistic dynamics model + instability classifier -> rollout prior ->
exact GP) -> contextual acquisition -> offline replay benchmark and a
between-shot operator service.
"""

from .profiles import EchParams, fit_ech_gaussian, gaussian_profile, radial_grid
from .records import ShotSummary, Trajectory, TrajectorySet, read_gp_dataset, write_gp_dataset

__all__ = [
    "EchParams",
    "ShotSummary",
    "Trajectory",
    "TrajectorySet",
    "fit_ech_gaussian",
    "gaussian_profile",
    "radial_grid",
    "read_gp_dataset",
    "write_gp_dataset",
]

__version__ = "0.1.0"
