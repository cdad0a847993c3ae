"""Simulation and verification of sliding-mode control for a viscous
Cahn-Hilliard tumor-growth model coupled to a nutrient equation."""
from . import core, dynamics, elliptic, potentials, sliding
from .core import Grid, ScalarField, TimeConfig, build_grid, l2_norm, sup_norm
from .dynamics import ModelParams, Problem, run
from .potentials import PotentialSpec, logarithmic, obstacle, regular
from .series import COLUMNS, TimeSeries
from .sliding import SlidingCertificate, certificate, compute_constants

__version__ = "0.1.0"

__all__ = [
    "core",
    "dynamics",
    "elliptic",
    "potentials",
    "sliding",
    "Grid",
    "ScalarField",
    "TimeConfig",
    "build_grid",
    "l2_norm",
    "sup_norm",
    "ModelParams",
    "Problem",
    "run",
    "PotentialSpec",
    "logarithmic",
    "obstacle",
    "regular",
    "COLUMNS",
    "TimeSeries",
    "SlidingCertificate",
    "certificate",
    "compute_constants",
]
