"""Minimizing-movements simulator for anisotropic, inhomogeneous curvature flow."""

from .anisotropy import (
    Anisotropy,
    AnisotropyError,
    DegenerateGradientError,
    EuclideanAnisotropy,
    ReversedAnisotropy,
    RiemannianAnisotropy,
    SmoothedLpAnisotropy,
    SpaceModulatedAnisotropy,
    curvature,
    finsler_reweight,
    numeric_polar,
    unit_ball_volume,
)
from .grid import Grid

__version__ = "0.1.0"
