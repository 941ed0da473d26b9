"""Excursion sets of Poisson shot noise fields: exact polyconvex geometry and Monte Carlo pipelines."""

from .geometry import ConvexBody, HalfPlane, IntrinsicVolumes
from .process import KernelSpec, MarkDistribution, MarkedPoint, ProcessConfig, Sample
from .excursion import ExactEngineOverflow, ExcursionRegion
from .functionals import GeometricFunctional, RasterConfig

__all__ = [
    "ConvexBody", "HalfPlane", "IntrinsicVolumes", "KernelSpec", "MarkDistribution", "MarkedPoint",
    "ProcessConfig", "Sample", "ExactEngineOverflow", "ExcursionRegion", "GeometricFunctional",
    "RasterConfig",
]
