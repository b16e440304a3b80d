"""Numerical lab for the membrane-potential density of a leaky integrate-and-fire
neuron with reset: Monte Carlo paths, a Volterra first-passage solver, the
renewal series of sub-densities and a direct Fokker-Planck solver."""

__version__ = "0.1.0"

from . import firstpassage, fpe, kernel, mc, subdensity  # noqa: E402
from ._backend import backend_name, set_backend  # noqa: E402
from .kernel import DensityField, Grid1D, TimeGrid, TimeSeries  # noqa: E402

__all__ = [
    "DensityField",
    "Grid1D",
    "TimeGrid",
    "TimeSeries",
    "backend_name",
    "firstpassage",
    "fpe",
    "kernel",
    "mc",
    "set_backend",
    "subdensity",
]
