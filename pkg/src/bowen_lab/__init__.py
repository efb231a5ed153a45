"""Numerical laboratory for Bowen balls, linearizations and dominated splittings
on unstable leaves of hyperbolic maps."""

from . import bowen, charts, holonomy, linalg, linearization, rng, splitting, systems
from .charts import Atlas, UnstableChart, hat_f, local_trace, make_chart
from .errors import BowenLabError
from .systems import cat, make_system, pcat, prod4, sample_lambda, solenoid

__all__ = [
    "Atlas",
    "BowenLabError",
    "UnstableChart",
    "bowen",
    "cat",
    "charts",
    "hat_f",
    "holonomy",
    "linalg",
    "linearization",
    "local_trace",
    "make_chart",
    "make_system",
    "pcat",
    "prod4",
    "rng",
    "sample_lambda",
    "solenoid",
    "splitting",
    "systems",
]

__version__ = "0.1.0"
