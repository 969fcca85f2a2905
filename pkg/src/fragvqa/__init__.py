"""Fragment-based no-reference video quality assessment.

The package samples raw-resolution mini-patches on a uniform grid,
splices them into small fragment tensors, scores them with a
fragment-aware video transformer, and evaluates predictions against
subjective labels with standard rank and linear correlation metrics.
"""

__version__ = "0.1.0"

from .errors import FragVqaError  # noqa: F401
