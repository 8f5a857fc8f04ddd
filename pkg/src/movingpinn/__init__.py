"""Neural PDE solver with adaptive moving collocation samples."""

__version__ = "0.1.0"
