"""Online multi-object tracking with a dual-granularity learned motion predictor."""

__version__ = "0.1.0"
