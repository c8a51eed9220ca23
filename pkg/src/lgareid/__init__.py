"""Local graph aggregation network with class-balanced loss for re-identification."""

__version__ = "0.1.0"
