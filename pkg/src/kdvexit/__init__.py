"""Exit-time laboratory for the KdV equation with small additive colored noise."""

__version__ = "0.1.0"
