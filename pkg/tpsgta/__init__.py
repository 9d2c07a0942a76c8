"""
Temporal attention blocks (GTA, TPS) for multivariate time-series
classification, on a small numpy autodiff core.
"""
__version__ = "0.1.0"
