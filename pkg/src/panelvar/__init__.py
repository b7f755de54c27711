"""Panel quantile regression for portfolio Value-at-Risk."""

__version__ = "0.1.0"
