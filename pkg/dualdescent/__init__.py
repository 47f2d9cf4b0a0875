"""dualdescent - dual-descent augmented Lagrangian methods with runtime certificates."""

__version__ = "0.1.0"
