"""Finite-group equivariant CNNs: group arithmetic, representations,
intertwiner solvers, steerable and group-convolutional layers."""

__version__ = "0.1.0"
