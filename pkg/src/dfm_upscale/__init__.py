"""Block numerical homogenization of 2D discrete fracture-matrix Darcy
models and a convolutional surrogate for the equivalent conductivity tensor."""

__version__ = "0.1.0"
