"""Simulation and statistical verification for degenerate SDEs
``dZ = A Z dt + b(Z) dt + B(Z) dW`` whose noise acts on the first ``d0``
coordinates only."""

__version__ = "0.1.0"
