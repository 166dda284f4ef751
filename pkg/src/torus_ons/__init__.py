"""Orthonormal Strichartz experiments on the torus: extension operators, mixed norms,
Schatten-class sandwiches and a periodic Hartree integrator."""

__version__ = "0.1.0"
