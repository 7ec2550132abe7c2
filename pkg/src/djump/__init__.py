"""Quantum-jump simulation of two dipole-dipole coupled, laser-driven three-level atoms."""

__version__ = "0.1.0"
