"""Neumann spectra of spherical domains and bifurcation of critical cone solutions."""

__version__ = "0.1.0"
