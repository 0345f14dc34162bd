"""Structure-preserving Nernst-Planck-Navier-Stokes simulator."""

__version__ = "0.1.0"
