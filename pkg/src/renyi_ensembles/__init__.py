"""Maximal Renyi ensembles for spin chains.

Exact construction by diagonalization, variational uniform-MPS purifications
optimized on the Grassmann manifold, and a dense nonlinear fixed-point
evolution, plus closed-form Gaussian density-of-states analytics.
"""

__version__ = "0.1.0"
