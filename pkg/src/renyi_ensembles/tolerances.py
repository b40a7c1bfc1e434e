"""Central numerical tolerances shared by all modules."""

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    """Default tolerances; every hard-coded threshold in the package lives here.

    Attributes
    ----------
    hermiticity : relative asymmetry accepted before a matrix is rejected
        as non-Hermitian (operator-norm estimate).
    isometry : allowed deviation of W^dag W from the identity.
    unitarity : allowed deviation of a computed matrix exponential from unitarity.
    geometric_solve : relative residual target for regularized geometric sums.
    geometric_maxiter : iteration cap for the GMRES-style solver.
    fixed_point : residual target for transfer-matrix fixed points.
    eig_arnoldi : tolerance handed to ARPACK for leading eigenpairs.
    eig_maxiter : ARPACK iteration cap.
    spectral_gap : minimum acceptable leading-eigenvalue gap in gauge fixing.
    eigenvalue_clamp : probabilities below this are treated as exact zeros in entropies.
    psd_slack : how negative an eigenvalue may be before positivity is rejected.
    """

    hermiticity: float = 1e-12
    isometry: float = 1e-12
    unitarity: float = 1e-10
    geometric_solve: float = 1e-10
    geometric_maxiter: int = 2000
    fixed_point: float = 1e-11
    eig_arnoldi: float = 1e-11
    eig_maxiter: int = 1000
    spectral_gap: float = 1e-10
    eigenvalue_clamp: float = 1e-15
    psd_slack: float = 1e-12


DEFAULT = Tolerances()
