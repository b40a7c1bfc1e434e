"""Dense complex linear-algebra kernel shared by all modules.

Hermitian eigendecompositions, isometric factorization, anti-Hermitian matrix
exponentials, regularized geometric sums of transfer maps, and the rank-3
tensor <-> matrix reshapes used by the MPS machinery.  Everything here is a
pure function of its inputs.
"""

import numpy as np
import scipy.linalg as sla
from scipy.sparse.linalg import LinearOperator, gmres

from .tolerances import DEFAULT, Tolerances


class LinalgError(ValueError):
    """Raised when an input violates a contract (non-Hermitian, rank-deficient, ...)."""


def ensure_finite(M, name="matrix"):
    M = np.asarray(M)
    if not np.all(np.isfinite(M.view(np.float64) if np.iscomplexobj(M) else M)):
        raise LinalgError(f"{name} contains non-finite entries")
    return M


def _norm_estimate(M):
    # Frobenius norm: cheap upper bound on the operator norm, adequate for
    # relative tolerance checks.
    return max(np.linalg.norm(M), 1e-300)


def hermiticity_defect(M):
    """Max-entry asymmetry |M - M^dag| relative to the norm of M."""
    return np.abs(M - M.conj().T).max() / _norm_estimate(M)


def eigh(M, tol: Tolerances = DEFAULT):
    """Eigendecomposition of a Hermitian matrix, eigenvalues ascending.

    Rejects inputs whose asymmetry exceeds ``tol.hermiticity`` (relative,
    operator-norm estimate), reporting the defect.
    """
    M = ensure_finite(M)
    defect = hermiticity_defect(M)
    if defect > tol.hermiticity:
        raise LinalgError(f"matrix is not Hermitian: max asymmetry {defect:.3e} "
                          f"exceeds {tol.hermiticity:.1e}")
    w, V = np.linalg.eigh(M)
    return w, V


def qr_isometry(M, tol: Tolerances = DEFAULT):
    """Isometric factor of a full-column-rank n x p matrix (n >= p).

    Returns W with W^dag W = 1 and col span(W) = col span(M).  The phase of
    each column is fixed (R diagonal real positive) so the result is a
    deterministic function of M.
    """
    M = ensure_finite(np.asarray(M, dtype=complex))
    n, p = M.shape
    if n < p:
        raise LinalgError(f"expected n >= p, got shape {M.shape}")
    Q, R = sla.qr(M, mode="economic")
    diag = np.abs(np.diagonal(R))
    if diag.min() <= max(n, p) * np.finfo(float).eps * max(diag.max(), 1e-300):
        raise LinalgError("rank-deficient input to qr_isometry")
    phases = np.diagonal(R) / diag
    return Q * phases[np.newaxis, :]


def expm_antihermitian(Q, scale=1.0, tol: Tolerances = DEFAULT):
    """exp(scale * Q) for anti-Hermitian Q, unitary to round-off.

    Computed through the Hermitian eigendecomposition of -iQ, so the result
    is exactly a unitary conjugation of a diagonal phase matrix.
    """
    Q = np.asarray(Q, dtype=complex)
    defect = np.abs(Q + Q.conj().T).max() / _norm_estimate(Q) if Q.size else 0.0
    if Q.size and np.abs(Q).max() > 0 and defect > tol.hermiticity:
        raise LinalgError(f"matrix is not anti-Hermitian: defect {defect:.3e}")
    if scale == 0.0 or np.abs(Q).max() == 0.0:
        return np.eye(Q.shape[0], dtype=complex)
    lam, V = np.linalg.eigh(-1j * Q)
    return (V * np.exp(1j * scale * lam)[np.newaxis, :]) @ V.conj().T


class GeometricSumError(RuntimeError):
    """Non-convergence of the regularized geometric-sum solver."""

    def __init__(self, residual, tol):
        super().__init__(f"geometric-sum iteration did not reach tol {tol:.1e}; "
                         f"final residual {residual:.3e}")
        self.residual = residual


def solve_regularized_geometric(apply_E, rank1_correction, rhs, tol=None,
                                maxiter=None, x0=None, tols: Tolerances = DEFAULT):
    """Solve (1 - E + |u><v|) x = rhs with E applied matrix-free.

    This is the geometric sum of the transfer map E with the divergent
    leading eigendirection replaced by the rank-1 correction |u><v|
    (<v|.> is the standard complex inner product sum(conj(v) * .)).

    Parameters
    ----------
    apply_E : callable taking and returning a flat complex vector.
    rank1_correction : pair (u, v) of flat vectors, or None for no correction.
    rhs : flat complex vector.
    tol : relative residual target (default ``tols.geometric_solve``).
    x0 : optional warm start.
    """
    tol = tols.geometric_solve if tol is None else tol
    if tol <= 0:
        raise LinalgError("tol must be positive")
    maxiter = tols.geometric_maxiter if maxiter is None else maxiter
    rhs = np.asarray(rhs, dtype=complex).ravel()
    n = rhs.size
    if rank1_correction is None:
        u = v = None
    else:
        u = np.asarray(rank1_correction[0], dtype=complex).ravel()
        v = np.asarray(rank1_correction[1], dtype=complex).ravel()

    def matvec(x):
        y = x - np.asarray(apply_E(x), dtype=complex).ravel()
        if u is not None:
            y = y + u * np.vdot(v, x)
        return y

    if np.linalg.norm(rhs) == 0.0:
        return np.zeros(n, dtype=complex)
    op = LinearOperator((n, n), matvec=matvec, dtype=complex)
    restart = 40
    x, info = gmres(op, rhs, x0=x0, rtol=tol, atol=0.0,
                    restart=restart, maxiter=max(1, maxiter // restart))
    residual = np.linalg.norm(matvec(x) - rhs) / np.linalg.norm(rhs)
    if residual > tol:
        raise GeometricSumError(residual, tol)
    return x


# --- rank-3 tensor reshapes -------------------------------------------------
#
# A uniform MPS tensor A[s, l, r] (physical, left bond, right bond) is viewed
# as the linear map W from the right bond into (physical x left bond); the
# left-gauge condition sum_s A^s{dag} A^s = 1 is exactly W^dag W = 1.

def tensor_to_matrix(A):
    """(d, D, D) tensor -> (d*D, D) matrix, rows grouped physical-major."""
    d, Dl, Dr = A.shape
    return np.ascontiguousarray(A).reshape(d * Dl, Dr)


def matrix_to_tensor(W, d, D):
    """Inverse of :func:`tensor_to_matrix`."""
    if W.shape != (d * D, W.shape[1]):
        raise LinalgError(f"matrix shape {W.shape} incompatible with d={d}, D={D}")
    return np.ascontiguousarray(W).reshape(d, D, W.shape[1])
