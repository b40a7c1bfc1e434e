"""Riemannian toolkit for the Grassmann manifold of isometries.

Points are n x p matrices W with W^dag W = 1, considered up to right basis
rotations.  Tangent vectors are stored in orthogonal-complement coordinates:
Delta = W_perp Z with Z an (n-p) x p matrix, which makes the horizontal-space
condition W^dag Delta = 0 exact.  The metric is the Euclidean one
Re tr(B1^dag B2); retraction follows geodesics exp(a Q) W and transport is
the differentiated retraction exp(a Q) Omega.
"""

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from .linalg import LinalgError, expm_antihermitian, qr_isometry
from .tolerances import DEFAULT


@dataclass
class Isometry:
    """n x p matrix with orthonormal columns, n >= p."""

    W: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=complex)
        n, p = W.shape
        if n < p:
            raise LinalgError(f"isometry needs n >= p, got {W.shape}")
        defect = np.abs(W.conj().T @ W - np.eye(p)).max()
        if defect > DEFAULT.unitarity:
            raise LinalgError(f"W^dag W deviates from identity by {defect:.3e}")
        self.W = W
        self._perp = None

    @property
    def shape(self):
        return self.W.shape

    @property
    def perp(self):
        """Orthogonal complement, cached; [W | W_perp] is unitary."""
        if self._perp is None:
            self._perp = complement(self)
        return self._perp


@dataclass
class Tangent:
    """Tangent vector at ``base`` in complement coordinates Z ((n-p) x p)."""

    base: Isometry
    Z: np.ndarray

    def embedded(self):
        """The ambient n x p representative W_perp Z."""
        return self.base.perp @ self.Z

    def norm(self):
        return float(np.linalg.norm(self.Z))


def complement(iso: Isometry):
    """Orthonormal basis of the orthogonal complement of col(W).

    Computed from the SVD null space of W^dag, so [W | W_perp] is unitary to
    round-off.  For p = n the complement is the empty n x 0 matrix.
    """
    W = iso.W if isinstance(iso, Isometry) else np.asarray(iso, dtype=complex)
    n, p = W.shape
    if n == p:
        return np.zeros((n, 0), dtype=complex)
    perp = sla.null_space(W.conj().T)
    if perp.shape != (n, n - p):
        raise LinalgError(f"complement has wrong dimension {perp.shape}")
    return perp.astype(complex)


def inner(t1: Tangent, t2: Tangent):
    """Euclidean metric Re tr(Z1^dag Z2); bases must coincide."""
    if t1.base is not t2.base and not np.array_equal(t1.base.W, t2.base.W):
        raise LinalgError("tangent vectors live at different base points")
    return float(np.tensordot(t1.Z.conj(), t2.Z, axes=2).real)


def project(iso: Isometry, Y):
    """Tangent projection of an ambient n x p matrix: Z = W_perp^dag Y.

    The embedded representative is (1 - W W^dag) Y.
    """
    Y = np.asarray(Y, dtype=complex)
    if Y.shape != iso.shape:
        raise LinalgError(f"shape mismatch {Y.shape} vs {iso.shape}")
    return Tangent(base=iso, Z=iso.perp.conj().T @ Y)


def _geodesic_generator(t: Tangent):
    """Q = W_perp Z W^dag - W Z^dag W_perp^dag (anti-Hermitian)."""
    W, perp = t.base.W, t.base.perp
    B = perp @ t.Z
    return B @ W.conj().T - W @ B.conj().T


def retract(iso: Isometry, t: Tangent, step: float):
    """Geodesic retraction exp(step * Q) W; re-orthonormalized to round-off."""
    if step == 0.0 or t.norm() == 0.0:
        return Isometry(W=iso.W.copy())
    U = expm_antihermitian(_geodesic_generator(t), step)
    return Isometry(W=qr_isometry(U @ iso.W))


def transport(iso: Isometry, direction: Tangent, omega: Tangent, step: float,
              target: Isometry = None):
    """Differentiated-retraction transport of ``omega`` along ``direction``.

    Returns the tangent at retract(iso, direction, step) whose embedded form
    is exp(step Q) W_perp Z_omega, re-expressed (and re-projected, to kill
    round-off drift) in the new point's complement basis.
    """
    if target is None:
        target = retract(iso, direction, step)
    if step == 0.0 or direction.norm() == 0.0:
        return project(target, omega.embedded())
    U = expm_antihermitian(_geodesic_generator(direction), step)
    return project(target, U @ omega.embedded())
