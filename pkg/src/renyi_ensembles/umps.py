"""Uniform MPS purification machinery.

The state is a translation-invariant purification: one rank-3 tensor A with
a combined physical leg (system x ancilla) and two bond legs, kept in left
gauge (sum_s A^s{dag} A^s = 1) with the right transfer fixed point varrho
cached.  Tracing the ancilla yields a positive density operator by
construction.  This module computes the energy density, the purity per site
(leading eigenvalue of the four-layer transfer operator, O(D^5) per
matrix-free application), the half-infinite Hamiltonian environments through
regularized geometric sums, and the derivatives of energy and purity with
respect to the conjugated tensor.

Index conventions: A[s, l, r] with s = sys * d_anc + anc; matrices of bond
indices are ordered [ket, bra]; the four-layer vectors are ordered
(ket1, bra2, ket3, bra4) where layers 2k share the system leg with layer
2k-1 (mod 4) and the ancilla leg with their ket neighbor.
"""

import json
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import LinearOperator, eigs

from .linalg import (GeometricSumError, matrix_to_tensor, qr_isometry,
                     solve_regularized_geometric, tensor_to_matrix)
from .tolerances import DEFAULT


class GaugeError(RuntimeError):
    pass


@dataclass
class PurificationMPS:
    """Left-canonical purification tensor with cached right fixed point."""

    d_sys: int
    d_anc: int
    A: np.ndarray          # (d_sys * d_anc, D, D)
    rho: np.ndarray        # right fixed point, (D, D), Hermitian PSD, trace 1

    @property
    def d(self):
        return self.d_sys * self.d_anc

    @property
    def D(self):
        return self.A.shape[1]

    @property
    def W(self):
        """The isometric map view used for manifold optimization."""
        return tensor_to_matrix(self.A)

    @property
    def A4(self):
        """(d_sys, d_anc, D, D) view."""
        return self.A.reshape(self.d_sys, self.d_anc, self.D, self.D)

    def gauge_residual(self):
        W = self.W
        return np.abs(W.conj().T @ W - np.eye(self.D)).max()


# --- transfer operators -------------------------------------------------------

def transfer_right(A, x):
    """E(x) = sum_s A^s x A^s{dag}, x ordered [ket, bra]."""
    return np.einsum("sab,bc,sdc->ad", A, x, A.conj(), optimize=True)


def transfer_left(A, y):
    """Adjoint action: y' = sum_s A^s{T} ... , i.e. contraction from the left."""
    return np.einsum("ac,sab,scd->bd", y, A, A.conj(), optimize=True)


def _dense_transfer(A, side):
    d, D, _ = A.shape
    if side == "right":
        T = np.einsum("sab,scd->acbd", A, A.conj(), optimize=True)
    else:
        T = np.einsum("sab,scd->bdac", A, A.conj(), optimize=True)
    return T.reshape(D * D, D * D)


def _leading_pair(apply_op, n, v0=None, need_second=False, dense_matrix=None):
    """Leading eigenpair (optionally the two largest) of a linear map."""
    if dense_matrix is not None or n <= 16:
        if dense_matrix is None:
            basis = np.eye(n, dtype=complex)
            dense_matrix = np.stack([apply_op(basis[:, k]) for k in range(n)], axis=1)
        w, V = np.linalg.eig(dense_matrix)
        order = np.argsort(-np.abs(w))
        lam2 = w[order[1]] if (need_second and n > 1) else None
        return w[order[0]], V[:, order[0]], lam2
    if v0 is None:
        v0 = np.ones(n, dtype=complex) / np.sqrt(n)
    k = 2 if need_second else 1
    op = LinearOperator((n, n), matvec=apply_op, dtype=complex)
    w, V = eigs(op, k=k, which="LM", v0=v0, tol=DEFAULT.eig_arnoldi,
                maxiter=DEFAULT.eig_maxiter, ncv=min(n, max(20, 2 * k + 10)))
    order = np.argsort(-np.abs(w))
    lam2 = w[order[1]] if need_second else None
    return w[order[0]], V[:, order[0]], lam2


def right_fixed_point(A, v0=None):
    """(leading eigenvalue, Hermitized trace-1 right fixed point)."""
    D = A.shape[1]
    dense = _dense_transfer(A, "right") if D <= 6 else None
    lam, v, _ = _leading_pair(lambda x: transfer_right(A, x.reshape(D, D)).ravel(),
                              D * D, v0=v0, dense_matrix=dense)
    rho = v.reshape(D, D)
    rho = (rho + rho.conj().T) / 2.0
    tr = np.trace(rho).real
    if abs(tr) < 1e-14:
        raise GaugeError("right fixed point has vanishing trace")
    rho = rho / tr
    return lam, rho


def random_purification(D, d_sys=2, d_anc=None, seed=0):
    """Gaussian random tensor, isometrized (hence left-canonical), per seed."""
    d_anc = d_sys if d_anc is None else d_anc
    rng = np.random.default_rng(seed)
    d = d_sys * d_anc
    M = rng.standard_normal((d * D, D)) + 1j * rng.standard_normal((d * D, D))
    A = matrix_to_tensor(qr_isometry(M), d, D)
    _, rho = right_fixed_point(A)
    return PurificationMPS(d_sys=d_sys, d_anc=d_anc, A=A, rho=rho)


def gauge_left(A, d_sys=2, d_anc=None, max_polish=200):
    """Left-canonicalize a general tensor; the represented state is unchanged.

    The leading left eigenvector seeds L (its Cholesky-like square root),
    then the QR iteration L A -> A_L L is polished to round-off.  Rejected
    when the transfer operator's leading eigenvalue is degenerate.
    """
    if isinstance(A, PurificationMPS):
        d_sys, d_anc, A = A.d_sys, A.d_anc, A.A
    d_anc = d_sys if d_anc is None else d_anc
    A = np.asarray(A, dtype=complex)
    d, D, _ = A.shape
    if D > 1:
        dense = _dense_transfer(A, "left") if D <= 8 else None
        lam, v, lam2 = _leading_pair(
            lambda y: transfer_left(A, y.reshape(D, D)).ravel(),
            D * D, need_second=True, dense_matrix=dense)
        if lam2 is not None and abs(lam) - abs(lam2) < DEFAULT.spectral_gap * abs(lam):
            raise GaugeError(f"degenerate leading transfer eigenvalue: "
                             f"|l1|={abs(lam):.6e}, |l2|={abs(lam2):.6e}, "
                             f"gap={abs(lam) - abs(lam2):.3e}")
        # sandwich-convention fixed point: sum_s A^s{dag} sigma A^s = lam sigma
        # is the conjugate of the transfer_left eigenvector
        sigma = v.reshape(D, D).conj()
        sigma = (sigma + sigma.conj().T) / 2.0
        if np.trace(sigma).real < 0:
            sigma = -sigma
        w, V = np.linalg.eigh(sigma)
        w = np.clip(w, 0.0, None)
        if w.max() <= 0:
            raise GaugeError("left fixed point is not positive")
        w = np.maximum(w, 1e-15 * w.max())
        L = np.sqrt(w)[:, np.newaxis] * V.conj().T     # sigma = L^dag L
    else:
        L = np.ones((1, 1), dtype=complex)

    # QR iteration on L only (A stays fixed): at the fixed point L A = A_L L
    # up to scale, so A_L = L A L^{-1} / scale is a similarity transform and
    # the represented state is unchanged.
    L = L / np.linalg.norm(L)
    Q = None
    for _ in range(max_polish):
        M = tensor_to_matrix(np.einsum("ab,sbc->sac", L, A, optimize=True))
        Q = qr_isometry(M)
        R = Q.conj().T @ M
        R = R / np.linalg.norm(R)
        delta = np.abs(R - L).max()
        L = R
        if delta < 1e-14:
            break
    else:
        raise GaugeError(f"gauge iteration stalled (last delta {delta:.3e}); "
                         "transfer spectrum may be nearly degenerate")
    AL = matrix_to_tensor(Q, d, D)
    residual = np.abs(tensor_to_matrix(AL).conj().T @ tensor_to_matrix(AL)
                      - np.eye(D)).max()
    if residual > DEFAULT.fixed_point * 100:
        raise GaugeError(f"gauge polish stalled at residual {residual:.3e}")
    _, rho = right_fixed_point(AL)
    return PurificationMPS(d_sys=d_sys, d_anc=d_anc, A=AL, rho=rho)


# --- reduced density operators and energy -------------------------------------

def one_site_rdm(mps: PurificationMPS):
    As = mps.A4
    r = np.einsum("xalr,XalR,rR->xX", As, As.conj(), mps.rho, optimize=True)
    return (r + r.conj().T) / 2.0


def two_site_rdm(mps: PurificationMPS):
    """Two-site reduced density operator of the system legs, [ket, bra]."""
    As = mps.A4
    theta = np.tensordot(As, As, axes=([3], [2]))   # [x, a, l, y, b, r]
    rho2 = np.einsum("xalybr,XalYbR,rR->xyXY", theta, theta.conj(), mps.rho,
                     optimize=True)
    ds = mps.d_sys
    rho2 = rho2.reshape(ds * ds, ds * ds)
    return (rho2 + rho2.conj().T) / 2.0


def energy_density(mps: PurificationMPS, h):
    """epsilon = tr(h rho_2); h is Hermitian on (d_sys)^2, system legs only."""
    return float(np.trace(np.asarray(h) @ two_site_rdm(mps)).real)


def local_observables_umps(mps: PurificationMPS, ops=None):
    """One-site expectations and connected neighbor correlators.

    ops maps labels to single-site operators; defaults to the Pauli x/z set,
    reported as 'sx', 'sz' and 'gamma_ab'.
    """
    if ops is None:
        sx = np.array([[0.0, 1.0], [1.0, 0.0]])
        sz = np.array([[1.0, 0.0], [0.0, -1.0]])
        ops = {"x": sx, "z": sz}
    r1 = one_site_rdm(mps)
    r2 = two_site_rdm(mps)
    out = {}
    for la, oa in ops.items():
        out[f"s{la}"] = float(np.trace(oa @ r1).real)
    for la, oa in ops.items():
        for lb, ob in ops.items():
            pair = np.kron(oa, ob)
            out[f"gamma_{la}{lb}"] = float(np.trace(pair @ r2).real
                                           - out[f"s{la}"] * out[f"s{lb}"])
    return out


# --- purity fixed points -------------------------------------------------------

@dataclass
class PurityFixedPoints:
    """Leading eigenpair of the four-layer (rho^2) transfer operator."""

    eta: float
    left_vec: np.ndarray    # (D, D, D, D)
    right_vec: np.ndarray   # (D, D, D, D), normalized <l|r> = 1


def transfer4_right(As, v):
    """Four-layer transfer applied to a right vector; O(d D^5)."""
    x = np.tensordot(As, v, axes=([3], [0]))                 # s a a1 b2 b3 b4
    x = np.tensordot(As.conj(), x, axes=([1, 3], [1, 3]))    # t a2 s a1 b3 b4
    x = np.tensordot(As, x, axes=([0, 3], [0, 4]))           # b a3 a2 s a1 b4
    x = np.tensordot(As.conj(), x, axes=([0, 1, 3], [3, 0, 5]))  # a4 a3 a2 a1
    return x.transpose(3, 2, 1, 0)


def transfer4_left(As, w):
    """Adjoint (conjugate-transpose) application to a left vector."""
    x = np.tensordot(As.conj(), w, axes=([2], [0]))          # s a b1 a2 a3 a4
    x = np.tensordot(As, x, axes=([1, 2], [1, 3]))           # t b2 s b1 a3 a4
    x = np.tensordot(As.conj(), x, axes=([0, 2], [0, 4]))    # b b3 b2 s b1 a4
    x = np.tensordot(As, x, axes=([0, 1, 2], [3, 0, 5]))     # b4 b3 b2 b1
    return x.transpose(3, 2, 1, 0)


def _dense_transfer4(As):
    T = np.einsum("saAx,taBy,tbCz,sbDw->ABCDxyzw", As, As.conj(), As, As.conj(),
                  optimize=True)
    n = As.shape[2] ** 4
    return T.reshape(n, n)


def purity_per_site(mps: PurificationMPS, v0=None, w0=None):
    """eta and the normalized four-layer leading eigenvectors.

    eta is the per-site leading eigenvalue of the doubled transfer operator,
    i.e. (tr rho^2)^{1/N} in the thermodynamic limit.
    """
    As = mps.A4
    D = mps.D
    n = D ** 4
    dense = _dense_transfer4(As) if n <= 16 else None
    lam_r, r4, _ = _leading_pair(
        lambda x: transfer4_right(As, x.reshape(D, D, D, D)).ravel(),
        n, v0=v0, dense_matrix=dense)
    lam_l, l4, _ = _leading_pair(
        lambda x: transfer4_left(As, x.reshape(D, D, D, D)).ravel(),
        n, v0=w0, dense_matrix=None if dense is None else dense.conj().T)
    eta = lam_r.real
    if abs(lam_r.imag) > 1e-9 * max(abs(eta), 1e-30) or eta <= 0:
        raise RuntimeError(f"purity eigenvalue not real positive: {lam_r}")
    overlap = np.vdot(l4, r4)
    if abs(overlap) < 1e-14:
        raise RuntimeError("left/right purity eigenvectors are orthogonal")
    r4 = r4 / overlap
    return PurityFixedPoints(eta=float(eta),
                             left_vec=l4.reshape(D, D, D, D),
                             right_vec=r4.reshape(D, D, D, D))


# --- Hamiltonian environments ---------------------------------------------------

@dataclass
class EnergyEnvironments:
    """Half-infinite sums of Hamiltonian insertions, [ket, bra] ordered."""

    left_env: np.ndarray
    right_env: np.ndarray
    energy: float


def _h_as_rank4(h, d_sys):
    return np.asarray(h, dtype=complex).reshape(d_sys, d_sys, d_sys, d_sys)


def energy_environments(mps: PurificationMPS, h, tol=None):
    """Solve the (1 - E)-regularized geometric sums for both environments.

    The Hamiltonian is reduced by its expectation value first, so the right
    sides are orthogonal to the divergent leading direction; the rank-1
    corrected solve then equals the paper-style pseudo-inverse.
    """
    As = mps.A4
    D, ds = mps.D, mps.d_sys
    eps = energy_density(mps, h)
    htil = _h_as_rank4(h, ds) - eps * _h_as_rank4(np.eye(ds * ds), ds)
    theta = np.tensordot(As, As, axes=([3], [2]))    # x a l y b r
    lh = np.einsum("XYxy,xalybr,XalYbR->rR", htil, theta, theta.conj(),
                   optimize=True)
    rh = np.einsum("XYxy,xalybr,XaLYbR,rR->lL", htil, theta, theta.conj(),
                   mps.rho, optimize=True)
    A3 = mps.A
    eye = np.eye(D, dtype=complex).ravel()
    rho_flat = mps.rho.ravel()
    left = solve_regularized_geometric(
        lambda y: transfer_left(A3, y.reshape(D, D)).ravel(),
        (eye, rho_flat.conj()), lh.ravel(), tol=tol).reshape(D, D)
    right = solve_regularized_geometric(
        lambda x: transfer_right(A3, x.reshape(D, D)).ravel(),
        (rho_flat, eye.conj()), rh.ravel(), tol=tol).reshape(D, D)
    return EnergyEnvironments(left_env=left, right_env=right, energy=eps)


def grad_energy(mps: PurificationMPS, h, envs: EnergyEnvironments):
    """d(energy density)/d(conj A): the four-diagram sum, shape (d, D, D).

    Two center terms (the differentiated bra under either leg of the
    Hamiltonian), one term with the summed left environment, one with the
    summed right environment.
    """
    As = mps.A4
    ds, da, D = mps.d_sys, mps.d_anc, mps.D
    eps = envs.energy
    htil = _h_as_rank4(h, ds) - eps * _h_as_rank4(np.eye(ds * ds), ds)
    theta = np.tensordot(As, As, axes=([3], [2]))
    g1 = np.einsum("XYxy,xalybr,YbmR,rR->Xalm", htil, theta, As.conj(),
                   mps.rho, optimize=True)
    g2 = np.einsum("XYxy,xalybr,XalM,rR->YbMR", htil, theta, As.conj(),
                   mps.rho, optimize=True)
    g3 = np.einsum("aA,sab,bB->sAB", envs.left_env,
                   mps.A, mps.rho, optimize=True)
    g4 = np.einsum("sab,bB->saB", mps.A, envs.right_env, optimize=True)
    d = ds * da
    return (g1.reshape(d, D, D) + g2.reshape(d, D, D) + g3 + g4)


def grad_purity(mps: PurificationMPS, fps: PurityFixedPoints):
    """d(eta)/d(conj A): upper and lower bra-layer insertions, shape (d, D, D)."""
    As = mps.A4
    ds, da, D = mps.d_sys, mps.d_anc, mps.D
    l4c = fps.left_vec.conj()
    r4 = fps.right_vec
    upper = np.einsum("ABCD,saAx,tbCz,sbDw,xyzw->taBy",
                      l4c, As, As, As.conj(), r4, optimize=True)
    lower = np.einsum("ABCD,saAx,taBy,tbCz,xyzw->sbDw",
                      l4c, As, As.conj(), As, r4, optimize=True)
    d = ds * da
    return upper.reshape(d, D, D) + lower.reshape(d, D, D)


# --- checkpoints -----------------------------------------------------------------

def save_checkpoint(path, mps: PurificationMPS, metadata=None):
    """JSON container: dims, row-major interleaved float64 pairs, metadata."""
    flat = np.ascontiguousarray(mps.A).ravel()
    payload = {
        "d_sys": mps.d_sys,
        "d_anc": mps.d_anc,
        "D": mps.D,
        "entries_interleaved": np.column_stack([flat.real, flat.imag]).ravel().tolist(),
        "metadata": dict(metadata or {}),
    }
    with open(path, "w") as fh:
        json.dump(payload, fh)


def load_checkpoint(path):
    with open(path) as fh:
        payload = json.load(fh)
    d_sys, d_anc, D = payload["d_sys"], payload["d_anc"], payload["D"]
    raw = np.asarray(payload["entries_interleaved"], dtype=float).reshape(-1, 2)
    A = (raw[:, 0] + 1j * raw[:, 1]).reshape(d_sys * d_anc, D, D)
    _, rho = right_fixed_point(A)
    mps = PurificationMPS(d_sys=d_sys, d_anc=d_anc, A=A, rho=rho)
    return mps, payload["metadata"]
