"""Exact finite-chain ensembles by dense diagonalization.

Builds Ising chains, Gibbs states, and maximal Renyi ensembles (the
entropy-maximizing state at fixed mean energy, which below a hard spectral
cutoff carries weights (1 - beta_a (a-1)/a (E - Ebar))^{1/(a-1)}), and
computes entropies, free energies, local observables, and the density of
states.  Serves as the oracle for the variational modules.
"""

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .linalg import LinalgError, eigh
from .tolerances import DEFAULT

MAX_DENSE_SITES = 14

PAULI_X = np.array([[0.0, 1.0], [1.0, 0.0]])
PAULI_Z = np.array([[1.0, 0.0], [0.0, -1.0]])


@dataclass(frozen=True)
class SpinChainSpec:
    """Ising chain H = -sum_k (sx_k sx_{k+1} + h_z sz_k + h_x sx_k)."""

    N: int
    boundary: str = "open"
    h_x: float = 0.0
    h_z: float = 0.0

    def __post_init__(self):
        if self.N < 2:
            raise ValueError("need at least 2 sites")
        if self.N > MAX_DENSE_SITES:
            raise ValueError(f"N={self.N} exceeds dense-construction guard "
                             f"({MAX_DENSE_SITES})")
        if self.boundary not in ("open", "periodic"):
            raise ValueError(f"boundary must be open|periodic, got {self.boundary!r}")

    @property
    def dim(self):
        return 2 ** self.N


def build_ising(spec: SpinChainSpec):
    """Dense Hamiltonian of the chain, real symmetric in the z basis.

    Terms are filled with bit arithmetic (sz is diagonal, sx flips one bit),
    never materializing Kronecker factors.  Site k corresponds to bit
    N-1-k so that site 0 is the leftmost Kronecker factor.
    """
    N, dim = spec.N, spec.dim
    H = np.zeros((dim, dim))
    idx = np.arange(dim)
    bit = lambda k: 1 << (N - 1 - k)

    diag = np.zeros(dim)
    for k in range(N):
        sz = 1.0 - 2.0 * ((idx & bit(k)) > 0)          # +1 spin-up, -1 spin-down
        diag -= spec.h_z * sz
    H[idx, idx] = diag

    for k in range(N):
        H[idx ^ bit(k), idx] -= spec.h_x
    bonds = N if spec.boundary == "periodic" else N - 1
    for k in range(bonds):
        flip = bit(k) | bit((k + 1) % N)
        H[idx ^ flip, idx] -= 1.0
    return H


@dataclass
class Spectrum:
    """Cached eigendecomposition of a Hamiltonian."""

    energies: np.ndarray
    vectors: np.ndarray

    @property
    def dim(self):
        return self.energies.size

    @property
    def ground_energy(self):
        return float(self.energies[0])

    @property
    def mean_energy(self):
        return float(self.energies.mean())

    @property
    def width(self):
        return float(self.energies[-1] - self.energies[0])


def spectrum_of(H):
    """Diagonalize once; pass the result to the ensemble constructors."""
    if isinstance(H, Spectrum):
        return H
    w, V = eigh(np.asarray(H, dtype=float) if not np.iscomplexobj(H) else H)
    return Spectrum(energies=w, vectors=V)


@dataclass
class DensityOperator:
    """Dense Hermitian PSD unit-trace operator."""

    matrix: np.ndarray

    def __post_init__(self):
        M = np.asarray(self.matrix, dtype=complex)
        n = M.shape[0]
        if M.shape != (n, n):
            raise ValueError("density operator must be square")
        scale = max(np.abs(M).max(), 1e-300)
        if np.abs(M - M.conj().T).max() > 1e-12 * scale * n:
            raise ValueError("density operator is not Hermitian")
        tr = np.trace(M).real
        if abs(tr - 1.0) > 1e-10:
            raise ValueError(f"trace {tr} != 1")
        self.matrix = M

    @property
    def dim(self):
        return self.matrix.shape[0]

    def probabilities(self):
        w, _ = np.linalg.eigh(self.matrix)
        if w.min() < -DEFAULT.psd_slack * 10:
            raise ValueError(f"negative eigenvalue {w.min():.3e}")
        return np.clip(w, 0.0, None)

    def energy(self, H):
        M = H.matrix if isinstance(H, DensityOperator) else H
        return float(np.einsum("ij,ji->", M, self.matrix).real)


def _from_eigenbasis(sp: Spectrum, p):
    V = sp.vectors
    rho = (V * p[np.newaxis, :]) @ V.conj().T
    rho = (rho + rho.conj().T) / 2
    return DensityOperator(matrix=rho / np.trace(rho).real)


@dataclass(frozen=True)
class MREParameters:
    """Parameters of a maximal Renyi ensemble on the solved branch."""

    alpha: float
    beta_alpha: float
    mean_energy: float
    cutoff: float
    negative_branch: bool = False

    def __post_init__(self):
        if self.beta_alpha > 0 and math.isfinite(self.cutoff):
            expected = self.alpha / (self.beta_alpha * (self.alpha - 1.0))
            expected = self.mean_energy + (-expected if self.negative_branch else expected)
            if not math.isclose(expected, self.cutoff, rel_tol=1e-9, abs_tol=1e-9):
                raise ValueError("cutoff inconsistent with (alpha, beta_alpha, Ebar)")


# --- entropies and free energies --------------------------------------------

def _clamped(p):
    p = np.asarray(p, dtype=float)
    return np.where(p > DEFAULT.eigenvalue_clamp, p, 0.0)


def renyi_entropy(rho, alpha):
    """(1/(1-alpha)) log sum p^alpha over the spectrum of rho."""
    if alpha <= 0 or alpha == 1.0:
        raise ValueError("alpha must be positive and != 1 (use von_neumann_entropy)")
    p = _clamped(rho.probabilities() if isinstance(rho, DensityOperator) else rho)
    return float(np.log(np.sum(p[p > 0.0] ** alpha)) / (1.0 - alpha))


def von_neumann_entropy(rho):
    p = _clamped(rho.probabilities() if isinstance(rho, DensityOperator) else rho)
    p = p[p > 0.0]
    return float(-np.sum(p * np.log(p)))


def free_energy_gibbs(rho, H, beta):
    if beta == 0.0:
        raise ValueError("beta must be nonzero")
    return rho.energy(H) - von_neumann_entropy(rho) / beta


def free_energy_renyi(rho, H, beta_alpha, alpha):
    if beta_alpha == 0.0:
        raise ValueError("beta_alpha must be nonzero")
    return rho.energy(H) - renyi_entropy(rho, alpha) / beta_alpha


# --- Gibbs ------------------------------------------------------------------

def gibbs_weights(energies, beta):
    """exp(-beta E_k)/Z with a max shift; beta of either sign."""
    x = -beta * np.asarray(energies, dtype=float)
    w = np.exp(x - x.max())
    return w / w.sum()

def gibbs_state(H, beta):
    sp = spectrum_of(H)
    return _from_eigenbasis(sp, gibbs_weights(sp.energies, beta))


def gibbs_energy_of_beta(sp: Spectrum, beta):
    return float(np.dot(gibbs_weights(sp.energies, beta), sp.energies))


def gibbs_from_energy(H, target_E):
    """Gibbs state with tr(H rho) = target, by monotone bracketing in beta.

    dE/dbeta = -Var(H) < 0, so the map is strictly decreasing; the bracket is
    expanded geometrically until it straddles the target.
    """
    sp = spectrum_of(H)
    if not (sp.ground_energy < target_E < sp.energies[-1]):
        raise ValueError(f"target {target_E} outside open spectral range "
                         f"({sp.ground_energy}, {sp.energies[-1]})")
    f = lambda b: gibbs_energy_of_beta(sp, b) - target_E
    lo, hi = -1.0, 1.0
    while f(lo) < 0:       # energy too low -> decrease beta
        lo *= 2.0
        if lo < -1e8:
            raise ValueError("could not bracket beta (target too close to E_max)")
    while f(hi) > 0:
        hi *= 2.0
        if hi > 1e8:
            raise ValueError("could not bracket beta (target too close to E_ground)")
    beta = brentq(f, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=400)
    return gibbs_state(sp, beta), beta


# --- maximal Renyi ensemble --------------------------------------------------

def _mre_weights(energies, Ebar, beta_alpha, alpha):
    """Unnormalized weights (1 - beta (a-1)/a (E - Ebar))_+^{1/(a-1)}.

    A level exactly at the cutoff gets weight zero, which is the continuous
    completion of the projector convention.
    """
    base = 1.0 - beta_alpha * (alpha - 1.0) / alpha * (energies - Ebar)
    w = np.zeros_like(base)
    pos = base > 0.0
    w[pos] = base[pos] ** (1.0 / (alpha - 1.0))
    return w


def _check_alpha(alpha):
    if not alpha > 1.0:
        raise ValueError("MRE constructors require alpha > 1 (the below-cutoff "
                         "projector form); entropies alone accept any alpha > 0")


class BracketError(RuntimeError):
    """Self-consistency bracketing failure, carrying a sampled Ebar -> <H> map."""

    def __init__(self, message, samples):
        super().__init__(message + "; sampled (Ebar, <H>) pairs: "
                         + ", ".join(f"({a:.6g}, {b:.6g})" for a, b in samples))
        self.samples = samples


def _mre_mean_energy(sp, Ebar, beta_alpha, alpha):
    w = _mre_weights(sp.energies, Ebar, beta_alpha, alpha)
    tot = w.sum()
    if tot == 0.0:
        return sp.ground_energy
    return float(np.dot(w, sp.energies) / tot)


def mre_from_beta(H, beta_alpha, alpha=2.0, negative_branch=False):
    """Maximal Renyi ensemble at fixed beta_alpha.

    The mean energy Ebar is solved self-consistently (the distribution's
    parameter Ebar must equal its own mean) by bracketing on
    [E_ground, spectral mean]; the bracket is guaranteed on this branch.
    beta_alpha = 0 returns the maximally mixed state.  The negative branch
    (projector onto energies *above* the cutoff) is obtained by mirroring
    H -> -H.
    """
    _check_alpha(alpha)
    if beta_alpha < 0:
        raise ValueError("beta_alpha must be >= 0; use negative_branch=True "
                         "for the mirrored solution")
    sp = spectrum_of(H)
    if negative_branch:
        mirrored = Spectrum(energies=-sp.energies[::-1],
                            vectors=sp.vectors[:, ::-1])
        rho, params = mre_from_beta(mirrored, beta_alpha, alpha)
        rho = _from_eigenbasis(sp, _mre_weights(-sp.energies, params.mean_energy,
                                                beta_alpha, alpha) /
                               max(_mre_weights(-sp.energies, params.mean_energy,
                                                beta_alpha, alpha).sum(), 1e-300))
        return rho, MREParameters(alpha=alpha, beta_alpha=beta_alpha,
                                  mean_energy=-params.mean_energy,
                                  cutoff=-params.cutoff, negative_branch=True)
    if beta_alpha == 0.0:
        p = np.full(sp.dim, 1.0 / sp.dim)
        return _from_eigenbasis(sp, p), MREParameters(
            alpha=alpha, beta_alpha=0.0, mean_energy=sp.mean_energy,
            cutoff=math.inf)

    g = lambda E: _mre_mean_energy(sp, E, beta_alpha, alpha) - E
    lo, hi = sp.ground_energy, sp.mean_energy
    glo, ghi = g(lo), g(hi)
    if glo < 0 or ghi > 0:
        if abs(glo) < 1e-12 * max(1.0, abs(lo)):
            Ebar = lo
        elif abs(ghi) < 1e-12 * max(1.0, abs(hi)):
            Ebar = hi
        else:
            samples = [(E, _mre_mean_energy(sp, E, beta_alpha, alpha))
                       for E in np.linspace(lo, hi, 9)]
            raise BracketError("self-consistency not bracketed", samples)
    else:
        Ebar = brentq(g, lo, hi, xtol=1e-14, rtol=8.9e-16, maxiter=400)
    w = _mre_weights(sp.energies, Ebar, beta_alpha, alpha)
    p = w / w.sum()
    Ebar = float(np.dot(p, sp.energies))   # polish: the exact mean of the weights
    cutoff = Ebar + alpha / (beta_alpha * (alpha - 1.0))
    return _from_eigenbasis(sp, p), MREParameters(
        alpha=alpha, beta_alpha=beta_alpha, mean_energy=Ebar, cutoff=cutoff)


def mre_from_energy(H, target_E, alpha=2.0, negative_branch=False):
    """Maximal Renyi ensemble with tr(H rho) = target, by bracketing beta.

    On the positive branch the admissible range is
    E_ground < target < spectral mean (the target equal to the spectral mean
    is accepted and returns the maximally mixed state).
    """
    _check_alpha(alpha)
    sp = spectrum_of(H)
    if negative_branch:
        mirrored = Spectrum(energies=-sp.energies[::-1], vectors=sp.vectors[:, ::-1])
        _, params = mre_from_energy(mirrored, -target_E, alpha)
        return mre_from_beta(sp, params.beta_alpha, alpha, negative_branch=True)

    lo_E, hi_E = sp.ground_energy, sp.mean_energy
    if math.isclose(target_E, hi_E, rel_tol=1e-12, abs_tol=1e-12):
        return mre_from_beta(sp, 0.0, alpha)
    if not (lo_E < target_E < hi_E):
        raise ValueError(f"target {target_E} outside admissible range "
                         f"({lo_E}, {hi_E}) of the positive-temperature branch")

    def achieved(beta):
        _, params = mre_from_beta(sp, beta, alpha)
        return params.mean_energy

    f = lambda b: achieved(b) - target_E
    lo, hi = 1e-10, 1.0
    while f(lo) < 0:
        lo /= 32.0
        if lo < 1e-300:
            raise ValueError("could not bracket beta near the spectral mean")
    while f(hi) > 0:
        hi *= 4.0
        if hi > 1e12:
            raise ValueError("could not bracket beta near the ground energy")
    beta = brentq(f, lo, hi, rtol=8.9e-16, maxiter=600)
    rho, params = mre_from_beta(sp, beta, alpha)
    if abs(params.mean_energy - target_E) > 1e-9 * max(np.abs(sp.energies).max(), 1.0):
        raise RuntimeError(f"energy targeting residual {params.mean_energy - target_E:.3e}")
    return rho, params


# --- observables and density of states ---------------------------------------

def _site_bit(spec, k):
    return 1 << (spec.N - 1 - k)


def _expect_sz(rho, spec, k):
    idx = np.arange(spec.dim)
    sz = 1.0 - 2.0 * ((idx & _site_bit(spec, k)) > 0)
    return float(np.dot(np.diagonal(rho.matrix).real, sz))


def _expect_flip(rho, spec, flip_mask, phase=None):
    # tr(rho O) for O|x> = phase(x)|x ^ flip>: picks one element per column.
    idx = np.arange(spec.dim)
    vals = rho.matrix[idx ^ flip_mask, idx]
    if phase is not None:
        vals = vals * phase
    return float(vals.sum().real)


def _expect_pauli_pair(rho, spec, a, k, b, l):
    """<sigma^a_k sigma^b_l> for a, b in {x, z}."""
    idx = np.arange(spec.dim)
    flip = 0
    phase = np.ones(spec.dim)
    for op, site in ((a, k), (b, l)):
        if op == "x":
            flip ^= _site_bit(spec, site)
        elif op == "z":
            phase = phase * (1.0 - 2.0 * ((idx & _site_bit(spec, site)) > 0))
        else:
            raise ValueError(f"unsupported Pauli label {op!r}")
    if flip == 0:
        return float(np.dot(np.diagonal(rho.matrix).real, phase))
    # phase factors act on the incoming basis state (the column index)
    return _expect_flip(rho, spec, flip, phase)


def _expect_pauli(rho, spec, a, k):
    if a == "z":
        return _expect_sz(rho, spec, k)
    if a == "x":
        return _expect_flip(rho, spec, _site_bit(spec, k))
    raise ValueError(f"unsupported Pauli label {a!r}")


def local_observables(rho: DensityOperator, spec: SpinChainSpec):
    """Per-site magnetizations and connected next-neighbor correlators.

    Returns a dict with 'sz' (length N) and 'gamma_ab' arrays over bonds
    (k, k+1) for ab in {xx, xz, zx, zz}.
    """
    N = spec.N
    sz = np.array([_expect_pauli(rho, spec, "z", k) for k in range(N)])
    sx = np.array([_expect_pauli(rho, spec, "x", k) for k in range(N)])
    bonds = N if spec.boundary == "periodic" else N - 1
    out = {"sz": sz, "sx": sx}
    for a in "xz":
        for b in "xz":
            single_a = sx if a == "x" else sz
            single_b = sx if b == "x" else sz
            vals = []
            for k in range(bonds):
                l = (k + 1) % N
                vals.append(_expect_pauli_pair(rho, spec, a, k, b, l)
                            - single_a[k] * single_b[l])
            out[f"gamma_{a}{b}"] = np.array(vals)
    return out


def dos_histogram(H, bins):
    """Counts of eigenvalues per uniform bin over [E_min, E_max]."""
    if bins < 2:
        raise ValueError("need at least 2 bins")
    sp = spectrum_of(H)
    counts, edges = np.histogram(sp.energies, bins=bins,
                                 range=(sp.energies[0], sp.energies[-1]))
    return counts, edges


def ising_bond_operator(h_x, h_z):
    """Translation-invariant two-site term: -(sx sx) with fields split evenly.

    Summing this over all bonds of an infinite (or periodic) chain gives the
    same Hamiltonian density as :func:`build_ising`.
    """
    eye = np.eye(2)
    return -(np.kron(PAULI_X, PAULI_X)
             + h_z * (np.kron(PAULI_Z, eye) + np.kron(eye, PAULI_Z)) / 2.0
             + h_x * (np.kron(PAULI_X, eye) + np.kron(eye, PAULI_X)) / 2.0)


def ensemble_table(sp: Spectrum, p_gibbs, p_mre):
    """Rows (index, E_k, p_gibbs, p_mre) for the CSV spectrum dumps."""
    sp = spectrum_of(sp)
    return [(k, float(sp.energies[k]), float(p_gibbs[k]), float(p_mre[k]))
            for k in range(sp.dim)]
