"""Closed forms for a Gaussian density of states.

D(E) = exp(-(E - E_mid)^2 / (2 sigma^2 N)) is the toy model of the spectral
density of a local chain.  This module evaluates the truncated moments
Phi_m = int_{-inf}^{E_perp} E^m D(E) dE in closed form, the Gibbs and
2-Renyi means/variances, and the self-consistent Ebar(beta_R) relation of
the clipped-linear ensemble p(E) prop. (E_perp - E)_+ D(E), whose cutoff
satisfies E_perp = Ebar + 2/beta_R.

The deep-cutoff regime (E_perp << -sigma sqrt(N)) underflows the raw
moments, so internally everything self-consistency-related is expressed in
ratios Phi_m / D(E_perp) through the scaled complementary error function.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq
from scipy.special import erfc, erfcx

_SQRT_HALF_PI = math.sqrt(math.pi / 2.0)


@dataclass(frozen=True)
class GaussianDOSModel:
    """Gaussian density of states with per-site energy scale sigma."""

    sigma: float
    N: float
    E_mid: float = 0.0

    def __post_init__(self):
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")
        if self.N <= 0:
            raise ValueError("N must be positive")

    @property
    def s2(self):
        """Spectral variance sigma^2 N."""
        return self.sigma ** 2 * self.N

    def density(self, E):
        return np.exp(-((np.asarray(E, dtype=float) - self.E_mid) ** 2)
                      / (2.0 * self.s2))


def _require_centered(model):
    if model.E_mid != 0.0:
        raise ValueError("truncated moments assume E_mid = 0")


def truncated_moment(model: GaussianDOSModel, m: int, E_perp: float):
    """Phi_m = int_{-inf}^{E_perp} E^m D(E) dE, m in {0, 1, 2, 3}.

    Phi_0 is the Gaussian error integral, Phi_1 is elementary, and
    Phi_2 = s2 Phi_0 + E_perp Phi_1, Phi_3 = (2 s2 + E_perp^2) Phi_1.
    """
    _require_centered(model)
    s2 = model.s2
    s = math.sqrt(s2)
    if m == 0:
        return _SQRT_HALF_PI * s * erfc(-E_perp / (math.sqrt(2.0) * s))
    if m == 1:
        return 0.0 if math.isinf(E_perp) else -s2 * math.exp(-E_perp ** 2 / (2.0 * s2))
    if m == 2:
        if math.isinf(E_perp):
            return s2 * truncated_moment(model, 0, E_perp)
        return s2 * truncated_moment(model, 0, E_perp) \
            + E_perp * truncated_moment(model, 1, E_perp)
    if m == 3:
        if math.isinf(E_perp):
            return 0.0
        return (2.0 * s2 + E_perp ** 2) * truncated_moment(model, 1, E_perp)
    raise ValueError(f"unsupported moment order {m}")


def gibbs_moments(model: GaussianDOSModel, beta: float):
    """(mean, variance) of the Gibbs weight exp(-beta E) D(E): (-beta s2, s2)."""
    return -beta * model.s2, model.s2


# --- clipped-linear (2-Renyi) ensemble ---------------------------------------

def _phi0_scaled(model, E_perp):
    """Phi_0 / D(E_perp), stable for arbitrarily negative cutoffs."""
    s = math.sqrt(model.s2)
    return _SQRT_HALF_PI * s * erfcx(-E_perp / (math.sqrt(2.0) * s))


def mean_energy_given_cutoff(model: GaussianDOSModel, E_perp: float):
    """Mean of p(E) prop. (E_perp - E)_+ D(E): -s2 Phi_0 / (E_perp Phi_0 - Phi_1).

    For E_perp <= 0 the ratio form with Phi_m / D(E_perp) is used; for
    E_perp > 0 the raw moments are safe (Phi_1 may underflow harmlessly).
    """
    _require_centered(model)
    s2 = model.s2
    if math.isinf(E_perp):
        return 0.0
    if E_perp <= 0.0:
        r0 = _phi0_scaled(model, E_perp)      # Phi_0 / D, with Phi_1 / D = -s2
        return -s2 * r0 / (E_perp * r0 + s2)
    phi0 = truncated_moment(model, 0, E_perp)
    phi1 = truncated_moment(model, 1, E_perp)
    return -s2 * phi0 / (E_perp * phi0 - phi1)


class SelfConsistencyError(RuntimeError):
    pass


def cutoff_of_beta_R(model: GaussianDOSModel, beta_R: float):
    """Solve E_perp - mean(E_perp) = 2/beta_R for the cutoff."""
    if beta_R <= 0:
        raise ValueError("beta_R must be positive")
    gap = 2.0 / beta_R
    g = lambda c: (c - mean_energy_given_cutoff(model, c)) - gap
    s = math.sqrt(model.s2)
    lo, hi = -s, s
    for _ in range(200):
        if g(lo) < 0:
            break
        lo *= 2.0
    else:
        raise SelfConsistencyError(f"no lower bracket for beta_R={beta_R}")
    for _ in range(200):
        if g(hi) > 0:
            break
        hi *= 2.0
    else:
        raise SelfConsistencyError(f"no upper bracket for beta_R={beta_R}")
    return brentq(g, lo, hi, rtol=8.9e-16, maxiter=400)


def energy_of_beta_R(model: GaussianDOSModel, beta_R: float):
    """Self-consistent mean energy Ebar(beta_R), strictly decreasing."""
    return mean_energy_given_cutoff(model, cutoff_of_beta_R(model, beta_R))


def cutoff_vanishing_beta_R(model: GaussianDOSModel):
    """The beta_R at which E_perp = 0: 2 / |mean(0)| = 2 / (s sqrt(pi/2))."""
    return 2.0 / -mean_energy_given_cutoff(model, 0.0)


def dE_dbetaR(model: GaussianDOSModel, beta_R: float, mean_E=None):
    """Derivative of the self-consistent Ebar with respect to beta_R.

    Differentiating the self-consistency (with Phi_1 = -s2 D(E_perp) exact)
    gives dE/dbeta_R = (1/beta_R^2) (1 + 2 r) / (1 + r), r = Ebar/(beta_R s2).
    """
    if mean_E is None:
        mean_E = energy_of_beta_R(model, beta_R)
    r = mean_E / (beta_R * model.s2)
    return (1.0 + 2.0 * r) / (1.0 + r) / beta_R ** 2


def renyi_moments(model: GaussianDOSModel, beta_R: float, mean_E: float,
                  flag_tol=1e-6):
    """(consistency residual, variance) at a given (beta_R, Ebar) pair.

    The residual measures Phi_0 - Ebar Phi_1 / (Ebar E_perp + s2) relative to
    Phi_0 (zero iff Ebar solves the self-consistency); the variance is the
    closed form 2 s2 + 2 Ebar / beta_R.  Pairs with residual beyond
    ``flag_tol`` are flagged via the third element.
    """
    _require_centered(model)
    s2 = model.s2
    E_perp = mean_E + 2.0 / beta_R
    denom = mean_E * E_perp + s2
    if E_perp <= 0.0:
        r0 = _phi0_scaled(model, E_perp)
        residual = (r0 - mean_E * (-s2) / denom) / r0
    else:
        phi0 = truncated_moment(model, 0, E_perp)
        phi1 = truncated_moment(model, 1, E_perp)
        residual = (phi0 - mean_E * phi1 / denom) / phi0
    variance = 2.0 * s2 + 2.0 * mean_E / beta_R
    return float(residual), float(variance), abs(residual) > flag_tol


def moment_recurrence_residual(model: GaussianDOSModel, m: int, E_perp: float,
                               rel_step=1e-5):
    """Relative defect of Phi_{m+2} = sigma^3 N dPhi_m/dsigma (central FD).

    The derivative is taken at fixed E_perp; the analytic factor sigma^3 N
    follows from dD/dsigma = E^2/(sigma^3 N) D.
    """
    h = rel_step * model.sigma
    up = GaussianDOSModel(model.sigma + h, model.N)
    dn = GaussianDOSModel(model.sigma - h, model.N)
    fd = (truncated_moment(up, m, E_perp) - truncated_moment(dn, m, E_perp)) / (2 * h)
    lhs = truncated_moment(model, m + 2, E_perp)
    rhs = model.sigma ** 3 * model.N * fd
    scale = max(abs(lhs), abs(rhs), 1e-300)
    return abs(lhs - rhs) / scale


def sweep_table(model_N_list, beta_R_grid, sigma=1.0):
    """Rows (N, beta_R, mean_E, mean_E_per_site, dE_dbetaR, var_R, E_perp)."""
    rows = []
    for N in model_N_list:
        model = GaussianDOSModel(sigma=sigma, N=N)
        for bR in beta_R_grid:
            E = energy_of_beta_R(model, bR)
            rows.append((N, bR, E, E / N, dE_dbetaR(model, bR, E),
                         renyi_moments(model, bR, E)[1], E + 2.0 / bR))
    return rows
