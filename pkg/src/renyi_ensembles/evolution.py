"""Dense nonlinear evolution of a density operator toward the 2-Renyi ensemble.

The flow d(rho)/dtau = -1/2 {J - <J>, rho} with the state-dependent operator
J = beta_R H + 2 rho / tr(rho^2) conserves trace and positivity and decreases
the Renyi free energy f_R = tr(H rho) + log(tr rho^2)/beta_R; its fixed point
is the analytic maximal Renyi ensemble at the same beta_R.  Discretization is
the symmetric first-order congruence rho -> X rho X with
X = exp(-(dtau/2)(J - <J>)).
"""

import math
from dataclasses import dataclass, field

import numpy as np

from .tolerances import DEFAULT


@dataclass
class EvolutionConfig:
    beta_R: float
    dtau: float = None          # default chosen from the operator scale
    max_steps: int = 20000
    renormalize: bool = True
    monitor_every: int = 10
    flow_tol: float = 1e-10     # stop when |df_R| per unit tau drops below
    max_halvings: int = 25
    grow_factor: float = 1.02   # gentle step growth, reverted on violations
    dtau_cap_ratio: float = 50.0

    def __post_init__(self):
        if self.beta_R < 0:
            raise ValueError("beta_R must be >= 0")
        if self.dtau is not None and self.dtau <= 0:
            raise ValueError("dtau must be positive")
        if self.max_steps < 1:
            raise ValueError("max_steps must be >= 1")


@dataclass
class EvolutionTrace:
    """Sampled monitor records along the flow."""

    beta_R: float
    renormalize: bool
    dtau: float
    objective_kind: str          # "renyi_free_energy" or "log_purity" (beta_R=0)
    tau: list = field(default_factory=list)
    trace_rho: list = field(default_factory=list)
    min_eigenvalue: list = field(default_factory=list)
    f_R: list = field(default_factory=list)
    renyi2: list = field(default_factory=list)
    energy: list = field(default_factory=list)

    def record(self, tau, rho, H, beta_R):
        w = np.linalg.eigvalsh(rho)
        tr = float(w.sum())
        p = np.clip(w, 0.0, None)
        p = p / p.sum()
        s2 = -math.log(float(np.sum(p * p)))
        en = float(np.einsum("ij,ji->", H, rho).real)
        self.tau.append(float(tau))
        self.trace_rho.append(tr)
        self.min_eigenvalue.append(float(w.min()))
        self.renyi2.append(s2)
        self.energy.append(en)
        self.f_R.append(_free_energy(rho, H, beta_R))
        return self.f_R[-1]

    def csv_rows(self):
        cols = zip(self.tau, self.trace_rho, self.min_eigenvalue,
                   self.f_R, self.renyi2, self.energy)
        return [tuple(map(float, row)) for row in cols]

    CSV_COLUMNS = ("tau", "trace", "min_eig", "f_R", "S2", "energy")


def _purity(rho):
    return float(np.einsum("ij,ji->", rho, rho).real)


def _free_energy(rho, H, beta_R):
    """f_R, or its beta_R -> 0 Lyapunov surrogate log tr rho^2."""
    pur = _purity(rho)
    if beta_R == 0.0:
        return math.log(pur)
    return float(np.einsum("ij,ji->", H, rho).real) + math.log(pur) / beta_R


def j_operator(rho, H, beta_R):
    """J = beta_R H + 2 rho / tr(rho^2), Hermitian by construction."""
    rho = np.asarray(rho, dtype=complex)
    pur = _purity(rho)
    if pur < 1e-300:
        raise ValueError("tr rho^2 vanished; state is degenerate")
    J = beta_R * np.asarray(H, dtype=complex) + (2.0 / pur) * rho
    return (J + J.conj().T) / 2.0


def step(rho, H, cfg: EvolutionConfig, dtau=None):
    """One congruence step rho -> X rho X, X = exp(-(dtau/2)(J - <J>))."""
    dtau = cfg.dtau if dtau is None else dtau
    if dtau == 0.0:
        return rho.copy()
    J = j_operator(rho, H, cfg.beta_R)
    mean_J = float(np.einsum("ij,ji->", J, rho).real)
    w, V = np.linalg.eigh(J - mean_J * np.eye(rho.shape[0]))
    X = (V * np.exp(-0.5 * dtau * w)[np.newaxis, :]) @ V.conj().T
    new = X @ rho @ X
    new = (new + new.conj().T) / 2.0
    if cfg.renormalize:
        new = new / np.trace(new).real
    return new


def default_dtau(rho0, H, beta_R, target=1e-2):
    """Step size ~ target / ||J - <J>||, estimated from the initial state."""
    J = j_operator(rho0, H, beta_R)
    mean_J = float(np.einsum("ij,ji->", J, rho0).real)
    scale = np.linalg.norm(J - mean_J * np.eye(J.shape[0]), 2)
    return target / max(scale, 1e-12)


class PositivityError(RuntimeError):
    def __init__(self, trace):
        super().__init__("positivity violated beyond tolerance; "
                         "the step size is too large")
        self.trace = trace


def evolve(rho0, H, cfg: EvolutionConfig):
    """Run the flow until the free-energy decrease stalls.

    Returns (final rho, EvolutionTrace).  On monitor violations (free energy
    increasing beyond round-off) the step is retried with half the step size;
    positivity violations beyond tolerance abort with the trace attached.
    """
    rho = np.asarray(rho0, dtype=complex).copy()
    rho = (rho + rho.conj().T) / 2.0
    H = np.asarray(H, dtype=float if not np.iscomplexobj(H) else complex)
    dtau = cfg.dtau if cfg.dtau is not None else default_dtau(rho, H, cfg.beta_R)

    J = j_operator(rho, H, cfg.beta_R)
    mean_J = float(np.einsum("ij,ji->", J, rho).real)
    if dtau * np.linalg.norm(J - mean_J * np.eye(J.shape[0]), 2) >= 1.0:
        raise ValueError("dtau * ||J - <J>|| >= 1 at initialization; "
                         "reduce the step size")
    anticomm = (J - mean_J * np.eye(J.shape[0])) @ rho
    if np.abs(anticomm + anticomm.conj().T).max() < 1e-10:
        import warnings
        warnings.warn("initial state is (numerically) a fixed point of the flow")

    kind = "renyi_free_energy" if cfg.beta_R > 0 else "log_purity"
    trace = EvolutionTrace(beta_R=cfg.beta_R, renormalize=cfg.renormalize,
                           dtau=dtau, objective_kind=kind)
    tau = 0.0
    f_prev = trace.record(tau, rho, H, cfg.beta_R)
    dtau_cap = dtau * cfg.dtau_cap_ratio
    halvings = 0
    for k in range(cfg.max_steps):
        candidate = step(rho, H, cfg, dtau=dtau)
        f_new = _free_energy(candidate, H, cfg.beta_R)
        if f_new > f_prev + 1e-9 * (1.0 + abs(f_prev)):
            if halvings >= cfg.max_halvings:
                break
            dtau *= 0.5
            halvings += 1
            continue
        rho, tau = candidate, tau + dtau
        stalled = abs(f_new - f_prev) / dtau < cfg.flow_tol
        f_prev = f_new
        if (k + 1) % cfg.monitor_every == 0 or stalled or k + 1 == cfg.max_steps:
            f_prev = trace.record(tau, rho, H, cfg.beta_R)
            if trace.min_eigenvalue[-1] < -1e-10:
                raise PositivityError(trace)
        if stalled:
            break
        dtau = min(dtau * cfg.grow_factor, dtau_cap)
    return rho, trace


def anticommutator_residual(rho, H, beta_R):
    """|| {J - <J>, rho} || at a candidate fixed point."""
    J = j_operator(rho, H, beta_R)
    mean_J = float(np.einsum("ij,ji->", J, rho).real)
    K = J - mean_J * np.eye(J.shape[0])
    return float(np.linalg.norm(K @ rho + rho @ K))


def random_full_rank_state(dim, seed=0):
    """X X^dag / tr, X complex Gaussian: generic full-rank start."""
    rng = np.random.default_rng(seed)
    X = rng.standard_normal((dim, dim)) + 1j * rng.standard_normal((dim, dim))
    rho = X @ X.conj().T
    return rho / np.trace(rho).real
