"""Minimization of the Renyi free energy per site over the Grassmann manifold.

The purification tensor, viewed as an isometry, is optimized with l-BFGS:
tangent steps follow geodesic retractions, stored curvature pairs are moved
with the differentiated-retraction transport, and the step length satisfies
the strong Wolfe conditions.  Two objectives are supported: the Renyi free
energy density eps + log(eta)/beta_R at fixed beta_R, and the
energy-targeting surrogate eta + (lambda^2/2)(eps - target)^2.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from . import umps
from .grassmann import Isometry, Tangent, inner, project, retract, transport
from .linalg import matrix_to_tensor


@dataclass(frozen=True)
class ObjectiveConfig:
    """Exactly one of (beta_R) or (lam, target_E_density) is set."""

    mode: str                      # "renyi_free_energy" | "energy_target"
    beta_R: float = None
    lam: float = None
    target_E_density: float = None

    def __post_init__(self):
        if self.mode == "renyi_free_energy":
            if self.beta_R is None or self.beta_R <= 0:
                raise ValueError("renyi_free_energy mode needs beta_R > 0")
            if self.lam is not None or self.target_E_density is not None:
                raise ValueError("lambda/target belong to energy_target mode")
        elif self.mode == "energy_target":
            if self.lam is None or self.lam <= 0 or self.target_E_density is None:
                raise ValueError("energy_target mode needs lam > 0 and a target")
            if self.beta_R is not None:
                raise ValueError("beta_R belongs to renyi_free_energy mode")
        else:
            raise ValueError(f"unknown mode {self.mode!r}")


@dataclass
class StopRule:
    grad_tol: float = 1e-6
    max_iter: int = 5000


class _Workspace:
    """All point-local quantities needed for one objective/gradient pair."""

    def __init__(self, iso: Isometry, h, cfg: ObjectiveConfig, d_sys=2, d_anc=2,
                 warm=None):
        D = iso.W.shape[1]
        A = matrix_to_tensor(iso.W, d_sys * d_anc, D)
        v0 = None if warm is None else warm.get("rho")
        _, rho = umps.right_fixed_point(A, v0=v0)
        self.iso = iso
        self.mps = umps.PurificationMPS(d_sys=d_sys, d_anc=d_anc, A=A, rho=rho)
        self.h = h
        self.cfg = cfg
        self.fps = umps.purity_per_site(
            self.mps,
            v0=None if warm is None else warm.get("r4"),
            w0=None if warm is None else warm.get("l4"))
        self.envs = umps.energy_environments(self.mps, h)
        self.eps = self.envs.energy
        self.eta = self.fps.eta
        if self.eta <= 0:
            raise RuntimeError(f"nonpositive purity per site: {self.eta}")

    def warm_vectors(self):
        return {"rho": self.mps.rho.ravel(),
                "r4": self.fps.right_vec.ravel(),
                "l4": self.fps.left_vec.ravel()}

    def objective(self):
        cfg = self.cfg
        if cfg.mode == "renyi_free_energy":
            return self.eps + np.log(self.eta) / cfg.beta_R
        return self.eta + 0.5 * cfg.lam ** 2 * (self.eps - cfg.target_E_density) ** 2

    def gradient(self):
        """Tangent-projected Riemannian gradient (factor 2 from Wirtinger)."""
        cfg = self.cfg
        g_eps = umps.grad_energy(self.mps, self.h, self.envs)
        g_eta = umps.grad_purity(self.mps, self.fps)
        if cfg.mode == "renyi_free_energy":
            g = g_eps + g_eta / (cfg.beta_R * self.eta)
        else:
            g = g_eta + cfg.lam ** 2 * (self.eps - cfg.target_E_density) * g_eps
        d, D, _ = g.shape
        return project(self.iso, 2.0 * g.reshape(d * D, D))


def objective(mps_or_iso, h, cfg: ObjectiveConfig):
    iso = mps_or_iso if isinstance(mps_or_iso, Isometry) else Isometry(W=mps_or_iso.W)
    return float(_Workspace(iso, h, cfg).objective())


def gradient(mps_or_iso, h, cfg: ObjectiveConfig):
    iso = mps_or_iso if isinstance(mps_or_iso, Isometry) else Isometry(W=mps_or_iso.W)
    return _Workspace(iso, h, cfg).gradient()


@dataclass
class EnsembleReport:
    """Per-run physics summary plus optimizer diagnostics."""

    mode: str
    beta_R: float
    lam: float
    target_E_density: float
    D: int
    seed: int
    energy_density: float
    eta: float
    s2_density: float
    observables: dict
    grad_norm: float
    iterations: int
    converged: bool
    wall_time: float
    start_mode: str = "cold"
    trace: list = field(default_factory=list)
    message: str = ""

    CSV_COLUMNS = ("mode", "beta_R", "lam", "target_E_density", "D", "seed",
                   "energy_density", "eta", "s2_density", "sz", "sx",
                   "gamma_zz", "gamma_xx", "grad_norm", "iterations",
                   "converged", "start_mode", "wall_time")

    def csv_row(self):
        obs = self.observables
        return (self.mode, self.beta_R, self.lam, self.target_E_density,
                self.D, self.seed, self.energy_density, self.eta,
                self.s2_density, obs.get("sz"), obs.get("sx"),
                obs.get("gamma_zz"), obs.get("gamma_xx"), self.grad_norm,
                self.iterations, int(self.converged), self.start_mode,
                self.wall_time)


class LineSearchError(RuntimeError):
    pass


_C1 = 1e-4
_C2 = 0.9
_MAX_BISECT = 40


def _strong_wolfe(ws, direction, f0, dphi0, make_ws, t_init=1.0):
    """Bracket + zoom line search; returns (t, new workspace, f, dphi)."""

    def evaluate(t):
        new_iso = retract(ws.iso, direction, t)
        ws_t = make_ws(new_iso, warm=ws.warm_vectors())
        g_t = ws_t.gradient()
        d_t = transport(ws.iso, direction, direction, t, target=new_iso)
        return ws_t, float(ws_t.objective()), inner(g_t, d_t), g_t

    def zoom(t_lo, f_lo, dphi_lo, t_hi, f_hi):
        for _ in range(_MAX_BISECT):
            t = 0.5 * (t_lo + t_hi)
            ws_t, f_t, dphi_t, g_t = evaluate(t)
            if f_t > f0 + _C1 * t * dphi0 or f_t >= f_lo:
                t_hi, f_hi = t, f_t
            else:
                if abs(dphi_t) <= -_C2 * dphi0:
                    return t, ws_t, f_t, dphi_t, g_t
                if dphi_t * (t_hi - t_lo) >= 0:
                    t_hi, f_hi = t_lo, f_lo
                t_lo, f_lo, dphi_lo = t, f_t, dphi_t
        raise LineSearchError(f"zoom failed after {_MAX_BISECT} bisections")

    t_prev, f_prev, dphi_prev = 0.0, f0, dphi0
    t = t_init
    for it in range(20):
        ws_t, f_t, dphi_t, g_t = evaluate(t)
        if f_t > f0 + _C1 * t * dphi0 or (it > 0 and f_t >= f_prev):
            return zoom(t_prev, f_prev, dphi_prev, t, f_t)
        if abs(dphi_t) <= -_C2 * dphi0:
            return t, ws_t, f_t, dphi_t, g_t
        if dphi_t >= 0:
            return zoom(t, f_t, dphi_t, t_prev, f_prev)
        t_prev, f_prev, dphi_prev = t, f_t, dphi_t
        t *= 2.0
    raise LineSearchError("bracketing exhausted without a Wolfe point")


def minimize(mps0: umps.PurificationMPS, h, cfg: ObjectiveConfig,
             stop: StopRule = None, memory=10, seed=0, start_mode="cold",
             trace_every=1):
    """Manifold l-BFGS from mps0; returns (PurificationMPS, EnsembleReport).

    The accepted-step objective sequence is non-increasing (strong Wolfe);
    every iterate is isometric because steps are geodesic retractions.
    """
    stop = stop or StopRule()
    t_start = time.perf_counter()
    d_sys, d_anc = mps0.d_sys, mps0.d_anc

    def make_ws(iso, warm=None):
        return _Workspace(iso, h, cfg, d_sys=d_sys, d_anc=d_anc, warm=warm)

    ws = make_ws(Isometry(W=mps0.W))
    g = ws.gradient()
    f = float(ws.objective())
    mem = []          # list of (s, y, inv curvature) tangents at current point
    trace = []
    message = ""
    converged = False
    grad_norm = np.sqrt(max(inner(g, g), 0.0))
    iteration = 0

    while iteration < stop.max_iter:
        if iteration % trace_every == 0:
            trace.append((iteration, f, grad_norm))
        if grad_norm < stop.grad_tol:
            converged = True
            break

        # two-loop recursion in complement coordinates
        q = g.Z.copy()
        alphas = []
        for s, y, rho_i in reversed(mem):
            a = rho_i * np.tensordot(s.Z.conj(), q, axes=2).real
            q = q - a * y.Z
            alphas.append(a)
        if mem:
            s_l, y_l, _ = mem[-1]
            gamma = inner(s_l, y_l) / max(inner(y_l, y_l), 1e-300)
        else:
            gamma = 1.0 / max(grad_norm, 1.0)
        r = gamma * q
        for (s, y, rho_i), a in zip(mem, reversed(alphas)):
            b = rho_i * np.tensordot(y.Z.conj(), r, axes=2).real
            r = r + (a - b) * s.Z
        direction = Tangent(base=ws.iso, Z=-r)
        dphi0 = inner(g, direction)
        if dphi0 >= 0:         # not a descent direction: reset memory
            mem = []
            direction = Tangent(base=ws.iso, Z=-g.Z)
            dphi0 = -grad_norm ** 2

        try:
            t, ws_new, f_new, _, g_new = _strong_wolfe(
                ws, direction, f, dphi0, make_ws)
        except LineSearchError as err:
            message = f"line search aborted at iteration {iteration}: {err}"
            break

        new_iso = ws_new.iso
        carry = lambda tan: transport(ws.iso, direction, tan, t, target=new_iso)
        s_new = carry(Tangent(base=ws.iso, Z=t * direction.Z))
        y_new = Tangent(base=new_iso, Z=g_new.Z - carry(g).Z)
        mem = [(carry(s), carry(y), r_i) for s, y, r_i in mem]
        curv = inner(s_new, y_new)
        if curv > 1e-12 * s_new.norm() * y_new.norm():
            mem.append((s_new, y_new, 1.0 / curv))
            if len(mem) > memory:
                mem.pop(0)

        ws, g, f = ws_new, g_new, f_new
        grad_norm = np.sqrt(max(inner(g, g), 0.0))
        iteration += 1

    trace.append((iteration, f, grad_norm))
    mps = ws.mps
    obs = umps.local_observables_umps(mps)
    report = EnsembleReport(
        mode=cfg.mode,
        beta_R=cfg.beta_R if cfg.beta_R is not None else float("nan"),
        lam=cfg.lam if cfg.lam is not None else float("nan"),
        target_E_density=(cfg.target_E_density
                          if cfg.target_E_density is not None else float("nan")),
        D=mps.D, seed=seed,
        energy_density=ws.eps, eta=ws.eta, s2_density=-np.log(ws.eta),
        observables=obs, grad_norm=grad_norm, iterations=iteration,
        converged=converged, wall_time=time.perf_counter() - t_start,
        start_mode=start_mode, trace=trace, message=message)
    return mps, report


def near_mixed_purification(D, d_sys=2, d_anc=None, seed=0, noise=0.05):
    """Maximally mixed product purification embedded at bond D, plus noise.

    The exact embedding is reducible (degenerate transfer spectrum), so a
    small random isometrized perturbation makes it a generic valid start.
    """
    d_anc = d_sys if d_anc is None else d_anc
    rng = np.random.default_rng(seed)
    d = d_sys * d_anc
    A = np.zeros((d, D, D), dtype=complex)
    for s in range(d_sys):
        A[s * d_anc + s, 0, 0] = 1.0 / np.sqrt(d_sys)
    A += noise * (rng.standard_normal(A.shape) + 1j * rng.standard_normal(A.shape))
    from .linalg import qr_isometry, tensor_to_matrix
    A = matrix_to_tensor(qr_isometry(tensor_to_matrix(A)), d, D)
    return umps.gauge_left(A, d_sys=d_sys, d_anc=d_anc)


def sweep(h, beta_R_grid, D_list, seeds=(0,), cfg_factory=None,
          stop: StopRule = None, warm_start=True, init=None):
    """Independent minimize runs over a (beta_R, D, seed) grid.

    Within one (D, seed) lane the runs warm-start from the previous optimum
    (the spec'd protocol for sweeps); failures are recorded and the sweep
    continues.  Returns a list of EnsembleReport.
    """
    reports = []
    for D in D_list:
        for seed in seeds:
            current = None
            for bR in beta_R_grid:
                cfg = (cfg_factory(bR) if cfg_factory
                       else ObjectiveConfig(mode="renyi_free_energy", beta_R=bR))
                if current is None or not warm_start:
                    current = init(D, seed) if init else near_mixed_purification(
                        D, seed=seed)
                    mode = "cold"
                else:
                    mode = "warm"
                try:
                    current, rep = minimize(current, h, cfg, stop=stop, seed=seed,
                                            start_mode=mode)
                    reports.append(rep)
                except Exception as err:   # keep sweeping, record the failure
                    reports.append(EnsembleReport(
                        mode=cfg.mode, beta_R=bR,
                        lam=float("nan"), target_E_density=float("nan"),
                        D=D, seed=seed, energy_density=float("nan"),
                        eta=float("nan"), s2_density=float("nan"),
                        observables={}, grad_norm=float("nan"), iterations=0,
                        converged=False, wall_time=0.0, start_mode=mode,
                        message=f"failed: {err}"))
                    current = None
    return reports
