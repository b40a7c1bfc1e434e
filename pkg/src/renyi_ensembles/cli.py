"""Batch front-end: JSON experiment configs in, CSV tables and a manifest out.

Commands: exact-sweep (finite-chain ensembles and entropy curves),
gaussian-dos (closed-form sweep tables), umps-optimize (variational runs over
a beta_R or target grid), evolve (dense nonlinear evolution traces).  Every
run writes a manifest.json echoing the config, seeds, versions, wall time,
per-cell status, and a sha256 digest of every output file.  Cells are
scheduled on a bounded worker pool; files are written atomically.
"""

import argparse
import concurrent.futures
import csv
import hashlib
import json
import math
import os
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import __version__, evolution, exact, gaussian_dos, optimizer, umps


class ConfigError(ValueError):
    pass


_COMMANDS = ("exact-sweep", "gaussian-dos", "umps-optimize", "evolve")

_MODEL_KEYS = {"N": int, "boundary": str, "h_x": float, "h_z": float}

# accepted keys and (type, default) per command; None means required
_SCHEMAS = {
    "exact-sweep": {
        "alphas": (list, [2.0, 3.0, 64.0]),
        "energy_fractions": (list, None),   # fractions of the spectral range
        "beta_grid": (dict, None),
        "dos_bins": (int, 64),
    },
    "gaussian-dos": {
        "sigma": (float, 1.0),
        "sizes": (list, [100, 1000, 10000]),
        "beta_R_grid": (dict, {"min": 0.05, "max": 2.0, "points": 21}),
    },
    "umps-optimize": {
        "beta_R_grid": (dict, {"min": 0.1, "max": 2.0, "points": 5}),
        "targets": (list, None),
        "lam": (float, 10.0),
        "bond_dimensions": (list, [2, 4, 8]),
        "seeds": (list, [0]),
        "grad_tol": (float, 1e-6),
        "max_iter": (int, 5000),
        "warm_start": (bool, True),
    },
    "evolve": {
        "beta_R_grid": (dict, {"min": 0.25, "max": 2.0, "points": 8}),
        "dtau": (float, None),
        "max_steps": (int, 20000),
        "renormalize": (bool, True),
        "monitor_every": (int, 10),
    },
}


def _expand_grid(value, key):
    """Grid shorthand: [lo, hi] x count, an explicit list, or a single number."""
    if isinstance(value, (int, float)):
        return [float(value)]
    if isinstance(value, list):
        return [float(v) for v in value]
    if isinstance(value, dict):
        extra = set(value) - {"min", "max", "points"}
        if extra:
            raise ConfigError(f"{key}: unknown grid keys {sorted(extra)}; "
                              "accepted: min, max, points")
        try:
            lo, hi, n = float(value["min"]), float(value["max"]), int(value["points"])
        except KeyError as missing:
            raise ConfigError(f"{key}: grid needs min, max, points ({missing})")
        if n < 1:
            raise ConfigError(f"{key}: points must be >= 1")
        return [float(x) for x in np.linspace(lo, hi, n)]
    raise ConfigError(f"{key}: expected number, list, or min/max/points object")


@dataclass
class ExperimentConfig:
    command: str
    model: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)
    seed: int = 0
    threads: int = 1
    out_format: str = "csv"

    @property
    def spin_spec(self):
        return exact.SpinChainSpec(**self.model)


def parse_config(text):
    """Validate a JSON config document; unknown keys are named in the error."""
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as err:
        raise ConfigError(f"config is not valid JSON: {err}")
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if "command" not in raw:
        raise ConfigError(f"missing required key 'command'; one of {_COMMANDS}, "
                          "plus 'model' for spin-chain commands")
    command = raw["command"]
    if command not in _COMMANDS:
        raise ConfigError(f"unknown command {command!r}; accepted: {_COMMANDS}")

    known_top = {"command", "model", "seed", "threads", "format"} | set(_SCHEMAS[command])
    unknown = set(raw) - known_top
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}; accepted for "
                          f"{command}: {sorted(known_top)}")

    model = raw.get("model", {})
    if command != "gaussian-dos":
        if not model:
            raise ConfigError("missing required key 'model' "
                              f"(fields: {sorted(_MODEL_KEYS)})")
        bad = set(model) - set(_MODEL_KEYS)
        if bad:
            raise ConfigError(f"model: unknown keys {sorted(bad)}; "
                              f"accepted: {sorted(_MODEL_KEYS)}")
        model = {k: _MODEL_KEYS[k](v) for k, v in model.items()}

    params = {}
    for key, (kind, default) in _SCHEMAS[command].items():
        if key in raw:
            value = raw[key]
            if kind is dict:
                value = _expand_grid(value, key)
            elif kind is list:
                if not isinstance(value, list):
                    raise ConfigError(f"{key}: expected a list")
            elif value is not None:
                try:
                    value = kind(value)
                except (TypeError, ValueError):
                    raise ConfigError(f"{key}: expected {kind.__name__}, "
                                      f"got {value!r}")
            params[key] = value
        elif default is not None:
            params[key] = _expand_grid(default, key) if kind is dict else default
    fmt = raw.get("format", "csv")
    if fmt not in ("csv", "json"):
        raise ConfigError(f"format must be csv|json, got {fmt!r}")
    return ExperimentConfig(command=command, model=model, params=params,
                            seed=int(raw.get("seed", 0)),
                            threads=int(raw.get("threads", 1)),
                            out_format=fmt)


# --- output helpers -----------------------------------------------------------

def _atomic_write(path, writer):
    tmp = f"{path}.tmp.{os.getpid()}"
    with open(tmp, "w", newline="") as fh:
        writer(fh)
    os.replace(tmp, path)


def write_table(path, columns, rows, fmt="csv"):
    if fmt == "json":
        _atomic_write(path, lambda fh: json.dump(
            [dict(zip(columns, row)) for row in rows], fh, indent=1))
    else:
        def emit(fh):
            w = csv.writer(fh)
            w.writerow(columns)
            w.writerows(rows)
        _atomic_write(path, emit)


def _digest(path):
    blob = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            blob.update(chunk)
    return blob.hexdigest()


# --- command implementations ----------------------------------------------------

def _run_exact_sweep(cfg: ExperimentConfig, outdir, record):
    spec = cfg.spin_spec
    sp = exact.spectrum_of(exact.build_ising(spec))
    p = cfg.params
    alphas = [float(a) for a in p["alphas"]]
    width = sp.width
    ext = "csv" if cfg.out_format == "csv" else "json"

    # Fig-1(a)-style distribution dump at Ebar a quarter width below center;
    # both anchoring conventions of the target are recorded.
    target_mid = 0.5 * (sp.energies[0] + sp.energies[-1]) - width / 4.0
    target_abs = -width / 4.0
    target = target_mid
    rows = []
    for alpha in alphas:
        _, beta = exact.gibbs_from_energy(sp, target)
        _, params = exact.mre_from_energy(sp, target, alpha)
        pg = exact.gibbs_weights(sp.energies, beta)
        w = exact._mre_weights(sp.energies, params.mean_energy,
                               params.beta_alpha, alpha)
        pm = w / w.sum()
        for k in range(sp.dim):
            rows.append((alpha, k, sp.energies[k], pg[k], pm[k]))
    write_table(os.path.join(outdir, f"spectrum_ensembles.{ext}"),
                ("alpha", "index", "E_k", "p_gibbs", "p_mre"), rows,
                cfg.out_format)
    record("spectrum_ensembles", dict(
        target_mid_minus_quarter_width=target_mid,
        target_minus_quarter_width=target_abs, used=target))

    # Fig-1(c,d)-style entropy curves over an energy grid (both branches)
    if p.get("energy_fractions"):
        fracs = [float(x) for x in p["energy_fractions"]]
    else:
        fracs = [float(x) for x in np.linspace(0.02, 0.98, 21)]
    rows = []
    for frac in fracs:
        E = sp.energies[0] + frac * width
        negative = E > sp.mean_energy
        rho_g, beta = exact.gibbs_from_energy(sp, E)
        rho_m, params = exact.mre_from_energy(sp, E, 2.0, negative_branch=negative)
        rows.append((frac, E, beta, params.beta_alpha,
                     exact.von_neumann_entropy(rho_g),
                     exact.renyi_entropy(rho_g, 2.0),
                     exact.von_neumann_entropy(rho_m),
                     exact.renyi_entropy(rho_m, 2.0)))
    write_table(os.path.join(outdir, f"entropies.{ext}"),
                ("fraction", "E", "beta", "beta_R", "S_vn_gibbs", "S2_gibbs",
                 "S_vn_mre", "S2_mre"), rows, cfg.out_format)
    record("entropies", dict(points=len(fracs)))

    counts, edges = exact.dos_histogram(sp, p["dos_bins"])
    rows = [(0.5 * (edges[i] + edges[i + 1]), int(counts[i]))
            for i in range(len(counts))]
    write_table(os.path.join(outdir, f"dos.{ext}"), ("E", "count"), rows,
                cfg.out_format)
    record("dos", dict(bins=int(p["dos_bins"])))


def _run_gaussian_dos(cfg: ExperimentConfig, outdir, record):
    p = cfg.params
    rows = gaussian_dos.sweep_table([int(n) for n in p["sizes"]],
                                    p["beta_R_grid"], sigma=p["sigma"])
    ext = "csv" if cfg.out_format == "csv" else "json"
    write_table(os.path.join(outdir, f"gaussian_dos.{ext}"),
                ("N", "beta_R", "mean_E", "mean_E_per_site", "dE_dbetaR",
                 "var_R", "E_perp"), rows, cfg.out_format)
    record("gaussian_dos", dict(rows=len(rows)))


def _run_umps_optimize(cfg: ExperimentConfig, outdir, record):
    spec = cfg.spin_spec
    p = cfg.params
    h = exact.ising_bond_operator(spec.h_x, spec.h_z)
    stop = optimizer.StopRule(grad_tol=p["grad_tol"], max_iter=p["max_iter"])
    seeds = [int(s) + cfg.seed for s in p["seeds"]]
    ext = "csv" if cfg.out_format == "csv" else "json"

    if p.get("targets"):
        cfg_factory = lambda t: optimizer.ObjectiveConfig(
            mode="energy_target", lam=p["lam"], target_E_density=float(t))
        grid = [float(t) for t in p["targets"]]
    else:
        cfg_factory = None
        grid = p["beta_R_grid"]

    def one_lane(D_seed):
        D, seed = D_seed
        return optimizer.sweep(h, grid, [D], seeds=(seed,),
                               cfg_factory=cfg_factory, stop=stop,
                               warm_start=p["warm_start"])

    lanes = [(int(D), s) for D in p["bond_dimensions"] for s in seeds]
    reports = []
    if cfg.threads > 1:
        with concurrent.futures.ThreadPoolExecutor(cfg.threads) as pool:
            for chunk in pool.map(one_lane, lanes):
                reports.extend(chunk)
    else:
        for lane in lanes:
            reports.extend(one_lane(lane))

    rows = [r.csv_row() for r in reports]
    write_table(os.path.join(outdir, f"umps_reports.{ext}"),
                optimizer.EnsembleReport.CSV_COLUMNS, rows, cfg.out_format)
    failures = [r.message for r in reports if r.message]
    record("umps_reports", dict(cells=len(reports), failures=failures))
    return not failures


def _run_evolve(cfg: ExperimentConfig, outdir, record):
    spec = cfg.spin_spec
    if spec.N > 10:
        raise ConfigError("evolve is dense-only; N must be <= 10")
    p = cfg.params
    H = exact.build_ising(spec)
    sp = exact.spectrum_of(H)
    rho0 = evolution.random_full_rank_state(sp.dim, seed=cfg.seed)
    ext = "csv" if cfg.out_format == "csv" else "json"
    summary = []
    for i, bR in enumerate(p["beta_R_grid"]):
        run_cfg = evolution.EvolutionConfig(
            beta_R=bR, dtau=p.get("dtau"), max_steps=p["max_steps"],
            renormalize=p["renormalize"], monitor_every=p["monitor_every"])
        rho, tr = evolution.evolve(rho0, H, run_cfg)
        write_table(os.path.join(outdir, f"trace_{i:02d}.{ext}"),
                    evolution.EvolutionTrace.CSV_COLUMNS, tr.csv_rows(),
                    cfg.out_format)
        mre, params = exact.mre_from_beta(sp, bR, 2.0)
        # final-state dump in the spectrum-table format: weights in the
        # energy eigenbasis (evolved weights read off by basis rotation)
        p_evolved = np.einsum("ik,ij,jk->k", sp.vectors.conj(), rho,
                              sp.vectors, optimize=True).real
        p_mre = exact._mre_weights(sp.energies, params.mean_energy,
                                   params.beta_alpha, 2.0)
        p_mre = p_mre / p_mre.sum()
        rows = [(k, float(sp.energies[k]), float(p_evolved[k]), float(p_mre[k]))
                for k in range(sp.dim)]
        write_table(os.path.join(outdir, f"final_state_{i:02d}.{ext}"),
                    ("index", "E_k", "p_evolved", "p_mre"), rows, cfg.out_format)
        summary.append((bR, tr.renyi2[-1], exact.renyi_entropy(mre, 2.0),
                        tr.energy[-1], params.mean_energy, tr.dtau,
                        len(tr.tau)))
    write_table(os.path.join(outdir, f"evolve_summary.{ext}"),
                ("beta_R", "S2_final", "S2_analytic", "E_final", "E_analytic",
                 "dtau", "samples"), summary, cfg.out_format)
    record("evolve", dict(grid=list(p["beta_R_grid"]),
                          renormalize=p["renormalize"]))


def run(cfg: ExperimentConfig, outdir, verbose=False):
    """Execute a config; returns process exit status (0 iff fully succeeded)."""
    os.makedirs(outdir, exist_ok=True)
    t0 = time.perf_counter()
    cells = {}
    ok = True

    def record(name, info):
        cells[name] = info

    runner = {"exact-sweep": _run_exact_sweep,
              "gaussian-dos": _run_gaussian_dos,
              "umps-optimize": _run_umps_optimize,
              "evolve": _run_evolve}[cfg.command]
    try:
        result = runner(cfg, outdir, record)
        if result is False:
            ok = False
    except Exception as err:
        ok = False
        cells["error"] = repr(err)
        if verbose:
            raise

    manifest = {
        "command": cfg.command,
        "config": {"model": cfg.model, "params": cfg.params,
                   "seed": cfg.seed, "threads": cfg.threads,
                   "format": cfg.out_format},
        "versions": {"renyi_ensembles": __version__,
                     "numpy": np.__version__,
                     "python": sys.version.split()[0]},
        "wall_time_s": time.perf_counter() - t0,
        "status": "ok" if ok else "failed",
        "cells": cells,
        "outputs": {},
    }
    for name in sorted(os.listdir(outdir)):
        if name == "manifest.json" or name.endswith(".tmp"):
            continue
        manifest["outputs"][name] = _digest(os.path.join(outdir, name))
    _atomic_write(os.path.join(outdir, "manifest.json"),
                  lambda fh: json.dump(manifest, fh, indent=1))
    if verbose:
        print(json.dumps(manifest["cells"], indent=1))
    return 0 if ok else 1


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="renyi",
        description="Maximal Renyi ensembles: exact, variational, and "
                    "flow-based construction (batch runner)")
    parser.add_argument("--config", required=True, help="JSON experiment config")
    parser.add_argument("--out", default="renyi-out", help="output directory")
    parser.add_argument("--seed", type=int, default=None,
                        help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="worker pool size (fallback: RENYI_NUM_THREADS)")
    parser.add_argument("--verbose", action="store_true")
    args = parser.parse_args(argv)

    with open(args.config) as fh:
        try:
            cfg = parse_config(fh.read())
        except ConfigError as err:
            parser.error(str(err))
    if args.seed is not None:
        cfg.seed = args.seed
    if args.threads is not None:
        cfg.threads = args.threads
    elif os.environ.get("RENYI_NUM_THREADS"):
        cfg.threads = int(os.environ["RENYI_NUM_THREADS"])
    return run(cfg, args.out, verbose=args.verbose)


if __name__ == "__main__":
    sys.exit(main())
