"""Command-line entry point: ``rydparity [COMMAND] --config run.yaml``.

Every command writes into the output directory:

* ``resolved_config.json`` - the validated configuration with all defaults,
* command specific JSON/CSV files (see the README for their layout),
* ``manifest.json`` - seed, config hash, library version and SHA-256 of each
  file written by the run.

Files are written atomically (temporary file + rename). JSON is emitted with
sorted keys and two-space indentation so identical runs give identical bytes.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import logging
import math
import os
import sys
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np
import yaml

from . import __version__
from .config import COMMANDS, ConfigError, RunConfig, parse_config, thread_count
from .fidelity import mean_populations
from .grape import OptimizationConfig, RampConfig, optimize, qsl_scan, rabi_tradeoff_scan, theta_sweep
from .model import PhysicalParams, PulseSchedule, build_geometry, build_parity_target, enumerate_blocks
from .motional import (
    MotionalConfig,
    budget_table,
    decay_sweep,
    default_n_fock,
    error_budget,
    force_sweep,
    recoil_fit,
    simulate_noisy,
)
from .propagate import KrylovConfig, propagate_blocks
from .robustness import PerturbationSpec, run_robustness
from .tomography import NoiseChannelSpec, build_decomposition, native_circuit, pauli_error_diagonals

log = logging.getLogger("rydparity")


# --- output helpers ----------------------------------------------------------


class Outputs:
    """Atomic writer that remembers a digest of everything it wrote."""

    def __init__(self, root: Path):
        self.root = root
        self.root.mkdir(parents=True, exist_ok=True)
        self.digests: dict[str, str] = {}

    def write_bytes(self, name: str, data: bytes):
        path = self.root / name
        fd, tmp = tempfile.mkstemp(dir=self.root, prefix=f".{name}.", suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as fh:
                fh.write(data)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        self.digests[name] = hashlib.sha256(data).hexdigest()

    def json(self, name: str, obj):
        self.write_bytes(name, (json.dumps(_plain(obj), indent=2, sort_keys=True) + "\n").encode())

    def csv(self, name: str, rows: Sequence[Sequence]):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        for r in rows:
            w.writerow([_cell(c) for c in r])
        self.write_bytes(name, buf.getvalue().encode())


def _cell(c):
    if isinstance(c, (float, np.floating)):
        return repr(float(c))
    return c


def _plain(obj):
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, complex):
        return [obj.real, obj.imag]
    if isinstance(obj, float) and not math.isfinite(obj):
        return None
    return obj


# --- config -> library objects ---------------------------------------------------


def physical_params(cfg: RunConfig) -> PhysicalParams:
    p = cfg.physics
    kw = dict(
        c6=p["c6_ghz_um6"],
        omega_max=p["omega_max_rad_s"],
        gamma_d=p["gamma_d_per_s"],
        lambda_laser=p["lambda_laser_m"],
        omega_par=p["omega_par_rad_s"],
        omega_perp=p["omega_perp_rad_s"],
    )
    if p["mass_kg"] is not None:
        kw["mass"] = p["mass_kg"]
    return PhysicalParams(**kw)


def optimization_config(cfg: RunConfig, threads: int) -> OptimizationConfig:
    o = cfg.optimization
    return OptimizationConfig(
        duration_norm=cfg.duration_norm,
        m_steps=o["m_steps"],
        eta_delta=o["eta_delta"],
        eta_r=o["eta_r"],
        eta_rr=o["eta_rr"],
        noise_aware=o["noise_aware"],
        time_units=o["time_units"],
        n_starts=o["n_starts"],
        max_iters=o["max_iters"],
        grad_tolerance=o["grad_tolerance"],
        ftol=o["ftol"],
        seed=cfg.seed,
        ramp=RampConfig(enabled=o["ramp_enabled"], kappa=o["ramp_kappa"], tau_ramp=o["ramp_tau_s"]),
        optimize_rabi=o["optimize_rabi"],
        antisymmetric_phase=o["antisymmetric_phase"],
        substeps=o["substeps"],
        n_workers=threads,
    )


def motional_config(cfg: RunConfig, n_atoms: int) -> MotionalConfig:
    n = cfg.noise
    return MotionalConfig(
        n_fock=default_n_fock(n_atoms) if n["n_fock"] is None else n["n_fock"],
        taylor_order=n["taylor_order"],
        trap_axis=n["trap_axis"],
        include_decay=n["include_decay"],
        include_recoil=n["include_recoil"],
        include_vdw_gradient=n["include_vdw_gradient"],
        krylov=KrylovConfig(max_subspace_dim=n["krylov_dim"], tolerance=n["krylov_tolerance"]),
    )


def load_pulse(path: str | os.PathLike) -> PulseSchedule:
    return PulseSchedule.from_dict(json.loads(Path(path).read_text()))


class Context:
    def __init__(self, cfg: RunConfig, out: Outputs, threads: int):
        self.cfg = cfg
        self.out = out
        self.threads = threads
        self.params = physical_params(cfg)
        self.geometry = build_geometry(cfg.geometry, cfg.r_min_um)
        self.target = build_parity_target(self.geometry.n_atoms, cfg.theta)

    def pulse(self) -> PulseSchedule:
        """The configured pulse file, or a freshly optimized pulse."""
        if self.cfg.pulse_file is not None:
            return load_pulse(self.cfg.pulse_file)
        res = optimize(self.geometry, self.params, self.target, optimization_config(self.cfg, self.threads))
        self.out.json("pulse.json", res.pulse.to_dict())
        return res.pulse


# --- commands -----------------------------------------------------------------


def cmd_optimize(ctx: Context) -> dict:
    res = optimize(ctx.geometry, ctx.params, ctx.target, optimization_config(ctx.cfg, ctx.threads))
    ctx.out.json("pulse.json", res.pulse.to_dict())
    ctx.out.csv("cost_history.csv", [["iteration", "cost"]] + [[i + 1, c] for i, c in enumerate(res.cost_history)])
    ctx.out.csv(
        "starts.csv",
        [["start_index", "cost", "eps_bell", "iterations", "converged"]]
        + [[s.start_index, s.cost, s.bell_infidelity, s.iterations, s.converged] for s in res.starts],
    )
    if res.pulse.m_steps:
        props = propagate_blocks(res.pulse, enumerate_blocks(ctx.geometry, ctx.params))
        times, n_r, n_rr = mean_populations(props)
        ctx.out.csv("populations.csv", [["time_s", "n_r", "n_rr"]] + [list(r) for r in zip(times, n_r, n_rr)])
    summary = res.summary(ctx.params)
    ctx.out.json("summary.json", summary)
    return summary


def cmd_qsl_scan(ctx: Context) -> dict:
    durations = ctx.cfg.scan["durations_norm"]
    if not durations:
        raise ValueError("qsl-scan needs scan.durations_norm")
    scan = qsl_scan(ctx.geometry, ctx.params, ctx.target, durations, optimization_config(ctx.cfg, ctx.threads), ctx.cfg.scan["thresholds"])
    ctx.out.csv("qsl_scan.csv", [["duration_norm", "best_eps_bell", "eps_bell_all"]] + [[r["duration_norm"], r["best_eps_bell"], r["eps_bell_all"]] for r in scan.rows()])
    summary = {"t_star_norm": {f"{k:g}": v for k, v in scan.thresholds.items()}, "best_eps_bell": scan.best_infidelity}
    ctx.out.json("summary.json", summary)
    return summary


def cmd_simulate(ctx: Context) -> dict:
    pulse = ctx.pulse()
    mcfg = motional_config(ctx.cfg, ctx.geometry.n_atoms)
    res = simulate_noisy(pulse, ctx.geometry, ctx.params, mcfg, ctx.target)
    summary = {
        "eps": res.eps,
        "n_fock": mcfg.n_fock,
        "trap_axis": mcfg.trap_axis,
        "max_top_mode_population": res.max_top_population,
        "truncated": res.truncated,
    }
    ctx.out.json("summary.json", summary)
    return summary


def cmd_budget(ctx: Context) -> dict:
    pulse = ctx.pulse()
    n_fock = ctx.cfg.noise["n_fock"]
    kry = KrylovConfig(max_subspace_dim=ctx.cfg.noise["krylov_dim"], tolerance=ctx.cfg.noise["krylov_tolerance"])
    b = error_budget(pulse, ctx.geometry, ctx.params, ctx.target, n_fock, ctx.cfg.noise["taylor_order"], kry)
    ctx.out.csv("budget.csv", budget_table({ctx.cfg.geometry: b}))
    summary = b.to_dict()
    scan = ctx.cfg.scan
    if scan["gamma_grid_per_s"]:
        ds = decay_sweep(pulse, ctx.geometry, ctx.params, scan["gamma_grid_per_s"], ctx.target, ctx.threads)
        ctx.out.csv("decay_sweep.csv", [["gamma_d_per_s", "eps_decay", "gamma_t_r", "relative_deviation"]] + [list(r) for r in zip(ds.gamma_grid, ds.eps_decay, ds.analytic, ds.relative_deviation)])
    if scan["omega_par_grid_rad_s"]:
        rf = recoil_fit(pulse, ctx.geometry, ctx.params, scan["omega_par_grid_rad_s"], scan["temperature_k"], ctx.target, n_fock, ctx.threads)
        ctx.out.csv("recoil_fit.csv", [["omega_par_rad_s", "eps_recoil", "fit_zero_t", "fit_finite_t"]] + [
            [w, e, rf.alpha * ctx.params.recoil_frequency * w * rf.t_r**2, x] for w, e, x in zip(rf.omega_grid, rf.eps_recoil, rf.finite_t_extrapolation)
        ])
        summary["recoil_fit"] = {"alpha": rf.alpha, "r_squared": rf.r_squared, "temperature_k": rf.temperature}
    if scan["omega_perp_grid_rad_s"]:
        fs = force_sweep(pulse, ctx.geometry, ctx.params, scan["omega_perp_grid_rad_s"], ctx.target, n_fock, ctx.threads)
        ctx.out.csv("force_sweep.csv", [["omega_perp_rad_s", "eps_force"]] + [list(r) for r in zip(fs.omega_grid, fs.eps_force)])
        summary["force_fit"] = {"alpha_prime": fs.alpha_prime, "r_squared": fs.r_squared}
    ctx.out.json("summary.json", summary)
    return summary


def cmd_tomography(ctx: Context) -> dict:
    t = ctx.cfg.tomography
    rates = {"decay_r_to_1": t["decay_rate_per_s"], "dephase_1r": t["dephasing_rate_per_s"], "dephase_01": t["dephasing_rate_per_s"]}
    channels = [NoiseChannelSpec(k, rates[k]) for k in t["channels"]]
    circuits = {}
    for name in t["implementations"]:
        if name == "native":
            circuits[name] = native_circuit(ctx.pulse(), ctx.geometry, ctx.params, ctx.cfg.theta)
        else:
            if t["z2_pulse_file"] is None:
                raise ValueError(f"{name} needs tomography.z2_pulse_file (a Z_2(pi/4) pulse)")
            circuits[name] = build_decomposition(name, load_pulse(t["z2_pulse_file"]), ctx.cfg.theta, ctx.params, ctx.cfg.r_min_um)
    summary = {}
    for name, circ in circuits.items():
        for ch in channels:
            prof = pauli_error_diagonals(circ, [ch], substeps=t["substeps"])
            ctx.out.csv(f"pauli_{name}_{ch.kind}.csv", prof.rows())
            summary[f"{name}/{ch.kind}"] = {
                "total_error": prof.total_error,
                "leakage": prof.leakage,
                "process_infidelity": prof.process_infidelity,
                "avg_infidelity": prof.avg_infidelity,
                "non_z_mass": prof.non_z_mass(),
            }
    ctx.out.json("summary.json", summary)
    return summary


def cmd_robustness(ctx: Context) -> dict:
    r = ctx.cfg.robustness
    specs = []
    for item in r["perturbations"]:
        channel, _, mode = item.partition(":")
        specs.append(PerturbationSpec(channel, mode))
    rep = run_robustness(ctx.pulse(), ctx.geometry, ctx.params, specs, r["epsilons"], r["n_samples"], ctx.cfg.seed, ctx.target)
    ctx.out.csv("robustness.csv", rep.table())
    summary = {"nominal_avg_infidelity": rep.nominal, "rows": len(rep.rows)}
    ctx.out.json("summary.json", summary)
    return summary


def cmd_theta_sweep(ctx: Context) -> dict:
    thetas = ctx.cfg.scan["thetas"]
    if not thetas:
        raise ValueError("theta-sweep needs scan.thetas (descending, first = base angle)")
    ocfg = optimization_config(ctx.cfg, ctx.threads)
    base_target = build_parity_target(ctx.geometry.n_atoms, thetas[0])
    if ctx.cfg.pulse_file is not None:
        from .grape import OptimizationResult
        from .evaluator import BlockEvaluator

        pulse = load_pulse(ctx.cfg.pulse_file)
        ev = BlockEvaluator(ctx.geometry, ctx.params, base_target).evaluate(pulse.phi, pulse.rabi, pulse.dt, pulse.detuning, gradient=False)
        base = OptimizationResult(pulse, ev.eps_bell, ev.eps_bell, ev.t_r, ev.t_rr, 0, 0, True)
    else:
        base = optimize(ctx.geometry, ctx.params, base_target, ocfg)
    points = theta_sweep(base, thetas, ctx.geometry, ctx.params, ocfg)
    ctx.out.csv("theta_sweep.csv", [["theta", "eps_bell", "cost"]] + [[p.theta, p.bell_infidelity, p.cost] for p in points])
    ctx.out.json("pulses.json", [{"theta": p.theta, "pulse": p.pulse.to_dict()} for p in points])
    summary = {"thetas": [p.theta for p in points], "eps_bell": [p.bell_infidelity for p in points]}
    ctx.out.json("summary.json", summary)
    return summary


def cmd_rabi_scan(ctx: Context) -> dict:
    s = ctx.cfg.scan
    omegas = s["omega_max_list_rad_s"] or [ctx.params.omega_max]
    spacings = [r * 1e6 for r in s["r_min_list_m"]] or [ctx.cfg.r_min_um]
    durations = s["durations_norm"] or [ctx.cfg.duration_norm]
    rows = rabi_tradeoff_scan([ctx.cfg.geometry], omegas, spacings, durations, ctx.params, optimization_config(ctx.cfg, ctx.threads), ctx.cfg.noise["n_fock"])
    ctx.out.csv(
        "rabi_scan.csv",
        [["geometry", "omega_max_rad_s", "r_min_um", "duration_norm", "duration_s", "eps_bell", "eps_total", "t_r_s"]]
        + [[r.geometry, r.omega_max, r.r_min_um, r.duration_norm, r.duration, r.eps_bell, r.eps_total, r.t_r] for r in rows],
    )
    best = min(rows, key=lambda r: r.eps_total)
    summary = {"best": {"omega_max_rad_s": best.omega_max, "r_min_um": best.r_min_um, "duration_norm": best.duration_norm, "eps_total": best.eps_total}}
    ctx.out.json("summary.json", summary)
    return summary


HANDLERS = {
    "optimize": cmd_optimize,
    "qsl-scan": cmd_qsl_scan,
    "simulate": cmd_simulate,
    "budget": cmd_budget,
    "tomography": cmd_tomography,
    "robustness": cmd_robustness,
    "theta-sweep": cmd_theta_sweep,
    "rabi-scan": cmd_rabi_scan,
}


def run(cfg: RunConfig, threads: int | None = None) -> int:
    """Execute one command; returns the process exit status."""
    n_threads = thread_count(cfg, threads)
    out = Outputs(Path(cfg.output_dir))
    out.json("resolved_config.json", cfg.to_dict())
    ctx = Context(cfg, out, n_threads)
    HANDLERS[cfg.command](ctx)
    manifest = {
        "command": cfg.command,
        "seed": cfg.seed,
        "config_hash": cfg.config_hash(),
        "version": __version__,
        "outputs": dict(sorted(out.digests.items())),
    }
    out.json("manifest.json", manifest)
    return 0


def _parse_set(items: Sequence[str]) -> dict:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        out[key.strip()] = yaml.safe_load(value)
    return out


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rydparity", description="Parity phase gate pulses for Rydberg atom arrays.")
    ap.add_argument("command", nargs="?", choices=COMMANDS, help="overrides the config's command")
    ap.add_argument("--config", help="YAML run configuration")
    ap.add_argument("--seed", type=int, help="master seed (overrides the config)")
    ap.add_argument("--output", help="output directory (overrides the config)")
    ap.add_argument("--threads", type=int, help=f"worker processes; the {('RYDPARITY_THREADS')} variable wins")
    ap.add_argument("--set", action="append", default=[], metavar="KEY=VALUE", help="override a config key, e.g. optimization.n_starts=4")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        overrides = _parse_set(args.set)
        if args.command:
            overrides["command"] = args.command
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.output:
            overrides["output_dir"] = args.output
        cfg = parse_config(args.config, overrides)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        return run(cfg, args.threads)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # surfaced with context, never a bare traceback
        print(f"error: {cfg.command} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        if args.verbose:
            raise
        return 1


if __name__ == "__main__":
    sys.exit(main())
