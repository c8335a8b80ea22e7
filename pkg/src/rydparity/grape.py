"""Piecewise-constant pulse optimization for parity phase gates.

Cost functions
--------------
``cost_noise_free``  = eps_Bell + eta_delta * sum_u sum_j ((u_{j+1} - u_j) / 2)^2
``cost_noise_aware`` = cost_noise_free + eta_r * T_R + eta_rr * T_RR

``u`` runs over the phase (rad) and, when it is optimized, the Rabi frequency
in units of ``omega_max``. With ``time_units="normalized"`` (default) the
Rydberg times entering the cost are ``omega_max * T / (2 pi)``; with
``"seconds"`` they are plain seconds.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np
from scipy.optimize import minimize

from .evaluator import BlockEvaluator, Evaluation
from .model import TWO_PI, AtomGeometry, GateTarget, PhysicalParams, PulseSchedule, build_parity_target

log = logging.getLogger(__name__)

STEPS_PER_UNIT_DURATION = 50


@dataclass(frozen=True)
class RampConfig:
    enabled: bool = True
    kappa: float = 10.0
    tau_ramp: float | None = None  # seconds; None -> pi / omega_max

    def tau(self, params: PhysicalParams) -> float:
        return math.pi / params.omega_max if self.tau_ramp is None else self.tau_ramp


@dataclass(frozen=True)
class OptimizationConfig:
    duration_norm: float = 2.1  # omega_max * T / (2 pi)
    m_steps: int | None = None
    eta_delta: float = 1e-3
    eta_r: float = 1e-2
    eta_rr: float = 1e2
    noise_aware: bool = True
    time_units: str = "normalized"
    n_starts: int = 20
    max_iters: int = 2000
    grad_tolerance: float = 1e-9
    ftol: float = 1e-12
    seed: int = 0
    ramp: RampConfig = field(default_factory=RampConfig)
    optimize_rabi: bool = False
    antisymmetric_phase: bool = False
    substeps: int = 4
    n_workers: int = 1

    def __post_init__(self):
        if min(self.eta_delta, self.eta_r, self.eta_rr) < 0:
            raise ValueError("regularization weights must be non-negative")
        if self.time_units not in ("normalized", "seconds"):
            raise ValueError("time_units must be 'normalized' or 'seconds'")
        if self.duration_norm < 0:
            raise ValueError("duration must be non-negative")
        if self.n_starts < 1:
            raise ValueError("n_starts must be >= 1")

    def steps(self) -> int:
        if self.m_steps is not None:
            return int(self.m_steps)
        return max(1, int(round(STEPS_PER_UNIT_DURATION * self.duration_norm))) if self.duration_norm > 0 else 0

    def duration(self, params: PhysicalParams) -> float:
        return self.duration_norm * TWO_PI / params.omega_max

    def time_scale(self, params: PhysicalParams) -> float:
        return params.omega_max / TWO_PI if self.time_units == "normalized" else 1.0

    def with_updates(self, **kw) -> "OptimizationConfig":
        return replace(self, **kw)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StartSummary:
    start_index: int
    cost: float
    bell_infidelity: float
    iterations: int
    converged: bool
    message: str = ""


@dataclass
class OptimizationResult:
    pulse: PulseSchedule
    cost: float
    bell_infidelity: float
    t_r: float
    t_rr: float
    iterations: int
    start_index: int
    converged: bool
    starts: list[StartSummary] = field(default_factory=list)
    cost_history: list[float] = field(default_factory=list)

    def normalized_times(self, params: PhysicalParams) -> dict[str, float]:
        s = params.omega_max / TWO_PI
        return {"t_norm": self.pulse.duration * s, "t_r_norm": self.t_r * s, "t_rr_norm": self.t_rr * s}

    def summary(self, params: PhysicalParams) -> dict:
        out = {
            "eps_bell": self.bell_infidelity,
            "cost": self.cost,
            "t_r": self.t_r,
            "t_rr": self.t_rr,
            "iterations": self.iterations,
            "start_index": self.start_index,
            "converged": self.converged,
        }
        out.update(self.normalized_times(params))
        out["starts"] = [asdict(s) for s in self.starts]
        return out


# --- ramps -----------------------------------------------------------------


def ramp_profile(t: np.ndarray, duration: float, omega_max: float, kappa: float, tau_ramp: float) -> np.ndarray:
    """``omega_max (1 - exp(-kappa (t/tau)^4))`` rising edge, plateau, mirrored fall."""
    t = np.asarray(t, dtype=float)
    edge = np.minimum(t, duration - t)
    out = np.full_like(t, omega_max)
    on_ramp = edge <= tau_ramp
    out[on_ramp] = omega_max * (1.0 - np.exp(-kappa * (np.clip(edge[on_ramp], 0, None) / tau_ramp) ** 4))
    return out


def apply_ramp(pulse: PulseSchedule, params: PhysicalParams, kappa: float = 10.0, tau_ramp: float | None = None) -> PulseSchedule:
    """Replace the Rabi values of the ramp segments by the ramp profile sampled at step midpoints."""
    tau = math.pi / params.omega_max if tau_ramp is None else tau_ramp
    duration = pulse.duration
    if duration < 2 * tau * (1 - 1e-12):
        raise ValueError(f"pulse duration {duration:.3e} s is shorter than two ramps ({2 * tau:.3e} s)")
    mid = (np.arange(pulse.m_steps) + 0.5) * pulse.dt
    edge = np.minimum(mid, duration - mid)
    rabi = pulse.rabi.copy()
    on_ramp = edge < tau
    rabi[on_ramp] = ramp_profile(mid, duration, params.omega_max, kappa, tau)[on_ramp]
    return pulse.with_controls(rabi=rabi)


# --- parametrization ------------------------------------------------------


class Parametrization:
    """Maps the optimizer vector to (phi, rabi) and pulls gradients back."""

    def __init__(self, config: OptimizationConfig, params: PhysicalParams):
        self.config = config
        self.params = params
        m = config.steps()
        self.m = m
        self.duration = config.duration(params)
        self.dt = self.duration / m if m else 1.0
        base = PulseSchedule.constant(m, self.duration, params.omega_max) if m else None
        ramped = np.zeros(m, dtype=bool)
        if base is not None and config.ramp.enabled:
            ramped_pulse = apply_ramp(base, params, config.ramp.kappa, config.ramp.tau(params))
            ramped = ramped_pulse.rabi != base.rabi
            base = ramped_pulse
        self.base_rabi = base.rabi.copy() if base is not None else np.zeros(0)
        self.free_rabi = np.nonzero(~ramped)[0] if config.optimize_rabi else np.zeros(0, dtype=int)
        self.n_phase = m // 2 if config.antisymmetric_phase else m

    @property
    def size(self) -> int:
        return self.n_phase + len(self.free_rabi)

    def phases(self, x: np.ndarray) -> np.ndarray:
        p = x[: self.n_phase]
        if not self.config.antisymmetric_phase:
            return p.copy()
        phi = np.zeros(self.m)
        h = self.n_phase
        phi[:h] = p
        phi[self.m - h :] = -p[::-1]
        return phi

    def rabi(self, x: np.ndarray) -> np.ndarray:
        r = self.base_rabi.copy()
        if len(self.free_rabi):
            r[self.free_rabi] = x[self.n_phase :] * self.params.omega_max
        return r

    def pulse(self, x: np.ndarray) -> PulseSchedule:
        return PulseSchedule(dt=self.dt, phi=self.phases(x), rabi=self.rabi(x))

    def pull_back(self, g_phi: np.ndarray, g_rabi: np.ndarray) -> np.ndarray:
        """Gradient w.r.t. x from gradients w.r.t. full phi and Omega (rad/s)."""
        if self.config.antisymmetric_phase:
            h = self.n_phase
            gp = g_phi[:h] - g_phi[self.m - h :][::-1]
        else:
            gp = g_phi
        gr = g_rabi[self.free_rabi] * self.params.omega_max if len(self.free_rabi) else np.zeros(0)
        return np.concatenate([gp, gr])

    def encode(self, pulse: PulseSchedule) -> np.ndarray:
        """Inverse of :meth:`pulse` (antisymmetric part of phi is projected)."""
        if pulse.m_steps != self.m:
            raise ValueError("pulse does not match the parametrization grid")
        if self.config.antisymmetric_phase:
            h = self.n_phase
            p = 0.5 * (pulse.phi[:h] - pulse.phi[self.m - h :][::-1])
        else:
            p = pulse.phi.copy()
        r = pulse.rabi[self.free_rabi] / self.params.omega_max if len(self.free_rabi) else np.zeros(0)
        return np.concatenate([p, r])

    def bounds(self):
        return [(None, None)] * self.n_phase + [(0.0, 1.0)] * len(self.free_rabi)

    def random_start(self, rng: np.random.Generator) -> np.ndarray:
        p = rng.uniform(-math.pi, math.pi, size=self.n_phase)
        r = np.ones(len(self.free_rabi))
        return np.concatenate([p, r])


# --- costs -----------------------------------------------------------------


def smoothness_penalty(pulse: PulseSchedule, omega_max: float, include_rabi: bool) -> tuple[float, np.ndarray, np.ndarray]:
    """sum ((u_{j+1} - u_j)/2)^2 and its gradient w.r.t. phi and Omega."""

    def term(u):
        du = np.diff(u)
        g = np.zeros_like(u)
        g[:-1] -= 0.5 * du
        g[1:] += 0.5 * du
        return 0.25 * float(du @ du), g

    val, g_phi = term(pulse.phi)
    g_rabi = np.zeros(pulse.m_steps)
    if include_rabi:
        v_r, g_r = term(pulse.rabi / omega_max)
        val += v_r
        g_rabi = g_r / omega_max
    return val, g_phi, g_rabi


def _evaluate(evaluator: BlockEvaluator, pulse: PulseSchedule, grad: bool) -> Evaluation:
    return evaluator.evaluate(pulse.phi, pulse.rabi, pulse.dt, pulse.detuning, gradient=grad)


def cost_noise_free(pulse: PulseSchedule, evaluator: BlockEvaluator, eta_delta: float, optimize_rabi: bool = False) -> float:
    ev = _evaluate(evaluator, pulse, False)
    smooth, _, _ = smoothness_penalty(pulse, evaluator.params.omega_max, optimize_rabi)
    return ev.eps_bell + eta_delta * smooth


def cost_noise_aware(pulse: PulseSchedule, evaluator: BlockEvaluator, config: OptimizationConfig) -> float:
    return cost_and_gradient(pulse, evaluator, config, gradient=False)[0]


def cost_and_gradient(
    pulse: PulseSchedule,
    evaluator: BlockEvaluator,
    config: OptimizationConfig,
    gradient: bool = True,
    noise_aware: bool | None = None,
):
    """Cost and its gradient w.r.t. every phi_j and Omega_j (rad/s).

    Returns ``(cost, grad_phi, grad_rabi, evaluation)``; gradients are None when
    ``gradient`` is false.
    """
    noise_aware = config.noise_aware if noise_aware is None else noise_aware
    params = evaluator.params
    ev = _evaluate(evaluator, pulse, gradient)
    smooth, gs_phi, gs_rabi = smoothness_penalty(pulse, params.omega_max, config.optimize_rabi)
    scale = config.time_scale(params)
    w_r = config.eta_r * scale if noise_aware else 0.0
    w_rr = config.eta_rr * scale if noise_aware else 0.0
    cost = ev.eps_bell + config.eta_delta * smooth + w_r * ev.t_r + w_rr * ev.t_rr
    if not gradient:
        return cost, None, None, ev
    mix = np.array([1.0, w_r, w_rr])
    g_phi = mix @ ev.grad_phi + config.eta_delta * gs_phi
    g_rabi = mix @ ev.grad_rabi + config.eta_delta * gs_rabi
    return cost, g_phi, g_rabi, ev


def gradient(pulse: PulseSchedule, evaluator: BlockEvaluator, config: OptimizationConfig, noise_aware: bool | None = None) -> dict[str, np.ndarray]:
    _, g_phi, g_rabi, _ = cost_and_gradient(pulse, evaluator, config, True, noise_aware)
    return {"phi": g_phi, "rabi": g_rabi}


# --- optimization ----------------------------------------------------------


def _run_start(args) -> tuple[int, np.ndarray, float, int, bool, str, list[float]]:
    geometry, params, target, config, start_index, x0 = args
    evaluator = BlockEvaluator(geometry, params, target, substeps=config.substeps)
    par = Parametrization(config, params)
    history: list[float] = []

    def fun(x):
        pulse = par.pulse(x)
        cost, g_phi, g_rabi, _ = cost_and_gradient(pulse, evaluator, config)
        return cost, par.pull_back(g_phi, g_rabi)

    def callback(intermediate_result):
        history.append(float(intermediate_result.fun))

    res = minimize(
        fun,
        x0,
        jac=True,
        method="L-BFGS-B",
        bounds=par.bounds(),
        callback=callback,
        options={"maxiter": config.max_iters, "gtol": config.grad_tolerance, "ftol": config.ftol, "maxcor": 20},
    )
    return start_index, res.x, float(res.fun), int(res.nit), bool(res.success), str(res.message), history


def start_vectors(config: OptimizationConfig, params: PhysicalParams) -> list[np.ndarray]:
    """Initial guesses; the RNG of start i is child i of the master seed."""
    par = Parametrization(config, params)
    children = np.random.SeedSequence(config.seed).spawn(config.n_starts)
    return [par.random_start(np.random.default_rng(c)) for c in children]


def _finish(
    geometry: AtomGeometry,
    params: PhysicalParams,
    target: GateTarget,
    config: OptimizationConfig,
    outcomes: list,
) -> OptimizationResult:
    par = Parametrization(config, params)
    evaluator = BlockEvaluator(geometry, params, target, substeps=config.substeps)
    summaries = []
    best = None
    for start_index, x, cost, nit, ok, msg, hist in sorted(outcomes, key=lambda o: o[0]):
        ev = _evaluate(evaluator, par.pulse(x), False)
        summaries.append(StartSummary(start_index, cost, ev.eps_bell, nit, ok, msg))
        if not ok:
            log.info("start %d did not converge: %s", start_index, msg)
        # strict comparison keeps the lowest start index on ties
        if best is None or cost < best[2]:
            best = (start_index, x, cost, nit, ok, hist, ev)
    start_index, x, cost, nit, ok, hist, ev = best
    return OptimizationResult(
        pulse=par.pulse(x),
        cost=cost,
        bell_infidelity=ev.eps_bell,
        t_r=ev.t_r,
        t_rr=ev.t_rr,
        iterations=nit,
        start_index=start_index,
        converged=ok,
        starts=summaries,
        cost_history=hist,
    )


def _zero_duration_result(geometry, params, target, config) -> OptimizationResult:
    evaluator = BlockEvaluator(geometry, params, target, substeps=config.substeps)
    ev = evaluator.evaluate(np.zeros(0), np.zeros(0), 1.0, gradient=False)
    pulse = PulseSchedule(dt=1.0, phi=np.zeros(0), rabi=np.zeros(0))
    return OptimizationResult(pulse, ev.eps_bell, ev.eps_bell, 0.0, 0.0, 0, 0, True,
                              [StartSummary(0, ev.eps_bell, ev.eps_bell, 0, True, "no controls")])


def optimize(
    geometry: AtomGeometry,
    params: PhysicalParams,
    target: GateTarget | None = None,
    config: OptimizationConfig | None = None,
    initial: Sequence[PulseSchedule] | None = None,
) -> OptimizationResult:
    """Multi-start L-BFGS-B; returns the lowest-cost start.

    ``initial`` replaces the random initial guesses with given pulses (one start
    each), which is how warm starts are expressed.
    """
    config = config or OptimizationConfig()
    target = target or build_parity_target(geometry.n_atoms, math.pi / 4)
    if config.steps() == 0:
        return _zero_duration_result(geometry, params, target, config)
    par = Parametrization(config, params)
    if initial is not None:
        x0s = [par.encode(p) for p in initial]
    else:
        x0s = start_vectors(config, params)
    jobs = [(geometry, params, target, config, i, x0) for i, x0 in enumerate(x0s)]
    if config.n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=config.n_workers) as pool:
            outcomes = list(pool.map(_run_start, jobs))
    else:
        outcomes = [_run_start(j) for j in jobs]
    return _finish(geometry, params, target, config, outcomes)


# --- scans -----------------------------------------------------------------


@dataclass
class QSLScan:
    durations_norm: list[float]
    best_infidelity: list[float]
    all_infidelities: list[list[float]]
    thresholds: dict[float, float | None]

    def rows(self) -> list[dict]:
        return [
            {"duration_norm": d, "best_eps_bell": b, "eps_bell_all": ";".join(f"{e:.6e}" for e in a)}
            for d, b, a in zip(self.durations_norm, self.best_infidelity, self.all_infidelities)
        ]


def qsl_scan(
    geometry: AtomGeometry,
    params: PhysicalParams,
    target: GateTarget,
    durations_norm: Sequence[float],
    config: OptimizationConfig,
    thresholds: Sequence[float] = (1e-6, 1e-4),
) -> QSLScan:
    """Best Bell infidelity per duration and the shortest duration under each threshold."""
    durations = [float(d) for d in durations_norm]
    if any(b < a for a, b in zip(durations, durations[1:])):
        raise ValueError("durations must be ascending")
    best, every = [], []
    for d in durations:
        res = optimize(geometry, params, target, config.with_updates(duration_norm=d, m_steps=None if config.m_steps is None else config.m_steps))
        best.append(min(s.bell_infidelity for s in res.starts))
        every.append([s.bell_infidelity for s in res.starts])
    t_star = {}
    for th in thresholds:
        t_star[th] = next((d for d, b in zip(durations, best) if b <= th), None)
    return QSLScan(durations, best, every, t_star)


@dataclass
class ThetaPoint:
    theta: float
    pulse: PulseSchedule
    bell_infidelity: float
    cost: float


def theta_sweep(
    base: OptimizationResult,
    thetas: Sequence[float],
    geometry: AtomGeometry,
    params: PhysicalParams,
    config: OptimizationConfig,
) -> list[ThetaPoint]:
    """Warm-started family of Z_N(theta) pulses along a descending theta grid.

    The first grid point is taken to be the angle the base pulse was optimized
    for and is returned unchanged.
    """
    thetas = [float(t) for t in thetas]
    if not thetas:
        return []
    out = [ThetaPoint(thetas[0], base.pulse, base.bell_infidelity, base.cost)]
    current = base.pulse
    if config.antisymmetric_phase:
        phi = current.phi
        if not np.allclose(phi, -phi[::-1], atol=0):
            current = current.with_controls(phi=0.5 * (phi - phi[::-1]))
    cfg = config.with_updates(
        n_starts=1,
        m_steps=base.pulse.m_steps,
        duration_norm=base.pulse.duration * params.omega_max / TWO_PI,
    )
    for th in thetas[1:]:
        target = build_parity_target(geometry.n_atoms, th)
        res = optimize(geometry, params, target, cfg, initial=[current])
        out.append(ThetaPoint(th, res.pulse, res.bell_infidelity, res.cost))
        current = res.pulse
    return out


MAX_DURATION_NORM = 7.0


@dataclass
class RabiScanRow:
    geometry: str
    omega_max: float
    r_min_um: float
    duration_norm: float
    duration: float
    eps_bell: float
    eps_total: float
    t_r: float


def rabi_tradeoff_scan(
    geometries: Sequence[str],
    omega_max_list: Sequence[float],
    spacings_um: Sequence[float],
    durations_norm: Sequence[float],
    params: PhysicalParams,
    config: OptimizationConfig,
    n_fock: int | None = None,
) -> list[RabiScanRow]:
    """Optimize and simulate every (geometry, Omega_max, R_min, duration) point.

    Durations are normalized, ``Omega_max T / (2 pi)``, and capped at 7.
    """
    from .model import build_geometry
    from .motional import budget_configs, default_n_fock, simulate_noisy

    if any(d > MAX_DURATION_NORM for d in durations_norm):
        raise ValueError(f"normalized durations must not exceed {MAX_DURATION_NORM}")
    rows = []
    for name in geometries:
        for omega_max in omega_max_list:
            p = params.with_updates(omega_max=float(omega_max))
            for r in spacings_um:
                geometry = build_geometry(name, float(r))
                target = build_parity_target(geometry.n_atoms, math.pi / 4)
                nf = default_n_fock(geometry.n_atoms) if n_fock is None else n_fock
                total_cfg = budget_configs(nf)["total"]
                for d in durations_norm:
                    res = optimize(geometry, p, target, config.with_updates(duration_norm=float(d)))
                    noisy = simulate_noisy(res.pulse, geometry, p, total_cfg, target)
                    rows.append(
                        RabiScanRow(name, float(omega_max), float(r), float(d), res.pulse.duration, res.bell_infidelity, noisy.eps, res.t_r)
                    )
    return rows
