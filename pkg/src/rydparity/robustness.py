"""Monte-Carlo robustness of pulses against Gaussian control errors.

Standard deviations are ``eps * omega_max`` for Rabi frequency and detuning
and ``eps * pi`` for the phase. Quasi-static errors draw one offset per shot;
time-varying errors draw one per pulse step. Shot ``s`` of a perturbation
spec uses the same standard-normal draws at every ``eps``, so the grid is
compared with paired samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .evaluator import BlockEvaluator
from .fidelity import diagonal_avg_fidelity
from .model import AtomGeometry, GateTarget, PhysicalParams, PulseSchedule, build_parity_target

CHANNELS = ("rabi", "detuning", "phase")
MODES = ("quasi_static", "time_varying")


@dataclass(frozen=True)
class PerturbationSpec:
    channel: str
    mode: str
    epsilon: float = 0.0

    def __post_init__(self):
        if self.channel not in CHANNELS:
            raise ValueError(f"channel must be one of {CHANNELS}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.channel == "phase" and self.mode == "quasi_static":
            raise ValueError("a static phase offset is a global phase and leaves the gate unchanged")

    def sigma(self, omega0: float) -> float:
        return self.epsilon * (math.pi if self.channel == "phase" else omega0)

    def with_epsilon(self, eps: float) -> "PerturbationSpec":
        return replace(self, epsilon=float(eps))


@dataclass
class RobustnessRow:
    channel: str
    mode: str
    epsilon: float
    mean: float
    std: float
    n: int
    clamped: int
    samples: list[float] = field(default_factory=list, repr=False)


@dataclass
class RobustnessReport:
    nominal: float
    rows: list[RobustnessRow]

    def get(self, channel: str, mode: str, epsilon: float) -> RobustnessRow:
        for r in self.rows:
            if r.channel == channel and r.mode == mode and math.isclose(r.epsilon, epsilon, rel_tol=1e-12, abs_tol=1e-15):
                return r
        raise KeyError((channel, mode, epsilon))

    def table(self) -> list[list]:
        out = [["channel", "mode", "epsilon", "mean", "std", "n"]]
        out += [[r.channel, r.mode, f"{r.epsilon:.6g}", f"{r.mean:.6e}", f"{r.std:.6e}", r.n] for r in self.rows]
        return out


def _avg_infidelity(evaluator: BlockEvaluator, target: GateTarget, pulse: PulseSchedule, phi, rabi, detuning) -> float:
    diag = evaluator.diagonal(phi, rabi, pulse.dt, detuning)
    return 1.0 - diagonal_avg_fidelity(diag, target.phases)


def run_robustness(
    pulse: PulseSchedule,
    geometry: AtomGeometry,
    params: PhysicalParams,
    specs: Sequence[PerturbationSpec],
    epsilons: Sequence[float] | None = None,
    n_samples: int = 50,
    seed: int = 0,
    target: GateTarget | None = None,
) -> RobustnessReport:
    """Mean and sample standard deviation of E_avg per (channel, mode, eps).

    Without ``epsilons`` each spec is evaluated at its own ``epsilon``.
    """
    if n_samples < 1:
        raise ValueError("n_samples must be >= 1")
    target = target or build_parity_target(geometry.n_atoms, math.pi / 4)
    evaluator = BlockEvaluator(geometry, params, target)
    m = pulse.m_steps
    nominal = _avg_infidelity(evaluator, target, pulse, pulse.phi, pulse.rabi, pulse.detuning)
    rows = []
    children = np.random.SeedSequence(seed).spawn(len(specs))
    for spec, child in zip(specs, children):
        width = 1 if spec.mode == "quasi_static" else m
        draws = np.random.default_rng(child).standard_normal((n_samples, width))
        grid = [spec.epsilon] if epsilons is None else [float(e) for e in epsilons]
        for eps in grid:
            s = spec.with_epsilon(eps)
            sigma = s.sigma(params.omega_max)
            values = np.empty(n_samples)
            clamped = 0
            for k in range(n_samples):
                delta = np.broadcast_to(sigma * draws[k], (m,))
                phi, rabi, det = pulse.phi, pulse.rabi, pulse.detuning
                if s.channel == "phase":
                    phi = phi + delta
                elif s.channel == "detuning":
                    det = det + delta
                else:
                    rabi = rabi + delta
                    neg = rabi < 0
                    clamped += int(np.count_nonzero(neg))
                    rabi = np.where(neg, 0.0, rabi)
                values[k] = _avg_infidelity(evaluator, target, pulse, phi, rabi, det)
            std = float(np.std(values, ddof=1)) if n_samples > 1 else 0.0
            rows.append(RobustnessRow(s.channel, s.mode, eps, float(np.mean(values)), std, n_samples, clamped, values.tolist()))
    return RobustnessReport(nominal, rows)
