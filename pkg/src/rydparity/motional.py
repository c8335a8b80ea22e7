"""Intrinsic noise: Rydberg decay, photon recoil and van-der-Waals forces.

Each atom carries one motional mode along a single trap axis. The laser wave
vector points along +x, so ``trap_axis="parallel"`` moves the atoms along x
and ``"perpendicular"`` along y. Atoms that start in ``|0>`` never couple to
light or to other atoms and stay in their motional ground state, so a block
only carries the modes of its active atoms: dimension ``2^k * n_fock^k``.

Basis of a block: internal index (as in :mod:`model`, bit 1 = Rydberg) times
the motional Fock index, atom-major. The trap term is ``omega a^dag a`` so the
initial motional ground state has zero energy in every block.

The displaced interaction ``V(|R_jk + (u_j - u_k) e|)`` is expanded in
``s = (u_j - u_k)/R``: ``(1 + 2 c s + s^2)^-3 = sum_p C_p^(3)(-c) s^p`` with
Gegenbauer polynomials ``C_p^(3)`` and ``c`` the cosine between the trap axis
and ``R_j - R_k``.
"""

from __future__ import annotations

import itertools
import logging
import math
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp
from scipy.linalg import expm
from scipy.special import eval_gegenbauer

from .evaluator import BlockEvaluator
from .model import TWO_PI, AtomGeometry, GateTarget, PhysicalParams, PulseSchedule, build_parity_target, mask_to_index
from .propagate import KrylovConfig, krylov_evolve

log = logging.getLogger(__name__)

LASER_DIRECTION = np.array([1.0, 0.0, 0.0])
AXES = {"parallel": np.array([1.0, 0.0, 0.0]), "perpendicular": np.array([0.0, 1.0, 0.0])}
TRUNCATION_THRESHOLD = 1e-6


@dataclass(frozen=True)
class MotionalConfig:
    n_fock: int = 12
    taylor_order: int = 10
    trap_axis: str = "parallel"
    include_decay: bool = True
    include_recoil: bool = True
    include_vdw_gradient: bool = True
    krylov: KrylovConfig = field(default_factory=KrylovConfig)

    def __post_init__(self):
        # n_fock = 1 freezes the motion; the decay-only run relies on it
        if self.n_fock < 1:
            raise ValueError("n_fock must be >= 1")
        if self.taylor_order < 1:
            raise ValueError("taylor_order must be >= 1")
        if self.trap_axis not in AXES:
            raise ValueError(f"trap_axis must be one of {sorted(AXES)}")

    def with_updates(self, **kw) -> "MotionalConfig":
        return replace(self, **kw)


def taylor_coefficients(order: int, cosine: float) -> np.ndarray:
    """Coefficients g_p of ``(1 + 2 c s + s^2)^-3 = sum_p g_p s^p``, p = 0..order."""
    return np.array([eval_gegenbauer(p, 3.0, -cosine) for p in range(order + 1)])


def _ladder(n: int) -> sp.csr_matrix:
    return sp.diags(np.sqrt(np.arange(1, n)), 1, shape=(n, n), format="csr", dtype=complex)


def _embed(op, site: int, n_sites: int, n: int) -> sp.csr_matrix:
    """``I ⊗ ... ⊗ op ⊗ ... ⊗ I`` on ``n_sites`` modes of size ``n``."""
    out = sp.identity(1, dtype=complex, format="csr")
    for s in range(n_sites):
        out = sp.kron(out, op if s == site else sp.identity(n, dtype=complex, format="csr"), format="csr")
    return out


@dataclass
class NoisyBlock:
    """Sparse pieces of ``H_noisy`` on one block.

    ``H = static + c * drive + conj(c) * drive^dag - detuning * n_exc`` with
    ``c = Omega/2 e^{i phi}``.
    """

    mask: tuple[int, ...]
    active_atoms: tuple[int, ...]
    n_fock: int
    drive: sp.csr_matrix
    drive_h: sp.csr_matrix
    static: sp.csr_matrix
    n_exc: np.ndarray  # diagonal

    @property
    def dim(self) -> int:
        return self.static.shape[0]

    def generator(self, phi: float, rabi: float, detuning: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
        c = 0.5 * rabi * np.exp(1j * phi)
        cc = np.conj(c)
        diag = -detuning * self.n_exc

        def apply_h(v: np.ndarray) -> np.ndarray:
            return self.static @ v + c * (self.drive @ v) + cc * (self.drive_h @ v) + diag * v

        return apply_h

    def dense(self, phi: float, rabi: float, detuning: float = 0.0) -> np.ndarray:
        c = 0.5 * rabi * np.exp(1j * phi)
        h = self.static + c * self.drive + np.conj(c) * self.drive_h
        return h.toarray() - detuning * np.diag(self.n_exc)

    def top_mode_population(self, psi: np.ndarray) -> float:
        """Largest population in the highest Fock level over the active atoms."""
        k = len(self.active_atoms)
        if k == 0 or self.n_fock < 2:
            return 0.0
        p = np.abs(psi.reshape((2**k,) + (self.n_fock,) * k)) ** 2
        return max(float(np.take(p, self.n_fock - 1, axis=1 + a).sum()) for a in range(k))


def build_noisy_block(
    geometry: AtomGeometry,
    params: PhysicalParams,
    mask: Sequence[int],
    config: MotionalConfig,
) -> NoisyBlock:
    mask = tuple(int(b) for b in mask)
    if len(mask) != geometry.n_atoms:
        raise ValueError("mask length does not match the geometry")
    active = tuple(i for i, b in enumerate(mask) if b)
    k = len(active)
    n = config.n_fock
    axis = AXES[config.trap_axis]
    omega_trap = params.omega_par if config.trap_axis == "parallel" else params.omega_perp
    x_zpf = params.x_zpf(omega_trap)

    dim_int = 2**k
    bits = (np.arange(dim_int)[:, None] >> (k - 1 - np.arange(k))[None, :]) & 1
    n_exc_int = bits.sum(axis=1).astype(float)
    n_mot = n**k
    eye_mot = sp.identity(n_mot, dtype=complex, format="csr")

    a = _ladder(n)
    x_single = x_zpf * (a + a.T)  # position operator of one atom (m)
    positions = [_embed(x_single, s, k, n) for s in range(k)]

    # drive: sum_j |r_j><1_j| ⊗ exp(i k x_j)
    kx = params.wavenumber * float(LASER_DIRECTION @ axis)
    use_recoil = config.include_recoil and kx != 0.0 and n > 1
    phase_single = sp.csr_matrix(expm(1j * kx * x_single.toarray())) if use_recoil else None
    drive = sp.csr_matrix((dim_int * n_mot, dim_int * n_mot), dtype=complex)
    for s in range(k):
        flip = 1 << (k - 1 - s)
        src = np.nonzero(bits[:, s] == 0)[0]
        sigma = sp.csr_matrix((np.ones(len(src)), (src | flip, src)), shape=(dim_int, dim_int), dtype=complex)
        mot = _embed(phase_single, s, k, n) if use_recoil else eye_mot
        drive = drive + sp.kron(sigma, mot, format="csr")

    static = sp.csr_matrix((dim_int * n_mot, dim_int * n_mot), dtype=complex)
    if n > 1:
        number = sp.diags(np.arange(n, dtype=complex), format="csr")
        trap = sum(_embed(number, s, k, n) for s in range(k)) if k else sp.csr_matrix((1, 1))
        static = static + omega_trap * sp.kron(sp.identity(dim_int, format="csr"), trap, format="csr")
    if config.include_decay and params.gamma_d > 0:
        static = static + sp.kron(sp.diags(-0.5j * params.gamma_d * n_exc_int), eye_mot, format="csr")

    for s, t in itertools.combinations(range(k), 2):
        i, j = active[s], active[t]
        rvec = geometry.positions[i] - geometry.positions[j]
        r_um = float(np.linalg.norm(rvec))
        v0 = float(params.interaction(r_um))
        proj = sp.diags((bits[:, s] * bits[:, t]).astype(complex), format="csr")
        if config.include_vdw_gradient and n > 1:
            cosine = float(rvec @ axis) / r_um
            coeffs = taylor_coefficients(config.taylor_order, cosine)
            rel = (positions[s] - positions[t]) / (r_um * 1e-6)
            series = coeffs[0] * eye_mot
            power = eye_mot
            for p in range(1, config.taylor_order + 1):
                power = power @ rel
                if coeffs[p] != 0.0:
                    series = series + coeffs[p] * power
            static = static + sp.kron(proj, -v0 * series, format="csr")
        else:
            static = static + sp.kron(proj, -v0 * eye_mot, format="csr")

    static = sp.csr_matrix(static)
    drive = sp.csr_matrix(drive)
    return NoisyBlock(
        mask=mask,
        active_atoms=active,
        n_fock=n,
        drive=drive,
        drive_h=sp.csr_matrix(drive.conj().T),
        static=static,
        n_exc=np.repeat(n_exc_int, n_mot),
    )


def build_noisy_generator(
    geometry: AtomGeometry,
    params: PhysicalParams,
    controls: tuple[float, float, float],
    config: MotionalConfig,
    mask: Sequence[int] | None = None,
) -> Callable[[np.ndarray], np.ndarray]:
    """``v -> H_noisy v`` for one pulse step ``(phi, rabi, detuning)``.

    The block defaults to all atoms in ``|1>``, which holds every coupling.
    """
    mask = (1,) * geometry.n_atoms if mask is None else mask
    block = build_noisy_block(geometry, params, mask, config)
    return block.generator(*controls)


def _block_key(geometry: AtomGeometry, mask: tuple[int, ...], config: MotionalConfig) -> tuple:
    """Blocks with equal keys evolve identically (up to relabelling atoms)."""
    active = [i for i, b in enumerate(mask) if b]
    if len(active) <= 1:
        return (len(active),)
    if len(active) == 2:
        rvec = geometry.positions[active[0]] - geometry.positions[active[1]]
        r = float(np.linalg.norm(rvec))
        c = abs(float(rvec @ AXES[config.trap_axis])) / r
        return (2, round(r, 9), round(c, 9))
    return ("mask",) + mask


@dataclass
class NoisyResult:
    eps: float
    amplitudes: np.ndarray  # <mu, 0_mot| psi_mu(T)> for every mu
    norms: np.ndarray  # final block norms
    max_top_population: float
    truncated: bool


def simulate_noisy(
    pulse: PulseSchedule,
    geometry: AtomGeometry,
    params: PhysicalParams,
    config: MotionalConfig | None = None,
    target: GateTarget | None = None,
) -> NoisyResult:
    """Bell infidelity of the evolved uniform superposition.

    The overlap is taken with ``U_target|psi_init> ⊗ |0_mot>``; population
    lost to decay or left in excited motional states counts as infidelity.
    """
    config = config or MotionalConfig()
    n = geometry.n_atoms
    target = target or build_parity_target(n, math.pi / 4)
    if target.n_qubits != n:
        raise ValueError("target and geometry disagree on the number of qubits")
    amps = np.empty(2**n, dtype=complex)
    norms = np.empty(2**n)
    top = 0.0
    cache: dict[tuple, tuple[complex, float, float]] = {}
    for mask in itertools.product((0, 1), repeat=n):
        key = _block_key(geometry, mask, config)
        if key not in cache:
            cache[key] = _evolve_block(pulse, geometry, params, mask, config)
        amp, norm, block_top = cache[key]
        idx = mask_to_index(mask)
        amps[idx] = amp
        norms[idx] = norm
        top = max(top, block_top)
    s = np.sum(np.conj(target.phases) * amps)
    eps = float(1.0 - abs(s) ** 2 / 4.0**n)
    truncated = top > TRUNCATION_THRESHOLD
    if truncated:
        warnings.warn(f"Fock truncation: population {top:.2e} in the highest motional level")
    return NoisyResult(eps, amps, norms, top, truncated)


def _evolve_block(pulse, geometry, params, mask, config) -> tuple[complex, float, float]:
    if not any(mask) or pulse.m_steps == 0:
        return 1.0 + 0.0j, 1.0, 0.0
    block = build_noisy_block(geometry, params, mask, config)
    psi = np.zeros(block.dim, dtype=complex)
    psi[0] = 1.0
    top = 0.0
    for j in range(pulse.m_steps):
        apply_h = block.generator(pulse.phi[j], pulse.rabi[j], pulse.detuning[j])
        psi = krylov_evolve(apply_h, psi, pulse.dt, config.krylov)
        top = max(top, block.top_mode_population(psi))
    return complex(psi[0]), float(np.linalg.norm(psi)), top


# --- error budget ----------------------------------------------------------


BUDGET_ROWS = (
    ("eps_bell", "Noiseless infidelity E_Bell"),
    ("eps_decay", "Rydberg decay E_decay"),
    ("eps_recoil", "Photon recoil E_recoil"),
    ("eps_force", "VdW force E_force"),
    ("eps_total", "Full simulation E_total"),
    ("t_norm", "Omega0 T/(2pi)"),
    ("t_r_norm", "Omega0 T_R/(2pi)"),
    ("t_rr_norm", "Omega0 T_RR/(2pi)"),
)


@dataclass
class ErrorBudget:
    eps_bell: float
    eps_decay: float
    eps_recoil: float
    eps_force: float
    eps_total: float
    t_norm: float
    t_r_norm: float
    t_rr_norm: float
    n_fock: int = 12
    truncated: bool = False
    raw_runs: dict = field(default_factory=dict)

    @property
    def component_sum(self) -> float:
        return self.eps_bell + self.eps_decay + self.eps_recoil + self.eps_force

    @property
    def additivity_residual(self) -> float:
        return abs(self.eps_total - self.component_sum)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["additivity_residual"] = self.additivity_residual
        return d


def noise_free_times(pulse: PulseSchedule, geometry: AtomGeometry, params: PhysicalParams, target: GateTarget):
    """(eps_Bell, T_R, T_RR) of the noise-free dynamics, times in seconds."""
    ev = BlockEvaluator(geometry, params, target).evaluate(pulse.phi, pulse.rabi, pulse.dt, pulse.detuning, gradient=False)
    return ev.eps_bell, ev.t_r, ev.t_rr


def default_n_fock(n_atoms: int) -> int:
    return 12 if n_atoms <= 3 else 6


def budget_configs(n_fock: int, taylor_order: int = 10, krylov: KrylovConfig | None = None) -> dict[str, MotionalConfig]:
    """One motional run per mechanism; ``total`` switches everything on."""
    kw = {"taylor_order": taylor_order, "krylov": krylov or KrylovConfig()}
    return {
        "decay": MotionalConfig(n_fock=1, trap_axis="parallel", include_decay=True, include_recoil=False, include_vdw_gradient=False, **kw),
        "recoil": MotionalConfig(n_fock=n_fock, trap_axis="parallel", include_decay=False, include_recoil=True, include_vdw_gradient=False, **kw),
        "force": MotionalConfig(n_fock=n_fock, trap_axis="perpendicular", include_decay=False, include_recoil=False, include_vdw_gradient=True, **kw),
        "total": MotionalConfig(n_fock=n_fock, trap_axis="parallel", include_decay=True, include_recoil=True, include_vdw_gradient=True, **kw),
    }


def error_budget(
    pulse: PulseSchedule,
    geometry: AtomGeometry,
    params: PhysicalParams,
    target: GateTarget | None = None,
    n_fock: int | None = None,
    taylor_order: int = 10,
    krylov: KrylovConfig | None = None,
) -> ErrorBudget:
    target = target or build_parity_target(geometry.n_atoms, math.pi / 4)
    n_fock = default_n_fock(geometry.n_atoms) if n_fock is None else n_fock
    eps_bell, t_r, t_rr = noise_free_times(pulse, geometry, params, target)
    runs = {name: simulate_noisy(pulse, geometry, params, cfg, target) for name, cfg in budget_configs(n_fock, taylor_order, krylov).items()}
    scale = params.omega_max / TWO_PI

    def comp(name):
        return max(0.0, runs[name].eps - eps_bell)

    return ErrorBudget(
        eps_bell=eps_bell,
        eps_decay=comp("decay"),
        eps_recoil=comp("recoil"),
        eps_force=comp("force"),
        eps_total=runs["total"].eps,
        t_norm=pulse.duration * scale,
        t_r_norm=t_r * scale,
        t_rr_norm=t_rr * scale,
        n_fock=n_fock,
        truncated=any(r.truncated for r in runs.values()),
        raw_runs={k: r.eps for k, r in runs.items()},
    )


def budget_table(budgets: dict[str, ErrorBudget]) -> list[list[str]]:
    """CSV rows: one row per budget quantity, one column per configuration."""
    names = list(budgets)
    rows = [["quantity"] + names]
    for attr, label in BUDGET_ROWS:
        rows.append([label] + [f"{getattr(budgets[n], attr):.6e}" for n in names])
    return rows


# --- sweeps and fits -------------------------------------------------------


def _map(fn, jobs, n_workers: int):
    if n_workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=n_workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _eps_job(args) -> float:
    pulse, geometry, params, config, target = args
    return simulate_noisy(pulse, geometry, params, config, target).eps


@dataclass
class DecaySweep:
    gamma_grid: list[float]
    eps_decay: list[float]
    analytic: list[float]  # gamma_d T_R
    relative_deviation: list[float]
    t_r: float


def decay_sweep(
    pulse: PulseSchedule,
    geometry: AtomGeometry,
    params: PhysicalParams,
    gamma_grid: Sequence[float],
    target: GateTarget | None = None,
    n_workers: int = 1,
) -> DecaySweep:
    """Simulated decay infidelity against the estimate ``gamma_d T_R``."""
    target = target or build_parity_target(geometry.n_atoms, math.pi / 4)
    eps_bell, t_r, _ = noise_free_times(pulse, geometry, params, target)
    cfg = budget_configs(1)["decay"]
    jobs = [(pulse, geometry, params.with_updates(gamma_d=float(g)), cfg, target) for g in gamma_grid]
    eps = [max(0.0, e - eps_bell) for e in _map(_eps_job, jobs, n_workers)]
    analytic = [float(g) * t_r for g in gamma_grid]
    dev = [abs(e - a) / a if a > 0 else abs(e) for e, a in zip(eps, analytic)]
    return DecaySweep([float(g) for g in gamma_grid], eps, analytic, dev, t_r)


def thermal_factor(omega: float | np.ndarray, temperature: float) -> np.ndarray:
    """``coth(hbar omega / (2 k_B T))``; 1 at zero temperature."""
    from .model import HBAR, K_B

    omega = np.asarray(omega, dtype=float)
    if temperature <= 0:
        return np.ones_like(omega)
    return 1.0 / np.tanh(HBAR * omega / (2.0 * K_B * temperature))


def _fit_through_origin(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """Least-squares ``y = a x`` and the coefficient of determination."""
    a = float(x @ y / (x @ x)) if np.any(x) else 0.0
    ss_res = float(np.sum((y - a * x) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - ss_res / ss_tot if ss_tot > 0 else (1.0 if ss_res == 0 else 0.0)
    return a, r2


@dataclass
class RecoilFit:
    alpha: float
    omega_grid: list[float]
    eps_recoil: list[float]
    t_r: float
    r_squared: float
    temperature: float
    finite_t_extrapolation: list[float]

    def model(self, omega, temperature: float = 0.0, recoil_frequency: float = 0.0):
        return self.alpha * recoil_frequency * np.asarray(omega) * self.t_r**2 * thermal_factor(omega, temperature)


def recoil_fit(
    pulse: PulseSchedule,
    geometry: AtomGeometry,
    params: PhysicalParams,
    omega_grid: Sequence[float],
    temperature: float = 2e-6,
    target: GateTarget | None = None,
    n_fock: int | None = None,
    n_workers: int = 1,
) -> RecoilFit:
    """Fit ``alpha`` in ``alpha (hbar k^2/2m) omega T_R^2 coth(hbar omega/2 k_B T)``.

    The simulations are at zero temperature (coth = 1); ``temperature`` (K)
    only sets the extrapolated curve.
    """
    target = target or build_parity_target(geometry.n_atoms, math.pi / 4)
    n_fock = default_n_fock(geometry.n_atoms) if n_fock is None else n_fock
    eps_bell, t_r, _ = noise_free_times(pulse, geometry, params, target)
    cfg = budget_configs(n_fock)["recoil"]
    omegas = np.array([float(w) for w in omega_grid])
    jobs = [(pulse, geometry, params.with_updates(omega_par=float(w)), cfg, target) for w in omegas]
    eps = np.array([max(0.0, e - eps_bell) for e in _map(_eps_job, jobs, n_workers)])
    x = params.recoil_frequency * omegas * t_r**2
    alpha, r2 = _fit_through_origin(x, eps)
    if not alpha > 0:
        log.warning("recoil fit returned non-positive alpha %.3e (R^2 = %.3f)", alpha, r2)
    extrap = alpha * x * thermal_factor(omegas, temperature)
    return RecoilFit(alpha, omegas.tolist(), eps.tolist(), t_r, r2, temperature, extrap.tolist())


@dataclass
class ForceSweep:
    omega_grid: list[float]
    eps_force: list[float]
    t_rr: float
    alpha_prime: float
    r_squared: float


def force_sweep(
    pulse: PulseSchedule,
    geometry: AtomGeometry,
    params: PhysicalParams,
    omega_grid: Sequence[float],
    target: GateTarget | None = None,
    n_fock: int | None = None,
    n_workers: int = 1,
) -> ForceSweep:
    """Force infidelity against ``omega_perp`` and an attempted fit of
    ``alpha' x_zpf^2 (C6 T_RR / R^7)^2`` (zero temperature); the fit quality is
    only reported."""
    target = target or build_parity_target(geometry.n_atoms, math.pi / 4)
    n_fock = default_n_fock(geometry.n_atoms) if n_fock is None else n_fock
    eps_bell, _, t_rr = noise_free_times(pulse, geometry, params, target)
    cfg = budget_configs(n_fock)["force"]
    omegas = np.array([float(w) for w in omega_grid])
    jobs = [(pulse, geometry, params.with_updates(omega_perp=float(w)), cfg, target) for w in omegas]
    eps = np.array([max(0.0, e - eps_bell) for e in _map(_eps_job, jobs, n_workers)])
    gradient = abs(float(params.interaction(geometry.r_min))) / (geometry.r_min * 1e-6)  # rad/(s m)
    x = np.array([params.x_zpf(w) ** 2 for w in omegas]) * (gradient * t_rr) ** 2
    alpha_p, r2 = _fit_through_origin(x, eps)
    return ForceSweep(omegas.tolist(), eps.tolist(), t_rr, alpha_p, r2)
