"""Time evolution of the block Hamiltonians and a Krylov propagator for large
(possibly non-Hermitian) generators."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np
from scipy.linalg import expm

from .model import BlockSpec, PulseSchedule, block_hamiltonian, block_operators, group_blocks

DEFAULT_SUBSTEPS = 4


@dataclass
class BlockPropagation:
    """Evolution of one block under a pulse.

    ``unitaries[j]`` is the cumulative propagator at the j-th step boundary.
    ``populations_r``/``populations_rr`` are the expectation values of
    ``sum_i n_i`` and ``sum_{i<j} n_i n_j`` for the block's computational state,
    sampled on ``times`` (step boundaries refined by ``substeps``).
    """

    block: BlockSpec
    unitaries: np.ndarray
    times: np.ndarray
    populations_r: np.ndarray
    populations_rr: np.ndarray

    @property
    def final(self) -> np.ndarray:
        return self.unitaries[-1]

    @property
    def diagonal_element(self) -> complex:
        """<mu|U(T)|mu>, the only element the diagonal targets see."""
        return complex(self.unitaries[-1][0, 0])


def _check_finite(*vals):
    for v in vals:
        if v is not None and not np.all(np.isfinite(v)):
            raise ValueError("non-finite control value")


def step_matrix(
    block: BlockSpec,
    phi: float,
    rabi: float,
    detuning: float = 0.0,
    decay: float | None = None,
    dt: float = 1.0,
) -> np.ndarray:
    """``exp(-i H_mu dt)`` for constant controls."""
    _check_finite(phi, rabi, detuning, decay, dt)
    if not dt > 0:
        raise ValueError("dt must be positive")
    h = block_hamiltonian(block, phi, rabi, detuning, decay)
    if decay:
        return expm(-1j * dt * h)
    w, v = np.linalg.eigh(h)
    return (v * np.exp(-1j * w * dt)) @ v.conj().T


def _stacked_hamiltonians(block: BlockSpec, pulse: PulseSchedule, decay: float | None) -> tuple[np.ndarray, dict]:
    ops = block_operators(block)
    s_plus = ops["raise"]
    ph = np.exp(1j * pulse.phi)[:, None, None]
    amp = 0.5 * pulse.rabi[:, None, None]
    h = amp * (ph * s_plus + ph.conj() * s_plus.T)
    diag = ops["interaction"][None, :] - pulse.detuning[:, None] * ops["n_exc"][None, :]
    if decay:
        diag = diag - 0.5j * decay * ops["n_exc"][None, :]
    idx = np.arange(block.dim)
    h = h.astype(complex)
    h[:, idx, idx] += diag
    return h, ops


def substep_propagators(
    block: BlockSpec, pulse: PulseSchedule, substeps: int = 1, decay: float | None = None
) -> np.ndarray:
    """Stack of ``exp(-i H_j dt/substeps)`` for every pulse step j."""
    h, _ = _stacked_hamiltonians(block, pulse, decay)
    tau = pulse.dt / substeps
    if decay:
        return expm(-1j * tau * h)
    w, v = np.linalg.eigh(h)
    return np.einsum("mab,mb,mcb->mac", v, np.exp(-1j * w * tau), v.conj())


def _propagate_one(block: BlockSpec, pulse: PulseSchedule, decay: float | None, substeps: int):
    m = pulse.m_steps
    times = np.linspace(0.0, pulse.duration, m * substeps + 1)
    if block.is_trivial:
        ones = np.ones((m + 1, 1, 1), dtype=complex)
        zeros = np.zeros(len(times))
        return ones, times, zeros, zeros.copy()
    ops = block_operators(block)
    sub = substep_propagators(block, pulse, substeps, decay) if m else np.zeros((0, block.dim, block.dim))
    dim = block.dim
    unitaries = np.empty((m + 1, dim, dim), dtype=complex)
    unitaries[0] = np.eye(dim)
    psi = np.empty((m * substeps + 1, dim), dtype=complex)
    psi[0] = 0.0
    psi[0, 0] = 1.0
    u = unitaries[0]
    k = 0
    for j in range(m):
        w = sub[j]
        for _ in range(substeps):
            psi[k + 1] = w @ psi[k]
            k += 1
        u = np.linalg.matrix_power(w, substeps) @ u
        unitaries[j + 1] = u
    prob = np.abs(psi) ** 2
    return unitaries, times, prob @ ops["n_exc"], prob @ ops["n_pairs"]


def propagate_blocks(
    pulse: PulseSchedule,
    blocks: Sequence[BlockSpec],
    decay: float | None = None,
    substeps: int = DEFAULT_SUBSTEPS,
    deduplicate: bool = True,
) -> list[BlockPropagation]:
    """Propagate every block, computing one representative per symmetry class.

    Members of a class reuse the representative's arrays; the representative's
    atom ordering is kept, which leaves ``<mu|U|mu>`` and the populations intact.
    """
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    classes = group_blocks(blocks) if deduplicate else None
    out: dict[tuple[int, ...], BlockPropagation] = {}
    if classes is None:
        for b in blocks:
            u, t, pr, prr = _propagate_one(b, pulse, decay, substeps)
            out[b.mask] = BlockPropagation(b, u, t, pr, prr)
    else:
        for cls in classes:
            u, t, pr, prr = _propagate_one(cls.representative, pulse, decay, substeps)
            for b in cls.members:
                out[b.mask] = BlockPropagation(b, u, t, pr, prr)
    return [out[b.mask] for b in blocks]


# --- Krylov ----------------------------------------------------------------


@dataclass(frozen=True)
class KrylovConfig:
    max_subspace_dim: int = 30
    substeps_per_pulse_step: int = 1
    tolerance: float = 1e-10

    def __post_init__(self):
        if self.max_subspace_dim < 2:
            raise ValueError("max_subspace_dim must be >= 2")
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.substeps_per_pulse_step < 1:
            raise ValueError("substeps_per_pulse_step must be >= 1")


class KrylovConvergenceError(RuntimeError):
    pass


def _arnoldi(apply_a: Callable[[np.ndarray], np.ndarray], v0: np.ndarray, m_max: int):
    """Arnoldi basis of A for a unit vector v0 (two-pass Gram-Schmidt)."""
    n = v0.size
    basis = np.empty((m_max + 1, n), dtype=complex)
    hess = np.zeros((m_max + 1, m_max), dtype=complex)
    basis[0] = v0
    for j in range(m_max):
        w = apply_a(basis[j])
        for _ in range(2):
            c = basis[: j + 1].conj() @ w
            w = w - c @ basis[: j + 1]
            hess[: j + 1, j] += c
        h_next = np.linalg.norm(w)
        hess[j + 1, j] = h_next
        # happy breakdown: the span is invariant under A
        if h_next <= 1e-13 * max(1.0, np.abs(hess[: j + 2, : j + 1]).max()):
            return basis[: j + 1], hess[: j + 2, : j + 1], True
        basis[j + 1] = w / h_next
    return basis[:m_max], hess, False


def krylov_evolve(
    apply_h: Callable[[np.ndarray], np.ndarray],
    state: np.ndarray,
    dt: float,
    config: KrylovConfig | None = None,
) -> np.ndarray:
    """Approximate ``exp(-i H dt) state`` with adaptive sub-stepping.

    ``apply_h`` returns ``H @ v``; H need not be Hermitian. The local error of
    each internal step is estimated from the Arnoldi residual and kept below
    ``tolerance * tau / dt`` so the accumulated error stays below ``tolerance``
    (relative to the norm of ``state``).
    """
    config = config or KrylovConfig()
    if not dt > 0:
        raise ValueError("dt must be positive")
    v = np.asarray(state, dtype=complex).copy()
    beta0 = np.linalg.norm(v)
    if beta0 == 0:
        raise ValueError("state must be non-zero")

    def apply_a(x):
        return -1j * apply_h(x)

    t = 0.0
    tau = dt / config.substeps_per_pulse_step
    tau_min = dt * 1e-9
    m_max = min(config.max_subspace_dim, v.size)
    while dt - t > dt * 1e-13:
        tau = min(tau, dt - t)
        beta = np.linalg.norm(v)
        if beta == 0:
            return v
        basis, hess, breakdown = _arnoldi(apply_a, v / beta, m_max)
        m = basis.shape[0]
        if breakdown:
            hm = hess[:m, :m]
            v = beta * (expm((dt - t) * hm)[:, 0] @ basis)
            break
        h_next = hess[m, m - 1]
        hm = hess[:m, :m]
        while True:
            aug = np.zeros((m + 1, m + 1), dtype=complex)
            aug[:m, :m] = tau * hm
            aug[m, m - 1] = tau * h_next
            f = expm(aug)
            err = beta * abs(f[m, 0])
            allowed = config.tolerance * beta0 * tau / dt
            if err <= allowed:
                break
            tau *= max(0.2, 0.9 * (allowed / err) ** (1.0 / m))
            if tau < tau_min:
                raise KrylovConvergenceError(
                    f"Krylov step did not converge at subspace dimension {m} (error {err:.2e})"
                )
        v = beta * (f[:m, 0] @ basis)
        t += tau
        grow = 0.9 * (allowed / max(err, 1e-300)) ** (1.0 / m)
        tau *= min(2.0, max(1.0, grow))
    return v


def dense_evolve(h: np.ndarray, state: np.ndarray, dt: float) -> np.ndarray:
    """Reference ``expm(-i H dt) @ state`` for small dense H."""
    return expm(-1j * dt * h) @ state


def trapezoid(values: np.ndarray, times: np.ndarray) -> float:
    if len(times) < 2:
        return 0.0
    return float(np.sum(0.5 * (values[1:] + values[:-1]) * np.diff(times)))


def is_unitary(u: np.ndarray, atol: float = 1e-10) -> bool:
    return math.isclose(0.0, float(np.linalg.norm(u.conj().T @ u - np.eye(u.shape[0]))), abs_tol=atol)
