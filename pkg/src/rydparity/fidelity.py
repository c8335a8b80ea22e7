"""Gate fidelities and Rydberg-time functionals from block propagations."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .model import GateTarget, mask_to_index
from .propagate import BlockPropagation, trapezoid


@dataclass(frozen=True)
class FidelityReport:
    bell_fidelity: float
    avg_fidelity: float
    t_r: float
    t_rr: float
    trace_term: complex

    @property
    def bell_infidelity(self) -> float:
        return 1.0 - self.bell_fidelity

    @property
    def avg_infidelity(self) -> float:
        return 1.0 - self.avg_fidelity


def _overlaps(props: Sequence[BlockPropagation], target: GateTarget) -> np.ndarray:
    n = target.n_qubits
    if len(props) != 2**n:
        raise ValueError(f"expected {2**n} block propagations, got {len(props)}")
    out = np.empty(2**n, dtype=complex)
    seen = set()
    for p in props:
        idx = mask_to_index(p.block.mask)
        seen.add(idx)
        out[idx] = np.conj(target.phases[idx]) * p.diagonal_element
    if len(seen) != 2**n:
        raise ValueError("block propagations do not cover all computational states")
    return out


def diagonal_bell_fidelity(diag: np.ndarray, target_phases: np.ndarray) -> float:
    """``|sum_mu conj(t_mu) U_mumu|^2 / 4^N`` from the computational diagonal."""
    s = np.sum(np.conj(target_phases) * diag)
    return float(abs(s) ** 2 / len(diag) ** 2)


def diagonal_avg_fidelity(diag: np.ndarray, target_phases: np.ndarray) -> float:
    o = np.conj(target_phases) * diag
    d = len(diag)
    return float((abs(o.sum()) ** 2 + np.sum(np.abs(o) ** 2)) / (d * (d + 1)))


def bell_fidelity(props: Sequence[BlockPropagation], target: GateTarget) -> float:
    o = _overlaps(props, target)
    return float(abs(o.sum()) ** 2 / len(o) ** 2)


def avg_fidelity(props: Sequence[BlockPropagation], target: GateTarget) -> float:
    o = _overlaps(props, target)
    d = len(o)
    return float((abs(o.sum()) ** 2 + np.sum(np.abs(o) ** 2)) / (d * (d + 1)))


def rydberg_times(props: Sequence[BlockPropagation]) -> tuple[float, float]:
    """Basis-averaged time-integrated ``sum_i n_i`` and ``sum_{i<j} n_i n_j`` (s)."""
    d = len(props)
    t_r = sum(trapezoid(p.populations_r, p.times) for p in props) / d
    t_rr = sum(trapezoid(p.populations_rr, p.times) for p in props) / d
    return t_r, t_rr


def mean_populations(props: Sequence[BlockPropagation]) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Time-resolved ``n_R(t)`` and ``n_RR(t)`` averaged over the basis."""
    d = len(props)
    times = props[0].times
    n_r = sum(p.populations_r for p in props) / d
    n_rr = sum(p.populations_rr for p in props) / d
    return times, n_r, n_rr


def report(props: Sequence[BlockPropagation], target: GateTarget) -> FidelityReport:
    o = _overlaps(props, target)
    d = len(o)
    s = o.sum()
    t_r, t_rr = rydberg_times(props)
    return FidelityReport(
        bell_fidelity=float(abs(s) ** 2 / d**2),
        avg_fidelity=float((abs(s) ** 2 + np.sum(np.abs(o) ** 2)) / (d * (d + 1))),
        t_r=t_r,
        t_rr=t_rr,
        trace_term=complex(s),
    )


def haar_avg_fidelity(u_full: np.ndarray, target: np.ndarray, projector_cols: np.ndarray) -> float:
    """General ``(|Tr O|^2 + Tr O O^dag) / (d (d+1))`` with ``O = U_t^dag P U P``.

    ``projector_cols`` are the indices of the computational states inside the
    full space of ``u_full``.
    """
    sub = u_full[np.ix_(projector_cols, projector_cols)]
    o = target.conj().T @ sub
    d = len(projector_cols)
    return float((abs(np.trace(o)) ** 2 + np.trace(o @ o.conj().T).real) / (d * (d + 1)))
