"""First-order Pauli error profiles of dissipative parity-gate circuits.

For jump operators ``L`` (rate gamma) acting on the three-level atoms, the
error is characterised through ``A(t) = P U(t)^dag L U(t) P`` where ``U(t)`` is
the ideal evolution from the start of the circuit and ``P`` projects onto the
computational subspace (d = 2^N). To first order in gamma T:

* ``p_m = gamma/d^2 ∫ |Tr[A E_m^dag]|^2 dt`` (errors referred to the circuit
  input, i.e. the interaction picture),
* process infidelity ``E_chi = gamma ∫ (|L U P|^2/d - |Tr A|^2/d^2) dt``,
* leakage ``L = gamma ∫ (|L U P|^2 - |A|^2)/d dt``,
* ``E_avg = gamma ∫ (|L U P|^2/d - (|A|^2 + |Tr A|^2)/(d(d+1))) dt``,

with Frobenius norms. Ideal single-qubit layers act instantaneously and
noise-free; during a pulse segment only its driven atoms carry jump operators.
"""

from __future__ import annotations

import functools
import itertools
import math
import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .model import AtomGeometry, PhysicalParams, PulseSchedule, build_parity_target, pairwise_interaction

CHANNEL_KINDS = ("decay_r_to_1", "dephase_1r", "dephase_01")
FIRST_ORDER_WARN = 0.05

_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}

# single-atom operators in the {|0>, |1>, |r>} basis
_SIGMA_PLUS = np.zeros((3, 3))
_SIGMA_PLUS[2, 1] = 1.0
_N_R = np.diag([0.0, 0.0, 1.0])
_JUMPS = {
    "decay_r_to_1": np.array([[0, 0, 0], [0, 0, 1], [0, 0, 0]], dtype=complex),
    "dephase_1r": np.diag([0, 1, -1]).astype(complex),
    "dephase_01": np.diag([1, -1, 0]).astype(complex),
}


class CompositionError(RuntimeError):
    pass


@dataclass(frozen=True)
class NoiseChannelSpec:
    kind: str
    rate: float  # 1/s

    def __post_init__(self):
        if self.kind not in CHANNEL_KINDS:
            raise ValueError(f"unknown channel kind {self.kind!r}")
        if self.rate < 0:
            raise ValueError("rate must be non-negative")

    @property
    def jump(self) -> np.ndarray:
        return _JUMPS[self.kind]


def default_channels() -> dict[str, NoiseChannelSpec]:
    return {
        "decay_r_to_1": NoiseChannelSpec("decay_r_to_1", 12.5e3),
        "dephase_1r": NoiseChannelSpec("dephase_1r", 0.1e3),
        "dephase_01": NoiseChannelSpec("dephase_01", 0.1e3),
    }


# --- circuits --------------------------------------------------------------


@dataclass
class PulseSegment:
    """A noisy pulse driving ``qubits``; ``interactions`` holds C6/R^6 (rad/s)."""

    qubits: tuple[int, ...]
    pulse: PulseSchedule
    interactions: np.ndarray
    ideal: np.ndarray  # diagonal of the ideal gate on ``qubits``
    label: str = "pulse"


@dataclass
class GateSegment:
    qubits: tuple[int, ...]
    matrix: np.ndarray
    label: str = ""


@dataclass
class CircuitImplementation:
    name: str
    n_qubits: int
    theta: float
    segments: list = field(default_factory=list)

    @property
    def n_pulses(self) -> int:
        return sum(isinstance(s, PulseSegment) for s in self.segments)

    @property
    def duration(self) -> float:
        return sum(s.pulse.duration for s in self.segments if isinstance(s, PulseSegment))

    def count(self, label: str) -> int:
        return sum(s.label == label for s in self.segments)

    def ideal_unitary(self) -> np.ndarray:
        u = np.eye(2**self.n_qubits, dtype=complex)
        for seg in self.segments:
            m = np.diag(seg.ideal) if isinstance(seg, PulseSegment) else seg.matrix
            u = _embed_qubits(m, seg.qubits, self.n_qubits) @ u
        return u

    def verify(self, atol: float = 1e-10) -> float:
        """Distance of the ideal composition to Z_N(theta) up to a global phase."""
        u = self.ideal_unitary()
        target = np.diag(build_parity_target(self.n_qubits, self.theta).phases)
        ov = np.trace(target.conj().T @ u)
        phase = ov / abs(ov) if abs(ov) > 0 else 1.0
        err = float(np.max(np.abs(u - phase * target)))
        if err > atol:
            raise CompositionError(f"{self.name}: ideal circuit differs from Z_{self.n_qubits}(theta) by {err:.2e}")
        return err


def _embed_qubits(m: np.ndarray, qubits: Sequence[int], n: int, level_dim: int = 2) -> np.ndarray:
    """Lift an operator on ``qubits`` (in the given order) to n sites of size ``level_dim``."""
    k = len(qubits)
    sub = level_dim**k
    if m.shape != (sub, sub):
        raise ValueError("operator size does not match the qubit list")
    rest = [q for q in range(n) if q not in qubits]
    full = np.kron(m, np.eye(level_dim ** len(rest)))
    order = list(qubits) + rest
    # axes of ``full`` follow ``order``; permute back to 0..n-1
    t = full.reshape((level_dim,) * (2 * n))
    inv = np.argsort(order)
    t = t.transpose(list(inv) + [n + i for i in inv])
    return t.reshape(level_dim**n, level_dim**n)


def _lift_qubit_gate(m: np.ndarray) -> np.ndarray:
    """Single-qubit gate on {|0>,|1>} acting as identity on |r>."""
    k = int(round(math.log2(m.shape[0])))
    out = np.eye(3**k, dtype=complex)
    idx = [sum(b * 3 ** (k - 1 - i) for i, b in enumerate(bits)) for bits in itertools.product((0, 1), repeat=k)]
    out[np.ix_(idx, idx)] = m
    return out


HADAMARD = np.array([[1, 1], [1, -1]], dtype=complex) / math.sqrt(2)
S_DAG = np.diag([1, -1j]).astype(complex)


def rz(theta: float) -> np.ndarray:
    """``exp(-i theta Z)``: the single-qubit rotation that completes Z_N(theta)."""
    return np.diag([np.exp(-1j * theta), np.exp(1j * theta)])


def cz_from_z2(z2_diag: np.ndarray) -> np.ndarray:
    """``(S^dag ⊗ S^dag) Z_2`` for a Z_2(pi/4) diagonal normalised to ``U_00 = 1``."""
    return np.kron(S_DAG, S_DAG) @ np.diag(z2_diag)


def _normalized_diag(n: int, theta: float) -> np.ndarray:
    return np.asarray(build_parity_target(n, theta, normalize=True).phases)


def native_circuit(pulse: PulseSchedule, geometry: AtomGeometry, params: PhysicalParams, theta: float = math.pi / 4) -> CircuitImplementation:
    n = geometry.n_atoms
    seg = PulseSegment(tuple(range(n)), pulse, pairwise_interaction(geometry, params), _normalized_diag(n, theta), "native")
    circ = CircuitImplementation("native", n, theta, [seg])
    circ.verify()
    return circ


def build_decomposition(
    name: str,
    z2_pulse: PulseSchedule,
    theta: float,
    params: PhysicalParams,
    r_min: float = 2.0,
    z2_theta_pulse: PulseSchedule | None = None,
) -> CircuitImplementation:
    """Four-qubit V, X and ZZ circuits built from a noisy Z_2(pi/4) pulse.

    CNOT(c, t) = H_t · (S^dag ⊗ S^dag) · Z_2(pi/4) · H_t with ideal H and S^dag.
    CNOTs drawn in parallel are applied one after the other (they act on
    disjoint qubits and commute). The ZZ circuit needs a Z_2(theta) pulse;
    the Z_2(pi/4) pulse is reused when theta = pi/4.
    """
    if name == "native":
        raise ValueError("use native_circuit for the native implementation")
    v_pair = params.interaction(r_min)
    inter = np.array([[0.0, v_pair], [v_pair, 0.0]])
    z2_diag = _normalized_diag(2, math.pi / 4)
    segs: list = []

    def cnot(c, t):
        segs.append(GateSegment((t,), HADAMARD, "H"))
        segs.append(PulseSegment((c, t), z2_pulse, inter, z2_diag, "Z2"))
        segs.append(GateSegment((c, t), np.kron(S_DAG, S_DAG), "Sdag"))
        segs.append(GateSegment((t,), HADAMARD, "H"))

    if name == "v_decomposition":
        ladder = [(0, 1), (1, 2), (2, 3)]
        for c, t in ladder:
            cnot(c, t)
        segs.append(GateSegment((3,), rz(theta), "Rz"))
        for c, t in reversed(ladder):
            cnot(c, t)
    elif name == "x_decomposition":
        for c, t in [(0, 1), (3, 2), (1, 2)]:
            cnot(c, t)
        segs.append(GateSegment((2,), rz(theta), "Rz"))
        for c, t in [(1, 2), (0, 1), (3, 2)]:
            cnot(c, t)
    elif name == "zz_decomposition":
        if z2_theta_pulse is None:
            if not math.isclose(theta, math.pi / 4, abs_tol=1e-12):
                raise ValueError("zz_decomposition at theta != pi/4 needs a Z_2(theta) pulse")
            z2_theta_pulse = z2_pulse
        for c, t in [(0, 1), (3, 2)]:
            cnot(c, t)
        segs.append(PulseSegment((1, 2), z2_theta_pulse, inter, _normalized_diag(2, theta), "Z2theta"))
        for c, t in [(0, 1), (3, 2)]:
            cnot(c, t)
    else:
        raise ValueError(f"unknown decomposition {name!r}")
    circ = CircuitImplementation(name, 4, theta, segs)
    circ.verify()
    return circ


# --- Pauli profile -----------------------------------------------------------


@functools.lru_cache(maxsize=None)
def pauli_labels(n: int) -> tuple[str, ...]:
    return tuple("".join(p) for p in itertools.product("IXYZ", repeat=n))


@functools.lru_cache(maxsize=None)
def _pauli_rows(n: int) -> np.ndarray:
    """Row m holds conj(E_m) flattened, so ``rows @ A.ravel() = Tr[A E_m^dag]``."""
    mats = []
    for label in pauli_labels(n):
        m = np.array([[1.0 + 0j]])
        for c in label:
            m = np.kron(m, _PAULI[c])
        mats.append(m.conj().ravel())
    return np.array(mats)


@dataclass
class PauliErrorProfile:
    probabilities: dict[str, float]
    total_error: float
    leakage: float
    process_infidelity: float
    avg_infidelity: float
    avg_infidelity_direct: float
    duration: float
    t_r: float  # (1/d) sum_k ∫ |L_k U P|^2 over decay channels, seconds
    refinement_change: float | None = None

    @property
    def n_qubits(self) -> int:
        return len(next(iter(self.probabilities)))

    def non_z_mass(self) -> float:
        return sum(p for k, p in self.probabilities.items() if any(c in "XY" for c in k))

    def dominant(self, threshold: float = 1e-6) -> dict[str, float]:
        return {k: p for k, p in self.probabilities.items() if k != "I" * len(k) and p > threshold}

    def relation_residual(self) -> float:
        return abs(self.avg_infidelity - self.avg_infidelity_direct)

    def rows(self) -> list[list[str]]:
        out = [["pauli_string", "probability"]]
        out += [[k, f"{p:.12e}"] for k, p in self.probabilities.items()]
        out.append(["total", f"{self.total_error:.12e}"])
        out.append(["leakage", f"{self.leakage:.12e}"])
        out.append(["E_chi", f"{self.process_infidelity:.12e}"])
        out.append(["E_avg", f"{self.avg_infidelity:.12e}"])
        return out


def _full_operator(single: np.ndarray, atom: int, n: int) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for a in range(n):
        out = np.kron(out, single if a == atom else np.eye(3))
    return out


def _segment_hamiltonians(seg: PulseSegment, n: int):
    """Static pieces of the full-space Hamiltonian of a pulse segment."""
    s_plus = sum(_full_operator(_SIGMA_PLUS, q, n) for q in seg.qubits)
    n_tot = sum(_full_operator(_N_R, q, n) for q in seg.qubits)
    inter = np.zeros((3**n, 3**n), dtype=complex)
    for (i, a), (j, b) in itertools.combinations(enumerate(seg.qubits), 2):
        inter -= seg.interactions[i, j] * (_full_operator(_N_R, a, n) @ _full_operator(_N_R, b, n))
    return s_plus, np.real(np.diag(n_tot)), inter


def computational_indices(n: int) -> np.ndarray:
    return np.array([sum(b * 3 ** (n - 1 - i) for i, b in enumerate(bits)) for bits in itertools.product((0, 1), repeat=n)])


class _Accumulator:
    def __init__(self, n: int, channels: Sequence[NoiseChannelSpec]):
        self.n = n
        self.d = 2**n
        self.channels = [c for c in channels if c.rate > 0]
        self.jumps = {c.kind: [_full_operator(c.jump, a, n) for a in range(n)] for c in self.channels}
        self.p = np.zeros(4**n)
        self.e_chi = 0.0
        self.leak = 0.0
        self.e_avg = 0.0
        self.t_r = 0.0

    def add(self, w: np.ndarray, atoms: Sequence[int], weight: float):
        """Integrand at one time node; ``w = U(t) P`` has shape (3^N, d)."""
        d = self.d
        rows = _pauli_rows(self.n)
        for ch in self.channels:
            g = ch.rate * weight
            amats, lw_norms = [], []
            for a in atoms:
                lw = self.jumps[ch.kind][a] @ w
                amats.append((w.conj().T @ lw).ravel())
                lw_norms.append(float(np.vdot(lw, lw).real))
            amats = np.array(amats)  # (k, d*d)
            coeff = amats @ rows.T  # Tr[A E_m^dag]
            self.p += g * np.sum(np.abs(coeff) ** 2, axis=0) / d**2
            a_norm = np.sum(np.abs(amats) ** 2, axis=1)
            tr = amats[:, :: d + 1].sum(axis=1)
            lw_norms = np.array(lw_norms)
            self.e_chi += g * float(np.sum(lw_norms / d - np.abs(tr) ** 2 / d**2))
            self.leak += g * float(np.sum(lw_norms - a_norm) / d)
            self.e_avg += g * float(np.sum(lw_norms / d - (a_norm + np.abs(tr) ** 2) / (d * (d + 1))))
            if ch.kind == "decay_r_to_1":
                self.t_r += weight * float(np.sum(lw_norms)) / d


def _run(circuit: CircuitImplementation, channels: Sequence[NoiseChannelSpec], substeps: int) -> _Accumulator:
    n = circuit.n_qubits
    acc = _Accumulator(n, channels)
    cols = computational_indices(n)
    w = np.zeros((3**n, 2**n), dtype=complex)
    w[cols, np.arange(2**n)] = 1.0
    for seg in circuit.segments:
        if isinstance(seg, GateSegment):
            g = _embed_qubits(_lift_qubit_gate(seg.matrix), seg.qubits, n, level_dim=3)
            w = g @ w
            continue
        s_plus, n_diag, inter = _segment_hamiltonians(seg, n)
        pulse = seg.pulse
        tau = pulse.dt / substeps
        for j in range(pulse.m_steps):
            c = 0.5 * pulse.rabi[j] * np.exp(1j * pulse.phi[j])
            h = c * s_plus + np.conj(c) * s_plus.T + inter
            h[np.diag_indices_from(h)] -= pulse.detuning[j] * n_diag
            lam, v = np.linalg.eigh(h)
            half = (v * np.exp(-0.5j * lam * tau)) @ v.conj().T
            full = half @ half
            for _ in range(substeps):
                acc.add(half @ w, seg.qubits, tau)
                w = full @ w
    return acc


def pauli_error_diagonals(
    circuit: CircuitImplementation,
    channels: Sequence[NoiseChannelSpec],
    substeps: int = 4,
    refine_check: bool = False,
) -> PauliErrorProfile:
    """Diagonal Pauli error probabilities to first order in the rates.

    The time integral uses the midpoint rule on ``substeps`` sub-intervals per
    pulse piece; ``refine_check`` repeats it with twice as many and stores the
    relative change of the total error.
    """
    n = circuit.n_qubits
    d = 2**n
    rate_max = max((c.rate for c in channels), default=0.0)
    if rate_max * circuit.duration > FIRST_ORDER_WARN:
        warnings.warn(f"gamma*T = {rate_max * circuit.duration:.3g}: first-order error model is degrading")
    acc = _run(circuit, channels, substeps)
    labels = pauli_labels(n)
    probs = {k: float(v) for k, v in zip(labels, acc.p)}
    total = float(sum(v for k, v in probs.items() if k != "I" * n))
    direct = acc.e_avg
    via_relation = (d * acc.e_chi + acc.leak) / (d + 1)
    change = None
    if refine_check:
        fine = _run(circuit, channels, 2 * substeps)
        fine_total = float(np.sum(fine.p[1:]))
        change = abs(fine_total - total) / fine_total if fine_total > 0 else 0.0
    return PauliErrorProfile(
        probabilities=probs,
        total_error=total,
        leakage=acc.leak,
        process_infidelity=acc.e_chi,
        avg_infidelity=via_relation,
        avg_infidelity_direct=direct,
        duration=circuit.duration,
        t_r=acc.t_r,
        refinement_change=change,
    )


@dataclass
class AvgInfidelityReport:
    avg_infidelity: float
    decay_t_r: float
    decay_rate: float
    bound_ok: bool

    @property
    def decay_ratio(self) -> float:
        """E_avg / (gamma_d T_R); close to 1 - 2/(d+1) for blockaded gates."""
        denom = self.decay_rate * self.decay_t_r
        return self.avg_infidelity / denom if denom > 0 else float("nan")


def avg_infidelity_from_channels(
    circuit: CircuitImplementation, channels: Sequence[NoiseChannelSpec], substeps: int = 4
) -> AvgInfidelityReport:
    """First-order average gate infidelity; checks ``E_avg <= gamma_d T_R`` for decay."""
    acc = _run(circuit, channels, substeps)
    decay = [c for c in channels if c.kind == "decay_r_to_1" and c.rate > 0]
    rate = sum(c.rate for c in decay)
    ok = True
    if decay and len(decay) == len([c for c in channels if c.rate > 0]):
        ok = acc.e_avg <= rate * acc.t_r * (1 + 1e-6)
        if not ok:
            raise AssertionError(f"decay bound violated: E_avg={acc.e_avg:.3e} > gamma T_R={rate * acc.t_r:.3e}")
    return AvgInfidelityReport(acc.e_avg, acc.t_r, rate, ok)
