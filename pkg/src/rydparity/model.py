"""Atom geometries, physical constants, pulse schedules and the block structure
of the global-drive Rydberg Hamiltonian.

Conventions
-----------
* Positions and ``r_min`` are in micrometres; all rates/frequencies are angular
  (rad/s); times are in seconds.
* ``c6`` is ``C6/h`` in GHz·μm^6 (negative = repulsive). The interaction in
  angular units is ``V_jk = 2π · 1e9 · c6 / R_jk^6`` and enters the Hamiltonian
  as ``-V_jk n_j n_k``, i.e. a doubly excited pair is shifted up by ``|V_jk|``.
* Each atom has levels ``|0>, |1>, |r>``. The drive couples only ``|1> <-> |r>``,
  so the dynamics splits into ``2^N`` blocks labelled by a bitstring ``mu``:
  atoms with ``mu_i = 0`` stay in ``|0>``; atoms with ``mu_i = 1`` live in
  ``{|1>, |r>}``. Inside a block with ``k`` active atoms the local basis index
  is a k-bit integer whose bit ``i`` (most significant first) is 1 if active
  atom ``i`` is in ``|r>``. Local index 0 is the computational state ``|mu>``.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

TWO_PI = 2.0 * math.pi
HBAR = 1.054571817e-34
K_B = 1.380649e-23
ATOMIC_MASS_UNIT = 1.66053906660e-27
SR88_MASS = 87.9056 * ATOMIC_MASS_UNIT

GEOMETRY_NAMES = (
    "linear-pair",
    "equilateral-triangle",
    "right-triangle",
    "tetrahedron",
    "square",
)

# Soft limits of the experimental regime; violations only warn.
RABI_LIMIT = TWO_PI * 10e6
DETUNING_LIMIT = TWO_PI * 10e6
R_MIN_LIMIT_UM = 1.5

_KEY_DIGITS = 9


@dataclass(frozen=True)
class AtomGeometry:
    name: str
    positions: np.ndarray  # (N, 3) in μm
    r_min: float

    @property
    def n_atoms(self) -> int:
        return len(self.positions)

    def distances(self) -> np.ndarray:
        diff = self.positions[:, None, :] - self.positions[None, :, :]
        return np.linalg.norm(diff, axis=-1)

    def to_dict(self) -> dict:
        return {"name": self.name, "r_min_um": self.r_min}


def build_geometry(name: str, r_min: float) -> AtomGeometry:
    """Canonical coordinates for one of the supported arrangements.

    The first atom sits at the origin and the second on the +x axis at
    distance ``r_min``; planar shapes lie in the z = 0 plane.
    """
    if not r_min > 0:
        raise ValueError(f"r_min must be positive, got {r_min}")
    r = float(r_min)
    s3 = math.sqrt(3.0)
    if name == "linear-pair":
        pos = [(0, 0, 0), (r, 0, 0)]
    elif name == "equilateral-triangle":
        pos = [(0, 0, 0), (r, 0, 0), (r / 2, r * s3 / 2, 0)]
    elif name == "right-triangle":
        # isosceles, right angle at the first atom
        pos = [(0, 0, 0), (r, 0, 0), (0, r, 0)]
    elif name == "tetrahedron":
        pos = [
            (0, 0, 0),
            (r, 0, 0),
            (r / 2, r * s3 / 2, 0),
            (r / 2, r * s3 / 6, r * math.sqrt(2.0 / 3.0)),
        ]
    elif name == "square":
        pos = [(0, 0, 0), (r, 0, 0), (r, r, 0), (0, r, 0)]
    else:
        raise ValueError(f"unknown geometry {name!r}; expected one of {GEOMETRY_NAMES}")
    if r < R_MIN_LIMIT_UM:
        warnings.warn(f"r_min = {r} um is below the {R_MIN_LIMIT_UM} um experimental limit")
    positions = np.array(pos, dtype=float)
    positions.setflags(write=False)
    return AtomGeometry(name=name, positions=positions, r_min=r)


@dataclass(frozen=True)
class PhysicalParams:
    """Physical constants of the Sr-88 clock-qubit setup (SI, angular units)."""

    c6: float = -150.0  # C6/h in GHz um^6
    omega_max: float = TWO_PI * 10e6
    gamma_d: float = 1.0 / 80e-6
    lambda_laser: float = 323e-9
    mass: float = SR88_MASS
    omega_par: float = TWO_PI * 100e3
    omega_perp: float = TWO_PI * 100e3
    # 1/T in 1/K; 0 means zero temperature
    inv_temperature_beta: float = 0.0

    def __post_init__(self):
        if not self.c6 < 0:
            raise ValueError("c6 must be negative (repulsive interaction)")
        if not self.omega_max > 0:
            raise ValueError("omega_max must be positive")
        if self.gamma_d < 0:
            raise ValueError("gamma_d must be non-negative")
        if not (self.omega_par > 0 and self.omega_perp > 0):
            raise ValueError("trap frequencies must be positive")
        if self.omega_max > RABI_LIMIT * (1 + 1e-12):
            warnings.warn("omega_max exceeds the 10 MHz experimental range")

    @property
    def wavenumber(self) -> float:
        return TWO_PI / self.lambda_laser

    @property
    def recoil_frequency(self) -> float:
        """hbar k^2 / (2 m) in rad/s."""
        return HBAR * self.wavenumber**2 / (2.0 * self.mass)

    def x_zpf(self, omega_trap: float) -> float:
        return math.sqrt(HBAR / (2.0 * self.mass * omega_trap))

    def interaction(self, r_um: float | np.ndarray) -> float | np.ndarray:
        """C6 / R^6 in rad/s (negative for repulsive)."""
        return TWO_PI * 1e9 * self.c6 / np.asarray(r_um, dtype=float) ** 6

    def with_updates(self, **kw) -> "PhysicalParams":
        return replace(self, **kw)


def pairwise_interaction(geometry: AtomGeometry, params: PhysicalParams) -> np.ndarray:
    """Symmetric matrix of ``C6 / R_jk^6`` (rad/s) with zero diagonal."""
    d = geometry.distances()
    n = geometry.n_atoms
    off = ~np.eye(n, dtype=bool)
    if np.any(d[off] <= 0):
        raise ValueError("coincident atoms in geometry")
    v = np.zeros((n, n))
    v[off] = params.interaction(d[off])
    return v


@dataclass(frozen=True)
class PulseSchedule:
    """Piecewise-constant controls; phases are unwrapped reals."""

    dt: float
    phi: np.ndarray
    rabi: np.ndarray
    detuning: np.ndarray = None  # type: ignore[assignment]

    def __post_init__(self):
        phi = np.asarray(self.phi, dtype=float).copy()
        rabi = np.asarray(self.rabi, dtype=float).copy()
        det = np.zeros_like(phi) if self.detuning is None else np.asarray(self.detuning, dtype=float).copy()
        if not (phi.shape == rabi.shape == det.shape and phi.ndim == 1):
            raise ValueError("phi, rabi and detuning must be 1D arrays of equal length")
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(rabi)) and np.all(np.isfinite(det))):
            raise ValueError("non-finite control values")
        if np.any(rabi < 0):
            raise ValueError("Rabi frequencies must be non-negative")
        for a in (phi, rabi, det):
            a.setflags(write=False)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "rabi", rabi)
        object.__setattr__(self, "detuning", det)

    @property
    def m_steps(self) -> int:
        return len(self.phi)

    @property
    def duration(self) -> float:
        return self.m_steps * self.dt

    def with_controls(self, phi=None, rabi=None, detuning=None) -> "PulseSchedule":
        return PulseSchedule(
            dt=self.dt,
            phi=self.phi if phi is None else phi,
            rabi=self.rabi if rabi is None else rabi,
            detuning=self.detuning if detuning is None else detuning,
        )

    def check_ranges(self, omega_max: float | None = None) -> list[str]:
        """Soft validation against the experimental regime; returns and warns."""
        issues = []
        limit = RABI_LIMIT if omega_max is None else omega_max
        if np.any(self.rabi > limit * (1 + 1e-9)):
            issues.append("Rabi frequency exceeds omega_max")
        if np.any(np.abs(self.detuning) > DETUNING_LIMIT):
            issues.append("detuning outside [-10, 10] MHz")
        for msg in issues:
            warnings.warn(msg)
        return issues

    def to_dict(self) -> dict:
        return {
            "m_steps": self.m_steps,
            "dt": self.dt,
            "phi": self.phi.tolist(),
            "rabi": self.rabi.tolist(),
            "detuning": self.detuning.tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PulseSchedule":
        pulse = cls(dt=float(d["dt"]), phi=d["phi"], rabi=d["rabi"], detuning=d.get("detuning"))
        if "m_steps" in d and int(d["m_steps"]) != pulse.m_steps:
            raise ValueError("m_steps does not match the length of the control arrays")
        return pulse

    @classmethod
    def constant(cls, m_steps: int, duration: float, rabi: float, phi: float = 0.0) -> "PulseSchedule":
        return cls(dt=duration / m_steps, phi=np.full(m_steps, phi), rabi=np.full(m_steps, rabi))


@dataclass(frozen=True)
class GateTarget:
    n_qubits: int
    theta: float
    phases: np.ndarray  # complex diagonal, index = bitstring with qubit 0 most significant

    def __post_init__(self):
        if len(self.phases) != 2**self.n_qubits:
            raise ValueError("phases must have 2^N entries")

    def phase_of(self, mask: Sequence[int]) -> complex:
        return complex(self.phases[mask_to_index(mask)])

    def matrix(self) -> np.ndarray:
        return np.diag(self.phases)


def mask_to_index(mask: Sequence[int]) -> int:
    idx = 0
    for b in mask:
        idx = (idx << 1) | int(b)
    return idx


def build_parity_target(n: int, theta: float, normalize: bool = False) -> GateTarget:
    """Diagonal of ``exp(-i theta Z⊗...⊗Z)``: e^{-iθ} on even, e^{+iθ} on odd parity.

    With ``normalize`` the diagonal is rescaled by one global phase so that the
    all-zero entry is 1, matching a physical pulse that leaves ``|0...0>`` alone.
    """
    if n < 1:
        raise ValueError("need at least one qubit")
    parity = np.array([bin(i).count("1") % 2 for i in range(2**n)])
    phases = np.where(parity == 0, np.exp(-1j * theta), np.exp(1j * theta))
    if normalize:
        phases = phases / phases[0]
    phases.setflags(write=False)
    return GateTarget(n_qubits=n, theta=float(theta), phases=phases)


@dataclass(frozen=True)
class BlockSpec:
    mask: tuple[int, ...]
    active_atoms: tuple[int, ...]
    interactions: np.ndarray = field(repr=False)  # (k, k) C6/R^6 among active atoms, rad/s
    symmetry_key: tuple
    distances: np.ndarray = field(repr=False, default=None)  # (k, k) in μm

    @property
    def n_active(self) -> int:
        return len(self.active_atoms)

    @property
    def dim(self) -> int:
        return 2**self.n_active

    @property
    def is_trivial(self) -> bool:
        return self.n_active == 0


@dataclass(frozen=True)
class BlockClass:
    """Blocks sharing a symmetry key; only the representative is propagated."""

    representative: BlockSpec
    members: tuple[BlockSpec, ...]

    @property
    def multiplicity(self) -> int:
        return len(self.members)


def _symmetry_key(active: tuple[int, ...], dist: np.ndarray, scale: float) -> tuple:
    pair_d = sorted(round(float(dist[i, j]) / scale, _KEY_DIGITS) for i, j in itertools.combinations(active, 2))
    return (len(active), tuple(pair_d))


def enumerate_blocks(geometry: AtomGeometry, params: PhysicalParams) -> list[BlockSpec]:
    """All ``2^N`` blocks in bitstring order (qubit 0 most significant)."""
    n = geometry.n_atoms
    v = pairwise_interaction(geometry, params)
    dist = geometry.distances()
    blocks = []
    for mask in itertools.product((0, 1), repeat=n):
        active = tuple(i for i, b in enumerate(mask) if b)
        idx = np.ix_(active, active)
        blocks.append(
            BlockSpec(
                mask=tuple(mask),
                active_atoms=active,
                interactions=v[idx].copy(),
                symmetry_key=_symmetry_key(active, dist, geometry.r_min),
                distances=dist[idx].copy(),
            )
        )
    return blocks


def group_blocks(blocks: Sequence[BlockSpec]) -> list[BlockClass]:
    """Group blocks by symmetry key, preserving first-occurrence order."""
    groups: dict[tuple, list[BlockSpec]] = {}
    for b in blocks:
        groups.setdefault(b.symmetry_key, []).append(b)
    return [BlockClass(representative=m[0], members=tuple(m)) for m in groups.values()]


# --- block operators -------------------------------------------------------


def block_operators(block: BlockSpec) -> dict[str, np.ndarray]:
    """Dense building blocks of ``H_mu`` in the local ``{|1>,|r>}^k`` basis.

    Returns ``raise`` (sum of |r><1| over active atoms), ``n_exc`` (diagonal of
    sum n_j), ``n_pairs`` (diagonal of sum_{j<l} n_j n_l) and ``interaction``
    (diagonal of ``-sum V_jl n_j n_l``).
    """
    k = block.n_active
    dim = 2**k
    bits = (np.arange(dim)[:, None] >> (k - 1 - np.arange(k))[None, :]) & 1  # (dim, k)
    n_exc = bits.sum(axis=1).astype(float)
    n_pairs = n_exc * (n_exc - 1) / 2
    inter = np.zeros(dim)
    for i, j in itertools.combinations(range(k), 2):
        inter -= block.interactions[i, j] * bits[:, i] * bits[:, j]
    raise_op = np.zeros((dim, dim))
    for i in range(k):
        flip = 1 << (k - 1 - i)
        src = np.nonzero(bits[:, i] == 0)[0]
        raise_op[src | flip, src] = 1.0
    return {"raise": raise_op, "n_exc": n_exc, "n_pairs": n_pairs, "interaction": inter, "bits": bits}


def block_hamiltonian(
    block: BlockSpec, phi: float, rabi: float, detuning: float = 0.0, decay: float | None = None
) -> np.ndarray:
    ops = block_operators(block)
    s_plus = ops["raise"]
    drive = 0.5 * rabi * (np.exp(1j * phi) * s_plus + np.exp(-1j * phi) * s_plus.T)
    diag = ops["interaction"] - detuning * ops["n_exc"]
    h = drive + np.diag(diag).astype(complex)
    if decay:
        h = h - 0.5j * decay * np.diag(ops["n_exc"])
    return h
