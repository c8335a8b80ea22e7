"""Independent reference implementations used by the tests.

Everything here works in the full 3^N space with dense matrices and scipy's
expm, sharing nothing with the package beyond plain constants.
"""

from __future__ import annotations

import itertools
import math

import numpy as np
from scipy.linalg import expm

PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def site_op(single, atom, n):
    out = np.array([[1.0 + 0j]])
    for a in range(n):
        out = np.kron(out, single if a == atom else np.eye(3))
    return out


def comp_indices(n):
    return [sum(b * 3 ** (n - 1 - i) for i, b in enumerate(bits)) for bits in itertools.product((0, 1), repeat=n)]


def full_operators(positions_um, c6):
    """(sigma_plus sum, n_r sum, interaction) as dense 3^N matrices."""
    n = len(positions_um)
    up = np.zeros((3, 3))
    up[2, 1] = 1.0
    nr = np.diag([0.0, 0.0, 1.0])
    s_plus = sum(site_op(up, a, n) for a in range(n))
    n_tot = sum(site_op(nr, a, n) for a in range(n))
    inter = np.zeros((3**n, 3**n), dtype=complex)
    for a, b in itertools.combinations(range(n), 2):
        r = np.linalg.norm(np.asarray(positions_um[a]) - np.asarray(positions_um[b]))
        v = 2 * math.pi * 1e9 * c6 / r**6
        inter -= v * site_op(nr, a, n) @ site_op(nr, b, n)
    return s_plus, n_tot, inter


def full_hamiltonian(positions_um, c6, phi, rabi, detuning, ops=None):
    """Three-level global-drive Hamiltonian, levels ordered (0, 1, r)."""
    s_plus, n_tot, inter = ops or full_operators(positions_um, c6)
    c = 0.5 * rabi * np.exp(1j * phi)
    return c * s_plus + np.conj(c) * s_plus.T - detuning * n_tot + inter


def full_unitary(positions_um, c6, pulse):
    n = len(positions_um)
    ops = full_operators(positions_um, c6)
    u = np.eye(3**n, dtype=complex)
    for phi, rabi, det in zip(pulse.phi, pulse.rabi, pulse.detuning):
        w, v = np.linalg.eigh(full_hamiltonian(positions_um, c6, phi, rabi, det, ops))
        u = (v * np.exp(-1j * pulse.dt * w)) @ (v.conj().T @ u)
    return u


def bell_fidelity_full(positions_um, c6, pulse, target_diag):
    """|Tr(U_t^dag P U P)|^2 / d^2 from the full propagator."""
    n = len(positions_um)
    idx = comp_indices(n)
    u = full_unitary(positions_um, c6, pulse)[np.ix_(idx, idx)]
    d = 2**n
    return abs(np.trace(np.diag(np.conj(target_diag)) @ u)) ** 2 / d**2


# --- Lindblad + Pauli twirl -----------------------------------------------


def lindblad_superop(h, jumps, rate):
    """Row-major vectorized generator: vec(d rho/dt) = S vec(rho)."""
    dim = h.shape[0]
    eye = np.eye(dim)
    s = -1j * (np.kron(h, eye) - np.kron(eye, h.T))
    for l in jumps:
        ldl = l.conj().T @ l
        s += rate * (np.kron(l, l.conj()) - 0.5 * np.kron(ldl, eye) - 0.5 * np.kron(eye, ldl.T))
    return s


def pauli_twirl_single_qubit(pulse, jump3, rate):
    """chi diagonal of the error channel of a single driven three-level atom.

    The noisy channel is restricted to the computational subspace and the
    ideal (noise-free) computational block is undone at the output, which puts
    the error at the circuit input. Returns {label: probability}.
    """
    dim = 3
    big = np.eye(dim * dim, dtype=complex)
    u = np.eye(dim, dtype=complex)
    for phi, rabi, det in zip(pulse.phi, pulse.rabi, pulse.detuning):
        h = full_hamiltonian([(0.0, 0.0, 0.0)], -150.0, phi, rabi, det)
        big = expm(pulse.dt * lindblad_superop(h, [jump3], rate)) @ big
        u = expm(-1j * pulse.dt * h) @ u
    comp = [0, 1]
    uc = u[np.ix_(comp, comp)]
    d = 2
    # superoperator of rho -> uc^dag P Lambda(P rho P) P uc on 2x2 matrices
    sup = np.zeros((d * d, d * d), dtype=complex)
    for i, j in itertools.product(range(d), repeat=2):
        rho = np.zeros((dim, dim), dtype=complex)
        rho[comp[i], comp[j]] = 1.0
        out = (big @ rho.ravel()).reshape(dim, dim)[np.ix_(comp, comp)]
        out = uc.conj().T @ out @ uc
        sup[:, i * d + j] = out.ravel()
    # reshuffle into sum_k vec(K_k) vec(K_k)^dag
    choi = sup.reshape(d, d, d, d).transpose(0, 2, 1, 3).reshape(d * d, d * d)
    out = {}
    for label, p in PAULI.items():
        v = p.ravel()
        out[label] = float(np.real(v.conj() @ choi @ v)) / d**2
    return out
