"""Fused evaluation of Bell infidelity, T_R and T_RR with exact gradients.

The representatives of all non-trivial symmetry classes are stacked into one
block-diagonal system, so a pulse step is a single small eigendecomposition
and the time loop runs once. Gradients come from a reverse (adjoint) sweep;
step-propagator derivatives use the divided differences of ``exp(-i λ s)`` in
the eigenbasis, which stay exact for degenerate spectra.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import AtomGeometry, GateTarget, PhysicalParams, block_operators, enumerate_blocks, group_blocks, mask_to_index

CHANNELS = ("eps_bell", "t_r", "t_rr")


@dataclass
class Evaluation:
    eps_bell: float
    t_r: float
    t_rr: float
    trace_term: complex
    # d/dphi and d/dOmega for each channel, shape (3, M); None without gradients
    grad_phi: np.ndarray | None = None
    grad_rabi: np.ndarray | None = None


def _divided_exp(lam: np.ndarray, e: np.ndarray, s: float | np.ndarray) -> np.ndarray:
    """G_ab = (e_a - e_b) / (l_a - l_b) with ``e = exp(-i l s)``; limit -i s e_a.

    ``lam`` has shape (M, D); ``e`` has shape (M, D) or (M, K, D) with ``s``
    of shape () or (K,) respectively.
    """
    delta = lam[:, :, None] - lam[:, None, :]  # (M, D, D)
    s_max = float(np.max(s))
    small = np.abs(delta) * s_max < 1e-3
    inv = 1.0 / np.where(small, 1.0, delta)
    if e.ndim == 3:
        inv = inv[:, None]
        delta = delta[:, None]
        small = small[:, None]
        s = np.asarray(s)[None, :, None, None]
    ea = e[..., :, None]
    eb = e[..., None, :]
    g = (ea - eb) * inv
    if np.any(small):
        # second-order expansion around degenerate pairs
        x2 = (delta * s) ** 2
        near = -0.5j * s * (ea + eb) * (1.0 + x2 / 12.0)
        g = np.where(small, near, g)
    return g


class BlockEvaluator:
    """Noise-free block dynamics of one geometry/target pair."""

    def __init__(self, geometry: AtomGeometry, params: PhysicalParams, target: GateTarget, substeps: int = 4):
        if target.n_qubits != geometry.n_atoms:
            raise ValueError("target and geometry disagree on the number of qubits")
        self.geometry = geometry
        self.params = params
        self.target = target
        self.substeps = int(substeps)
        self.n = geometry.n_atoms
        blocks = enumerate_blocks(geometry, params)
        self.classes = group_blocks(blocks)
        self.trivial_term = 0.0 + 0.0j
        # computational index -> offset of its class representative (-1: trivial)
        self.index_offset = np.full(2**self.n, -1, dtype=int)
        dims, ops = [], []
        f_coeff, d_r, d_rr, inter, n_exc, s_plus_parts = [], [], [], [], [], []
        norm = 2.0**self.n
        for cls in self.classes:
            rep = cls.representative
            t_conj = np.conj(target.phases[mask_to_index(rep.mask)])
            if rep.is_trivial:
                self.trivial_term += cls.multiplicity * t_conj
                continue
            o = block_operators(rep)
            offset = int(sum(dims))
            for b in cls.members:
                self.index_offset[mask_to_index(b.mask)] = offset
            dims.append(rep.dim)
            ops.append(o)
            f = np.zeros(rep.dim, dtype=complex)
            f[0] = cls.multiplicity * t_conj
            f_coeff.append(f)
            d_r.append(cls.multiplicity / norm * o["n_exc"])
            d_rr.append(cls.multiplicity / norm * o["n_pairs"])
            inter.append(o["interaction"])
            n_exc.append(o["n_exc"])
            s_plus_parts.append(o["raise"])
        self.dims = dims
        self.offsets = np.concatenate([[0], np.cumsum(dims)]).astype(int)
        dtot = int(self.offsets[-1])
        self.dim = dtot
        self.f = np.concatenate(f_coeff) if dims else np.zeros(0, complex)
        self.d_r = np.concatenate(d_r) if dims else np.zeros(0)
        self.d_rr = np.concatenate(d_rr) if dims else np.zeros(0)
        self.inter = np.concatenate(inter) if dims else np.zeros(0)
        self.n_exc = np.concatenate(n_exc) if dims else np.zeros(0)
        self.s_plus = [p.astype(complex) for p in s_plus_parts]
        self.psi0 = np.zeros(dtot, dtype=complex)
        self.psi0[self.offsets[:-1]] = 1.0

    # -- spectral data ------------------------------------------------------

    def _spectra(self, phi: np.ndarray, rabi: np.ndarray, detuning: np.ndarray):
        m = len(phi)
        v = np.zeros((m, self.dim, self.dim), dtype=complex)
        lam = np.zeros((m, self.dim))
        ph = np.exp(1j * phi)[:, None, None]
        amp = 0.5 * rabi[:, None, None]
        for c, sp in enumerate(self.s_plus):
            lo, hi = self.offsets[c], self.offsets[c + 1]
            h = amp * (ph * sp + ph.conj() * sp.T)
            idx = np.arange(hi - lo)
            h[:, idx, idx] += self.inter[lo:hi][None, :] - detuning[:, None] * self.n_exc[lo:hi][None, :]
            w, vec = np.linalg.eigh(h)
            lam[:, lo:hi] = w
            v[:, lo:hi, lo:hi] = vec
        return lam, v

    def _drive_derivatives(self, phi: np.ndarray, rabi: np.ndarray):
        """dH/dphi and dH/dOmega for every step, shape (M, D, D)."""
        m = len(phi)
        d_phi = np.zeros((m, self.dim, self.dim), dtype=complex)
        d_rabi = np.zeros((m, self.dim, self.dim), dtype=complex)
        ph = np.exp(1j * phi)[:, None, None]
        for c, sp in enumerate(self.s_plus):
            lo, hi = self.offsets[c], self.offsets[c + 1]
            up = ph * sp
            dn = ph.conj() * sp.T
            d_rabi[:, lo:hi, lo:hi] = 0.5 * (up + dn)
            d_phi[:, lo:hi, lo:hi] = 0.5j * rabi[:, None, None] * (up - dn)
        return d_phi, d_rabi

    def diagonal(self, phi, rabi, dt: float, detuning=None) -> np.ndarray:
        """``<mu|U(T)|mu>`` for every computational state (forward sweep only)."""
        phi = np.asarray(phi, dtype=float)
        rabi = np.asarray(rabi, dtype=float)
        m = len(phi)
        detuning = np.zeros(m) if detuning is None else np.asarray(detuning, dtype=float)
        psi = self.psi0.copy()
        if m and self.dim:
            lam, v = self._spectra(phi, rabi, detuning)
            ph = np.exp(-1j * lam * dt)
            for j in range(m):
                psi = v[j] @ (ph[j] * (np.conj(v[j]).T @ psi))
        out = np.ones(2**self.n, dtype=complex)
        nontrivial = self.index_offset >= 0
        out[nontrivial] = psi[self.index_offset[nontrivial]]
        return out

    # -- main entry ---------------------------------------------------------

    def evaluate(
        self,
        phi: np.ndarray,
        rabi: np.ndarray,
        dt: float,
        detuning: np.ndarray | None = None,
        gradient: bool = True,
    ) -> Evaluation:
        phi = np.asarray(phi, dtype=float)
        rabi = np.asarray(rabi, dtype=float)
        m = len(phi)
        detuning = np.zeros(m) if detuning is None else np.asarray(detuning, dtype=float)
        d4 = 4.0**self.n
        if m == 0 or self.dim == 0:
            s = self.trivial_term + np.sum(self.f[self.offsets[:-1]]) if self.dim else self.trivial_term
            ev = Evaluation(1.0 - abs(s) ** 2 / d4, 0.0, 0.0, complex(s))
            if gradient:
                ev.grad_phi = np.zeros((3, m))
                ev.grad_rabi = np.zeros((3, m))
            return ev

        kk = self.substeps
        tau = dt / kk
        lam, v = self._spectra(phi, rabi, detuning)
        vh = np.conj(np.swapaxes(v, 1, 2))
        s_k = tau * np.arange(kk + 1)  # sample offsets inside a step
        ph_k = np.exp(-1j * lam[:, None, :] * s_k[None, :, None])  # (M, K+1, D)

        # forward sweep over step boundaries
        psi = np.empty((m + 1, self.dim), dtype=complex)
        coef = np.empty((m, self.dim), dtype=complex)
        psi[0] = self.psi0
        for j in range(m):
            c = vh[j] @ psi[j]
            coef[j] = c
            psi[j + 1] = v[j] @ (ph_k[j, kk] * c)

        w = np.full((m, kk), tau)
        w[0, 0] = 0.5 * tau
        w_end = 0.5 * tau
        p_end = np.abs(psi[m]) ** 2
        diag = np.stack([self.d_r, self.d_rr])  # (2, D)
        t_rr_parts = []
        per_class = []
        for c in range(len(self.dims)):
            sl = slice(self.offsets[c], self.offsets[c + 1])
            x = ph_k[:, :kk, sl] * coef[:, None, sl]  # eigen coordinates (M, K, d)
            states = v[:, None, sl, sl] @ x[..., None]
            states = states[..., 0]  # (M, K, d)
            prob = np.abs(states) ** 2
            t_rr_parts.append(np.einsum("mk,mkd,cd->c", w, prob, diag[:, sl]))
            per_class.append((sl, states))
        times = np.sum(t_rr_parts, axis=0) + w_end * (diag @ p_end)
        t_r, t_rr = float(times[0]), float(times[1])
        s = self.trivial_term + self.f @ psi[m]
        eps = float(1.0 - abs(s) ** 2 / d4)
        ev = Evaluation(eps, t_r, t_rr, complex(s))
        if not gradient:
            return ev

        # adjoint sweep for the three channels at once
        a_end = np.zeros((3, self.dim), dtype=complex)
        a_end[0] = -(s / d4) * np.conj(self.f)
        a_end[1:] = w_end * diag * psi[m][None, :]
        # z = V^dag D psi_{jk} for the population channels; r_j = V sum_k w conj(E) z
        r = np.zeros((3, m, self.dim), dtype=complex)
        zs = []
        for sl, states in per_class:
            vh_c = vh[:, sl, sl]
            dstates = diag[:, None, None, sl] * states[None]  # (2, M, K, d)
            z = np.swapaxes(vh_c[None] @ np.swapaxes(dstates, -1, -2), -1, -2)
            zs.append(z)
            acc = np.sum(w[None, :, :, None] * np.conj(ph_k[None, :, :kk, sl]) * z, axis=2)  # (2, M, d)
            r[1:, :, sl] = (v[None, :, sl, sl] @ acc[..., None])[..., 0]
        adj = np.empty((3, m + 1, self.dim), dtype=complex)
        adj[:, m] = a_end
        # (U_j^dag)^T = conj(V) e^{i L} V^T
        u_dag_t = (np.conj(v) * np.conj(ph_k[:, kk])[:, None, :]) @ np.swapaxes(v, 1, 2)
        for j in range(m - 1, -1, -1):
            adj[:, j] = adj[:, j + 1] @ u_dag_t[j] + r[:, j]

        d_phi, d_rabi = self._drive_derivatives(phi, rabi)
        grad_phi = np.zeros((3, m))
        grad_rabi = np.zeros((3, m))
        for (sl, _), z in zip(per_class, zs):
            v_c, vh_c = v[:, sl, sl], vh[:, sl, sl]
            lam_c, coef_c = lam[:, sl], coef[:, sl]
            y = (vh_c[None] @ adj[:, 1:, sl, None])[..., 0]  # V^dag a_{j+1}, (3, M, d)
            g_full = _divided_exp(lam_c, ph_k[:, kk, sl], dt) * coef_c[:, None, :]
            q = np.conj(y)[..., :, None] * g_full[None]
            if kk > 1:
                g_k = _divided_exp(lam_c, ph_k[:, 1:kk, sl], s_k[1:kk]) * coef_c[:, None, None, :]
                zw = np.conj(z[:, :, 1:, :]) * w[None, :, 1:, None]  # (2, M, K-1, d)
                q[1:] += np.sum(zw[..., :, None] * g_k[None], axis=2)
            b_phi = vh_c @ d_phi[:, sl, sl] @ v_c
            b_rabi = vh_c @ d_rabi[:, sl, sl] @ v_c
            grad_phi += 2.0 * np.sum(q * b_phi[None], axis=(-1, -2)).real
            grad_rabi += 2.0 * np.sum(q * b_rabi[None], axis=(-1, -2)).real
        ev.grad_phi = grad_phi
        ev.grad_rabi = grad_rabi
        return ev
