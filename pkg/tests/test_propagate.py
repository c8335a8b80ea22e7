import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import expm

from rydparity.model import PulseSchedule, block_hamiltonian, build_geometry, enumerate_blocks
from rydparity.propagate import (
    KrylovConfig,
    KrylovConvergenceError,
    dense_evolve,
    is_unitary,
    krylov_evolve,
    propagate_blocks,
    step_matrix,
)


def test_single_atom_pi_pulse(params):
    # a pi pulse transfers |1> to |r> completely
    geo = build_geometry("linear-pair", 2.0)
    block = enumerate_blocks(geo, params)[2]  # mask (1, 0)
    t = math.pi / params.omega_max
    u = step_matrix(block, 0.0, params.omega_max, dt=t)
    assert abs(u[1, 0]) ** 2 == pytest.approx(1.0, abs=1e-12)


def test_deduplication_matches_full(params, rng):
    geo = build_geometry("right-triangle", 2.0)
    blocks = enumerate_blocks(geo, params)
    pulse = PulseSchedule(dt=5e-9, phi=rng.uniform(-3, 3, 10), rabi=np.full(10, params.omega_max))
    a = propagate_blocks(pulse, blocks, deduplicate=True)
    b = propagate_blocks(pulse, blocks, deduplicate=False)
    for x, y in zip(a, b):
        assert x.diagonal_element == pytest.approx(y.diagonal_element, abs=1e-12)
        assert np.allclose(x.populations_r, y.populations_r, atol=1e-12)


def test_unitarity_and_decay_norm(params, rng):
    geo = build_geometry("linear-pair", 2.0)
    block = enumerate_blocks(geo, params)[-1]
    pulse = PulseSchedule(dt=5e-9, phi=rng.uniform(-3, 3, 8), rabi=np.full(8, params.omega_max))
    (prop,) = propagate_blocks(pulse, [block])
    assert is_unitary(prop.final)
    (lossy,) = propagate_blocks(pulse, [block], decay=1e5)
    assert np.linalg.norm(lossy.final[:, 0]) < 1.0


def test_invalid_substeps(params):
    geo = build_geometry("linear-pair", 2.0)
    pulse = PulseSchedule.constant(2, 1e-8, params.omega_max)
    with pytest.raises(ValueError):
        propagate_blocks(pulse, enumerate_blocks(geo, params), substeps=0)


def _random_nonhermitian(rng, n, scale):
    a = rng.normal(size=(n, n)) + 1j * rng.normal(size=(n, n))
    h = 0.5 * (a + a.conj().T) - 0.05j * np.diag(rng.uniform(0, 1, n))
    return scale * h


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.integers(4, 40))
def test_krylov_matches_dense(seed, n):
    rng = np.random.default_rng(seed)
    h = _random_nonhermitian(rng, n, 1e7)
    v = rng.normal(size=n) + 1j * rng.normal(size=n)
    ref = dense_evolve(h, v, 1e-7)
    out = krylov_evolve(lambda x: h @ x, v, 1e-7, KrylovConfig(max_subspace_dim=12, tolerance=1e-10))
    assert np.linalg.norm(out - ref) <= 1e-8 * np.linalg.norm(v)


def test_krylov_convergence_error():
    rng = np.random.default_rng(0)
    h = _random_nonhermitian(rng, 60, 1e12)
    v = rng.normal(size=60).astype(complex)
    with pytest.raises(KrylovConvergenceError):
        krylov_evolve(lambda x: h @ x, v, 1.0, KrylovConfig(max_subspace_dim=2, tolerance=1e-14))


def test_step_matrix_matches_expm(params):
    geo = build_geometry("equilateral-triangle", 2.0)
    block = enumerate_blocks(geo, params)[-1]
    h = block_hamiltonian(block, 0.7, 0.6 * params.omega_max, 3e6)
    assert np.allclose(step_matrix(block, 0.7, 0.6 * params.omega_max, 3e6, dt=2e-9), expm(-2e-9j * h), atol=1e-12)
    with pytest.raises(ValueError):
        step_matrix(block, np.inf, 1.0, dt=1e-9)
