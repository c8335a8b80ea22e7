import math
import sys
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from rydparity.evaluator import BlockEvaluator
from rydparity.fidelity import (
    diagonal_avg_fidelity,
    diagonal_bell_fidelity,
    haar_avg_fidelity,
    report,
)
from rydparity.model import PulseSchedule, build_geometry, build_parity_target, enumerate_blocks
from rydparity.propagate import propagate_blocks

sys.path.insert(0, str(Path(__file__).parent))
from conftest import random_pulse  # noqa: E402


@pytest.mark.parametrize("n", [1, 2, 3, 4])
def test_identity_against_parity_gate_is_one_half(n):
    t = build_parity_target(n, math.pi / 4).phases
    assert diagonal_bell_fidelity(np.ones(2**n), t) == pytest.approx(0.5, abs=1e-14)


def test_target_and_global_phase_give_one():
    t = build_parity_target(3, math.pi / 4).phases
    assert diagonal_bell_fidelity(t, t) == pytest.approx(1.0)
    assert diagonal_bell_fidelity(np.exp(0.7j) * t, t) == pytest.approx(1.0)
    assert diagonal_avg_fidelity(np.exp(0.7j) * t, t) == pytest.approx(1.0)
    assert diagonal_avg_fidelity(np.zeros(8), t) == 0.0


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 4), st.integers(0, 2**32 - 1))
def test_avg_fidelity_matches_general_formula(n, seed):
    rng = np.random.default_rng(seed)
    d = 2**n
    diag = np.exp(1j * rng.uniform(0, 2 * np.pi, d))
    t = build_parity_target(n, rng.uniform(0, np.pi)).phases
    # embed the diagonal as the computational block of a larger unitary
    full = np.eye(d + 3, dtype=complex)
    full[:d, :d] = np.diag(diag)
    ref = haar_avg_fidelity(full, np.diag(t), np.arange(d))
    assert diagonal_avg_fidelity(diag, t) == pytest.approx(ref, abs=1e-13)


def test_single_atom_rydberg_time_closed_form(params):
    # one resonant 2pi pulse: <n_r> = sin^2(Omega t / 2), averaged over {|0>,|1>}
    geo = build_geometry("linear-pair", 2.0)
    blocks = [b for b in enumerate_blocks(geo, params) if b.n_active <= 1]
    t = 2 * math.pi / params.omega_max
    pulse = PulseSchedule.constant(200, t, params.omega_max)
    props = propagate_blocks(pulse, blocks, substeps=4)
    # blocks (0,0),(0,1),(1,0): two of three carry one atom in |1>
    single = props[1]
    from rydparity.propagate import trapezoid

    assert trapezoid(single.populations_r, single.times) == pytest.approx(t / 2, rel=1e-5)


def test_zero_rabi_gives_zero_rydberg_times(params):
    geo = build_geometry("right-triangle", 2.0)
    pulse = PulseSchedule(dt=1e-9, phi=np.zeros(5), rabi=np.zeros(5))
    rep = report(propagate_blocks(pulse, enumerate_blocks(geo, params)), build_parity_target(3, math.pi / 4))
    assert rep.t_r == 0.0 and rep.t_rr == 0.0
    assert rep.bell_fidelity == pytest.approx(0.5)


@pytest.mark.parametrize("name", ["linear-pair", "equilateral-triangle", "right-triangle", "square"])
def test_evaluator_agrees_with_block_propagation(name, params, rng):
    geo = build_geometry(name, 2.0)
    target = build_parity_target(geo.n_atoms, math.pi / 4)
    pulse = random_pulse(rng, 30, 2e-7, params.omega_max, detuning_scale=1e7)
    rep = report(propagate_blocks(pulse, enumerate_blocks(geo, params)), target)
    ev = BlockEvaluator(geo, params, target).evaluate(pulse.phi, pulse.rabi, pulse.dt, pulse.detuning, gradient=False)
    assert ev.eps_bell == pytest.approx(rep.bell_infidelity, abs=1e-12)
    assert ev.t_r == pytest.approx(rep.t_r, rel=1e-10)
    assert ev.t_rr == pytest.approx(rep.t_rr, rel=1e-8, abs=1e-22)
    diag = BlockEvaluator(geo, params, target).diagonal(pulse.phi, pulse.rabi, pulse.dt, pulse.detuning)
    assert 1 - diagonal_bell_fidelity(diag, target.phases) == pytest.approx(ev.eps_bell, abs=1e-12)


def test_evaluator_gradient_against_central_differences(params, rng):
    geo = build_geometry("right-triangle", 2.0)
    target = build_parity_target(3, math.pi / 4)
    ev_ = BlockEvaluator(geo, params, target)
    pulse = random_pulse(rng, 12, 1e-7, params.omega_max, detuning_scale=5e6)
    ev = ev_.evaluate(pulse.phi, pulse.rabi, pulse.dt, pulse.detuning)
    h = 1e-6
    for j in range(pulse.m_steps):
        for grad, which, step in ((ev.grad_phi, "phi", h), (ev.grad_rabi, "rabi", h * params.omega_max)):
            vals = []
            for s in (step, -step):
                phi, rabi = pulse.phi.copy(), pulse.rabi.copy()
                (phi if which == "phi" else rabi)[j] += s
                e = ev_.evaluate(phi, rabi, pulse.dt, pulse.detuning, gradient=False)
                vals.append(np.array([e.eps_bell, e.t_r, e.t_rr]))
            fd = (vals[0] - vals[1]) / (2 * step)
            scale = np.abs(grad).max(axis=1)
            assert np.all(np.abs(fd - grad[:, j]) <= 1e-5 * scale + 1e-30)
