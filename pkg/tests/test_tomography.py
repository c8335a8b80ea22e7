import json
import math
from pathlib import Path

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import pauli_twirl_single_qubit
from rydparity.model import PulseSchedule, build_geometry
from rydparity.tomography import (
    CHANNEL_KINDS,
    CircuitImplementation,
    CompositionError,
    GateSegment,
    HADAMARD,
    NoiseChannelSpec,
    PulseSegment,
    avg_infidelity_from_channels,
    build_decomposition,
    cz_from_z2,
    native_circuit,
    pauli_error_diagonals,
    pauli_labels,
    rz,
)

DATA = Path(__file__).parent / "data"


@pytest.fixture(scope="module")
def z2_pulse():
    return PulseSchedule.from_dict(json.loads((DATA / "z2_pulse.json").read_text()))


def single_qubit_circuit(pulse, ideal=(1.0, -1.0)):
    seg = PulseSegment((0,), pulse, np.zeros((1, 1)), np.array(ideal, dtype=complex), "pulse")
    return CircuitImplementation("single", 1, math.pi / 4, [seg])


def two_pi_pulse(omega, m=40, phases=(0.3, 1.4)):
    # two pi pulses with different phases: |1> returns with a phase
    t = 2 * math.pi / omega
    phi = np.repeat(phases, m // 2)
    return PulseSchedule(dt=t / m, phi=phi, rabi=np.full(m, omega))


def test_cz_identity():
    z2 = np.exp(1j * math.pi / 4 * np.array([-1, 1, 1, -1])) / np.exp(-1j * math.pi / 4)
    assert np.allclose(cz_from_z2(z2), np.diag([1, 1, 1, -1]))


def test_rz_convention():
    assert np.allclose(rz(0.3), np.diag(np.exp([-0.3j, 0.3j])))


def test_pauli_labels():
    assert pauli_labels(1) == ("I", "X", "Y", "Z")
    assert len(pauli_labels(3)) == 64


def test_zero_duration_circuit():
    empty = PulseSchedule(dt=1e-9, phi=[], rabi=[])
    prof = pauli_error_diagonals(single_qubit_circuit(empty, (1.0, 1.0)), [NoiseChannelSpec("decay_r_to_1", 1e4)])
    assert all(p == 0 for p in prof.probabilities.values())
    assert prof.leakage == 0.0


def test_dephase_01_without_drive_does_not_leak(params):
    pulse = PulseSchedule(dt=1e-8, phi=np.zeros(10), rabi=np.zeros(10))
    prof = pauli_error_diagonals(single_qubit_circuit(pulse, (1.0, 1.0)), [NoiseChannelSpec("dephase_01", 1e3)])
    assert prof.leakage == 0.0
    assert prof.probabilities["Z"] == pytest.approx(1e3 * 1e-7, rel=1e-12)
    assert prof.non_z_mass() == 0.0


@pytest.mark.parametrize("kind", CHANNEL_KINDS)
def test_matches_lindblad_twirl_oracle(params, kind):
    pulse = two_pi_pulse(params.omega_max)
    gamma = 1e-3 / pulse.duration
    circ = single_qubit_circuit(pulse, (1.0, -1.0))
    prof = pauli_error_diagonals(circ, [NoiseChannelSpec(kind, gamma)], substeps=8)
    ref = pauli_twirl_single_qubit(pulse, NoiseChannelSpec(kind, gamma).jump, gamma)
    for label in "XYZ":
        if ref[label] > 1e-9:
            assert prof.probabilities[label] == pytest.approx(ref[label], rel=0.05)
        else:
            assert prof.probabilities[label] < 1e-9


@pytest.mark.parametrize("kind", CHANNEL_KINDS)
def test_relation_between_infidelities(params, z2_pulse, kind):
    geo = build_geometry("linear-pair", 2.0)
    prof = pauli_error_diagonals(native_circuit(z2_pulse, geo, params), [NoiseChannelSpec(kind, 1e4)])
    assert prof.relation_residual() < 1e-10


def test_native_z2_decay_is_z_biased_and_bounded(params, z2_pulse):
    geo = build_geometry("linear-pair", 2.0)
    circ = native_circuit(z2_pulse, geo, params)
    prof = pauli_error_diagonals(circ, [NoiseChannelSpec("decay_r_to_1", params.gamma_d)])
    assert prof.non_z_mass() <= 0.01 * prof.total_error
    rep = avg_infidelity_from_channels(circ, [NoiseChannelSpec("decay_r_to_1", params.gamma_d)])
    assert rep.bound_ok and 0.5 < rep.decay_ratio <= 1.0


@pytest.mark.parametrize("name,n_pulses", [("v_decomposition", 6), ("x_decomposition", 6), ("zz_decomposition", 5)])
def test_decomposition_structure(params, z2_pulse, name, n_pulses):
    circ = build_decomposition(name, z2_pulse, math.pi / 4, params)
    assert circ.n_pulses == n_pulses
    assert circ.verify() < 1e-10


def test_zz_needs_theta_pulse(params, z2_pulse):
    with pytest.raises(ValueError):
        build_decomposition("zz_decomposition", z2_pulse, 0.3, params)


def test_broken_circuit_is_rejected(params, z2_pulse):
    circ = build_decomposition("v_decomposition", z2_pulse, math.pi / 4, params)
    circ.segments.append(GateSegment((0,), HADAMARD, "H"))
    with pytest.raises(CompositionError):
        circ.verify()


@settings(max_examples=10, deadline=None)
@given(st.floats(0.0, 2 * math.pi), st.sampled_from(CHANNEL_KINDS))
def test_probabilities_non_negative(phase, kind):
    pulse = PulseSchedule(dt=1e-8, phi=[0.0, phase, 0.0], rabi=[6e7, 3e7, 6e7])
    prof = pauli_error_diagonals(single_qubit_circuit(pulse, (1.0, 1.0)), [NoiseChannelSpec(kind, 1e3)], substeps=2)
    assert min(prof.probabilities.values()) >= 0.0
    assert prof.leakage >= -1e-18


def test_first_order_warning(params):
    pulse = two_pi_pulse(params.omega_max)
    with pytest.warns(UserWarning):
        pauli_error_diagonals(single_qubit_circuit(pulse), [NoiseChannelSpec("decay_r_to_1", 1.0 / pulse.duration)])
