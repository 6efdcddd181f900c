import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.linalg import expm
from scipy.optimize import minimize

from stdcg import qcore
from stdcg.errors import InvalidArgument

from conftest import random_channel, random_density, random_unitary

seeds = st.integers(0, 2**32 - 1)


def test_su2_evolve_matches_matrix_exponential():
    J, dEz, dt = 3.7, 2.9, 41.0
    H = 2 * np.pi * 1e-3 * (J * qcore.SZ + dEz * qcore.SX) / 2
    expected = expm(-1j * H * dt)
    assert np.allclose(qcore.su2_evolve(J, dEz, dt), expected, atol=1e-12)


def test_su2_evolve_zero_field():
    assert np.allclose(qcore.su2_evolve(0.0, 0.0, 0.0), qcore.I2)
    with pytest.raises(InvalidArgument):
        qcore.su2_evolve(0.0, 0.0, 100.0)


@pytest.mark.parametrize("J, dEz", [(0.0, 2.9), (5.0, 0.0), (-3.0, 1.0)])
def test_su2_evolve_periodic_in_rotating_frame(J, dEz):
    # A 2pi rotation is -I, reached after t = 1/f microseconds.
    f = np.hypot(J, dEz)
    U = qcore.su2_evolve(J, dEz, 1e3 / f)
    assert np.allclose(U, -qcore.I2, atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_segment_composition(seed):
    rng = np.random.default_rng(seed)
    J, dEz = rng.uniform(-20, 20), rng.uniform(0, 5)
    a, b = rng.uniform(0, 200, size=2)
    U = qcore.su2_evolve(J, dEz, b) @ qcore.su2_evolve(J, dEz, a)
    assert np.allclose(U, qcore.su2_evolve(J, dEz, a + b), atol=1e-10)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_unitary_channel_fidelity_matches_trace_formula(seed):
    rng = np.random.default_rng(seed)
    U, V = random_unitary(rng), random_unitary(rng)
    F = qcore.process_fidelity(qcore.unitary_to_channel(U), qcore.unitary_to_channel(V))
    assert F == pytest.approx(qcore.unitary_fidelity(U, V), abs=1e-10)


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_process_fidelity_symmetric_and_bounded(seed):
    rng = np.random.default_rng(seed)
    a, b = random_channel(rng), random_channel(rng)
    Fab = qcore.process_fidelity(a, b)
    assert Fab == pytest.approx(qcore.process_fidelity(b, a), abs=1e-12)
    assert 0.0 <= Fab <= 1.0


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_chi_choi_superop_round_trip(seed):
    ch = random_channel(np.random.default_rng(seed))
    assert np.allclose(qcore.QuantumChannel.from_choi(ch.choi).superop, ch.superop)
    assert np.allclose(qcore.QuantumChannel.from_chi(ch.chi).superop, ch.superop)
    assert np.trace(ch.chi).real == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_apply_matches_kraus_action(seed):
    rng = np.random.default_rng(seed)
    U = random_unitary(rng)
    rho = random_density(rng)
    out = qcore.unitary_to_channel(U).apply(rho)
    assert np.allclose(out, U @ rho @ U.conj().T)


def test_identity_chi_is_projector():
    chi = qcore.unitary_to_channel(qcore.I2).chi
    expected = np.zeros((4, 4))
    expected[0, 0] = 1
    assert np.allclose(chi, expected)


def test_hadamard_unitary_fidelity_with_itself():
    assert qcore.unitary_fidelity(qcore.HADAMARD, qcore.HADAMARD) == pytest.approx(1.0)
    assert qcore.unitary_fidelity(qcore.HADAMARD, qcore.I2) == pytest.approx(0.0, abs=1e-15)


def test_average_gate_fidelity_formula():
    assert qcore.average_gate_fidelity(1.0) == 1.0
    assert qcore.average_gate_fidelity(0.97) == pytest.approx((2 * 0.97 + 1) / 3)


def test_average_channels_rejects_bad_weights():
    ch = qcore.unitary_to_channel(qcore.I2)
    with pytest.raises(InvalidArgument):
        qcore.average_channels([])
    with pytest.raises(InvalidArgument):
        qcore.average_channels([ch, ch], weights=[0.7, 0.7])


def test_process_fidelity_rejects_non_cptp():
    bad = qcore.QuantumChannel(2 * np.eye(4))
    with pytest.raises(InvalidArgument):
        qcore.process_fidelity(bad, qcore.unitary_to_channel(qcore.I2))


def test_conjugate_pauli_hadamard_swaps_x_and_z():
    assert np.allclose(qcore.conjugate_pauli(qcore.HADAMARD, [1, 0, 0]), [0, 0, 1])
    assert np.allclose(qcore.conjugate_pauli(qcore.HADAMARD, [0, 0, 1]), [1, 0, 0])


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_rotation_matrix_is_orthogonal(seed):
    R = qcore.rotation_matrix(random_unitary(np.random.default_rng(seed)))
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-10)
    assert np.linalg.det(R) == pytest.approx(1.0)


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_bloch_round_trip(seed):
    rho = random_density(np.random.default_rng(seed))
    assert np.allclose(qcore.density_from_bloch(qcore.bloch_vector(rho)), rho)


# --- CPTP projection -------------------------------------------------------


def _feasible_start(choi):
    """A CPTP Choi matrix near ``choi``: PSD part, then rescaled to be trace preserving."""
    w, v = np.linalg.eigh((choi + choi.conj().T) / 2)
    C = (v * np.clip(w, 1e-3, None)) @ v.conj().T
    A = np.einsum("iaja->ij", C.reshape(2, 2, 2, 2))
    wa, va = np.linalg.eigh(A)
    K = np.kron((va / np.sqrt(wa)) @ va.conj().T, qcore.I2)
    return K @ C @ K


def _tp_violation(C):
    return np.abs(np.einsum("iaja->ij", C.reshape(2, 2, 2, 2)) - qcore.I2).max()


def _oracle_projection(choi):
    """Nearest CPTP Choi matrix via SLSQP over ``L L^dag`` with a TP constraint."""

    def unpack(x):
        L = (x[:16] + 1j * x[16:]).reshape(4, 4)
        return L @ L.conj().T

    def cost(x):
        return np.sum(np.abs(unpack(x) - choi) ** 2)

    def tp(x):
        d = np.einsum("iaja->ij", unpack(x).reshape(2, 2, 2, 2)) - qcore.I2
        return np.concatenate([d.real.ravel(), d.imag.ravel()])

    w, v = np.linalg.eigh(_feasible_start(choi))
    L0 = v * np.sqrt(np.clip(w, 0, None))
    x0 = np.concatenate([L0.real.ravel(), L0.imag.ravel()])
    res = minimize(cost, x0, constraints=[{"type": "eq", "fun": tp}], method="SLSQP",
                   options={"ftol": 1e-15, "maxiter": 5000})
    C = unpack(res.x)
    assert _tp_violation(C) < 1e-6, "oracle did not reach a feasible point"
    return C, float(np.sum(np.abs(C - choi) ** 2))


def _noisy_choi(rng, scale=0.15):
    noisy = random_channel(rng).choi + scale * (rng.normal(size=(4, 4)) + 1j * rng.normal(size=(4, 4)))
    return (noisy + noisy.conj().T) / 2


@pytest.mark.parametrize("seed", range(5))
def test_project_cptp_matches_constrained_oracle(seed):
    noisy = _noisy_choi(np.random.default_rng(seed))
    proj = qcore.project_cptp(qcore.QuantumChannel.from_choi(noisy))
    assert proj.is_cptp()
    d_proj = np.sum(np.abs(proj.choi - noisy) ** 2)
    _, d_oracle = _oracle_projection(noisy)
    # the oracle is a local method over a feasible set, so it bounds the optimum from above
    assert d_proj <= d_oracle + 1e-7


@settings(max_examples=25, deadline=None)
@given(seeds)
def test_project_cptp_variational_inequality(seed):
    # x* is the projection of y onto a convex set K iff <y - x*, z - x*> <= 0 for all z in K.
    rng = np.random.default_rng(seed)
    y = _noisy_choi(rng, scale=0.3)
    x = qcore.project_cptp(qcore.QuantumChannel.from_choi(y)).choi
    for _ in range(20):
        z = random_channel(rng).choi
        for lam in (1.0, 0.1, 0.01):
            zz = x + lam * (z - x)
            assert np.real(np.vdot(y - x, zz - x)) <= 1e-8


@settings(max_examples=30, deadline=None)
@given(seeds)
def test_project_cptp_fixes_cptp_input(seed):
    ch = random_channel(np.random.default_rng(seed))
    assert np.allclose(qcore.project_cptp(ch).superop, ch.superop, atol=1e-9)


@settings(max_examples=30, deadline=None)
@given(seeds, st.floats(0.0, 0.5))
def test_project_cptp_output_is_cptp(seed, scale):
    rng = np.random.default_rng(seed)
    noisy = random_channel(rng).choi + scale * rng.normal(size=(4, 4))
    noisy = (noisy + noisy.T.conj()) / 2
    assert qcore.project_cptp(qcore.QuantumChannel.from_choi(noisy)).is_cptp()


# --- density MLE -------------------------------------------------------------


def test_mle_density_projects_into_bloch_ball():
    # For qubits the Frobenius projection onto states is radial shrinking of the Bloch vector.
    rho = qcore.density_from_bloch([0.9, 0.6, 0.3])
    out = qcore.mle_density(rho)
    r = qcore.bloch_vector(out)
    assert np.linalg.norm(r) == pytest.approx(1.0)
    assert np.allclose(r / np.linalg.norm(r), np.array([0.9, 0.6, 0.3]) / np.linalg.norm([0.9, 0.6, 0.3]))


@settings(max_examples=50, deadline=None)
@given(seeds)
def test_mle_density_oracle(seed):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=3) * rng.uniform(0, 2)
    out = qcore.mle_density(qcore.density_from_bloch(v))
    n = np.linalg.norm(v)
    expected = v if n <= 1 else v / n
    assert np.allclose(qcore.bloch_vector(out), expected, atol=1e-10)
    assert np.linalg.eigvalsh(out).min() >= -1e-12


def test_mle_density_validation():
    with pytest.raises(InvalidArgument):
        qcore.mle_density(np.array([[1, 1], [0, 0]]))
    with pytest.raises(InvalidArgument):
        qcore.mle_density(np.eye(2))
