import time

import numpy as np
import pytest

from stdcg import design, pulse, qcore, sim

# Filled by tests/test_acceptance.py, printed at the end of the run.
ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def identity_params():
    return design.design_identity(2.9)


@pytest.fixture(scope="session")
def hadamard_params():
    return design.design_hadamard(2.5)


@pytest.fixture(scope="session")
def exchange_model():
    return pulse.ExchangeModel()


@pytest.fixture(scope="session")
def paper_filter():
    return pulse.FilterSpec()


@pytest.fixture(scope="session")
def table(identity_params, hadamard_params, exchange_model, paper_filter):
    """Table I at the paper profile, with its wall-clock time."""
    t0 = time.perf_counter()
    tab = sim.table1(
        identity_params.sequence(),
        hadamard_params.sequence(),
        sim.NoiseSpec(n=256, seed=1),
        sim.NoiseSpec(n=128, seed=1),
        exchange_model,
        paper_filter,
        beta_sweep=sim.SweepSpec(lo=(0.6, 0.5), hi=(1.3, 4.5), steps=(15, 17)),
        xi_sweep=sim.SweepSpec(("xi1", "xi2"), (0.8, 0.8), (1.2, 1.2), (31, 31)),
    )
    return tab, time.perf_counter() - t0


def random_unitary(rng):
    z = rng.normal(size=(2, 2)) + 1j * rng.normal(size=(2, 2))
    q, r = np.linalg.qr(z)
    return q * (np.diag(r) / np.abs(np.diag(r)))


def random_channel(rng):
    """Random CPTP map built from a random Stinespring isometry."""
    z = rng.normal(size=(8, 2)) + 1j * rng.normal(size=(8, 2))
    V, _ = np.linalg.qr(z)
    kraus = V.reshape(4, 2, 2)
    S = sum(np.kron(K.conj(), K) for K in kraus)
    return qcore.QuantumChannel(S)


def random_density(rng):
    v = rng.normal(size=3)
    v *= rng.uniform(0, 1) / np.linalg.norm(v)
    return qcore.density_from_bloch(v)


# Generators of the sphere's Darboux frame (b, u, b x u): b' = w u, u' = w (-b + kg b x u).
_G1 = np.array([[0.0, -1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]])
_G2 = np.array([[0.0, 0.0, 0.0], [0.0, 0.0, -1.0], [0.0, 1.0, 0.0]])


def _skew_exp(O):
    v = np.stack([O[..., 2, 1], O[..., 0, 2], O[..., 1, 0]], -1)
    th = np.linalg.norm(v, axis=-1)[..., None, None]
    with np.errstate(invalid="ignore", divide="ignore"):
        a = np.where(th > 1e-12, np.sin(th) / th, 1.0)
        b = np.where(th > 1e-12, (1 - np.cos(th)) / th**2, 0.5)
    return np.eye(3) + a * O + b * (O @ O)


def random_binormal(rng, dEz, n=2000):
    """A smooth binormal curve of speed ``2 pi dEz`` with a random geodesic curvature.

    The curvature is a smooth random function bounded in ``[0.1, 6]``; the
    frame is integrated with a fourth-order Magnus step. Returns the
    :class:`~stdcg.scqc.BinormalCurve` and the planted curvature samples.
    """
    from stdcg import scqc

    w = scqc.ANGULAR * dEz
    T = rng.uniform(100, 600)
    c = rng.normal(size=4)
    ph = rng.uniform(0, 2 * np.pi, 4)
    lo, hi = rng.uniform(0.1, 1), rng.uniform(1, 6)

    def kg(t):
        x = np.tanh(sum(c[k] * np.cos(2 * np.pi * (k + 1) * t / T + ph[k]) for k in range(4)))
        return lo + (hi - lo) * (x + 1) / 2

    t = np.linspace(0, T, n)
    h = t[1] - t[0]
    g = (0.5 - np.sqrt(3) / 6, 0.5 + np.sqrt(3) / 6)
    A1 = w * (_G1 + kg(t[:-1] + g[0] * h)[:, None, None] * _G2)
    A2 = w * (_G1 + kg(t[:-1] + g[1] * h)[:, None, None] * _G2)
    E = _skew_exp(h / 2 * (A1 + A2) + np.sqrt(3) / 12 * h * h * (A2 @ A1 - A1 @ A2))
    F = np.empty((n, 3, 3))
    F[0] = np.eye(3)
    for k in range(n - 1):
        F[k + 1] = F[k] @ E[k]
    b = F[:, :, 0]
    return scqc.BinormalCurve(t, b / np.linalg.norm(b, axis=1, keepdims=True)), kg(t)
