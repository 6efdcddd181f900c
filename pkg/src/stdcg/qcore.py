"""Two-level quantum mechanics: evolution, channels, process matrices and fidelities.

Conventions
-----------
Exchange ``J`` and Zeeman gradient ``dEz`` are frequencies in MHz, times are in
ns, and h = 1. The Hamiltonian ``(1/2)(J sz + dEz sx)`` generates

    U = cos(theta) I - i sin(theta) n.sigma,   theta = pi * f * t * 1e-3,

with ``f = sqrt(J**2 + dEz**2)`` and ``n = (dEz, 0, J) / f``. That conversion
lives only in :func:`su2_evolve`.

Superoperators act on column-stacked density matrices. Choi matrices are
ordered (input, output), so trace preservation reads ``Tr_out(choi) = I``.
Chi matrices are expressed in the Pauli basis (I, X, Y, Z) with unit trace.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np

from .errors import ConvergenceError, InvalidArgument

I2 = np.eye(2, dtype=complex)
SX = np.array([[0, 1], [1, 0]], dtype=complex)
SY = np.array([[0, -1j], [1j, 0]], dtype=complex)
SZ = np.array([[1, 0], [0, -1]], dtype=complex)
PAULIS = np.array([I2, SX, SY, SZ])
HADAMARD = (SX + SZ) / np.sqrt(2)

# MHz * ns -> cycles
MHZ_NS = 1e-3

# columns are vec(P) for P in (I, X, Y, Z), column stacking
_PAULI_VEC = np.stack([p.T.reshape(-1) for p in PAULIS], axis=1)


def su2_evolve(J, dEz, dt):
    """Evolution operator for constant exchange ``J`` and gradient ``dEz``.

    Broadcasts over array arguments; the result has shape ``(..., 2, 2)``.

    Parameters
    ----------
    J, dEz : float or array_like
        Exchange and Zeeman gradient in MHz.
    dt : float or array_like
        Duration in ns. Must be non-negative.
    """
    J, dEz, dt = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (J, dEz, dt)))
    if np.any(dt < 0):
        raise InvalidArgument("duration must be non-negative")
    f = np.hypot(J, dEz)
    if np.any((f == 0) & (dt != 0)):
        raise InvalidArgument("J and dEz cannot both vanish for a nonzero duration")
    theta = np.pi * f * dt * MHZ_NS
    safe_f = np.where(f == 0, 1.0, f)
    s = np.sin(theta) / safe_f
    c = np.cos(theta)
    U = np.empty(J.shape + (2, 2), dtype=complex)
    U[..., 0, 0] = c - 1j * s * J
    U[..., 0, 1] = -1j * s * dEz
    U[..., 1, 0] = -1j * s * dEz
    U[..., 1, 1] = c + 1j * s * J
    return U


def pauli_components(op):
    """Coefficients ``(cx, cy, cz)`` of ``op`` in the Pauli basis (``Tr(op P) / 2``)."""
    op = np.asarray(op)
    return np.real(np.einsum("...ij,kji->...k", op, PAULIS[1:])) / 2


def pauli_operator(vec):
    """Inverse of :func:`pauli_components` for traceless Hermitian operators."""
    vec = np.asarray(vec, dtype=float)
    return np.einsum("...k,kij->...ij", vec, PAULIS[1:].astype(complex))


def rotation_matrix(U):
    """Real 3x3 matrix ``R`` with ``pauli(U^dag (a.sigma) U) = R @ a``."""
    U = np.asarray(U)
    Ud = np.conj(np.swapaxes(U, -1, -2))
    # R[i, j] = Tr(sigma_i U^dag sigma_j U) / 2
    conj = np.einsum("...ab,jbc,...cd->...jad", Ud, PAULIS[1:], U)
    return np.real(np.einsum("iab,...jba->...ij", PAULIS[1:], conj)) / 2


def conjugate_pauli(U, axis):
    """Pauli vector of ``U^dag (axis.sigma) U``."""
    return rotation_matrix(U) @ np.asarray(axis, dtype=float)


def is_unitary(U, atol: float = 1e-12) -> bool:
    U = np.asarray(U)
    return bool(np.allclose(U.conj().T @ U, I2, atol=atol))


def bloch_vector(rho):
    """Bloch vector ``Tr(rho sigma)`` of a qubit density matrix."""
    return 2 * pauli_components(rho)


def density_from_bloch(vec):
    return (I2 + pauli_operator(vec)) / 2


def _choi_from_superop(S):
    choi = np.zeros((4, 4), dtype=complex)
    for i in range(2):
        for j in range(2):
            Eij = np.zeros((2, 2), dtype=complex)
            Eij[i, j] = 1
            out = (S @ Eij.T.reshape(-1)).reshape(2, 2).T
            choi += np.kron(Eij, out)
    return choi


def _superop_from_choi(choi):
    S = np.zeros((4, 4), dtype=complex)
    blocks = choi.reshape(2, 2, 2, 2)  # [i, a, j, b] = <i a|choi|j b>
    for i in range(2):
        for j in range(2):
            col = i + 2 * j  # vec index of |i><j| under column stacking
            S[:, col] = blocks[i, :, j, :].T.reshape(-1)
    return S


def _partial_trace_out(choi):
    return np.einsum("iaja->ij", choi.reshape(2, 2, 2, 2))


@dataclass(frozen=True, eq=False)
class QuantumChannel:
    """A linear map on 2x2 density matrices stored as a column-stacked superoperator."""

    superop: np.ndarray = field(repr=False)

    def __post_init__(self):
        S = np.array(self.superop, dtype=complex)
        if S.shape != (4, 4):
            raise InvalidArgument(f"superoperator must be 4x4, got {S.shape}")
        S.setflags(write=False)
        object.__setattr__(self, "superop", S)

    @classmethod
    def from_choi(cls, choi) -> "QuantumChannel":
        return cls(_superop_from_choi(np.asarray(choi, dtype=complex)))

    @classmethod
    def from_chi(cls, chi) -> "QuantumChannel":
        chi = np.asarray(chi, dtype=complex)
        return cls.from_choi(_PAULI_VEC @ chi @ _PAULI_VEC.conj().T)

    @cached_property
    def choi(self) -> np.ndarray:
        return _choi_from_superop(self.superop)

    @cached_property
    def chi(self) -> np.ndarray:
        return _PAULI_VEC.conj().T @ self.choi @ _PAULI_VEC / 4

    def apply(self, rho):
        rho = np.asarray(rho, dtype=complex)
        return (self.superop @ rho.T.reshape(-1)).reshape(2, 2).T

    def tp_residual(self) -> float:
        """Distance of the dual map's action on I from I."""
        return float(np.abs(_partial_trace_out(self.choi) - I2).max())

    def min_choi_eigenvalue(self) -> float:
        return float(np.linalg.eigvalsh((self.choi + self.choi.conj().T) / 2).min())

    def is_cptp(self, psd_tol: float = 1e-10, tp_tol: float = 1e-9) -> bool:
        return self.min_choi_eigenvalue() >= -psd_tol and self.tp_residual() <= tp_tol


def unitary_to_channel(U) -> QuantumChannel:
    U = np.asarray(U, dtype=complex)
    return QuantumChannel(np.kron(U.conj(), U))


def unitaries_to_superops(U):
    """Batched ``conj(U) (x) U`` for an array of unitaries of shape ``(..., 2, 2)``."""
    U = np.asarray(U)
    return np.einsum("...ij,...kl->...kilj", U.conj(), U).reshape(U.shape[:-2] + (4, 4))


def average_channels(channels: Sequence[QuantumChannel], weights=None) -> QuantumChannel:
    if len(channels) == 0:
        raise InvalidArgument("cannot average an empty list of channels")
    if weights is None:
        weights = np.full(len(channels), 1 / len(channels))
    weights = np.asarray(weights, dtype=float)
    if weights.shape != (len(channels),):
        raise InvalidArgument("one weight per channel required")
    if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-12:
        raise InvalidArgument("weights must be probabilities summing to 1")
    S = np.einsum("k,kij->ij", weights, np.array([c.superop for c in channels]))
    return QuantumChannel(S)


def _project_psd(M):
    w, v = np.linalg.eigh((M + M.conj().T) / 2)
    return (v * np.clip(w, 0, None)) @ v.conj().T


def _project_tp(M):
    delta = _partial_trace_out(M) - I2
    return M - np.kron(delta, I2) / 2


def project_cptp(channel: QuantumChannel, tol: float = 1e-10, max_iter: int = 10000) -> QuantumChannel:
    """Nearest CPTP channel in Frobenius distance between Choi matrices.

    Uses Dykstra's alternating projections between the PSD cone and the
    trace-preserving affine subspace, which converges to the nearest point of
    the intersection rather than just a feasible one.
    """
    X = channel.choi.copy()
    if channel.min_choi_eigenvalue() >= -tol and channel.tp_residual() <= tol:
        return channel
    P = np.zeros_like(X)
    Q = np.zeros_like(X)
    step = np.inf
    for _ in range(max_iter):
        Y = _project_psd(X + P)
        P = X + P - Y
        X_new = _project_tp(Y + Q)
        Q = Y + Q - X_new
        step = np.abs(X_new - X).max()
        X = X_new
        if step < tol:
            X = _project_tp(_project_psd(X))
            # The last TP step can leave an eigenvalue slightly below zero. Mixing in
            # the completely depolarizing channel (Choi I/2) keeps TP exactly.
            lam = np.linalg.eigvalsh((X + X.conj().T) / 2).min()
            if lam < 0:
                eps = -lam / (0.5 - lam)
                X = (1 - eps) * X + eps * np.eye(X.shape[0]) / 2
            return QuantumChannel.from_choi(X)
    raise ConvergenceError("CPTP projection did not converge", residual=float(step))


def mle_density(raw, atol: float = 1e-9) -> np.ndarray:
    """Closest physical density matrix under additive Gaussian noise.

    Eigenvalues are sorted in descending order; negative ones are zeroed and
    their total deficit is spread equally over the ones that remain.
    """
    raw = np.asarray(raw, dtype=complex)
    if not np.allclose(raw, raw.conj().T, atol=atol):
        raise InvalidArgument("density matrix estimate must be Hermitian")
    if abs(np.trace(raw).real - 1) > atol:
        raise InvalidArgument("density matrix estimate must have unit trace")
    w, v = np.linalg.eigh((raw + raw.conj().T) / 2)
    if w.min() >= 0:
        return raw
    order = np.argsort(w)[::-1]
    w, v = w[order], v[:, order]
    lam = w.copy()
    acc = 0.0
    i = len(lam)
    while i > 0 and lam[i - 1] + acc / i < 0:
        acc += lam[i - 1]
        lam[i - 1] = 0.0
        i -= 1
    lam[:i] += acc / i
    return (v * lam) @ v.conj().T


def process_fidelity(a: QuantumChannel, b: QuantumChannel, atol: float = 1e-8) -> float:
    """``Tr(chi_a chi_b)`` with unit-trace chi matrices."""
    for ch in (a, b):
        if not ch.is_cptp(psd_tol=atol, tp_tol=atol):
            raise InvalidArgument("process fidelity requires CPTP channels")
    return float(np.clip(np.real(np.trace(a.chi @ b.chi)), 0.0, 1.0))


def unitary_fidelity(U, V) -> float:
    """Process fidelity of two unitary channels, ``|Tr(U^dag V)|**2 / 4``."""
    return float(abs(np.trace(np.conj(np.asarray(U)).T @ np.asarray(V))) ** 2 / 4)


def average_gate_fidelity(process_fid: float, d: int = 2) -> float:
    return (d * process_fid + 1) / (d + 1)
