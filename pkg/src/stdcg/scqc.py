"""Space-curve quantum control for the singlet-triplet Hamiltonian.

The first-order error of a ``dEz`` fluctuation is ``r(t) . sigma`` with
``r(t) = int_0^t pauli(U0^dag sx U0) dt'``. The tangent of ``r`` is that Pauli
vector, its curvature is ``2 pi J`` and its torsion is ``-2 pi dEz`` (both in
rad per unit time), and its binormal is ``-pauli(U0^dag sz U0)``.

Curves are sampled in ns. Angular rates are carried in rad/ns, i.e.
``ANGULAR * (MHz value)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.integrate import cumulative_trapezoid

from . import qcore
from .errors import DegenerateParameterization, DesignInfeasible, InvalidArgument
from .pulse import PulseSequence

ANGULAR = 2 * math.pi * 1e-3  # rad/ns per MHz

X_HAT = np.array([1.0, 0.0, 0.0])
Z_HAT = np.array([0.0, 0.0, 1.0])


# ---------------------------------------------------------------------------
# exact segment algebra


def segment_integrals(J, dEz, t):
    """Propagators and tangent integrals for constant segments.

    Returns ``(V, I)`` where ``V`` has shape ``(..., 2, 2)`` and ``I`` is
    ``int_0^t pauli(V(s)^dag sx V(s)) ds`` with shape ``(..., 3)``.
    """
    J, dEz, t = np.broadcast_arrays(*(np.asarray(a, dtype=float) for a in (J, dEz, t)))
    f = np.hypot(J, dEz)
    n = np.stack([dEz, np.zeros_like(J), J], axis=-1) / f[..., None]
    w = ANGULAR * f  # Bloch-vector precession rate in rad/ns
    par = n * n[..., :1]  # n (n . x)
    perp = X_HAT - par
    nx = np.cross(X_HAT, n)  # x cross n; Heisenberg frame rotates opposite to the state
    wt = w * t
    with np.errstate(invalid="ignore", divide="ignore"):
        s_term = np.where(w[..., None] > 0, np.sin(wt)[..., None] / w[..., None], t[..., None])
        c_term = np.where(w[..., None] > 0, (1 - np.cos(wt))[..., None] / w[..., None], 0.0)
    I = par * t[..., None] + perp * s_term + nx * c_term
    V = qcore.su2_evolve(J, dEz, t)
    return V, I


def error_vector(J, t, dEz):
    """Exact ``r(t_f)`` and ``U0(t_f)`` for batches of piecewise-constant pulses.

    ``J`` and ``t`` have shape ``(..., S)``; ``dEz`` broadcasts against the
    batch shape.
    """
    J = np.asarray(J, dtype=float)
    t = np.asarray(t, dtype=float)
    dEz = np.broadcast_to(np.asarray(dEz, dtype=float)[..., None], J.shape)
    V, I = segment_integrals(J, dEz, t)
    U = np.broadcast_to(qcore.I2, J.shape[:-1] + (2, 2)).copy()
    r = np.zeros(J.shape[:-1] + (3,))
    for k in range(J.shape[-1]):
        R = qcore.rotation_matrix(U)
        r += np.einsum("...ij,...j->...i", R, I[..., k, :])
        U = V[..., k, :, :] @ U
    return r, U


def sequence_unitary(seq: PulseSequence, dEz: float | None = None) -> np.ndarray:
    dEz = seq.dEz if dEz is None else dEz
    V = qcore.su2_evolve(seq.exchanges, dEz, seq.durations)
    U = qcore.I2.copy()
    for v in V:
        U = v @ U
    return U


# ---------------------------------------------------------------------------
# curve types


@dataclass(frozen=True, eq=False)
class PlanarCurve:
    points: np.ndarray = field(repr=False)

    def __post_init__(self):
        p = np.asarray(self.points, dtype=float)
        if p.ndim != 2 or p.shape[1] != 2 or len(p) < 16:
            raise InvalidArgument("planar curve needs at least 16 two-dimensional samples")
        if not np.all(np.isfinite(p)):
            raise InvalidArgument("planar curve coordinates must be finite")
        object.__setattr__(self, "points", p)


@dataclass(frozen=True, eq=False)
class BinormalCurve:
    t: np.ndarray = field(repr=False)
    b: np.ndarray = field(repr=False)

    def __post_init__(self):
        t = np.asarray(self.t, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if b.shape != (len(t), 3):
            raise InvalidArgument("binormal samples must have shape (n, 3)")
        if np.any(np.abs(np.linalg.norm(b, axis=1) - 1) > 1e-9):
            raise InvalidArgument("binormal samples must be unit vectors")
        if len(t) > 1 and not np.allclose(np.diff(t), t[1] - t[0], rtol=1e-9, atol=1e-12):
            raise InvalidArgument("binormal curve needs a uniform time grid")
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "b", b)

    @property
    def dt(self) -> float:
        return float(self.t[1] - self.t[0])


@dataclass(frozen=True, eq=False)
class ErrorCurve:
    t: np.ndarray = field(repr=False)
    r: np.ndarray = field(repr=False)
    tangent: np.ndarray = field(repr=False)
    U_final: np.ndarray | None = field(default=None, repr=False)

    @property
    def closure_residual(self) -> float:
        return float(np.linalg.norm(self.r[-1] - self.r[0]))

    @property
    def tangent_mismatch(self) -> float:
        """Distance between the final and initial tangents."""
        return float(np.linalg.norm(self.tangent[-1] - self.tangent[0]))

    @property
    def duration(self) -> float:
        return float(self.t[-1] - self.t[0])


# ---------------------------------------------------------------------------
# geometry


def stereographic_project(p) -> np.ndarray:
    """Map plane points onto the unit sphere, inverting
    ``p = 2 (bx, by) / (1 + bz)`` (projection from the south pole)."""
    p = np.asarray(p, dtype=float)
    u = p / 2
    q = np.sum(u * u, axis=-1, keepdims=True)
    return np.concatenate([2 * u, 1 - q], axis=-1) / (1 + q)


def stereographic_coords(b) -> np.ndarray:
    b = np.asarray(b, dtype=float)
    return 2 * b[..., :2] / (1 + b[..., 2:3])


def _stencil_derivatives(y: np.ndarray, h: float):
    """First and second derivatives along axis 0.

    Five-point central stencils in the interior, second-order one-sided
    differences within two samples of either end.
    """
    d1 = np.gradient(y, h, axis=0, edge_order=2)
    d2 = np.gradient(d1, h, axis=0, edge_order=2)
    if len(y) >= 5:
        d1[2:-2] = (-y[4:] + 8 * y[3:-1] - 8 * y[1:-3] + y[:-4]) / (12 * h)
        d2[2:-2] = (-y[4:] + 16 * y[3:-1] - 30 * y[2:-2] + 16 * y[1:-3] - y[:-4]) / (12 * h * h)
    return d1, d2


def curve_from_binormal(bc: BinormalCurve, dEz: float) -> ErrorCurve:
    """Space curve ``r = -(1/w) int b x b' dt`` with ``w = 2 pi dEz``."""
    if dEz == 0:
        raise InvalidArgument("dEz must be nonzero")
    w = ANGULAR * dEz
    bdot, _ = _stencil_derivatives(bc.b, bc.dt)
    tangent = -np.cross(bc.b, bdot) / w
    r = cumulative_trapezoid(tangent, bc.t, axis=0, initial=0.0)
    return ErrorCurve(bc.t, r, tangent)


def geodesic_curvature(bc: BinormalCurve) -> np.ndarray:
    """``b'' . (b x b') / |b'|**3`` sampled along the curve."""
    if len(bc.t) < 3:
        raise InvalidArgument("need at least three samples")
    d1, d2 = _stencil_derivatives(bc.b, bc.dt)
    speed = np.linalg.norm(d1, axis=1)
    if np.any(speed[1:-1] < 1e-8):
        raise DegenerateParameterization("binormal curve is stationary at an interior sample")
    return np.einsum("ij,ij->i", d2, np.cross(bc.b, d1)) / speed**3


def curvature(t, tangent) -> np.ndarray:
    """Curvature from tangent samples ``r'`` on a uniform grid."""
    h = t[1] - t[0]
    acc = np.gradient(tangent, h, axis=0, edge_order=2)
    sp = np.linalg.norm(tangent, axis=1)
    return np.linalg.norm(np.cross(tangent, acc), axis=1) / sp**3


def torsion(t, tangent) -> np.ndarray:
    """Frenet torsion ``(r' x r'') . r''' / |r' x r''|**2`` from tangent samples."""
    h = t[1] - t[0]
    d2, d3 = _stencil_derivatives(tangent, h)
    c = np.cross(tangent, d2)
    return np.einsum("ij,ij->i", c, d3) / np.einsum("ij,ij->i", c, c)


def error_curve_from_pulse(pulse: PulseSequence, dEz: float | None = None, substep: float = 0.1) -> ErrorCurve:
    """Sample ``r(t)`` for a pulse; segment integrals are exact, so ``r`` at
    the sample points carries no quadrature error."""
    dEz = pulse.dEz if dEz is None else dEz
    ts, rs, tans = [0.0], [np.zeros(3)], [X_HAT.copy()]
    U = qcore.I2.copy()
    r = np.zeros(3)
    t0 = 0.0
    for J, dur in pulse.segments:
        m = max(1, int(math.ceil(dur / substep - 1e-9)))
        h = dur / m
        V, I = segment_integrals(J, dEz, h)
        for k in range(m):
            r = r + qcore.rotation_matrix(U) @ I
            U = V @ U
            ts.append(t0 + (k + 1) * h)
            rs.append(r)
            tans.append(qcore.conjugate_pauli(U, X_HAT))
        t0 += dur
    return ErrorCurve(np.array(ts), np.array(rs), np.array(tans), U)


def segment_interior_mask(t: np.ndarray, pulse: PulseSequence, margin: float) -> np.ndarray:
    edges = pulse.boundaries()
    d = np.min(np.abs(t[:, None] - edges[None, :]), axis=1)
    return d > margin


def pulse_exchange_at(t: np.ndarray, pulse: PulseSequence) -> np.ndarray:
    edges = pulse.boundaries()
    idx = np.clip(np.searchsorted(edges, t, side="right") - 1, 0, len(pulse.segments) - 1)
    return pulse.exchanges[idx]


# ---------------------------------------------------------------------------
# boundary conditions


GATE_TARGETS = {
    "identity": (qcore.I2, X_HAT, X_HAT),
    "hadamard": (qcore.HADAMARD, X_HAT, Z_HAT),
}


@dataclass(frozen=True)
class TangentTarget:
    initial: np.ndarray
    final: np.ndarray
    realized: np.ndarray

    @property
    def mismatch(self) -> float:
        return float(np.linalg.norm(self.realized - self.final))


def boundary_tangent_target(gate: str, U0f) -> TangentTarget:
    if gate not in GATE_TARGETS:
        raise InvalidArgument(f"unknown gate {gate!r}; expected one of {sorted(GATE_TARGETS)}")
    if not qcore.is_unitary(U0f, atol=1e-9):
        raise InvalidArgument("final evolution operator must be unitary")
    _, start, end = GATE_TARGETS[gate]
    return TangentTarget(start.copy(), end.copy(), qcore.conjugate_pauli(U0f, X_HAT))


def gate_error(U, target) -> float:
    """Phase-insensitive distance ``1 - |Tr(target^dag U)| / 2``."""
    return float(1 - abs(np.trace(np.conj(target).T @ U)) / 2)


# ---------------------------------------------------------------------------
# binormal construction from arcs of constant geodesic curvature


@dataclass(frozen=True)
class ArcShape:
    """Fundamental segment of a three-fold symmetric binormal curve.

    ``kappa1, kappa2`` are the geodesic curvatures of the two arcs (equal to
    ``J / dEz``) and ``s1, s2`` their lengths on the unit sphere in rad.
    """

    kappa1: float
    kappa2: float
    s1: float
    s2: float

    @classmethod
    def from_exchange(cls, J1, J2, t1, t2, dEz) -> "ArcShape":
        w = ANGULAR * dEz
        return cls(J1 / dEz, J2 / dEz, w * t1, w * t2)


def _arc(b0, u0, kappa, s):
    """Rotate ``(b, u)`` along a small circle of geodesic curvature ``kappa``."""
    norm = math.sqrt(1 + kappa * kappa)
    m = (kappa * b0 + np.cross(b0, u0)) / norm
    ang = norm * np.atleast_1d(s)

    def rot(v):
        par = m * (m @ v)
        return par + np.cos(ang)[:, None] * (v - par) + np.sin(ang)[:, None] * np.cross(m, v)

    return rot(b0), rot(u0)


def _rotation_to(a, target=Z_HAT):
    """Proper rotation taking unit vector ``a`` onto ``target``."""
    v = np.cross(a, target)
    c = float(a @ target)
    if np.linalg.norm(v) < 1e-14:
        return np.eye(3) if c > 0 else np.diag([1.0, -1.0, -1.0])
    vx = np.array([[0, -v[2], v[1]], [v[2], 0, -v[0]], [-v[1], v[0], 0]])
    return np.eye(3) + vx + vx @ vx / (1 + c)


def _rot_z(phi):
    c, s = math.cos(phi), math.sin(phi)
    return np.array([[c, -s], [s, c]])


def build_identity_binormal(dEz: float, shape: ArcShape, samples_per_segment: int = 2000, gap_tol: float = 1e-6):
    """Three-fold symmetric binormal curve for a corrected identity.

    The fundamental segment (two arcs) is traced on the sphere, rotated so its
    symmetry axis points to the north pole, stereographically mapped to the
    plane, replicated under 120 degree rotations there, and mapped back.

    Returns ``(BinormalCurve, PlanarCurve)``.
    """
    from shapely.geometry import LineString

    if dEz <= 0:
        raise InvalidArgument("dEz must be positive")
    if min(shape.s1, shape.s2) <= 0 or min(shape.kappa1, shape.kappa2) <= 0:
        raise DesignInfeasible("arc lengths and curvatures must be positive", best=shape)
    w = ANGULAR * dEz
    n1 = samples_per_segment
    n2 = max(2, int(round(samples_per_segment * shape.s2 / shape.s1)))
    # uniform time grid: same spacing on both arcs
    h = (shape.s1 + shape.s2) / (n1 + n2)
    s_grid = np.arange(n1 + n2 + 1) * h
    b0, u0 = Z_HAT.copy(), X_HAT.copy()
    first = s_grid <= shape.s1
    b_a, u_a = _arc(b0, u0, shape.kappa1, s_grid[first])
    b_mid, u_mid = _arc(b0, u0, shape.kappa1, shape.s1)
    b_b, _ = _arc(b_mid[0], u_mid[0], shape.kappa2, s_grid[~first] - shape.s1)
    seg = np.concatenate([b_a, b_b])
    b_end = seg[-1]

    # symmetry axis of the block rotation taking (b0, u0) -> (b_end, u_end)
    _, u_end = _arc(b_mid[0], u_mid[0], shape.kappa2, shape.s1 + shape.s2 - shape.s1)
    F0 = np.column_stack([b0, u0, np.cross(b0, u0)])
    F1 = np.column_stack([b_end, u_end[0], np.cross(b_end, u_end[0])])
    Rb = F1 @ F0.T
    angle = math.acos(np.clip((np.trace(Rb) - 1) / 2, -1, 1))
    axis = np.array([Rb[2, 1] - Rb[1, 2], Rb[0, 2] - Rb[2, 0], Rb[1, 0] - Rb[0, 1]])
    if np.linalg.norm(axis) < 1e-12:
        raise DesignInfeasible("fundamental segment has no rotation axis", best=shape)
    axis /= np.linalg.norm(axis)
    A = _rotation_to(axis)
    seg = seg @ A.T
    plane = stereographic_coords(seg)
    if not LineString(plane).is_simple:
        raise DesignInfeasible("fundamental segment intersects itself", best=shape)
    # the axis was chosen so the block rotates by +angle in [0, pi] about it
    sector = 2 * math.pi / 3
    pieces = [plane] + [plane[1:] @ _rot_z(k * sector).T for k in (1, 2)]
    planar = np.concatenate(pieces)
    b = stereographic_project(planar)
    # the replicated pieces only join up if the block is a 120 degree rotation
    gap = abs(angle - 2 * math.pi / 3)
    if gap > gap_tol:
        raise DesignInfeasible(
            f"fundamental segment rotation is {math.degrees(angle):.3f} deg, not a multiple of 120",
            best=shape,
            residual=gap,
        )
    t = np.arange(len(b)) * h / w
    return BinormalCurve(t, b / np.linalg.norm(b, axis=1, keepdims=True)), PlanarCurve(planar)


def projected_areas(bc: BinormalCurve) -> np.ndarray:
    """Signed areas ``(1/2) int b x db`` of the curve projected on the three
    coordinate planes (yz, zx, xy)."""
    db = np.gradient(bc.b, axis=0, edge_order=2)
    return 0.5 * np.trapezoid(np.cross(bc.b, db), axis=0)
