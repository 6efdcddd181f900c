"""Numerical design of the corrected identity and Hadamard pulses.

Both designs keep the low exchange level ``J2`` as an input: closure and the
gate condition leave a continuous family of solutions, and the smallest
exchange the hardware can hold steady is a device property rather than
something the curve geometry decides.

Identity
    Three repetitions of ``(J1, t1), (J2, t2)``. For each ``J1`` the times
    are fixed by closure plus the gate condition; ``J1`` itself is picked to
    minimize the expected infidelity under quasistatic hyperfine and
    fractional exchange noise (Gauss-Hermite quadrature over both).
Hadamard
    A noisy square Hadamard ``(JH = dEz, tH)`` followed by a cyclic shift of a
    three-fold identity-like corrector. The gate condition is imposed as an
    equality. Among gate-exact members with ``J1 <= Jmax`` the one with the
    lowest expected infidelity is kept, the same criterion as for the
    identity. Full closure is not demanded; closure beyond ``relaxation``
    (``|r(t_f)| / t_f``) is penalized and rejected.
"""
from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import least_squares, minimize, minimize_scalar

from . import qcore, scqc
from .errors import DesignInfeasible, InvalidArgument
from .pulse import PulseSequence, hadamard_sequence, identity_sequence

# noise used to rank members of a solution family
SIGMA_HYPERFINE = 0.2867
EXCHANGE_NOISE = 0.012
IDENTITY_J2_RATIO = 0.4 / 2.9
HADAMARD_J2_RATIO = 0.1 / 2.5


@dataclass(frozen=True)
class IdentityDcgParams:
    J1: float
    J2: float
    t1: float
    t2: float
    dEz: float
    repetitions: int = 3
    closure_residual: float = float("nan")
    gate_error: float = float("nan")

    def __post_init__(self):
        if min(self.J1, self.J2) <= 0 or min(self.t1, self.t2) <= 0:
            raise InvalidArgument("identity parameters must be positive")

    def sequence(self) -> PulseSequence:
        return identity_sequence(self.J1, self.J2, self.t1, self.t2, self.dEz, self.repetitions)

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class HadamardDcgParams:
    JH: float
    J1: float
    J2: float
    tH: float
    t1: float
    t2: float
    tb: float
    dEz: float
    relaxation: float = 0.05
    closure_residual: float = float("nan")
    gate_error: float = float("nan")

    def __post_init__(self):
        if min(self.JH, self.J1, self.J2) <= 0:
            raise InvalidArgument("exchange values must be positive")
        if not 0 < self.tb < self.t1:
            raise InvalidArgument("need 0 < tb < t1")
        if min(self.tH, self.t2) <= 0:
            raise InvalidArgument("durations must be positive")

    def sequence(self) -> PulseSequence:
        return hadamard_sequence(self.JH, self.J1, self.J2, self.tH, self.t1, self.t2, self.tb, self.dEz)

    def to_dict(self) -> dict:
        return asdict(self)


def uncorrected_identity(dEz: float) -> PulseSequence:
    """2 pi rotation about (x + z) / sqrt(2): ``J = dEz`` for ``1 / (sqrt(2) dEz)``."""
    return PulseSequence([(dEz, 1e3 / (math.sqrt(2) * dEz))], dEz, labels=("JH",), label="I")


def uncorrected_hadamard(dEz: float) -> PulseSequence:
    return PulseSequence([(dEz, hadamard_time(dEz))], dEz, labels=("JH",), label="H")


def hadamard_time(dEz: float) -> float:
    return 1e3 / (2 * math.sqrt(2) * dEz)


# ---------------------------------------------------------------------------
# shared helpers


def _gate_vector(U, target):
    """Rotation vector of ``target^dag U`` with the phase chosen so that the
    vector vanishes exactly when ``U`` equals ``target`` up to phase."""
    v = np.conj(np.swapaxes(target, -1, -2)) @ U
    v = v / np.sqrt(np.linalg.det(v))[..., None, None]
    sign = np.where(np.real(np.trace(v, axis1=-2, axis2=-1)) < 0, -1.0, 1.0)
    return sign[..., None] * np.imag(np.einsum("...ab,kba->...k", v, qcore.PAULIS[1:])) / 2


def expected_infidelity(J, t, dEz, target, sigma, frac_j, order: int = 12) -> float:
    """Noise-averaged ``1 - |Tr(target^dag U)|**2 / 4`` by Gauss-Hermite quadrature.

    ``sigma`` is the hyperfine standard deviation in MHz and ``frac_j`` the
    fractional exchange noise; the quadrature is exact for the polynomial
    part of the response up to degree ``2 * order - 1``.
    """
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    xa = x if sigma > 0 else np.zeros(1)
    wa = w if sigma > 0 else np.ones(1)
    xb = x if frac_j > 0 else np.zeros(1)
    wb = w if frac_j > 0 else np.ones(1)
    J = np.asarray(J, dtype=float)
    t = np.asarray(t, dtype=float)
    Jn = J[None, None, :] * (1 + frac_j * xb)[None, :, None]
    dn = dEz + sigma * xa[:, None, None]
    U = qcore.su2_evolve(Jn, dn, t)
    P = np.broadcast_to(qcore.I2, U.shape[:2] + (2, 2)).copy()
    for k in range(J.size):
        P = U[:, :, k] @ P
    F = np.abs(np.trace(np.conj(target).T @ P, axis1=-2, axis2=-1)) ** 2 / 4
    return float(1 - wa @ F @ wb)


def _check_dEz(dEz):
    if not dEz > 0:
        raise InvalidArgument("dEz must be positive")


# ---------------------------------------------------------------------------
# identity


def _identity_arrays(J1, J2, t1, t2, reps=3):
    return np.array([J1, J2] * reps), np.array([t1, t2] * reps)


def _identity_residual(times, J1, J2, dEz):
    J, t = _identity_arrays(J1, J2, *times)
    r, U = scqc.error_vector(J, t, dEz)
    T = t.sum()
    return np.concatenate([r / T, _gate_vector(U, qcore.I2)])


def _identity_seeds(J1, J2, dEz, grid: int = 12):
    """Times solving the identity conditions at fixed exchanges, from a scan over
    the number of cycles spent in each segment."""
    f1, f2 = np.hypot(J1, dEz), np.hypot(J2, dEz)
    sols = []
    for c1, c2 in itertools.product(np.linspace(0.04, 0.96, grid), repeat=2):
        x0 = np.array([c1 / f1, c2 / f2]) * 1e3
        s = least_squares(_identity_residual, x0, args=(J1, J2, dEz), bounds=(1e-3, np.inf), xtol=1e-14, ftol=1e-14, gtol=1e-14)
        if np.linalg.norm(s.fun) < 1e-8:
            sols.append(s.x)
    return sols


def _solve_identity_times(J1, J2, dEz, x0):
    s = least_squares(_identity_residual, x0, args=(J1, J2, dEz), bounds=(1e-3, np.inf), xtol=1e-15, ftol=1e-15, gtol=1e-15)
    return s.x, float(np.linalg.norm(s.fun))


def design_identity(
    dEz: float,
    J2: float | None = None,
    sigma: float | None = None,
    frac_j: float = EXCHANGE_NOISE,
    j1_bounds: tuple[float, float] | None = None,
    tol: float = 1e-8,
) -> IdentityDcgParams:
    """Corrected identity for a given Zeeman gradient.

    Parameters
    ----------
    dEz : float
        Zeeman gradient in MHz.
    J2 : float, optional
        Low exchange level in MHz; defaults to ``0.4 / 2.9`` of ``dEz``.
    sigma : float, optional
        Hyperfine noise used to rank candidate ``J1`` values, in MHz
        (default 0.2867). Scale it with ``dEz`` to keep the problem scale free.
    frac_j : float
        Fractional exchange noise used for the ranking.
    j1_bounds : (float, float), optional
        Search interval for ``J1``; defaults to ``(1.5, 8) * dEz``.
    tol : float
        Maximum accepted norm of the closure and gate residual vector.

    Returns
    -------
    IdentityDcgParams

    Raises
    ------
    DesignInfeasible
        If no time pair closes the curve to within ``tol``.
    """
    _check_dEz(dEz)
    J2 = IDENTITY_J2_RATIO * dEz if J2 is None else float(J2)
    sigma = SIGMA_HYPERFINE if sigma is None else float(sigma)
    lo, hi = (1.5 * dEz, 8 * dEz) if j1_bounds is None else j1_bounds
    if not 0 < lo < hi or J2 <= 0:
        raise InvalidArgument("need 0 < J1 bounds and J2 > 0")

    mid = math.sqrt(lo * hi)
    seeds = _identity_seeds(mid, J2, dEz)
    if not seeds:
        raise DesignInfeasible("no closing identity found at the seed exchange", best=(mid, J2))
    # shortest solution: the branch with the fewest wasted rotations
    start = min(seeds, key=lambda x: x.sum())
    solved = {mid: start}

    def solve_at(J1):
        near = min(solved, key=lambda k: abs(math.log(k / J1)))
        x, res = _solve_identity_times(J1, J2, dEz, solved[near])
        if res < tol:
            solved[J1] = x
        return x, res

    def cost(logJ1):
        J1 = math.exp(logJ1)
        x, res = solve_at(J1)
        if res > tol:
            return 1.0 + res
        J, t = _identity_arrays(J1, J2, *x)
        return expected_infidelity(J, t, dEz, qcore.I2, sigma, frac_j)

    # walk outward from the seed so that warm starts stay on one branch
    for J1 in np.geomspace(mid, lo, 8)[1:]:
        solve_at(J1)
    for J1 in np.geomspace(mid, hi, 8)[1:]:
        solve_at(J1)
    opt = minimize_scalar(cost, bounds=(math.log(lo), math.log(hi)), method="bounded", options={"xatol": 1e-6})
    J1 = math.exp(opt.x)
    x, res = solve_at(J1)
    if res > tol:
        raise DesignInfeasible("identity closure failed at the optimal exchange", best=(J1, J2, *x), residual=res)
    J, t = _identity_arrays(J1, J2, *x)
    r, U = scqc.error_vector(J, t, dEz)
    return IdentityDcgParams(
        J1=J1,
        J2=J2,
        t1=float(x[0]),
        t2=float(x[1]),
        dEz=dEz,
        closure_residual=float(np.linalg.norm(r)),
        gate_error=scqc.gate_error(U, qcore.I2),
    )


# ---------------------------------------------------------------------------
# hadamard


def _hadamard_arrays(p, J2, dEz, JH, tH):
    J1, t1, t2, tb = p
    return (
        np.array([JH, J1, J2, J1, J2, J1, J2, J1]),
        np.array([tH, t1 - tb, t2, t1, t2, t1, t2, tb]),
    )


def hadamard_closure(p, J2, dEz, JH=None, tH=None):
    """``(|r(t_f)| / t_f, gate vector)`` for Hadamard parameters ``(J1, t1, t2, tb)``."""
    JH = dEz if JH is None else JH
    tH = hadamard_time(dEz) if tH is None else tH
    J, t = _hadamard_arrays(p, J2, dEz, JH, tH)
    r, U = scqc.error_vector(J, t, dEz)
    return float(np.linalg.norm(r) / t.sum()), _gate_vector(U, qcore.HADAMARD)


def _block_half_trace(J1, J2, t1, t2, dEz):
    """``Re Tr(U(J2, t2) U(J1, t1)) / 2``; the corrector is the identity exactly
    when this equals +-1/2 (the block is then a 120 or 240 degree rotation)."""
    B = qcore.su2_evolve(J2, dEz, t2) @ qcore.su2_evolve(J1, dEz, t1)
    return np.real(np.trace(B, axis1=-2, axis2=-1)) / 2


def _hadamard_screen(J1, J2, dEz, JH, tH, n_t1: int = 48, n_t2: int = 240, n_fb: int = 12):
    """Gate-exact candidates at fixed ``J1`` with their closure residuals.

    ``t1`` runs over a grid of cycle counts in (0, 1); for each, every ``t2``
    within one J2 cycle satisfying the block condition is located by linear
    interpolation of a sign change and polished with one secant step. ``tb``
    runs over fractions of ``t1``.

    Returns ``(x, closure)`` with ``x`` of shape ``(n, 3)`` holding
    ``(t1, t2, tb)``.
    """
    c1 = (np.arange(n_t1) + 0.5) / n_t1
    t1 = c1 / np.hypot(J1, dEz) * 1e3
    t2 = np.linspace(0, 1, n_t2 + 1)[1:] / np.hypot(J2, dEz) * 1e3
    g = _block_half_trace(J1, J2, t1[:, None], t2[None, :], dEz) ** 2 - 0.25
    i, j = np.nonzero(np.sign(g[:, :-1]) != np.sign(g[:, 1:]))
    if len(i) == 0:
        return np.zeros((0, 3)), np.zeros(0)
    ta, tb_ = t2[j], t2[j + 1]
    ga, gb = g[i, j], g[i, j + 1]
    root = ta - ga * (tb_ - ta) / (gb - ga)
    # one secant refinement keeps the screen close to the constraint surface
    gr = _block_half_trace(J1, J2, t1[i], root, dEz) ** 2 - 0.25
    root = np.where(np.abs(gr) < np.abs(ga), root - gr * (root - ta) / np.where(gr == ga, 1, gr - ga), root)
    fb = (np.arange(n_fb) + 0.5) / n_fb
    T1 = np.repeat(t1[i], n_fb)
    T2 = np.repeat(root, n_fb)
    TB = T1 * np.tile(fb, len(i))
    J = np.broadcast_to(np.array([JH, J1, J2, J1, J2, J1, J2, J1]), T1.shape + (8,))
    T = np.stack([np.full_like(T1, tH), T1 - TB, T2, T1, T2, T1, T2, TB], axis=-1)
    r, _ = scqc.error_vector(J, T, dEz)
    return np.column_stack([T1, T2, TB]), np.linalg.norm(r, axis=-1) / T.sum(axis=-1)


def design_hadamard(
    dEz: float,
    Jmax: float = 25.0,
    relaxation: float = 0.05,
    J2: float | None = None,
    sigma: float = SIGMA_HYPERFINE,
    frac_j: float = EXCHANGE_NOISE,
    penalty: float = 1e3,
    j_step: float = 1.0,
    screen_keep: int = 3,
    polish: int = 12,
    closure_tol: float = 1e-5,
    tol: float = 1e-9,
) -> HadamardDcgParams:
    """Corrected Hadamard with partial closure.

    Parameters
    ----------
    dEz : float
        Zeeman gradient in MHz. The noisy Hadamard segment uses ``JH = dEz``
        for ``tH = 1 / (2 sqrt(2) dEz)``.
    Jmax : float
        Upper bound on ``J1`` in MHz. Must exceed ``dEz``.
    relaxation : float
        Largest accepted ``|r(t_f)| / t_f``. Zero demands full closure.
    J2 : float, optional
        Low exchange level; defaults to ``0.1 / 2.5`` of ``dEz``.
    sigma, frac_j : float
        Noise model used to rank gate-exact candidates (hyperfine standard
        deviation in MHz, fractional exchange noise).
    penalty : float
        Weight on the squared closure excess beyond ``relaxation``.
    j_step : float
        Spacing in MHz of the ``J1`` screening grid.
    screen_keep : int
        Candidates kept per screened ``J1`` value.
    closure_tol : float
        Slack on ``relaxation`` absorbing optimizer precision; with
        ``relaxation=0`` it is the accepted ``|r(t_f)| / t_f``.
    polish : int
        Number of screened candidates (best closure first) handed to the
        constrained optimizer.

    Raises
    ------
    DesignInfeasible
        When no gate-exact solution stays within ``relaxation``; the best
        parameters and their residual are attached.
    """
    _check_dEz(dEz)
    if Jmax <= dEz:
        raise DesignInfeasible(f"Jmax={Jmax} must exceed dEz={dEz}", residual=float("inf"))
    if relaxation < 0:
        raise InvalidArgument("relaxation must be non-negative")
    J2 = HADAMARD_J2_RATIO * dEz if J2 is None else float(J2)
    JH, tH = dEz, hadamard_time(dEz)

    def score(p):
        J, t = _hadamard_arrays(p, J2, dEz, JH, tH)
        closure = hadamard_closure(p, J2, dEz, JH, tH)[0]
        excess = max(0.0, closure - relaxation)
        inf = expected_infidelity(J, t, dEz, qcore.HADAMARD, sigma, frac_j, order=10)
        return inf + penalty * excess**2, closure

    # screen the gate-exact surface, keep the members closest to closing
    pool = []
    for J1 in np.arange(2 * dEz, Jmax + 1e-9, j_step):
        x, closure = _hadamard_screen(J1, J2, dEz, JH, tH)
        for k in np.argsort(closure)[:screen_keep]:
            pool.append((closure[k], np.array([J1, *x[k]])))
    if not pool:
        raise DesignInfeasible("no gate-exact corrector in the screening grid", residual=float("inf"))
    pool.sort(key=lambda c: c[0])

    # optimizer coordinates: (J1 / Jmax, t1 / 100, t2 / 100, tb / t1)
    def unpack(y):
        return np.array([y[0] * Jmax, 100 * y[1], 100 * y[2], 100 * y[1] * y[3]])

    def objective(y):
        v, closure = score(unpack(y))
        return 1e3 * (v if relaxation > 0 else closure**2)

    def block(y):
        p = unpack(y)
        return _block_half_trace(p[0], J2, p[1], p[2], dEz) ** 2 - 0.25

    bounds = [(dEz / Jmax, 1.0), (1e-3, None), (1e-3, None), (1e-4, 1 - 1e-4)]
    lo = np.array([b[0] for b in bounds])
    hi = np.array([np.inf if b[1] is None else b[1] for b in bounds])
    best = None
    for _, p0 in pool[:polish]:
        y0 = np.array([p0[0] / Jmax, p0[1] / 100, p0[2] / 100, p0[3] / p0[1]])
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            s = minimize(
                objective, y0, method="SLSQP", bounds=bounds,
                constraints=[{"type": "eq", "fun": block}], options={"maxiter": 300, "ftol": 1e-13},
            )
        p = unpack(np.clip(s.x, lo, hi))
        if np.linalg.norm(hadamard_closure(p, J2, dEz, JH, tH)[1]) > tol:
            continue
        val, closure = score(p)
        feasible = closure <= relaxation + closure_tol
        key = (not feasible, val if feasible else closure)
        if best is None or key < best[0]:
            best = (key, p, closure)
    if best is None:
        raise DesignInfeasible("optimizer lost the gate condition from every start", residual=float("inf"))

    _, x, closure = best
    if closure > relaxation + closure_tol:
        raise DesignInfeasible(
            f"minimum closure residual {closure:.4g} exceeds relaxation {relaxation:.4g}",
            best=x,
            residual=closure,
        )
    J, t = _hadamard_arrays(x, J2, dEz, JH, tH)
    r, U = scqc.error_vector(J, t, dEz)
    return HadamardDcgParams(
        JH=JH,
        J1=float(x[0]),
        J2=J2,
        tH=tH,
        t1=float(x[1]),
        t2=float(x[2]),
        tb=float(x[3]),
        dEz=dEz,
        relaxation=relaxation,
        closure_residual=float(np.linalg.norm(r)),
        gate_error=scqc.gate_error(U, qcore.HADAMARD),
    )


def infidelity_vs_sigma(pulse: PulseSequence, sigmas, target=None, n_realizations: int = 4000, seed: int = 0, order: int = 0):
    """Hyperfine-only infidelity of ``pulse`` against ``target`` as ``sigma`` varies.

    Exact segment durations, no distortion. With ``order > 0`` the noise
    average uses Gauss-Hermite quadrature of that order instead of Monte
    Carlo sampling.

    Returns an ``(n, 2)`` array of ``(sigma, infidelity)`` rows.
    """
    from . import sim

    sigmas = np.asarray(sigmas, dtype=float)
    if np.any(sigmas <= 0):
        raise InvalidArgument("sigma values must be positive")
    target = scqc.sequence_unitary(pulse) if target is None else target
    rows = []
    for s in sigmas:
        if order > 0:
            inf = expected_infidelity(pulse.exchanges, pulse.durations, pulse.dEz, target, s, 0.0, order=order)
        else:
            noise = sim.NoiseSpec(sigma=s, frac_j=0.0, n=n_realizations, seed=seed, charge=False)
            ch = sim.monte_carlo_channel(pulse, noise, target=target, exact_timing=True)
            inf = 1 - ch.fidelity
        rows.append((s, inf))
    return np.array(rows)
