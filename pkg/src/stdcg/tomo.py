"""Simulated state and process tomography with imperfect binary measurements.

Each measurement axis ``a`` in ``(x, y, z)`` is described by a two-outcome
POVM ``{E+, E-}`` with

    E+ = ((1 + offset) I + visibility * sigma_a) / 2,   E- = I - E+,

so a state with Bloch vector ``r`` gives the "+" outcome with probability
``(1 + offset + visibility * r_a) / 2``. Both elements are positive exactly
when ``visibility + |offset| <= 1``.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
from scipy.optimize import least_squares

from . import qcore
from .errors import CalibrationError, InvalidArgument
from .sim import SIGMA_HYPERFINE, seeded_stream

AXES = ("x", "y", "z")
_AXIS_INDEX = {a: i for i, a in enumerate(AXES)}

DEFAULT_INPUT_STATES = {
    "0": qcore.density_from_bloch([0, 0, 1]),
    "1": qcore.density_from_bloch([0, 0, -1]),
    "+x": qcore.density_from_bloch([1, 0, 0]),
    "+y": qcore.density_from_bloch([0, 1, 0]),
}


def _axis(axis) -> int:
    if axis in _AXIS_INDEX:
        return _AXIS_INDEX[axis]
    if isinstance(axis, (int, np.integer)) and 0 <= axis < 3:
        return int(axis)
    raise InvalidArgument(f"unknown measurement axis {axis!r}")


@dataclass(frozen=True)
class PovmSet:
    """Per-axis visibility and offset of the tomographic measurements."""

    visibility: tuple = (1.0, 1.0, 1.0)
    offset: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        v = tuple(float(x) for x in self.visibility)
        o = tuple(float(x) for x in self.offset)
        if len(v) != 3 or len(o) != 3:
            raise InvalidArgument("visibility and offset need one value per axis")
        for a, vi, oi in zip(AXES, v, o):
            if vi < 0 or vi + abs(oi) > 1 + 1e-10:
                raise InvalidArgument(f"axis {a}: visibility {vi} and offset {oi} do not give a valid POVM")
        object.__setattr__(self, "visibility", v)
        object.__setattr__(self, "offset", o)

    @classmethod
    def ideal(cls) -> "PovmSet":
        return cls()

    @classmethod
    def from_error_rates(cls, eps_plus, eps_minus) -> "PovmSet":
        """Build from per-axis misassignment rates.

        ``eps_plus`` is P(- | +) and ``eps_minus`` is P(+ | -) for eigenstates
        of the measured Pauli operator.
        """
        ep, em = np.asarray(eps_plus, float), np.asarray(eps_minus, float)
        vis = np.clip(1 - ep - em, 0, 1)
        off = em - ep
        return cls(tuple(vis), tuple(off))

    def element(self, axis, outcome: int = 1) -> np.ndarray:
        """POVM element for ``outcome`` 1 ("+") or 0 ("-")."""
        i = _axis(axis)
        plus = ((1 + self.offset[i]) * qcore.I2 + self.visibility[i] * qcore.PAULIS[i + 1]) / 2
        return plus if outcome else qcore.I2 - plus

    def probability(self, rho, axis) -> float:
        return float(np.real(np.trace(self.element(axis) @ np.asarray(rho))))

    def probabilities(self, rho) -> dict:
        return {a: self.probability(rho, a) for a in AXES}

    def to_dict(self) -> dict:
        return {"visibility": list(self.visibility), "offset": list(self.offset)}


def simulate_measurement(rho, povm: PovmSet, axis, shots: int, seed=0) -> int:
    """Number of "+" outcomes in ``shots`` repetitions of the measurement.

    ``seed`` may be an integer or a :class:`numpy.random.Generator`.
    """
    if shots < 1:
        raise InvalidArgument("shots must be at least 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    p = min(max(povm.probability(rho, axis), 0.0), 1.0)
    return int(rng.binomial(int(shots), p))


def _bloch_from_probabilities(probs: Mapping, povm: PovmSet) -> np.ndarray:
    if len(probs) < 3:
        raise InvalidArgument("state reconstruction needs at least three axes")
    rows, rhs = [], []
    for axis, p in probs.items():
        E = povm.element(axis)
        c0 = np.real(np.trace(E)) / 2
        rows.append(qcore.pauli_components(E))
        rhs.append(p - c0)
    A = np.array(rows)
    sv = np.linalg.svd(A, compute_uv=False)
    if sv.min() <= 1e-9 * max(sv.max(), 1e-300):
        raise CalibrationError("measurement set cannot be inverted", residual=float(sv.min()))
    r, *_ = np.linalg.lstsq(A, np.array(rhs), rcond=None)
    return r


def _as_probabilities(counts: Mapping) -> dict:
    probs = {}
    for axis, c in counts.items():
        if np.ndim(c) == 0:
            probs[axis] = float(c)
        else:
            k, n = c
            if not 0 <= k <= n or n < 1:
                raise InvalidArgument(f"axis {axis}: need 0 <= successes <= shots, shots >= 1")
            probs[axis] = k / n
    return probs


def reconstruct_state(counts: Mapping, povm: PovmSet) -> np.ndarray:
    """Most likely density matrix given per-axis outcome statistics.

    Parameters
    ----------
    counts : mapping
        Axis label to either ``(successes, shots)`` or an exact probability of
        the "+" outcome.
    povm : PovmSet
        Measurement model used for the inversion.

    Returns
    -------
    ndarray
        A physical 2x2 density matrix.

    Raises
    ------
    CalibrationError
        If the POVM elements do not determine the Bloch vector.
    """
    r = _bloch_from_probabilities(_as_probabilities(counts), povm)
    return qcore.mle_density(qcore.density_from_bloch(r))


# -- datasets ----------------------------------------------------------------

_FIELDS = ("state_label", "setting_MHz", "time_ns", "axis", "shots", "successes")


@dataclass(frozen=True)
class TomographyRecord:
    state_label: str
    setting_MHz: float
    time_ns: float
    axis: str
    shots: int
    successes: int

    def __post_init__(self):
        if self.axis not in _AXIS_INDEX:
            raise InvalidArgument(f"unknown axis {self.axis!r}")
        if self.shots < 1 or not 0 <= self.successes <= self.shots:
            raise InvalidArgument("need shots >= 1 and 0 <= successes <= shots")


@dataclass
class TomographyDataset:
    """Outcome counts indexed by (initial state, exchange setting, time, axis)."""

    records: list = field(default_factory=list)

    def series(self) -> dict:
        """Group into ``{(state, setting): (times, {axis: (successes, shots)})}``."""
        grouped: dict = {}
        for r in self.records:
            grouped.setdefault((r.state_label, r.setting_MHz), {}).setdefault(r.time_ns, {})[r.axis] = (
                r.successes,
                r.shots,
            )
        out = {}
        for key, by_time in grouped.items():
            times = np.array(sorted(by_time))
            out[key] = (times, [by_time[t] for t in times])
        return out

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(_FIELDS)
            for r in self.records:
                w.writerow([r.state_label, repr(float(r.setting_MHz)), repr(float(r.time_ns)), r.axis, r.shots, r.successes])

    @classmethod
    def from_csv(cls, path) -> "TomographyDataset":
        with open(Path(path), newline="") as fh:
            rows = list(csv.DictReader(fh))
        return cls(
            [
                TomographyRecord(
                    r["state_label"], float(r["setting_MHz"]), float(r["time_ns"]), r["axis"], int(r["shots"]), int(r["successes"])
                )
                for r in rows
            ]
        )


def ensemble_state(rho0, J: float, t: float, dEz: float, sigma: float = SIGMA_HYPERFINE, order: int = 40):
    """State after free evolution at exchange ``J``, averaged over Gaussian gradient noise."""
    x, w = np.polynomial.hermite_e.hermegauss(order)
    w = w / w.sum()
    U = qcore.su2_evolve(J, dEz + sigma * x, t)
    rho0 = np.asarray(rho0, dtype=complex)
    return np.einsum("k,kij,jl,kml->im", w, U, rho0, U.conj())


def generate_dataset(
    povm: PovmSet,
    settings: Sequence[float],
    times: Sequence[float],
    dEz: float,
    shots: int = 10000,
    seed: int = 0,
    sigma: float = SIGMA_HYPERFINE,
    states: Mapping | None = None,
) -> TomographyDataset:
    """Synthetic tomography counts for free evolution under quasistatic noise.

    Cell ``(state, setting, time)`` and axis ``a`` draw from their own seeded
    stream, so the counts do not depend on generation order.
    """
    states = DEFAULT_INPUT_STATES if states is None else states
    records = []
    for si, (label, rho0) in enumerate(states.items()):
        for ji, J in enumerate(settings):
            for ti, t in enumerate(times):
                rho = ensemble_state(rho0, J, t, dEz, sigma)
                for ai, axis in enumerate(AXES):
                    k = simulate_measurement(rho, povm, axis, shots, seeded_stream(seed, (si, ji, ti), ai))
                    records.append(TomographyRecord(label, float(J), float(t), axis, int(shots), k))
    return TomographyDataset(records)


# -- POVM calibration ----------------------------------------------------------


def _raw_purities(series_counts, povm_vis, povm_off):
    """Unprojected purity ``(1 + |r|^2) / 2`` for each time point.

    Every axis sees only its own Bloch component, so the inversion is a
    per-axis rescaling and stays smooth in the POVM parameters.
    """
    p = np.array([[c[a][0] / c[a][1] for a in AXES] for c in series_counts])
    r = (2 * p - 1 - povm_off) / povm_vis
    return (1 + np.sum(r**2, axis=1)) / 2


def _decay(t, floor, tau):
    return floor + (1 - floor) * np.exp(-((t / tau) ** 2))


def _fit_smooth(times, purity):
    """Best Gaussian decay toward a floor, starting from purity 1 at t = 0."""
    tau0 = max(times.max() / 2, 1.0)
    res = least_squares(
        lambda q: _decay(times, q[0], q[1]) - purity,
        [float(np.clip(purity[-len(purity) // 4 :].mean(), 0.5, 1.0)), tau0],
        bounds=([0.0, 1e-3], [1.5, np.inf]),
    )
    return res


def purity_oscillation(dataset: TomographyDataset, povm: PovmSet) -> float:
    """RMS deviation of reconstructed purities from the best smooth decay.

    Measures how much a POVM model leaves "wiggles" in the purity time series.
    """
    vis, off = np.array(povm.visibility), np.array(povm.offset)
    resid = []
    for times, counts in dataset.series().values():
        purity = _raw_purities(counts, vis, off)
        resid.append(_fit_smooth(times, purity).fun)
    return float(np.sqrt(np.mean(np.concatenate(resid) ** 2)))


def calibrate_povm(dataset: TomographyDataset, max_nfev: int = 2000) -> PovmSet:
    """Fit per-axis POVM parameters by making the purity decay smooth.

    Every (state, setting) series is modelled as a Gaussian decay from a pure
    initial state toward a floor, ``P(t) = c + (1 - c) exp(-(t / tau)**2)``,
    with its own ``c`` and ``tau``. The POVM enters through the reconstructed
    purities, and all parameters are fitted jointly by least squares. The
    fit is done in misassignment-rate coordinates, whose box bounds are
    exactly the POVM positivity conditions.

    Raises
    ------
    CalibrationError
        When fewer than two settings or eight time points are available or
        the optimizer fails to converge.
    """
    series = dataset.series()
    settings = {k[1] for k in series}
    if len(settings) < 2:
        raise CalibrationError("calibration needs at least two evolution settings")
    if any(len(t) < 8 for t, _ in series.values()):
        raise CalibrationError("calibration needs at least eight time points per series")
    keys = sorted(series)

    init_decay = []
    for k in keys:
        times, counts = series[k]
        q = _fit_smooth(times, _raw_purities(counts, np.ones(3), np.zeros(3))).x
        init_decay.extend(q)

    def unpack(z):
        ep, em = z[:3], z[3:6]
        return 1 - ep - em, em - ep, z[6:].reshape(-1, 2)

    def residuals(z):
        vis, off, decay = unpack(z)
        out = []
        for (times, counts), (c, tau) in zip((series[k] for k in keys), decay):
            out.append(_raw_purities(counts, vis, off) - _decay(times, c, tau))
        return np.concatenate(out)

    z0 = np.concatenate([np.full(6, 0.01), init_decay])
    n = len(keys)
    lo = np.concatenate([np.zeros(6), np.tile([0.0, 1e-3], n)])
    hi = np.concatenate([np.full(6, 0.45), np.tile([1.5, np.inf], n)])
    try:
        res = least_squares(residuals, z0, bounds=(lo, hi), max_nfev=max_nfev, x_scale="jac")
    except (ValueError, FloatingPointError) as exc:
        raise CalibrationError(f"POVM fit failed: {exc}") from exc
    rms = float(np.sqrt(np.mean(res.fun**2)))
    if not res.success or not np.isfinite(rms):
        raise CalibrationError(f"POVM fit did not converge: {res.message}", residual=rms)
    ep, em = res.x[:3], res.x[3:6]
    return PovmSet.from_error_rates(ep, em)


# -- process tomography --------------------------------------------------------


@dataclass(frozen=True)
class ProcessEstimate:
    chi: np.ndarray = field(repr=False)
    fidelity: float
    cptp_residual: float
    condition_number: float

    @property
    def channel(self) -> qcore.QuantumChannel:
        return qcore.QuantumChannel.from_chi(self.chi)

    def to_dict(self) -> dict:
        return {
            "chi_real": np.real(self.chi).tolist(),
            "chi_imag": np.imag(self.chi).tolist(),
            "fidelity": self.fidelity,
            "cptp_residual": self.cptp_residual,
            "condition_number": self.condition_number,
        }


def _target_channel(target) -> qcore.QuantumChannel:
    if isinstance(target, qcore.QuantumChannel):
        return target
    return qcore.unitary_to_channel(np.asarray(target, dtype=complex))


def process_tomography(inputs: Sequence, outputs: Sequence, target=qcore.I2) -> ProcessEstimate:
    """Process matrix from input/output state pairs.

    The superoperator is obtained by linear inversion (least squares over all
    pairs) and then projected onto the nearest CPTP map.

    Parameters
    ----------
    inputs, outputs : sequence of 2x2 arrays
        Prepared states and the states reconstructed after the gate.
    target : 2x2 unitary or QuantumChannel
        Ideal gate used for the reported fidelity.
    """
    if len(inputs) != len(outputs):
        raise InvalidArgument("need one output state per input state")
    X = np.stack([np.asarray(r, dtype=complex).T.reshape(-1) for r in inputs], axis=1)
    Y = np.stack([np.asarray(r, dtype=complex).T.reshape(-1) for r in outputs], axis=1)
    if X.shape[1] < 4 or np.linalg.matrix_rank(X, tol=1e-10) < 4:
        raise InvalidArgument("input states do not span the operator space")
    cond = float(np.linalg.cond(X))
    S = Y @ np.linalg.pinv(X)
    raw = qcore.QuantumChannel(S)
    raw = qcore.QuantumChannel.from_choi((raw.choi + raw.choi.conj().T) / 2)
    est = qcore.project_cptp(raw)
    resid = float(np.linalg.norm(est.choi - raw.choi))
    fid = qcore.process_fidelity(est, _target_channel(target))
    return ProcessEstimate(est.chi, fid, resid, cond)


def tomography_of_channel(channel: qcore.QuantumChannel, povm: PovmSet | None = None, target=qcore.I2, states=None):
    """Run exact-probability state tomography on each output, then process tomography."""
    povm = PovmSet.ideal() if povm is None else povm
    states = list((DEFAULT_INPUT_STATES if states is None else states).values())
    outputs = [reconstruct_state(povm.probabilities(channel.apply(r)), povm) for r in states]
    return process_tomography(states, outputs, target)
