"""Curve fitting and uncertainty estimates.

Ramsey fringes give the qubit frequency at one gate voltage; a set of such
frequencies calibrates the exponential exchange model. Line cuts through
simulated or measured fidelity maps are fitted with a quartic, and the spread
of the residuals serves as the per-point uncertainty.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Mapping, NamedTuple, Sequence

import numpy as np
from scipy.optimize import least_squares
from scipy.stats import norm

from . import sim
from .errors import FitFailure, InvalidArgument

GAUSSIAN = "gaussian"
EXPONENTIAL = "exponential"


class IllConditionedFit(UserWarning):
    """Issued when fitted parameters are poorly determined by the data."""

    def __init__(self, message, condition_number):
        super().__init__(message)
        self.condition_number = condition_number


# -- Ramsey ----------------------------------------------------------------------


@dataclass(frozen=True)
class RamseySeries:
    times: np.ndarray
    probabilities: np.ndarray
    voltage: float = 0.0

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        p = np.asarray(self.probabilities, dtype=float)
        if t.shape != p.shape or t.ndim != 1:
            raise InvalidArgument("times and probabilities must be 1-D arrays of equal length")
        if np.any(np.diff(t) <= 0):
            raise InvalidArgument("times must be strictly increasing")
        if np.any((p < 0) | (p > 1)):
            raise InvalidArgument("probabilities must lie in [0, 1]")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "probabilities", p)


class RamseyFit(NamedTuple):
    frequency: float  # MHz
    t2star: float  # ns
    amplitude: float
    offset: float
    phase: float = 0.0
    residual_rms: float = 0.0
    envelope: str = GAUSSIAN


def _envelope(t, T, kind):
    if kind == GAUSSIAN:
        return np.exp(-((t / T) ** 2))
    if kind == EXPONENTIAL:
        return np.exp(-t / T)
    raise InvalidArgument(f"unknown envelope {kind!r}")


def ramsey_model(t, f, T, A, B, phi, envelope=GAUSSIAN):
    """``A cos(2 pi f t + phi) env(t / T) + B`` with ``f`` in MHz and ``t`` in ns."""
    t = np.asarray(t, dtype=float)
    return A * np.cos(2 * np.pi * f * t * 1e-3 + phi) * _envelope(t, T, envelope) + B


def _spectral_peak(t, y, pad=8, snr=4.0):
    """Frequency (MHz) of the strongest non-DC Fourier component.

    Samples are assumed close to uniform. Raises FitFailure when the peak
    does not stand out from the median spectral level.
    """
    dt = np.median(np.diff(t))
    y = y - y.mean()
    n = pad * len(y)
    spec = np.abs(np.fft.rfft(y, n))
    freqs = np.fft.rfftfreq(n, dt) * 1e3
    spec[0] = 0.0
    peak = int(np.argmax(spec))
    floor = np.median(spec[1:])
    if spec[peak] <= 1e-12 or spec[peak] < snr * floor:
        raise FitFailure("no spectral peak above the noise floor")
    return float(freqs[peak])


def fit_ramsey(series: RamseySeries, envelope: str = GAUSSIAN) -> RamseyFit:
    """Fit a decaying sinusoid to a Ramsey time series.

    The frequency starts from the dominant discrete Fourier peak, and the
    decay time from a few multiples of the record length. The best of those
    local fits is returned.

    Raises
    ------
    FitFailure
        If the series has no oscillation or the local fits do not converge.
    """
    t, y = series.times, series.probabilities
    if len(t) < 8:
        raise FitFailure("at least 8 points are needed")
    f0 = _spectral_peak(t, y)
    if f0 * (t[-1] - t[0]) * 1e-3 < 1.0:
        raise FitFailure("series spans less than one oscillation period")
    if envelope not in (GAUSSIAN, EXPONENTIAL):
        raise InvalidArgument(f"unknown envelope {envelope!r}")
    span = t[-1] - t[0]
    B0 = float(y.mean())
    A0 = float(np.ptp(y) / 2)
    best = None
    for T0 in (span / 4, span / 2, span, 4 * span):
        for phi0 in (0.0, np.pi / 2, np.pi, -np.pi / 2):
            try:
                res = least_squares(
                    lambda q: ramsey_model(t, q[0], q[1], q[2], q[3], q[4], envelope) - y,
                    [f0, T0, A0, B0, phi0],
                    bounds=([0, 1e-6, 0, -np.inf, -np.inf], [np.inf, np.inf, np.inf, np.inf, np.inf]),
                    method="trf",
                    x_scale="jac",
                )
            except ValueError:
                continue
            if res.success and (best is None or res.cost < best.cost):
                best = res
    if best is None:
        raise FitFailure("Ramsey fit did not converge")
    f, T, A, B, phi = best.x
    rms = float(np.sqrt(np.mean(best.fun**2)))
    return RamseyFit(float(f), float(T), float(A), float(B), float(np.angle(np.exp(1j * phi))), rms, envelope)


def synthetic_ramsey(
    f: float, t2star: float, times, amplitude=0.5, offset=0.5, noise=0.0, seed=0, envelope=GAUSSIAN, voltage=0.0
) -> RamseySeries:
    """Ramsey fringe with optional additive Gaussian noise, clipped to [0, 1]."""
    y = ramsey_model(times, f, t2star, amplitude, offset, 0.0, envelope)
    if noise:
        y = y + noise * np.random.default_rng(seed).standard_normal(len(y))
    return RamseySeries(np.asarray(times, float), np.clip(y, 0, 1), voltage)


# -- exchange model ----------------------------------------------------------------


@dataclass(frozen=True)
class ExchangeFit:
    J0: float
    V0: float
    dEz: float
    covariance: np.ndarray = field(repr=False)
    residuals: np.ndarray = field(repr=False)
    condition_number: float = float("nan")

    @property
    def stderr(self) -> np.ndarray:
        return np.sqrt(np.clip(np.diag(self.covariance), 0, None))

    def frequency(self, V):
        return qubit_frequency(V, self.J0, self.V0, self.dEz)

    def to_dict(self) -> dict:
        return {
            "J0_MHz": self.J0,
            "V0_mV": self.V0,
            "dEz_MHz": self.dEz,
            "stderr": self.stderr.tolist(),
            "covariance": np.asarray(self.covariance).tolist(),
            "residuals_MHz": np.asarray(self.residuals).tolist(),
            "condition_number": self.condition_number,
        }


def qubit_frequency(V, J0, V0, dEz):
    V = np.asarray(V, dtype=float)
    return np.sqrt((J0 * np.exp(V / V0)) ** 2 + dEz**2)


def fit_exchange_model(points, cond_limit: float = 1e3) -> ExchangeFit:
    """Fit ``f(V) = sqrt(J0**2 exp(2 V / V0) + dEz**2)`` to ``(V, f)`` pairs.

    The gradient is seeded from the low-voltage plateau and ``(J0, V0)`` from a
    straight-line fit to ``log sqrt(f**2 - dEz**2)``. An
    :class:`IllConditionedFit` warning is issued when the Jacobian,
    with columns scaled by the parameter values, has a condition number above
    ``cond_limit``. That happens when every point sits on one asymptote.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 4:
        raise InvalidArgument("need at least four (V, f) pairs")
    V, f = pts[:, 0], pts[:, 1]
    if np.any(f <= 0):
        raise InvalidArgument("frequencies must be positive")
    order = np.argsort(V)
    V, f = V[order], f[order]

    dEz0 = 0.98 * f[0]
    Jsq = f**2 - dEz0**2
    use = Jsq > (0.1 * dEz0) ** 2
    if use.sum() >= 2:
        slope, icpt = np.polyfit(V[use], 0.5 * np.log(Jsq[use]), 1)
    else:
        slope, icpt = np.polyfit(V, np.log(f), 1)
    if slope <= 0:
        slope = 1.0 / max(np.ptp(V), 1.0)
    x0 = [icpt, 1.0 / slope, np.log(dEz0)]

    def resid(q):
        return qubit_frequency(V, np.exp(q[0]), q[1], np.exp(q[2])) - f

    res = least_squares(resid, x0, method="lm", x_scale="jac", max_nfev=4000)
    lnJ0, V0, lndEz = res.x
    J0, dEz = float(np.exp(lnJ0)), float(np.exp(lndEz))
    # Jacobian in (J0, V0, dEz), columns scaled to relative changes
    Jac = res.jac @ np.diag([1 / J0, 1.0, 1 / dEz])
    scaled = Jac * np.array([J0, abs(V0), dEz])
    cond = float(np.linalg.cond(scaled))
    if not np.isfinite(cond) or cond > cond_limit:
        warnings.warn(IllConditionedFit(f"exchange fit is ill-conditioned (condition number {cond:.3g})", cond), stacklevel=2)
    elif not res.success:
        raise FitFailure(f"exchange fit did not converge: {res.message}")
    dof = max(len(f) - 3, 1)
    s2 = 2 * res.cost / dof
    cov = s2 * np.linalg.pinv(Jac.T @ Jac)
    r = np.empty_like(f)
    r[order] = res.fun
    return ExchangeFit(J0, float(V0), dEz, cov, r, cond)


# -- line-cut uncertainty -------------------------------------------------------------


@dataclass(frozen=True)
class UncertaintyReport:
    coefficients: np.ndarray
    residuals: np.ndarray
    std: float
    quantiles: np.ndarray = field(repr=False)  # columns: theoretical normal, sorted residual

    def to_dict(self) -> dict:
        return {
            "coefficients": self.coefficients.tolist(),
            "residuals": self.residuals.tolist(),
            "std": self.std,
        }


def blom_positions(n: int) -> np.ndarray:
    i = np.arange(1, n + 1)
    return (i - 0.375) / (n + 0.25)


def linecut_errorbar(values, x=None, degree: int = 4) -> UncertaintyReport:
    """Quartic fit along a line cut and the spread of its residuals.

    Parameters
    ----------
    values : array_like
        Fidelities along one sweep axis.
    x : array_like, optional
        Sweep coordinate. Defaults to the sample index.
    degree : int
        Polynomial degree (4 by default).

    Returns
    -------
    UncertaintyReport
        ``std`` uses ``degree + 1`` degrees of freedom removed, which makes
        its square an unbiased estimate of the noise variance. ``quantiles``
        pairs standard-normal Blom quantiles with the sorted residuals.
    """
    y = np.asarray(values, dtype=float)
    if y.ndim != 1:
        raise InvalidArgument("values must be one-dimensional")
    n = len(y)
    if n < degree + 1:
        raise InvalidArgument(f"need at least {degree + 1} points for a degree-{degree} fit")
    if n < 8:
        raise InvalidArgument("need at least 8 points")
    x = np.arange(n, dtype=float) if x is None else np.asarray(x, dtype=float)
    if x.shape != y.shape:
        raise InvalidArgument("x and values must have the same length")
    poly = np.polynomial.Polynomial.fit(x, y, degree)
    resid = y - poly(x)
    dof = n - (degree + 1)
    std = float(np.sqrt(np.sum(resid**2) / dof)) if dof > 0 else 0.0
    q = np.column_stack([norm.ppf(blom_positions(n)), np.sort(resid)])
    return UncertaintyReport(poly.convert().coef, resid, std, q)


# -- repeated simulations -----------------------------------------------------------


@dataclass(frozen=True)
class ScatterSummary:
    fidelities: np.ndarray = field(repr=False)

    @property
    def mean(self) -> float:
        return float(np.mean(self.fidelities))

    @property
    def std(self) -> float:
        return float(np.std(self.fidelities, ddof=1))


def fidelity_scatter(
    seq,
    target,
    noise: sim.NoiseSpec,
    configs: Sequence[str] = ("hyperfine", "charge", "both"),
    repeats: int = 20,
    model=None,
    filt=None,
    dt: float = 1.0,
    exact_timing: bool = False,
) -> Mapping[str, ScatterSummary]:
    """Spread of the Monte Carlo fidelity over independent noise draws.

    Repeat ``r`` uses grid cell ``(r,)`` of the master seed, so every repeat
    sees a fresh set of ``noise.n`` realizations.
    """
    if repeats < 20:
        raise InvalidArgument("at least 20 repeats are required")
    out = {}
    for name in configs:
        hf, ch = sim.NOISE_CONFIGS[name]
        spec = noise.configure(hf, ch)
        vals = [
            sim.monte_carlo_channel(seq, spec, target, model, filt, dt, exact_timing, cell=(r,)).fidelity
            for r in range(repeats)
        ]
        out[name] = ScatterSummary(np.array(vals))
    return out
