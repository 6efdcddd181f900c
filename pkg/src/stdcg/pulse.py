"""Pulse sequences, exchange/voltage conversion, rasterization and distortion.

A waveform sample ``n`` covers the interval ``[n dt, (n + 1) dt)``. Filters are
discretized exactly for zero-order-hold input, so the filtered value stored in
sample ``n`` is the continuous filter output at ``t = (n + 1) dt``. Waveforms
are padded before ``t = 0`` with their first value (the line has settled).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Iterable, Sequence

import numpy as np
from scipy.signal import lfilter

from .errors import InvalidArgument

EXCHANGE = "exchange"
VOLTAGE = "voltage"


@dataclass(frozen=True)
class PulseSequence:
    """Piecewise-constant exchange pulse.

    ``segments`` holds ``(J [MHz], duration [ns])`` pairs and ``labels`` names
    each segment (``"JH"``, ``"J1"``, ``"J2"``, ...) so that scaling factors can
    be applied per exchange level.
    """

    segments: tuple
    dEz: float
    labels: tuple = ()
    label: str = ""

    def __post_init__(self):
        segs = tuple((float(J), float(t)) for J, t in self.segments)
        if not segs:
            raise InvalidArgument("pulse sequence needs at least one segment")
        for J, t in segs:
            if not J > 0:
                raise InvalidArgument(f"exchange must be positive, got {J}")
            if not t > 0:
                raise InvalidArgument(f"segment duration must be positive, got {t}")
        labels = tuple(self.labels) if self.labels else ("J",) * len(segs)
        if len(labels) != len(segs):
            raise InvalidArgument("one label per segment required")
        object.__setattr__(self, "segments", segs)
        object.__setattr__(self, "labels", labels)

    @property
    def exchanges(self) -> np.ndarray:
        return np.array([J for J, _ in self.segments])

    @property
    def durations(self) -> np.ndarray:
        return np.array([t for _, t in self.segments])

    @property
    def duration(self) -> float:
        return float(self.durations.sum())

    def boundaries(self) -> np.ndarray:
        return np.concatenate([[0.0], np.cumsum(self.durations)])

    def with_exchanges(self, exchanges) -> "PulseSequence":
        segs = tuple((J, t) for J, (_, t) in zip(exchanges, self.segments))
        return replace(self, segments=segs)

    def rounded(self) -> "PulseSequence":
        segs = tuple((J, round_half_away(t)) for J, t in self.segments)
        return replace(self, segments=segs)

    def to_dict(self) -> dict:
        return {
            "label": self.label,
            "dEz_MHz": self.dEz,
            "segments": [
                {"label": lab, "J_MHz": J, "duration_ns": t}
                for lab, (J, t) in zip(self.labels, self.segments)
            ],
        }


def round_half_away(x: float) -> float:
    return float(math.copysign(math.floor(abs(x) + 0.5), x))


@dataclass(frozen=True)
class ExchangeModel:
    """``J(V) = J0 exp(V / V0)`` with J0 in MHz and V0 in mV."""

    J0: float = 1.0
    V0: float = 50.0
    dEz: float = 2.9

    def __post_init__(self):
        if not self.J0 > 0:
            raise InvalidArgument("J0 must be positive")
        if self.V0 == 0:
            raise InvalidArgument("V0 must be nonzero")


def voltage_from_exchange(J, model: ExchangeModel):
    J = np.asarray(J, dtype=float)
    if np.any(J <= 0):
        raise InvalidArgument("exchange must be positive to convert to voltage")
    V = model.V0 * np.log(J / model.J0)
    return float(V) if V.ndim == 0 else V


def exchange_from_voltage(V, model: ExchangeModel):
    J = model.J0 * np.exp(np.asarray(V, dtype=float) / model.V0)
    return float(J) if J.ndim == 0 else J


@dataclass(frozen=True)
class Waveform:
    dt: float
    samples: np.ndarray = field(repr=False)
    kind: str = EXCHANGE

    def __post_init__(self):
        if not self.dt > 0:
            raise InvalidArgument("dt must be positive")
        if self.kind not in (EXCHANGE, VOLTAGE):
            raise InvalidArgument(f"unknown waveform kind {self.kind!r}")
        s = np.array(self.samples, dtype=float)
        s.setflags(write=False)
        object.__setattr__(self, "samples", s)

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.samples)) * self.dt

    @property
    def duration(self) -> float:
        return len(self.samples) * self.dt


def rasterize(seq: PulseSequence, dt: float = 1.0, round_segments: bool = True) -> Waveform:
    """Sample a pulse on a uniform grid.

    With ``round_segments`` each segment is first rounded to the nearest whole
    nanosecond (ties away from zero). Each sample takes the exchange value at its
    interval midpoint.
    """
    if not dt > 0:
        raise InvalidArgument("dt must be positive")
    if round_segments:
        seq = seq.rounded()
    edges = seq.boundaries()
    n = int(math.ceil(edges[-1] / dt - 1e-9))
    mids = (np.arange(n) + 0.5) * dt
    idx = np.clip(np.searchsorted(edges, mids, side="right") - 1, 0, len(seq.segments) - 1)
    return Waveform(dt, seq.exchanges[idx], EXCHANGE)


@dataclass(frozen=True)
class FilterSpec:
    """Low-pass plus partial high-pass distortion model (times in ns)."""

    tau_lp: float = 1.0
    a_hp: float = 0.05
    tau_hp: float = 40.0

    def __post_init__(self):
        if not self.tau_lp > 0 or not self.tau_hp > 0:
            raise InvalidArgument("filter time constants must be positive")
        if not 0 <= self.a_hp < 1:
            raise InvalidArgument("a_hp must lie in [0, 1)")


@dataclass(frozen=True)
class CircuitModel:
    """Broken-gate circuit. R in GOhm and capacitances in aF, so R*C is in ns."""

    R: float = 10.0
    C1: float = 1.0
    C2: float = 4.0
    C3: float = 0.05

    def __post_init__(self):
        if min(self.R, self.C1, self.C2, self.C3) <= 0:
            raise InvalidArgument("circuit components must be positive")


def lowpass_kernel(tau: float, dt: float, n: int) -> np.ndarray:
    """Discrete ``K_lp * dt`` weights; they sum to 1 as ``n`` grows."""
    a = math.exp(-dt / tau)
    return (1 - a) * a ** np.arange(n)


def highpass_kernel(a_hp: float, tau: float, dt: float, n: int) -> np.ndarray:
    """Discrete ``K_hp * dt`` weights: an impulse of weight ``a_hp`` minus a
    normalized exponential tail, so the weights sum to 0."""
    k = -a_hp * lowpass_kernel(tau, dt, n)
    k[0] += a_hp
    return k


def _exp_lowpass(x: np.ndarray, tau: float, dt: float) -> np.ndarray:
    a = math.exp(-dt / tau)
    # zi for steady state at x[0]: y[-1] = x[0]
    y, _ = lfilter([1 - a], [1, -a], x, zi=[a * x[0]])
    return y


def apply_distortion(w: Waveform, f: FilterSpec) -> Waveform:
    """``V' = V * K_lp * (1 + K_hp)`` on the waveform grid."""
    if w.kind != VOLTAGE:
        raise InvalidArgument("distortion acts on voltage waveforms")
    x = np.asarray(w.samples)
    if len(x) == 0:
        return w
    y = _exp_lowpass(x, f.tau_lp, w.dt)
    z = y + f.a_hp * (y - _exp_lowpass(y, f.tau_hp, w.dt))
    return Waveform(w.dt, z, VOLTAGE)


def exchange_to_voltage_waveform(w: Waveform, model: ExchangeModel) -> Waveform:
    if w.kind != EXCHANGE:
        raise InvalidArgument("expected an exchange waveform")
    return Waveform(w.dt, voltage_from_exchange(w.samples, model), VOLTAGE)


def voltage_to_exchange_waveform(w: Waveform, model: ExchangeModel, floor: float = 1e-4) -> Waveform:
    if w.kind != VOLTAGE:
        raise InvalidArgument("expected a voltage waveform")
    return Waveform(w.dt, np.maximum(exchange_from_voltage(w.samples, model), floor), EXCHANGE)


def distort_exchange(
    seq: PulseSequence,
    model: ExchangeModel,
    f: FilterSpec,
    dt: float = 1.0,
    round_segments: bool = True,
    floor: float = 1e-4,
) -> Waveform:
    """Rasterize, convert to voltage, distort, and convert back to exchange."""
    v = exchange_to_voltage_waveform(rasterize(seq, dt, round_segments), model)
    return voltage_to_exchange_waveform(apply_distortion(v, f), model, floor)


def circuit_response(
    w: Waveform,
    c: CircuitModel,
    dt: float | None = None,
    line_tau: float | None = None,
    substeps: int = 50,
    rescale: bool = True,
) -> Waveform:
    """Voltage seen by the qubit through the broken-gate circuit.

    Topology: the drive (optionally smoothed by a first-order line with time
    constant ``line_tau``) sits on the intact electrode. A broken fragment of
    the electrode hangs off it through the resistive link ``R`` and has
    capacitance ``C2`` to ground, so it lags the drive with time constant
    ``R*C2``. The dot couples to the intact electrode through ``C1`` and to
    the voltage across the crack through ``C3``. Without ``rescale`` the
    output is the capacitively weighted dot potential, whose DC gain is
    ``C1 / (C1 + C3)``. With ``rescale`` it is divided by that gain.

    The network is integrated by implicit Euler with ``substeps`` steps per
    sample under zero-order-hold input; sample ``n`` holds the value at
    ``(n + 1) dt``.
    """
    if w.kind != VOLTAGE:
        raise InvalidArgument("circuit acts on voltage waveforms")
    dt = w.dt if dt is None else dt
    if substeps < 1:
        raise InvalidArgument("substeps must be >= 1")
    x = np.asarray(w.samples)
    if len(x) == 0:
        return w
    h = dt / substeps
    u = np.repeat(x, substeps)

    def implicit_euler(sig, tau):
        g = h / tau
        # y_k = (y_{k-1} + g u_k) / (1 + g)
        y, _ = lfilter([g / (1 + g)], [1, -1 / (1 + g)], sig, zi=[sig[0] / (1 + g)])
        return y

    line = implicit_euler(u, line_tau) if line_tau else u
    frag = implicit_euler(line, c.R * c.C2)
    dot = (c.C1 * line + c.C3 * (line - frag)) / (c.C1 + c.C3)
    if rescale:
        dot = dot * (c.C1 + c.C3) / c.C1
    return Waveform(dt, dot[substeps - 1 :: substeps], VOLTAGE)


def scale_pulse(seq: PulseSequence, beta1: float, beta2: float) -> PulseSequence:
    """Multiply ``J1``-labeled segments by ``beta1`` and ``J2``-labeled ones by ``beta2``."""
    if not (beta1 > 0 and beta2 > 0):
        raise InvalidArgument("scaling factors must be positive")
    factors = {"J1": beta1, "J2": beta2}
    return seq.with_exchanges([J * factors.get(lab, 1.0) for lab, (J, _) in zip(seq.labels, seq.segments)])


def square_pulse(J: float, duration: float, dEz: float, label: str = "") -> PulseSequence:
    return PulseSequence(((J, duration),), dEz, ("J",), label)


def identity_sequence(J1, J2, t1, t2, dEz, repetitions: int = 3, label: str = "DCG I") -> PulseSequence:
    segs = [(J1, t1), (J2, t2)] * repetitions
    return PulseSequence(tuple(segs), dEz, ("J1", "J2") * repetitions, label)


def hadamard_sequence(JH, J1, J2, tH, t1, t2, tb, dEz, label: str = "DCG H") -> PulseSequence:
    if not 0 < tb < t1:
        raise InvalidArgument("tb must lie strictly between 0 and t1")
    segs = [(JH, tH), (J1, t1 - tb), (J2, t2), (J1, t1), (J2, t2), (J1, t1), (J2, t2), (J1, tb)]
    labels = ("JH", "J1", "J2", "J1", "J2", "J1", "J2", "J1")
    return PulseSequence(tuple(segs), dEz, labels, label)


def waveform_rms_difference(a: Waveform, b: Waveform) -> float:
    n = min(len(a.samples), len(b.samples))
    return float(np.sqrt(np.mean((a.samples[:n] - b.samples[:n]) ** 2)))


def segment_edge_indices(seq: PulseSequence, dt: float = 1.0, round_segments: bool = True) -> np.ndarray:
    if round_segments:
        seq = seq.rounded()
    return np.round(seq.boundaries()[1:-1] / dt).astype(int)
