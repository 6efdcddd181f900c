"""Monte Carlo simulation of gates under quasistatic hyperfine and charge noise.

Each realization draws one Zeeman-gradient offset and one fractional exchange
error, both constant over the gate. The exchange error multiplies the whole
(possibly distorted) exchange waveform. Realization ``k`` of grid cell
``cell`` always receives the same random numbers for a given master seed,
whatever the evaluation order or worker count.
"""
from __future__ import annotations

import csv
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy.optimize import minimize

from . import qcore
from .errors import InvalidArgument
from .pulse import (
    ExchangeModel,
    FilterSpec,
    PulseSequence,
    Waveform,
    distort_exchange,
    rasterize,
    scale_pulse,
)

SIGMA_HYPERFINE = 0.2867
EXCHANGE_NOISE = 0.012

GATE_UNITARIES = {"identity": qcore.I2, "hadamard": qcore.HADAMARD}


@dataclass(frozen=True)
class NoiseSpec:
    """Quasistatic noise model.

    Attributes
    ----------
    sigma : float
        Standard deviation of the Zeeman-gradient offset in MHz.
    frac_j : float
        Standard deviation of the fractional exchange error.
    n : int
        Number of realizations.
    seed : int
        Master seed.
    hyperfine, charge : bool
        Toggles for the two noise sources.
    """

    sigma: float = SIGMA_HYPERFINE
    frac_j: float = EXCHANGE_NOISE
    n: int = 128
    seed: int = 0
    hyperfine: bool = True
    charge: bool = True

    def __post_init__(self):
        if self.sigma < 0 or self.frac_j < 0:
            raise InvalidArgument("noise strengths must be non-negative")
        if self.n < 1:
            raise InvalidArgument("need at least one realization")

    @property
    def active(self) -> bool:
        return (self.hyperfine and self.sigma > 0) or (self.charge and self.frac_j > 0)

    def configure(self, hyperfine: bool, charge: bool) -> "NoiseSpec":
        return replace(self, hyperfine=hyperfine, charge=charge)


NOISE_CONFIGS = {
    "both": (True, True),
    "hyperfine": (True, False),
    "charge": (False, True),
    "none": (False, False),
}


def seeded_stream(seed: int, cell, k: int) -> np.random.Generator:
    """Independent Philox generator for draw ``k`` of grid cell ``cell``."""
    ss = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(int(c) for c in cell) + (int(k),))
    return np.random.Generator(np.random.Philox(ss))


def sample_noise(spec: NoiseSpec, k: int, cell=()) -> tuple[float, float]:
    """``(delta_dEz [MHz], exchange factor)`` for realization ``k``.

    Both normals are always drawn, so switching one source off leaves the
    other's values unchanged.
    """
    if not 0 <= k < spec.n:
        raise InvalidArgument(f"realization index {k} outside [0, {spec.n})")
    a, b = seeded_stream(spec.seed, cell, k).standard_normal(2)
    d = spec.sigma * a if spec.hyperfine else 0.0
    f = 1.0 + spec.frac_j * b if spec.charge else 1.0
    return float(d), float(f)


def sample_noise_batch(spec: NoiseSpec, cell=()) -> tuple[np.ndarray, np.ndarray]:
    draws = np.array([seeded_stream(spec.seed, cell, k).standard_normal(2) for k in range(spec.n)])
    d = spec.sigma * draws[:, 0] if spec.hyperfine else np.zeros(spec.n)
    f = 1.0 + spec.frac_j * draws[:, 1] if spec.charge else np.ones(spec.n)
    return d, f


def dephasing_time(sigma: float) -> float:
    """T2* = 1 / (sqrt(2) pi sigma) in ns for sigma in MHz."""
    if not sigma > 0:
        raise InvalidArgument("sigma must be positive")
    return 1e3 / (math.sqrt(2) * math.pi * sigma)


def _ordered_product(U: np.ndarray) -> np.ndarray:
    """``U[..., -1] @ ... @ U[..., 0]`` over the second-to-last batch axis."""
    P = U[..., 0, :, :]
    for k in range(1, U.shape[-3]):
        P = U[..., k, :, :] @ P
    return P


def evolve_waveform(w: Waveform, dEz) -> np.ndarray:
    """Ordered product of per-sample evolutions. ``dEz`` may be an array,
    giving a batch of unitaries."""
    if w.kind != "exchange":
        raise InvalidArgument("evolve_waveform needs an exchange waveform")
    dEz = np.asarray(dEz, dtype=float)
    U = qcore.su2_evolve(np.asarray(w.samples)[None, :] if dEz.ndim else w.samples, dEz[..., None] if dEz.ndim else dEz, w.dt)
    return _ordered_product(U)


@dataclass(frozen=True, eq=False)
class MonteCarloResult:
    channel: qcore.QuantumChannel
    fidelity: float
    realization_fidelities: np.ndarray = field(repr=False)

    @property
    def stderr(self) -> float:
        f = self.realization_fidelities
        return float(f.std(ddof=1) / math.sqrt(len(f))) if len(f) > 1 else 0.0


def _realization_unitaries(seq, noise, model, filt, dt, exact_timing, cell):
    d, fac = sample_noise_batch(noise, cell)
    dEz = seq.dEz + d
    if exact_timing:
        J = seq.exchanges[None, :] * fac[:, None]
        U = qcore.su2_evolve(J, dEz[:, None], seq.durations[None, :])
        return _ordered_product(U)
    if filt is None:
        w = rasterize(seq, dt, round_segments=True)
    else:
        w = distort_exchange(seq, model or ExchangeModel(dEz=seq.dEz), filt, dt)
    J = np.asarray(w.samples)[None, :] * fac[:, None]
    U = qcore.su2_evolve(J, dEz[:, None], w.dt)
    return _ordered_product(U)


def monte_carlo_channel(
    seq: PulseSequence,
    noise: NoiseSpec,
    target=None,
    model: ExchangeModel | None = None,
    filt: FilterSpec | None = None,
    dt: float = 1.0,
    exact_timing: bool = False,
    cell=(),
) -> MonteCarloResult:
    """Noise-averaged channel of a pulse and its process fidelity.

    Parameters
    ----------
    seq : PulseSequence
    noise : NoiseSpec
    target : array_like, optional
        Ideal unitary; defaults to the noiseless evolution of ``seq``.
    model, filt :
        Exchange model and distortion filter. Without ``filt`` the pulse is
        only rasterized (segments rounded to whole ns).
    dt : float
        Simulation step in ns.
    exact_timing : bool
        Compose closed-form segment unitaries with exact durations instead of
        rasterizing; ``filt`` is ignored.
    cell : tuple of int
        Grid-cell key mixed into every realization's random stream.
    """
    if target is None:
        from .scqc import sequence_unitary

        target = sequence_unitary(seq)
    target = np.asarray(target, dtype=complex)
    n = noise.n if noise.active else 1
    spec = replace(noise, n=n)
    U = _realization_unitaries(seq, spec, model, filt, dt, exact_timing, cell)
    S = qcore.unitaries_to_superops(U)
    avg = qcore.QuantumChannel(S.sum(axis=0) / n)
    channel = qcore.project_cptp(avg)
    fids = np.abs(np.einsum("ij,kij->k", np.conj(target), U)) ** 2 / 4
    fid = qcore.process_fidelity(channel, qcore.unitary_to_channel(target))
    return MonteCarloResult(channel, fid, fids)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SweepSpec:
    names: tuple = ("beta1", "beta2")
    lo: tuple = (0.85, 0.85)
    hi: tuple = (1.15, 1.15)
    steps: tuple = (31, 31)

    def __post_init__(self):
        if not (len(self.names) == len(self.lo) == len(self.hi) == len(self.steps) == 2):
            raise InvalidArgument("a sweep has exactly two axes")
        for a, b, n in zip(self.lo, self.hi, self.steps):
            if not a < b:
                raise InvalidArgument("sweep minimum must be below maximum")
            if n < 2:
                raise InvalidArgument("each sweep axis needs at least two steps")

    @property
    def axes(self) -> tuple[np.ndarray, np.ndarray]:
        return tuple(np.linspace(a, b, n) for a, b, n in zip(self.lo, self.hi, self.steps))


@dataclass(frozen=True, eq=False)
class FidelityGrid:
    names: tuple
    axes: tuple = field(repr=False)
    fidelity: np.ndarray = field(repr=False)
    stderr: np.ndarray = field(repr=False)
    metadata: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        shape = tuple(len(a) for a in self.axes)
        if self.fidelity.shape != shape or self.stderr.shape != shape:
            raise InvalidArgument("fidelity matrix does not match the axes")
        if np.any(self.fidelity < 0) or np.any(self.fidelity > 1):
            raise InvalidArgument("fidelities must lie in [0, 1]")

    def optimum(self) -> tuple[int, int, float, float, float]:
        i, j = np.unravel_index(int(np.argmax(self.fidelity)), self.fidelity.shape)
        return int(i), int(j), float(self.axes[0][i]), float(self.axes[1][j]), float(self.fidelity[i, j])

    def rows(self):
        for i, a in enumerate(self.axes[0]):
            for j, b in enumerate(self.axes[1]):
                yield a, b, self.fidelity[i, j], self.stderr[i, j]

    def to_csv(self, path) -> None:
        path = Path(path)
        with path.open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow([*self.names, "fidelity", "stderr"])
            for row in self.rows():
                w.writerow([format_number(v) for v in row])
        meta = dict(self.metadata, names=list(self.names), shape=list(self.fidelity.shape))
        path.with_suffix(".json").write_text(json.dumps(meta, indent=2, sort_keys=True, default=_json_default))

    @classmethod
    def from_csv(cls, path) -> "FidelityGrid":
        path = Path(path)
        with path.open() as fh:
            r = csv.reader(fh)
            header = next(r)
            data = np.array([[float(v) for v in row] for row in r])
        a = np.unique(data[:, 0])
        b = np.unique(data[:, 1])
        F = data[:, 2].reshape(len(a), len(b))
        E = data[:, 3].reshape(len(a), len(b))
        meta_path = path.with_suffix(".json")
        meta = json.loads(meta_path.read_text()) if meta_path.exists() else {}
        return cls(tuple(header[:2]), (a, b), F, E, meta)


def format_number(x) -> str:
    """Twelve significant digits, the fixed decimal format of all artifacts."""
    return f"{float(x):.12g}"


def _json_default(o):
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if hasattr(o, "__dataclass_fields__"):
        return asdict(o)
    raise TypeError(f"cannot serialize {type(o)}")


def _run_cells(fn, tasks, workers: int):
    if workers <= 1:
        return [fn(t) for t in tasks]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        # map preserves task order, so the reduction order is fixed
        return list(ex.map(fn, tasks, chunksize=max(1, len(tasks) // (4 * workers))))


@dataclass(frozen=True)
class _Cell:
    index: tuple
    seq: PulseSequence
    noise: NoiseSpec
    target: np.ndarray
    model: ExchangeModel | None
    filt: FilterSpec | None
    dt: float
    exact_timing: bool


def _eval_cell(c: _Cell):
    r = monte_carlo_channel(c.seq, c.noise, c.target, c.model, c.filt, c.dt, c.exact_timing, cell=c.index)
    return r.fidelity, r.stderr


def _grid(names, axes, cells, workers, metadata):
    out = _run_cells(_eval_cell, cells, workers)
    shape = tuple(len(a) for a in axes)
    F = np.array([o[0] for o in out]).reshape(shape)
    E = np.array([o[1] for o in out]).reshape(shape)
    return FidelityGrid(tuple(names), axes, F, E, metadata)


def _metadata(label, noise, filt, sweep, extra=None):
    meta = {
        "gate": label,
        "noise": asdict(noise),
        "filter": asdict(filt) if filt else None,
        "sweep": asdict(sweep),
        "created": time.strftime("%Y-%m-%dT%H:%M:%S"),
    }
    meta.update(extra or {})
    return meta


def sweep_corrected(
    seq: PulseSequence,
    sweep: SweepSpec,
    noise: NoiseSpec,
    target,
    model: ExchangeModel | None = None,
    filt: FilterSpec | None = None,
    dt: float = 1.0,
    exact_timing: bool = False,
    workers: int = 1,
) -> FidelityGrid:
    """Fidelity over a grid of ``(beta1, beta2)`` scalings of the J1 and J2 levels."""
    b1, b2 = sweep.axes
    target = np.asarray(target, dtype=complex)
    cells = [
        _Cell((i, j), scale_pulse(seq, x, y), noise, target, model, filt, dt, exact_timing)
        for i, x in enumerate(b1)
        for j, y in enumerate(b2)
    ]
    return _grid(sweep.names, (b1, b2), cells, workers, _metadata(seq.label, noise, filt, sweep))


def square_gate(gate: str, dEz: float, xi1: float = 1.0, xi2: float = 1.0) -> PulseSequence:
    """Uncorrected gate: ``J = xi1 dEz`` for ``xi2`` times the nominal duration.

    The nominal durations are ``1 / (2 sqrt(2) dEz)`` for the Hadamard and
    ``1 / (sqrt(2) dEz)`` (a full turn) for the identity.
    """
    if gate not in GATE_UNITARIES:
        raise InvalidArgument(f"unknown gate {gate!r}")
    base = 1e3 / (math.sqrt(2) * dEz) / (2 if gate == "hadamard" else 1)
    label = "H" if gate == "hadamard" else "I"
    return PulseSequence(((xi1 * dEz, xi2 * base),), dEz, ("JH",), label)


def sweep_uncorrected(
    gate: str,
    dEz: float,
    sweep: SweepSpec,
    noise: NoiseSpec,
    model: ExchangeModel | None = None,
    filt: FilterSpec | None = None,
    dt: float = 1.0,
    exact_timing: bool = False,
    workers: int = 1,
) -> FidelityGrid:
    """Fidelity of the square-pulse gate over ``(xi1, xi2)``."""
    x1, x2 = sweep.axes
    target = GATE_UNITARIES[gate]
    cells = [
        _Cell((i, j), square_gate(gate, dEz, a, b), noise, target, model, filt, dt, exact_timing)
        for i, a in enumerate(x1)
        for j, b in enumerate(x2)
    ]
    return _grid(sweep.names, (x1, x2), cells, workers, _metadata(gate, noise, filt, sweep, {"dEz": dEz}))


# ---------------------------------------------------------------------------
# Table I


TABLE_ROWS = ("H", "DCG H", "I", "DCG I", "Undistorted DCG H", "Undistorted DCG I")
TABLE_COLUMNS = ("both", "hyperfine", "charge", "none")


@dataclass(frozen=True, eq=False)
class Table1:
    values: np.ndarray
    stderr: np.ndarray
    operating_points: dict = field(default_factory=dict)
    rows: tuple = TABLE_ROWS
    columns: tuple = TABLE_COLUMNS

    def cell(self, row: str, column: str) -> float:
        return float(self.values[self.rows.index(row), self.columns.index(column)])

    def to_csv(self, path) -> None:
        with Path(path).open("w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["gate", *self.columns])
            for name, vals in zip(self.rows, self.values):
                w.writerow([name, *(format_number(v) for v in vals)])

    def to_text(self) -> str:
        width = max(len(r) for r in self.rows)
        lines = [" " * width + "".join(f"{c:>12s}" for c in self.columns)]
        for name, vals in zip(self.rows, self.values):
            lines.append(f"{name:<{width}s}" + "".join(f"{v:12.4f}" for v in vals))
        return "\n".join(lines)


def evaluate_configs(seq, noise, target, model=None, filt=None, dt=1.0, exact_timing=False, cell=()):
    """Fidelity and standard error of one pulse for every noise configuration."""
    vals, errs = [], []
    for col in TABLE_COLUMNS:
        r = monte_carlo_channel(seq, noise.configure(*NOISE_CONFIGS[col]), target, model, filt, dt, exact_timing, cell)
        vals.append(r.fidelity)
        errs.append(r.stderr)
    return vals, errs


def refine_scaling(seq, start, noise, target, model, filt, dt=1.0, xatol=1e-4):
    """Polish a ``(beta1, beta2)`` operating point with Nelder-Mead.

    Every evaluation reuses the same noise realizations (common random
    numbers), so the objective is a smooth function of the scale factors and
    the simplex does not chase sampling noise.
    """
    def loss(b):
        if min(b) <= 0:
            return 1.0
        return 1.0 - monte_carlo_channel(scale_pulse(seq, *b), noise, target, model, filt, dt).fidelity

    res = minimize(loss, np.asarray(start, float), method="Nelder-Mead",
                   options={"xatol": xatol, "fatol": 1e-7})
    if res.fun > loss(start):
        return tuple(float(x) for x in start)
    return float(res.x[0]), float(res.x[1])


def table1(
    identity: PulseSequence,
    hadamard: PulseSequence,
    noise_identity: NoiseSpec,
    noise_hadamard: NoiseSpec,
    model: ExchangeModel,
    filt: FilterSpec,
    beta_sweep: SweepSpec | None = None,
    xi_sweep: SweepSpec | None = None,
    dt: float = 1.0,
    workers: int = 1,
    refine: bool = True,
    uncorrected_at: str = "nominal",
) -> Table1:
    """Noise decomposition of the corrected and uncorrected gates.

    The distorted corrected rows are evaluated at the best ``(beta1, beta2)``
    of a both-noise sweep (the nominal point when ``beta_sweep`` is None),
    polished by :func:`refine_scaling` when ``refine`` is set. The square
    pulses are evaluated at ``(xi1, xi2) = (1, 1)`` by default; with
    ``uncorrected_at="optimum"`` they use the best cell of ``xi_sweep``
    instead. Whenever ``xi_sweep`` is given, the sweep optimum and its
    fidelities are also stored under ``operating_points``. The undistorted
    rows use the designed pulses with exact segment durations.
    """
    if uncorrected_at not in ("nominal", "optimum"):
        raise InvalidArgument("uncorrected_at must be 'nominal' or 'optimum'")
    rows, errs = [], []

    def best_point(grid):
        if grid is None:
            return 1.0, 1.0
        _, _, a, b, _ = grid.optimum()
        return a, b

    # uncorrected gates
    uncorrected = {}
    for gate, noise, dEz in (("hadamard", noise_hadamard, hadamard.dEz), ("identity", noise_identity, identity.dEz)):
        grid = sweep_uncorrected(gate, dEz, xi_sweep, noise, model, filt, dt, workers=workers) if xi_sweep else None
        best = best_point(grid)
        xi = best if uncorrected_at == "optimum" else (1.0, 1.0)
        uncorrected[gate] = (square_gate(gate, dEz, *xi), xi, best, grid is not None)

    corrected = {}
    for name, seq, noise, gate in (("DCG H", hadamard, noise_hadamard, "hadamard"), ("DCG I", identity, noise_identity, "identity")):
        target = GATE_UNITARIES[gate]
        grid = sweep_corrected(seq, beta_sweep, noise, target, model, filt, dt, workers=workers) if beta_sweep else None
        beta = best_point(grid)
        if refine and grid is not None:
            beta = refine_scaling(seq, beta, noise, target, model, filt, dt)
        corrected[name] = (scale_pulse(seq, *beta), beta)

    plan = [
        ("H", uncorrected["hadamard"][0], noise_hadamard, "hadamard", filt, False),
        ("DCG H", corrected["DCG H"][0], noise_hadamard, "hadamard", filt, False),
        ("I", uncorrected["identity"][0], noise_identity, "identity", filt, False),
        ("DCG I", corrected["DCG I"][0], noise_identity, "identity", filt, False),
        ("Undistorted DCG H", hadamard, noise_hadamard, "hadamard", None, True),
        ("Undistorted DCG I", identity, noise_identity, "identity", None, True),
    ]
    points = {
        "H": {"xi": uncorrected["hadamard"][1]},
        "I": {"xi": uncorrected["identity"][1]},
        "DCG H": {"beta": corrected["DCG H"][1]},
        "DCG I": {"beta": corrected["DCG I"][1]},
    }
    for name, seq, noise, gate, f, exact in plan:
        v, e = evaluate_configs(seq, noise, GATE_UNITARIES[gate], model, f, dt, exact)
        rows.append(v)
        errs.append(e)
    for name, gate, noise in (("H", "hadamard", noise_hadamard), ("I", "identity", noise_identity)):
        _, xi, best, swept = uncorrected[gate]
        if swept:
            alt = square_gate(gate, (hadamard if gate == "hadamard" else identity).dEz, *best)
            v, _ = evaluate_configs(alt, noise, GATE_UNITARIES[gate], model, filt, dt)
            points[name].update(xi_sweep_optimum=best, fidelity_at_sweep_optimum=dict(zip(TABLE_COLUMNS, v)))
    return Table1(np.array(rows), np.array(errs), points)
