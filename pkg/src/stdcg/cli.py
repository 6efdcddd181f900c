"""Command-line entry point.

Every command reads a TOML configuration (a bundled profile, a user file,
or a user file merged over a profile), runs deterministically from the
configured seed and writes CSV and JSON artifacts to the output directory.
The resolved configuration is embedded in every JSON artifact.

Exit status: 0 on success, 2 for configuration errors, 3 for numerical
failures (fit divergence, infeasible design, non-converging projection).
"""
from __future__ import annotations

import argparse
import copy
import csv
import json
import sys
from importlib import resources
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import analysis, design, pulse, scqc, sim
from .errors import (
    CalibrationError,
    ConfigError,
    ConvergenceError,
    DesignInfeasible,
    FitFailure,
    InvalidArgument,
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERIC = 3

PROFILES = ("paper",)


# -- configuration ----------------------------------------------------------------


def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_profile(name: str) -> dict:
    if name not in PROFILES:
        raise ConfigError(f"unknown profile {name!r}; available: {', '.join(PROFILES)}")
    text = resources.files("stdcg").joinpath("profiles", f"{name}.toml").read_text()
    return tomllib.loads(text)


def load_config(config: str | None = None, profile: str | None = None, overrides: dict | None = None) -> dict:
    """Resolve the run configuration.

    The profile (if any) is the base, the config file is merged over it and
    ``overrides`` (command-line flags) are merged last.
    """
    if config is None and profile is None:
        raise ConfigError("give --config FILE and/or --profile NAME")
    cfg = load_profile(profile) if profile else {}
    if config is not None:
        try:
            with open(config, "rb") as fh:
                user = tomllib.load(fh)
        except OSError as exc:
            raise ConfigError(f"cannot read config file: {exc}") from exc
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"malformed config file: {exc}") from exc
        cfg = _merge(cfg, user)
    if overrides:
        cfg = _merge(cfg, overrides)
    get(cfg, "run", "seed")
    return cfg


def section(cfg: dict, name: str) -> dict:
    sec = cfg.get(name)
    if not isinstance(sec, dict):
        raise ConfigError(f"missing section [{name}]")
    return sec


def get(cfg: dict, sec: str, key: str, default=...):
    s = cfg.get(sec)
    if not isinstance(s, dict) or key not in s:
        if default is not ...:
            return default
        raise ConfigError(f"missing key '{sec}.{key}'")
    return s[key]


def _build(cls, cfg, name, keys, **extra):
    sec = section(cfg, name)
    try:
        kwargs = {k: sec[k] for k in keys if k in sec}
        missing = [k for k in keys if k not in sec]
        if missing:
            raise ConfigError(f"missing key '{name}.{missing[0]}'")
        return cls(**kwargs, **extra)
    except (InvalidArgument, TypeError) as exc:
        raise ConfigError(f"invalid [{name}] section: {exc}") from exc


def exchange_model(cfg) -> pulse.ExchangeModel:
    return _build(pulse.ExchangeModel, cfg, "ExchangeModel", ("J0", "V0", "dEz"))


def noise_spec(cfg, n: int | None = None) -> sim.NoiseSpec:
    sec = section(cfg, "NoiseSpec")
    extra = {"seed": int(get(cfg, "run", "seed"))}
    extra.update({k: bool(sec[k]) for k in ("hyperfine", "charge") if k in sec})
    spec = _build(sim.NoiseSpec, cfg, "NoiseSpec", ("sigma", "frac_j"), n=int(n or sec.get("n", 128)), **extra)
    return spec


def filter_spec(cfg) -> pulse.FilterSpec | None:
    if "FilterSpec" not in cfg or not cfg["FilterSpec"].get("enabled", True):
        return None
    return _build(pulse.FilterSpec, cfg, "FilterSpec", ("tau_lp", "a_hp", "tau_hp"))


def circuit_model(cfg) -> pulse.CircuitModel:
    return _build(pulse.CircuitModel, cfg, "CircuitModel", ("R", "C1", "C2", "C3"))


def sweep_spec(cfg, lo=None, hi=None, steps=None, names=None) -> sim.SweepSpec:
    sec = section(cfg, "SweepSpec")
    try:
        return sim.SweepSpec(
            tuple(names or sec.get("names", ("beta1", "beta2"))),
            tuple(float(x) for x in (lo if lo is not None else get(cfg, "SweepSpec", "lo"))),
            tuple(float(x) for x in (hi if hi is not None else get(cfg, "SweepSpec", "hi"))),
            tuple(int(x) for x in (steps if steps is not None else get(cfg, "SweepSpec", "steps"))),
        )
    except (InvalidArgument, TypeError) as exc:
        raise ConfigError(f"invalid sweep specification: {exc}") from exc


# -- output helpers ----------------------------------------------------------------


def _out_dir(cfg) -> Path:
    out = Path(get(cfg, "run", "out", "out"))
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_json(path: Path, payload: dict, cfg: dict) -> None:
    body = dict(payload, config=cfg)
    path.write_text(json.dumps(body, indent=2, sort_keys=True, default=sim._json_default) + "\n")


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else sim.format_number(v) for v in row])


def _dEz_for(cfg, gate: str) -> float:
    return float(get(cfg, "design", f"{gate}_dEz"))


def designed_sequence(cfg, gate: str):
    """Run the configured design for ``gate`` and return ``(params, sequence)``."""
    dEz = _dEz_for(cfg, gate)
    if gate == "identity":
        p = design.design_identity(dEz)
    elif gate == "hadamard":
        p = design.design_hadamard(
            dEz, Jmax=float(get(cfg, "design", "Jmax")), relaxation=float(get(cfg, "design", "relaxation"))
        )
    else:
        raise ConfigError(f"unknown gate {gate!r}; expected identity or hadamard")
    return p, p.sequence()


def _binormals(tangent: np.ndarray, t: np.ndarray) -> np.ndarray:
    d = np.gradient(tangent, t, axis=0)
    b = np.cross(tangent, d)
    n = np.linalg.norm(b, axis=1, keepdims=True)
    return np.divide(b, n, out=np.zeros_like(b), where=n > 0)


# -- commands ----------------------------------------------------------------------


def cmd_calibrate(cfg, args) -> dict:
    model = exchange_model(cfg)
    sec = section(cfg, "calibrate")
    seed = int(get(cfg, "run", "seed"))
    envelope = get(cfg, "calibrate", "envelope", analysis.GAUSSIAN)
    fit_envelope = {"exp-envelope": analysis.EXPONENTIAL, "gauss-envelope": analysis.GAUSSIAN}.get(
        getattr(args, "model", None) or "", envelope
    )
    times = np.linspace(0.0, float(get(cfg, "calibrate", "t_max")), int(get(cfg, "calibrate", "points")))
    sigma = float(get(cfg, "NoiseSpec", "sigma"))
    fits, points = [], []
    for i, V in enumerate(get(cfg, "calibrate", "voltages")):
        J = pulse.exchange_from_voltage(V, model)
        f = float(np.hypot(J, model.dEz))
        # only the gradient is noisy, and it moves f by dEz / f per MHz
        t2 = sim.dephasing_time(sigma * model.dEz / f)
        series = analysis.synthetic_ramsey(
            f, t2, times, sec.get("amplitude", 0.5), sec.get("offset", 0.5), sec.get("noise", 0.0), [seed, i], envelope, V
        )
        r = analysis.fit_ramsey(series, fit_envelope)
        fits.append({"voltage_mV": float(V), **r._asdict()})
        points.append((float(V), r.frequency))
    ex = analysis.fit_exchange_model(points)
    out = _out_dir(cfg)
    _write_json(out / "calibrate.json", {"exchange_fit": ex.to_dict(), "ramsey": fits, "envelope": fit_envelope}, cfg)
    _write_csv(
        out / "calibrate_residuals.csv",
        ["voltage_mV", "f_ramsey_MHz", "f_model_MHz", "residual_MHz"],
        [(V, f, f - r, r) for (V, f), r in zip(points, ex.residuals)],
    )
    return {"dEz": ex.dEz, "J0": ex.J0, "V0": ex.V0}


def cmd_design(cfg, args) -> dict:
    gate = getattr(args, "gate", None) or get(cfg, "design", "gate")
    out = _out_dir(cfg)
    try:
        params, seq = designed_sequence(cfg, gate)
    except DesignInfeasible as exc:
        best = exc.best.to_dict() if hasattr(exc.best, "to_dict") else exc.best
        _write_json(out / f"design_{gate}_failure.json", {"error": str(exc), "best": best, "residual": exc.residual}, cfg)
        raise
    curve = scqc.error_curve_from_pulse(seq)
    b = _binormals(curve.tangent, curve.t)
    target = sim.GATE_UNITARIES[gate]
    diagnostics = {
        "closure_residual_ns": curve.closure_residual,
        "closure_fraction": curve.closure_residual / seq.duration,
        "gate_error": scqc.gate_error(curve.U_final, target),
        "duration_ns": seq.duration,
    }
    _write_json(out / f"design_{gate}.json", {"params": params.to_dict(), "sequence": seq.to_dict(), "diagnostics": diagnostics}, cfg)
    _write_csv(
        out / f"design_{gate}_segments.csv",
        ["label", "J_MHz", "duration_ns"],
        [(lab, J, t) for lab, (J, t) in zip(seq.labels, seq.segments)],
    )
    _write_csv(
        out / f"design_{gate}_curve.csv",
        ["t_ns", "rx", "ry", "rz", "tx", "ty", "tz", "bx", "by", "bz"],
        np.column_stack([curve.t, curve.r, curve.tangent, b]),
    )
    return {"params": params.to_dict(), **diagnostics}


def cmd_sweep(cfg, args) -> dict:
    gate = get(cfg, "sweep", "gate")
    if gate not in sim.GATE_UNITARIES:
        raise ConfigError(f"unknown gate {gate!r}")
    corrected = bool(get(cfg, "sweep", "corrected", True))
    filt = filter_spec(cfg) if get(cfg, "sweep", "distorted", False) else None
    model = exchange_model(cfg)
    noise = noise_spec(cfg)
    workers = int(get(cfg, "run", "workers", 1))
    dEz = _dEz_for(cfg, gate)
    if corrected:
        params, seq = designed_sequence(cfg, gate)
        grid = sim.sweep_corrected(
            seq, sweep_spec(cfg), noise, sim.GATE_UNITARIES[gate], model, filt, exact_timing=filt is None, workers=workers
        )
        extra = {"params": params.to_dict()}
    else:
        grid = sim.sweep_uncorrected(
            gate, dEz, sweep_spec(cfg, names=("xi1", "xi2")), noise, model, filt, exact_timing=filt is None, workers=workers
        )
        extra = {}
    grid.metadata.update(extra, config=cfg)
    out = _out_dir(cfg)
    name = f"sweep_{gate}_{'dcg' if corrected else 'square'}"
    grid.to_csv(out / f"{name}.csv")
    i, j, a, b, F = grid.optimum()
    return {"optimum": [a, b], "fidelity": F, "grid": str(out / f"{name}.csv")}


def cmd_table1(cfg, args) -> dict:
    sec = section(cfg, "table1")
    model = exchange_model(cfg)
    filt = filter_spec(cfg)
    if filt is None:
        raise ConfigError("table1 needs an enabled [FilterSpec]")
    ip, iseq = designed_sequence(cfg, "identity")
    hp, hseq = designed_sequence(cfg, "hadamard")
    beta = sweep_spec(cfg, sec.get("beta_lo"), sec.get("beta_hi"), sec.get("beta_steps"), ("beta1", "beta2"))
    xi = sweep_spec(cfg, sec.get("xi_lo"), sec.get("xi_hi"), sec.get("xi_steps"), ("xi1", "xi2"))
    table = sim.table1(
        iseq,
        hseq,
        noise_spec(cfg, int(get(cfg, "table1", "n_identity"))),
        noise_spec(cfg, int(get(cfg, "table1", "n_hadamard"))),
        model,
        filt,
        beta_sweep=beta,
        xi_sweep=xi,
        workers=int(get(cfg, "run", "workers", 1)),
        refine=bool(sec.get("refine", True)),
        uncorrected_at=str(sec.get("uncorrected_at", "nominal")),
    )
    out = _out_dir(cfg)
    table.to_csv(out / "table1.csv")
    (out / "table1.txt").write_text(table.to_text() + "\n")
    _write_json(
        out / "table1.json",
        {
            "rows": list(table.rows),
            "columns": list(table.columns),
            "values": table.values,
            "stderr": table.stderr,
            "operating_points": table.operating_points,
            "identity": ip.to_dict(),
            "hadamard": hp.to_dict(),
        },
        cfg,
    )
    print(table.to_text())
    return {"table": table.values.tolist()}


def cmd_errorbars(cfg, args) -> dict:
    if not getattr(args, "grid", None):
        raise ConfigError("errorbars needs --grid PATH to a sweep CSV")
    try:
        grid = sim.FidelityGrid.from_csv(args.grid)
    except (OSError, ValueError, IndexError) as exc:
        raise ConfigError(f"cannot read grid artifact: {exc}") from exc
    axis = getattr(args, "axis", None) or get(cfg, "errorbars", "axis", grid.names[1])
    if axis not in grid.names:
        raise ConfigError(f"axis {axis!r} is not one of {grid.names}")
    i, j, *_ = grid.optimum()
    if axis == grid.names[1]:
        idx = i if args.index is None else args.index
        x, y = grid.axes[1], grid.fidelity[idx, :]
    else:
        idx = j if args.index is None else args.index
        x, y = grid.axes[0], grid.fidelity[:, idx]
    rep = analysis.linecut_errorbar(y, x)
    out = _out_dir(cfg)
    stem = Path(args.grid).stem
    _write_json(out / f"{stem}_errorbars.json", {"axis": axis, "index": int(idx), "x": x, "values": y, **rep.to_dict()}, cfg)
    _write_csv(out / f"{stem}_probplot.csv", ["normal_quantile", "residual"], rep.quantiles)
    return {"std": rep.std}


def cmd_distort(cfg, args) -> dict:
    gate = getattr(args, "gate", None) or get(cfg, "distort", "gate")
    dt = float(get(cfg, "distort", "dt", 0.1))
    model = exchange_model(cfg)
    filt = filter_spec(cfg) or pulse.FilterSpec()
    circ = circuit_model(cfg)
    _, seq = designed_sequence(cfg, gate)
    ideal = pulse.exchange_to_voltage_waveform(pulse.rasterize(seq, dt, round_segments=False), model)
    kernel = pulse.apply_distortion(ideal, filt)
    circuit = pulse.circuit_response(ideal, circ, line_tau=get(cfg, "CircuitModel", "line_tau", None))
    amplitude = float(np.ptp(ideal.samples))
    rms = pulse.waveform_rms_difference(kernel, circuit) / amplitude
    out = _out_dir(cfg)
    _write_csv(
        out / f"distort_{gate}.csv",
        ["t_ns", "V_ideal_mV", "V_kernel_mV", "V_circuit_mV", "J_ideal_MHz", "J_kernel_MHz", "J_circuit_MHz"],
        np.column_stack(
            [
                ideal.times,
                ideal.samples,
                kernel.samples,
                circuit.samples,
                pulse.exchange_from_voltage(ideal.samples, model),
                pulse.exchange_from_voltage(kernel.samples, model),
                pulse.exchange_from_voltage(circuit.samples, model),
            ]
        ),
    )
    _write_json(out / f"distort_{gate}.json", {"rms_relative": rms, "amplitude_mV": amplitude}, cfg)
    return {"rms_relative": rms}


def cmd_scatter(cfg, args) -> dict:
    gate = get(cfg, "scatter", "gate")
    repeats = int(get(cfg, "scatter", "repeats"))
    distorted = bool(get(cfg, "scatter", "distorted", True))
    _, seq = designed_sequence(cfg, gate)
    b1, b2 = (float(x) for x in get(cfg, "scatter", "beta", (1.0, 1.0)))
    seq = pulse.scale_pulse(seq, b1, b2)
    n = int(get(cfg, "table1", f"n_{gate}", get(cfg, "NoiseSpec", "n", 128)))
    filt = filter_spec(cfg) if distorted else None
    res = analysis.fidelity_scatter(
        seq, sim.GATE_UNITARIES[gate], noise_spec(cfg, n), repeats=repeats, model=exchange_model(cfg), filt=filt,
        exact_timing=filt is None,
    )
    out = _out_dir(cfg)
    _write_csv(
        out / f"scatter_{gate}.csv",
        ["noise", "repeat", "fidelity"],
        [(name, r, v) for name, s in res.items() for r, v in enumerate(s.fidelities)],
    )
    summary = {name: {"mean": s.mean, "std": s.std} for name, s in res.items()}
    _write_json(out / f"scatter_{gate}.json", {"summary": summary, "beta": [b1, b2]}, cfg)
    return summary


COMMANDS = {
    "calibrate": cmd_calibrate,
    "design": cmd_design,
    "sweep": cmd_sweep,
    "table1": cmd_table1,
    "errorbars": cmd_errorbars,
    "distort": cmd_distort,
    "scatter": cmd_scatter,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--profile", choices=PROFILES, help="bundled constant profile used as the base")
    common.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
    common.add_argument("--workers", type=int, help="worker processes (overrides run.workers)")
    common.add_argument("--out", help="output directory (overrides run.out)")

    p = argparse.ArgumentParser(prog="stdcg", description="Dynamically corrected gates for singlet-triplet qubits.")
    sub = p.add_subparsers(dest="command", required=True)
    c = sub.add_parser("calibrate", parents=[common], help="synthetic Ramsey calibration of J(V)")
    c.add_argument("--model", choices=("gauss-envelope", "exp-envelope"), help="Ramsey envelope used by the fit")
    for name in ("design", "distort"):
        s = sub.add_parser(name, parents=[common])
        s.add_argument("--gate", choices=("identity", "hadamard"))
    sub.add_parser("sweep", parents=[common], help="fidelity over a two-parameter grid")
    sub.add_parser("table1", parents=[common], help="noise decomposition table")
    e = sub.add_parser("errorbars", parents=[common], help="quartic line-cut uncertainty of a sweep")
    e.add_argument("--grid", required=True, help="sweep CSV written by the sweep command")
    e.add_argument("--axis", help="axis varied along the line cut")
    e.add_argument("--index", type=int, help="index on the other axis (default: optimum)")
    sub.add_parser("scatter", parents=[common], help="fidelity spread over repeated noise draws")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    overrides = {"run": {k: v for k, v in (("seed", args.seed), ("workers", args.workers), ("out", args.out)) if v is not None}}
    try:
        cfg = load_config(args.config, args.profile, overrides)
        result = COMMANDS[args.command](cfg, args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DesignInfeasible as exc:
        print(f"numerical failure: {exc} (residual={exc.residual!r})", file=sys.stderr)
        return EXIT_NUMERIC
    except InvalidArgument as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FitFailure, CalibrationError, ConvergenceError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    print(json.dumps(result, default=sim._json_default, sort_keys=True))
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
