"""Acceptance criteria for the package, one test per criterion.

Each test appends a ``PASS``/``FAIL`` line to ``conftest.ACCEPTANCE_LINES``
(printed in the terminal summary) before asserting, so a full run lists the
status of every criterion even when some of them fail.
"""
import numpy as np
from scipy import stats

import conftest
from conftest import random_binormal, random_channel
from stdcg import analysis, design, pulse, qcore, scqc, sim, tomo

# Published simulated fidelities; columns are (both, hyperfine, charge, none).
TABLE_I = {
    "H": (0.9881, 0.9888, 0.9996, 1.0),
    "DCG H": (0.9977, 0.9987, 0.9981, 0.9999),
    "I": (0.9754, 0.9760, 0.9994, 0.9999),
    "DCG I": (0.9985, 0.9989, 0.9994, 1.0),
    "Undistorted DCG H": (0.9974, 0.9989, 0.9983, 1.0),
    "Undistorted DCG I": (0.9992, 0.9996, 1.0, 1.0),
}
TABLE_TOL = 0.003
TABLE_RUNTIME = 300.0

# Repeated-seed scatter: (mean, std) for the hyperfine, charge and both configurations.
SCATTER = {
    "DCG H": ((0.9977, 0.9969, 0.9955), (0.0007, 0.0007, 0.001)),
    "DCG I": ((0.9988, 0.9984, 0.9979), (0.0001, 0.0003, 0.0004)),
}
SCATTER_MEAN_TOL = 0.002
SCATTER_STD_FACTOR = 2.0

IDENTITY_TARGET = {"J1": 9.7, "J2": 0.4, "t1": 60.0, "t2": 121.0}
HADAMARD_TARGET = {"J1": 22.0, "J2": 0.1, "tb": 21.7, "t1": 32.0, "t2": 109.0}


def record(number, title, ok, detail):
    conftest.ACCEPTANCE_LINES.append(f"[{'PASS' if ok else 'FAIL'}] {number}. {title}: {detail}")
    return ok


# --- 1 -------------------------------------------------------------------------------------


def test_criterion_1_table(table):
    tab, seconds = table
    misses = []
    worst = 0.0
    for row, ref in TABLE_I.items():
        for col, want in zip(tab.columns, ref):
            got = tab.cell(row, col)
            worst = max(worst, abs(got - want))
            if abs(got - want) > TABLE_TOL:
                misses.append(f"{row}/{col} {got:.4f} vs {want:.4f}")
    ok = not misses and seconds < TABLE_RUNTIME
    detail = f"{24 - len(misses)}/24 cells within {TABLE_TOL}, worst |diff| {worst:.4f}, {seconds:.0f} s"
    if misses:
        detail += "; off: " + ", ".join(misses)
    print("\n" + tab.to_text())
    assert record(1, "Table I regression", ok, detail), detail


# --- 2 -------------------------------------------------------------------------------------


def test_criterion_2_scatter(table, identity_params, hadamard_params, exchange_model, paper_filter):
    tab, _ = table
    cases = {
        "DCG H": (hadamard_params.sequence(), qcore.HADAMARD, sim.NoiseSpec(n=128, seed=1)),
        "DCG I": (identity_params.sequence(), qcore.I2, sim.NoiseSpec(n=256, seed=1)),
    }
    parts, ok = [], True
    for row, (seq, target, noise) in cases.items():
        b1, b2 = tab.operating_points[row]["beta"]
        out = analysis.fidelity_scatter(pulse.scale_pulse(seq, b1, b2), target, noise, repeats=20,
                                        model=exchange_model, filt=paper_filter)
        means, stds = SCATTER[row]
        for cfg, m_ref, s_ref in zip(("hyperfine", "charge", "both"), means, stds):
            s = out[cfg]
            good = abs(s.mean - m_ref) <= SCATTER_MEAN_TOL and 1 / SCATTER_STD_FACTOR <= s.std / s_ref <= SCATTER_STD_FACTOR
            ok &= good
            parts.append(f"{row}/{cfg} {s.mean:.4f}+-{s.std:.4f} (ref {m_ref}+-{s_ref}){'' if good else ' X'}")
    detail = "; ".join(parts)
    assert record(2, "repeated-seed scatter", ok, detail), detail


# --- 3 -------------------------------------------------------------------------------------


def test_criterion_3_design(identity_params, hadamard_params):
    parts, ok = [], True
    for params, target, tol in ((identity_params, IDENTITY_TARGET, 0.05), (hadamard_params, HADAMARD_TARGET, 0.10)):
        for key, want in target.items():
            got = getattr(params, key)
            good = abs(got / want - 1) <= tol
            ok &= good
            parts.append(f"{key}={got:.3g}{'' if good else ' X'}")
    detail = "identity " + " ".join(parts[:4]) + "; hadamard " + " ".join(parts[4:])
    assert record(3, "design recovery", ok, detail), detail


# --- 4 -------------------------------------------------------------------------------------


def test_criterion_4_geometry(identity_params, hadamard_params):
    rng = np.random.default_rng(2024)
    worst_tau = 0.0
    for _ in range(1000):
        dEz = rng.uniform(0.5, 5.0)
        bc, _ = random_binormal(rng, dEz)
        ec = scqc.curve_from_binormal(bc, dEz)
        tau = scqc.torsion(ec.t, ec.tangent)[3:-3]
        worst_tau = max(worst_tau, np.abs(tau / (-scqc.ANGULAR * dEz) - 1).max())

    worst_kappa = 0.0
    for params in (identity_params, hadamard_params):
        seq = params.sequence()
        ec = scqc.error_curve_from_pulse(seq, substep=0.1)
        mask = scqc.segment_interior_mask(ec.t, seq, margin=0.5)
        kappa = scqc.curvature(ec.t, ec.tangent)[mask]
        expected = scqc.ANGULAR * scqc.pulse_exchange_at(ec.t[mask], seq)
        worst_kappa = max(worst_kappa, np.abs(kappa / expected - 1).max())

    seq = identity_params.sequence()
    closure = scqc.error_curve_from_pulse(seq).closure_residual / seq.duration
    ok = worst_tau < 0.01 and worst_kappa < 0.01 and closure < 0.05
    detail = (f"1000 random binormals worst torsion error {worst_tau:.2e}; designed-pulse curvature "
              f"worst {worst_kappa:.2e}; identity closure {closure:.1e} of duration")
    assert record(4, "geometry properties", ok, detail), detail


# --- 5 -------------------------------------------------------------------------------------


def _slope(rows):
    return np.polyfit(np.log(rows[:, 0]), np.log(rows[:, 1]), 1)[0]


def test_criterion_5_scaling(identity_params):
    sigma = 2.9 * np.geomspace(0.01, 0.05, 5)
    kw = dict(target=qcore.I2, n_realizations=4000, seed=3)
    corrected = _slope(design.infidelity_vs_sigma(identity_params.sequence(), sigma, **kw))
    raw = _slope(design.infidelity_vs_sigma(design.uncorrected_identity(2.9), sigma, **kw))
    ok = abs(corrected - 4.0) <= 0.3 and abs(raw - 2.0) <= 0.1
    detail = f"corrected slope {corrected:.3f} (4.0+-0.3), uncorrected slope {raw:.3f} (2.0+-0.1)"
    assert record(5, "noise scaling laws", ok, detail), detail


# --- 6 -------------------------------------------------------------------------------------


def _ridge(grid):
    """beta1 of the best fidelity for each beta2, refined by a parabola through three cells."""
    F, x = grid.fidelity, grid.axes[0]
    h = x[1] - x[0]
    out = []
    for j in range(F.shape[1]):
        i = int(np.clip(np.argmax(F[:, j]), 1, len(x) - 2))
        a, b, c = F[i - 1, j], F[i, j], F[i + 1, j]
        out.append(x[i] + 0.5 * h * (a - c) / (a - 2 * b + c))
    return np.array(out)


def test_criterion_6_distortion(hadamard_params, exchange_model, paper_filter):
    seq = hadamard_params.sequence()
    sweep = sim.SweepSpec(lo=(0.7, 0.1), hi=(1.3, 2.0), steps=(61, 20))
    noise = sim.NoiseSpec(n=64, seed=1)
    step = (sweep.hi[0] - sweep.lo[0]) / (sweep.steps[0] - 1)
    b2 = np.linspace(sweep.lo[1], sweep.hi[1], sweep.steps[1])
    near_one = int(np.argmin(np.abs(b2 - 1.0)))

    def ridge_for(filt):
        return _ridge(sim.sweep_corrected(seq, sweep, noise, qcore.HADAMARD, exchange_model, filt))

    # Partial high-pass: the ridge turns over, sitting lower at the smallest beta2
    # than at its peak further in.
    hp = ridge_for(paper_filter)
    hp_drop = hp[: near_one + 1].max() - hp[0]
    bends_down = hp_drop > step
    # Low-pass only: the ridge keeps climbing as beta2 shrinks.
    lp = ridge_for(pulse.FilterSpec(tau_lp=paper_filter.tau_lp, a_hp=0.0))
    lp_rise = lp[0] - lp[near_one]
    curves_up = lp_rise > step and lp[0] >= lp[: near_one + 1].max() - step / 2

    ideal = pulse.exchange_to_voltage_waveform(pulse.rasterize(seq, 0.1, round_segments=False), exchange_model)
    kernel = pulse.apply_distortion(ideal, paper_filter)
    circuit = pulse.circuit_response(ideal, pulse.CircuitModel(), line_tau=1.0)
    rms = pulse.waveform_rms_difference(kernel, circuit) / float(np.ptp(ideal.samples))

    ok = bends_down and curves_up and rms < 0.02
    detail = (f"high-pass ridge drops {hp_drop:.3f} in beta1 toward beta2={b2[0]:.1f}; low-pass ridge rises "
              f"{lp_rise:.3f} from beta2={b2[near_one]:.1f} to {b2[0]:.1f}; kernel vs circuit RMS {rms:.1e}")
    assert record(6, "distortion shape", ok, detail), detail


# --- 7 -------------------------------------------------------------------------------------


def test_criterion_7_tomography():
    rng = np.random.default_rng(7)
    worst_chi = 0.0
    for _ in range(200):
        vis = rng.uniform(0.6, 1.0, 3)
        off = rng.uniform(-1, 1, 3) * (1 - vis) * 0.9
        ch = random_channel(rng)
        est = tomo.tomography_of_channel(ch, tomo.PovmSet(tuple(vis), tuple(off)))
        worst_chi = max(worst_chi, np.abs(est.chi - ch.chi).max())

    planted = tomo.PovmSet((0.9, 0.95, 0.85), (0.03, -0.02, 0.05))
    ds = tomo.generate_dataset(planted, [0.5, 3.0], np.linspace(0, 1500, 16), 2.9, shots=10_000, seed=3)
    fit = tomo.calibrate_povm(ds)
    vis_err = np.abs(np.asarray(fit.visibility) / np.asarray(planted.visibility) - 1).max()

    x = np.linspace(0.85, 1.15, 31)
    smooth = 0.995 - 2.0 * (x - 1.01) ** 2 + 5.0 * (x - 1.01) ** 4
    stds = np.array([analysis.linecut_errorbar(smooth + 0.0016 * rng.standard_normal(31), x).std for _ in range(100)])
    # (31 - 5) s^2 / sigma^2 follows chi-square with 26 degrees of freedom
    p = stats.kstest(stds / 0.0016 * np.sqrt(26), stats.chi(26).cdf).pvalue

    ok = worst_chi < 1e-8 and vis_err < 0.03 and p > 0.01
    detail = (f"worst chi error {worst_chi:.1e} over 200 channels; visibility error {vis_err:.2%}; "
              f"line-cut std mean {stds.mean():.5f}, KS p={p:.2f} against chi(26)")
    assert record(7, "tomography equivalence", ok, detail), detail


# --- 8 -------------------------------------------------------------------------------------


def test_criterion_8_device_data_statement(table):
    # Measured fidelities (0.9918 +- 0.0037 corrected Hadamard, 0.9710 +- 0.0037
    # uncorrected Hadamard) and the measured landscapes are device data and are not
    # reproduced here. Their simulated counterparts are Table I (criterion 1) and the
    # landscape shapes (criterion 6); this check only reports the simulated values.
    tab, _ = table
    h, dcg = tab.cell("H", "both"), tab.cell("DCG H", "both")
    ok = dcg > h
    detail = (f"NOT REPRODUCIBLE (device data); simulated counterparts H {h:.4f}, DCG H {dcg:.4f} "
              "(measured 0.9710, 0.9918)")
    assert record(8, "device data", ok, detail), detail
