import math

import numpy as np
import pytest

from stdcg import design, pulse, qcore, scqc, sim
from stdcg.errors import InvalidArgument
from stdcg.sim import NoiseSpec, SweepSpec

OFF = NoiseSpec(hyperfine=False, charge=False)


# --- dephasing time and noise draws -----------------------------------------------


def test_dephasing_time_values():
    assert sim.dephasing_time(0.2867) == pytest.approx(785, abs=0.5)
    assert sim.dephasing_time(0.25) == pytest.approx(900.3, abs=0.05)
    assert sim.dephasing_time(0.5) == pytest.approx(sim.dephasing_time(0.25) / 2)
    with pytest.raises(InvalidArgument):
        sim.dephasing_time(0.0)


def test_noise_toggles_off():
    assert sim.sample_noise(OFF, 3) == (0.0, 1.0)


def test_noise_statistics():
    spec = NoiseSpec(n=100_000, seed=7)
    d, f = sim.sample_noise_batch(spec)
    assert abs(d.mean()) < 3 * 0.2867 / math.sqrt(len(d))
    assert d.std() == pytest.approx(0.2867, rel=0.01)
    assert (f - 1).std() == pytest.approx(0.012, rel=0.01)
    assert abs(np.corrcoef(d, f)[0, 1]) < 0.02


def test_noise_draws_are_order_independent():
    spec = NoiseSpec(n=50, seed=11)
    d, f = sim.sample_noise_batch(spec, cell=(2, 3))
    for k in (49, 0, 17):
        assert sim.sample_noise(spec, k, cell=(2, 3)) == (d[k], f[k])
    # switching one source off leaves the other's draws unchanged
    d2, _ = sim.sample_noise_batch(spec.configure(True, False), cell=(2, 3))
    assert np.array_equal(d, d2)
    d3, _ = sim.sample_noise_batch(spec, cell=(2, 4))
    assert not np.array_equal(d, d3)
    with pytest.raises(InvalidArgument):
        sim.sample_noise(spec, 50)


# --- evolution ---------------------------------------------------------------------


def test_evolve_constant_hadamard():
    dEz = 2.5
    w = pulse.Waveform(design.hadamard_time(dEz), np.array([dEz]), "exchange")
    U = sim.evolve_waveform(w, dEz)
    assert scqc.gate_error(U, qcore.HADAMARD) < 1e-12


def test_evolve_split_samples_compose():
    one = sim.evolve_waveform(pulse.Waveform(40.0, np.array([3.0]), "exchange"), 2.9)
    two = sim.evolve_waveform(pulse.Waveform(20.0, np.array([3.0, 3.0]), "exchange"), 2.9)
    assert np.abs(one - two).max() < 1e-12


def test_evolve_batches_over_gradient():
    w = pulse.rasterize(pulse.identity_sequence(9.7, 0.4, 60, 121, 2.9))
    dEz = np.array([2.8, 2.9, 3.0])
    U = sim.evolve_waveform(w, dEz)
    assert U.shape == (3, 2, 2)
    assert np.allclose(U[1], sim.evolve_waveform(w, 2.9))


def test_evolve_rejects_voltage_waveform():
    with pytest.raises(InvalidArgument):
        sim.evolve_waveform(pulse.Waveform(1.0, np.ones(3), "voltage"), 2.9)


# --- Monte Carlo channels ------------------------------------------------------------


def test_noise_free_designed_identity(identity_params):
    r = sim.monte_carlo_channel(identity_params.sequence(), OFF, qcore.I2, exact_timing=True)
    assert r.fidelity >= 0.9999
    assert len(r.realization_fidelities) == 1
    assert r.stderr == 0.0


def test_uncorrected_identity_hyperfine_only():
    noise = NoiseSpec(n=256, seed=1, charge=False)
    r = sim.monte_carlo_channel(design.uncorrected_identity(2.9), noise, qcore.I2)
    assert r.fidelity == pytest.approx(0.9760, abs=0.003)


def test_monte_carlo_channel_is_cptp_and_deterministic(hadamard_params, exchange_model, paper_filter):
    seq = hadamard_params.sequence()
    noise = NoiseSpec(n=32, seed=4)
    a = sim.monte_carlo_channel(seq, noise, qcore.HADAMARD, exchange_model, paper_filter)
    b = sim.monte_carlo_channel(seq, noise, qcore.HADAMARD, exchange_model, paper_filter)
    assert a.channel.is_cptp()
    assert np.array_equal(a.channel.superop, b.channel.superop)
    assert a.fidelity == b.fidelity


def test_channel_fidelity_is_mean_of_realizations(identity_params):
    # Process fidelity is linear in the channel, so it equals the average of the
    # per-realization unitary fidelities when no projection is needed.
    r = sim.monte_carlo_channel(identity_params.sequence(), NoiseSpec(n=64, seed=2), qcore.I2)
    assert r.fidelity == pytest.approx(r.realization_fidelities.mean(), abs=1e-10)


def test_fidelity_decreases_with_noise(identity_params):
    seq = identity_params.sequence()
    f = [
        sim.monte_carlo_channel(seq, NoiseSpec(sigma=s, n=128, seed=1), qcore.I2, exact_timing=True).fidelity
        for s in (0.1, 0.3, 0.6, 1.0)
    ]
    assert all(a > b for a, b in zip(f, f[1:]))


# --- sweeps -------------------------------------------------------------------------------


def test_identity_sweep_noise_free_optimum_at_design_point(identity_params):
    sweep = SweepSpec()
    grid = sim.sweep_corrected(identity_params.sequence(), sweep, OFF, qcore.I2, exact_timing=True)
    _, _, b1, b2, best = grid.optimum()
    step = (np.array(sweep.hi) - np.array(sweep.lo)) / (np.array(sweep.steps) - 1)
    assert abs(b1 - 1) <= step[0] + 1e-12
    assert abs(b2 - 1) <= step[1] + 1e-12
    assert best >= 0.9999


def test_square_hadamard_noise_free():
    grid = sim.sweep_uncorrected("hadamard", 2.5, SweepSpec(("xi1", "xi2"), (0.9, 0.9), (1.1, 1.1), (3, 3)),
                                 OFF, exact_timing=True)
    assert grid.fidelity[1, 1] == pytest.approx(1.0, abs=1e-6)
    assert grid.optimum()[:2] == (1, 1)


def test_sweep_is_identical_across_worker_counts(hadamard_params, exchange_model, paper_filter):
    sweep = SweepSpec(lo=(0.9, 0.9), hi=(1.1, 1.1), steps=(2, 3))
    noise = NoiseSpec(n=16, seed=9)
    seq = hadamard_params.sequence()
    a = sim.sweep_corrected(seq, sweep, noise, qcore.HADAMARD, exchange_model, paper_filter, workers=1)
    b = sim.sweep_corrected(seq, sweep, noise, qcore.HADAMARD, exchange_model, paper_filter, workers=2)
    assert np.array_equal(a.fidelity, b.fidelity)
    assert np.array_equal(a.stderr, b.stderr)


def test_fidelity_grid_csv_round_trip(tmp_path, identity_params):
    sweep = SweepSpec(lo=(0.95, 0.9), hi=(1.05, 1.1), steps=(3, 4))
    grid = sim.sweep_corrected(identity_params.sequence(), sweep, NoiseSpec(n=8), qcore.I2)
    path = tmp_path / "grid.csv"
    grid.to_csv(path)
    back = sim.FidelityGrid.from_csv(path)
    assert back.names == ("beta1", "beta2")
    assert np.allclose(back.fidelity, grid.fidelity, rtol=1e-11)
    assert np.allclose(back.axes[1], grid.axes[1])
    assert back.metadata["noise"]["n"] == 8
    first = path.read_text().splitlines()[1].split(",")
    assert first[0] == "0.95"


def test_sweep_spec_validation():
    with pytest.raises(InvalidArgument):
        SweepSpec(lo=(1.0, 1.0), hi=(1.0, 2.0))
    with pytest.raises(InvalidArgument):
        SweepSpec(steps=(1, 5))
    with pytest.raises(InvalidArgument):
        NoiseSpec(n=0)
    with pytest.raises(InvalidArgument):
        sim.square_gate("cnot", 2.5)


def test_table1_rejects_unknown_operating_point(identity_params, hadamard_params):
    with pytest.raises(InvalidArgument):
        sim.table1(identity_params.sequence(), hadamard_params.sequence(), OFF, OFF,
                   pulse.ExchangeModel(), pulse.FilterSpec(), uncorrected_at="best")


def test_format_number_uses_twelve_digits():
    assert sim.format_number(1 / 3) == "0.333333333333"
    assert sim.format_number(1.0) == "1"


# --- noise decomposition table ---------------------------------------------------------------


def test_table_distorted_dcg_identity_both(table):
    assert table[0].cell("DCG I", "both") == pytest.approx(0.9985, abs=0.003)


def test_table_undistorted_dcg_identity_charge_only(table):
    assert table[0].cell("Undistorted DCG I", "charge") >= 0.9999


def test_table_distorted_dcg_hadamard_hyperfine(table):
    assert table[0].cell("DCG H", "hyperfine") == pytest.approx(0.9987, abs=0.003)


def test_table_noise_is_monotone(table):
    tab = table[0]
    for row in tab.rows:
        i = tab.rows.index(row)
        col = {c: k for k, c in enumerate(tab.columns)}
        both = tab.values[i, col["both"]]
        alone = min(tab.values[i, col["hyperfine"]], tab.values[i, col["charge"]])
        assert both <= alone + 2 * tab.stderr[i, col["both"]] + 1e-12, row


def test_noise_off_limit_for_corrected_gates(identity_params, hadamard_params):
    for params, target in ((identity_params, qcore.I2), (hadamard_params, qcore.HADAMARD)):
        r = sim.monte_carlo_channel(params.sequence(), OFF, target, exact_timing=True)
        assert r.fidelity >= 0.9999
        assert r.channel.is_cptp()
