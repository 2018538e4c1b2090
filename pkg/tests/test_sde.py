"""Simulator tests: reproducibility, deterministic limits, stationary law."""

import numpy as np
import pytest

from oscid.errors import DataError, SimulationBlowUpError
from oscid.sde import (
    OscillatorModel,
    SimConfig,
    Theta,
    TimeSeries,
    amplitude_fixed_point,
    read_timeseries_csv,
    simulate_vdp,
    stationary_amplitude_density,
    write_timeseries_csv,
)
from oscid.signals import analytic_envelope

OM = 2.0 * np.pi


def test_theta_rejects_non_finite():
    with pytest.raises(ValueError):
        Theta(np.nan, -0.1, 0.1)
    with pytest.raises(ValueError):
        Theta(0.1, np.inf, 0.1)


def test_model_rejects_negative_noise_and_bad_omega():
    with pytest.raises(ValueError):
        OscillatorModel(Theta(0.1, -0.1, -0.1), OM)
    with pytest.raises(ValueError):
        OscillatorModel(Theta(0.1, -0.1, 0.1), 0.0)


def test_sim_config_validation():
    with pytest.raises(ValueError):
        SimConfig(t_max=0.0)
    with pytest.raises(ValueError):
        SimConfig(fs=-1.0)
    with pytest.raises(ValueError):
        SimConfig(substeps=0)


def test_resolution_guard():
    model = OscillatorModel(Theta(0.1, -0.1, 0.1), omega=200.0)
    with pytest.raises(ValueError, match="resolution guard"):
        simulate_vdp(model, SimConfig(t_max=10.0, fs=100.0, substeps=10))


def test_same_seed_bit_identical():
    model = OscillatorModel(Theta(0.1, -0.1, 0.1), OM)
    cfg = SimConfig(t_max=100.0, seed=123)
    a = simulate_vdp(model, cfg)
    b = simulate_vdp(model, cfg)
    assert np.array_equal(a.samples, b.samples)
    assert a.t0 == b.t0 and a.dt == b.dt
    c = simulate_vdp(model, SimConfig(t_max=100.0, seed=124))
    assert not np.array_equal(a.samples, c.samples)


def test_noise_free_stable_decays_monotonically():
    model = OscillatorModel(Theta(-0.1, -0.1, 0.0), OM)
    ts = simulate_vdp(model, SimConfig(t_max=200.0, seed=0), x0=1.0,
                      discard_cycles=1.0)
    n_per = int(round(1.0 / ts.dt))
    n_cyc = len(ts) // n_per
    peaks = np.array(
        [np.abs(ts.samples[k * n_per:(k + 1) * n_per]).max() for k in range(n_cyc)]
    )
    assert peaks[-1] < 1e-3
    assert np.all(np.diff(peaks) < 1e-12)


def test_noise_free_unstable_reaches_limit_cycle():
    # averaged dynamics fixed point: sqrt(-4 eps / alpha) = 2
    model = OscillatorModel(Theta(0.1, -0.1, 0.0), OM)
    ts = simulate_vdp(model, SimConfig(t_max=300.0, seed=0))
    tail = ts.samples[-int(60.0 / ts.dt):]
    assert abs(np.abs(tail).max() - 2.0) < 0.02


def test_amplitude_fixed_point_values():
    assert amplitude_fixed_point(Theta(0.1, -0.1, 0.0)) == pytest.approx(2.0)
    assert amplitude_fixed_point(Theta(0.05, -0.2, 0.0)) == pytest.approx(1.0)
    with pytest.raises(ValueError):
        amplitude_fixed_point(Theta(-0.1, -0.1, 0.0))
    with pytest.raises(ValueError):
        amplitude_fixed_point(Theta(0.1, 0.1, 0.0))


def test_conservative_amplitude_preserved():
    # eps = alpha = d = 0: the oscillation amplitude must hold over
    # thousands of cycles (the integrator's harmonic core is neutral)
    model = OscillatorModel(Theta(0.0, 0.0, 0.0), OM)
    ts = simulate_vdp(model, SimConfig(t_max=2000.0, seed=0), x0=1.0,
                      discard_cycles=1.0)
    tail = np.abs(ts.samples[-2000:]).max()
    assert abs(tail - 1.0) < 5e-3


def test_deterministic_part_first_order_in_dt():
    # halving dt moves the endpoint by O(dt)
    model = OscillatorModel(Theta(0.1, -0.1, 0.0), OM)
    ends = []
    for sub in (10, 20, 40):
        ts = simulate_vdp(model, SimConfig(t_max=50.0, substeps=sub, seed=0),
                          discard_cycles=1.0)
        ends.append(ts.samples[-1])
    r = abs(ends[0] - ends[1]) / abs(ends[1] - ends[2])
    assert 1.4 < r < 3.0


def test_blowup_reported_with_time():
    model = OscillatorModel(Theta(1.0, 1.0, 0.0), OM)
    with pytest.raises(SimulationBlowUpError) as exc:
        simulate_vdp(model, SimConfig(t_max=100.0, seed=0), x0=2.0,
                     discard_cycles=0.1)
    assert exc.value.t_blowup > 0


def test_stationary_density_normalized_and_guarded():
    a = np.linspace(0.0, 4.0, 2001)
    p = stationary_amplitude_density(Theta(0.1, -0.1, 0.1), OM, a)
    assert np.trapezoid(p, a) == pytest.approx(1.0, abs=1e-12)
    assert np.all(p >= 0)
    with pytest.raises(ValueError):
        stationary_amplitude_density(Theta(0.1, -0.1, 0.0), OM, a)
    with pytest.raises(ValueError):
        stationary_amplitude_density(Theta(0.1, 0.1, 0.1), OM, a)


def test_long_run_histogram_converges_to_stationary_density():
    # L1 distance to the closed-form stationary law shrinks as the record
    # grows (the short record is intentionally far from converged)
    theta = Theta(0.1, -0.1, 0.1)
    model = OscillatorModel(theta, OM)
    dists = []
    for t_max in (500.0, 8000.0):
        ts = simulate_vdp(model, SimConfig(t_max=t_max, seed=5))
        env = analytic_envelope(ts, omega=OM)
        amp = env.valid
        edges = np.linspace(amp.min(), amp.max(), 31)
        hist, _ = np.histogram(amp, bins=edges, density=True)
        centers = 0.5 * (edges[1:] + edges[:-1])
        p = stationary_amplitude_density(theta, OM, centers)
        p /= np.trapezoid(p, centers)
        dists.append(float(np.trapezoid(np.abs(hist - p), centers)))
    assert dists[1] < dists[0]


def test_csv_roundtrip(tmp_path):
    ts = TimeSeries(t0=0.25, dt=0.01, samples=np.linspace(-1, 1, 57) ** 3)
    path = tmp_path / "ts.csv"
    write_timeseries_csv(ts, path)
    back = read_timeseries_csv(path)
    assert back.t0 == ts.t0
    assert back.dt == pytest.approx(ts.dt, rel=1e-12)
    assert np.array_equal(back.samples, ts.samples)


def test_csv_parse_error_names_line(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("time,value\n0.0,1.0\n0.01,oops\n")
    with pytest.raises(DataError, match="line 3"):
        read_timeseries_csv(path)


def test_csv_nonuniform_dt_rejected(tmp_path):
    path = tmp_path / "jitter.csv"
    path.write_text("time,value\n0.0,1.0\n0.01,1.0\n0.025,1.0\n0.03,1.0\n")
    with pytest.raises(DataError, match="non-uniform"):
        read_timeseries_csv(path)


def test_csv_header_required(tmp_path):
    path = tmp_path / "nohdr.csv"
    path.write_text("0.0,1.0\n0.01,1.0\n")
    with pytest.raises(DataError, match="header"):
        read_timeseries_csv(path)
