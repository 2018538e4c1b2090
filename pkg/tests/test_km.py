"""Kramers-Moyal estimator tests against exact-model and OU oracles."""

import numpy as np
import pytest

from conftest import amplitude_sde_envelope, exact_ou
from oscid.errors import InsufficientDataError
from oscid.km import (
    KmEstimates,
    conditional_density,
    finite_time_km,
    read_km_csv,
    write_km_csv,
)
from oscid.sde import Theta
from oscid.signals import EnvelopeSeries, SampleGrid, select_amplitude_grid

OM = 2.0 * np.pi
THETA = Theta(0.1, -0.1, 0.1)
D2_TRUE = THETA.d / (2.0 * OM**2)  # 1.2665e-3


@pytest.fixture(scope="module")
def sde_env():
    return amplitude_sde_envelope(THETA, OM, t_max=2000.0, seed=42, a0=2.0)


@pytest.fixture(scope="module")
def sde_km(sde_env):
    # smallest lag 0.5 s: short against the ~10 s relaxation time but long
    # enough that 2 D2 tau dominates the conditioning-bin variance w^2/6
    amps = select_amplitude_grid(sde_env, 40)
    taus = (np.arange(1, 31) * 50) * sde_env.dt
    grid = SampleGrid(amps, taus)
    return finite_time_km(sde_env, grid)


# ------------------------------------------------------ conditional density


def test_conditional_density_constant_envelope():
    env = EnvelopeSeries(0.0, 0.01, np.full(5000, 1.7))
    cd = conditional_density(env, a_i=1.7, tau=0.1, a_bins=10)
    assert cd.pair_count > 0
    peak = np.argmax(cd.mass)
    assert abs(cd.a_centers[peak] - 1.7) < 1e-9
    assert np.count_nonzero(cd.mass) == 1


def test_conditional_density_normalization(sde_env):
    for q in (0.1, 0.5, 0.9):
        a_i = float(np.quantile(sde_env.valid, q))
        cd = conditional_density(sde_env, a_i, tau=0.5, a_bins=40)
        assert cd.pair_count > 0
        integral = np.trapezoid(cd.mass, cd.a_centers)
        assert integral == pytest.approx(1.0, abs=1e-9)


def test_conditional_density_empty_bin_not_an_error(sde_env):
    hi = float(sde_env.valid.max())
    cd = conditional_density(sde_env, hi * 0.999, tau=0.5, a_bins=400)
    # extreme bin may legitimately be empty at this resolution; either way
    # the contract is pair_count >= 0 with all-zero mass when empty
    if cd.pair_count == 0:
        assert np.all(cd.mass == 0.0)


def test_conditional_mean_matches_ou_oracle():
    # exactly discretized OU around mean 2: the conditional mean over the
    # pairs entering the histogram is known in closed form per pair
    mean, rate, sigma, dt = 2.0, 0.5, 0.15, 0.01
    n = 300_000
    x = exact_ou(mean, rate, sigma, dt, n, seed=9)
    env = EnvelopeSeries(0.0, dt, x)
    tau = 1.0
    lag = int(round(tau / dt))
    a_bins = 30
    lo, hi = x.min(), x.max()
    w = (hi - lo) / a_bins
    a_i = 2.0
    cd = conditional_density(env, a_i, tau, a_bins)
    got = np.trapezoid(cd.a_centers * cd.mass, cd.a_centers)
    in_bin = np.abs(x[:-lag] - a_i) <= w / 2.0
    starts = x[:-lag][in_bin]
    targets = x[lag:][in_bin]
    oracle = np.mean(mean + (starts - mean) * np.exp(-rate * tau))
    se = targets.std() / np.sqrt(targets.size)
    # half a bin of quantization headroom on top of two standard errors
    assert abs(got - oracle) < 2 * se + w / 2


# ------------------------------------------------------------ finite-time KM


def test_constant_envelope_zero_drift_and_diffusion():
    c = 1.5
    env = EnvelopeSeries(0.0, 0.01, np.full(4000, c))
    w = 0.2
    grid = SampleGrid(np.array([c, c + w]), np.array([0.1, 0.2]))
    km = finite_time_km(env, grid)
    assert np.all(km.d1_hat[0] == 0.0)
    assert np.all(km.d2_hat[0] == 0.0)
    assert np.all(km.missing[1])


def test_diffusion_estimate_near_constant_oracle(sde_km):
    # smallest lag, well-populated rows: D2_hat within 15% of d/(2 omega^2)
    counts = sde_km.pair_counts[:, 0]
    good = counts > np.quantile(counts, 0.75)
    est = np.median(sde_km.d2_hat[good, 0])
    assert abs(est - D2_TRUE) / D2_TRUE < 0.15


def test_drift_estimate_matches_model_curve(sde_km):
    amps = sde_km.grid.amplitudes
    truth = THETA.epsilon * amps / 2 + THETA.alpha * amps**3 / 8 + THETA.d / (
        2 * OM**2 * amps
    )
    got = sde_km.d1_hat[:, 0]
    w = sde_km.weights[:, 0]
    ok = np.isfinite(got)
    rms = np.sqrt(np.sum(w[ok] * (got[ok] - truth[ok]) ** 2) / np.sum(w[ok]))
    assert rms < 0.15 * (truth.max() - truth.min())


def test_weights_normalized_per_lag(sde_km):
    sums = sde_km.weights.sum(axis=0)
    assert np.allclose(sums, 1.0, atol=1e-12)


def test_missing_entries_have_zero_weight_and_nan(sde_km):
    miss = sde_km.missing
    assert np.all(sde_km.weights[miss] == 0.0)
    assert np.all(np.isnan(sde_km.d1_hat[miss]))
    assert np.all(np.isnan(sde_km.d2_hat[miss]))
    ok = ~miss
    assert np.all(np.isfinite(sde_km.d1_hat[ok]))
    assert np.all(np.isfinite(sde_km.d2_hat[ok]))


def test_amplitude_scaling_covariance(sde_env):
    amps = select_amplitude_grid(sde_env, 12)
    taus = (np.arange(1, 6) * 10) * sde_env.dt
    km1 = finite_time_km(sde_env, SampleGrid(amps, taus))
    c = 2.0  # power of two: exact in floating point
    env2 = EnvelopeSeries(sde_env.t0, sde_env.dt, c * sde_env.amplitudes,
                          sde_env.n_edge)
    km2 = finite_time_km(env2, SampleGrid(c * amps, taus))
    ok = ~km1.missing
    assert np.array_equal(km1.pair_counts, km2.pair_counts)
    assert np.allclose(km2.d1_hat[ok], c * km1.d1_hat[ok], rtol=1e-12)
    assert np.allclose(km2.d2_hat[ok], c * c * km1.d2_hat[ok], rtol=1e-12)


def test_record_doubling_shrinks_standard_error():
    # SE of a populated entry falls roughly as 1/sqrt(T)
    def entry(seed, t_max):
        env = amplitude_sde_envelope(THETA, OM, t_max=t_max, seed=seed, a0=2.0)
        amps = select_amplitude_grid(env, 10)
        taus = np.array([20, 40]) * env.dt
        km = finite_time_km(env, SampleGrid(amps, taus))
        i = np.argmax(km.pair_counts[:, 0])
        return km.d2_hat[i, 0]

    seeds = range(100, 110)
    short = np.array([entry(s, 400.0) for s in seeds])
    long = np.array([entry(s, 1600.0) for s in seeds])
    ratio = short.std() / long.std()
    # 4x the record: expect ~2x smaller SE, wide band for 10-sample stds
    assert 1.2 < ratio < 3.5


def test_insufficient_data_error():
    env = amplitude_sde_envelope(THETA, OM, t_max=120.0, seed=1, a0=2.0,
                                 discard=20.0)
    amps = select_amplitude_grid(env, 10)
    # four of five lag columns reach past the 100 s record
    taus = np.array([0.5, 120.0, 130.0, 140.0, 150.0])
    with pytest.raises(InsufficientDataError):
        finite_time_km(env, SampleGrid(amps, taus))


def test_lags_beyond_record_become_missing_columns(sde_env):
    amps = select_amplitude_grid(sde_env, 10)
    record = sde_env.valid.size * sde_env.dt
    taus = np.array([0.1, 0.2, 0.3, 0.4, record * 2])
    km = finite_time_km(sde_env, SampleGrid(amps, taus))
    assert np.all(km.missing[:, -1])
    assert np.all(km.weights[:, -1] == 0.0)


def test_km_csv_roundtrip(tmp_path, sde_km):
    path = tmp_path / "km.csv"
    write_km_csv(sde_km, path)
    back = read_km_csv(path)
    assert np.allclose(back.grid.amplitudes, sde_km.grid.amplitudes)
    assert np.allclose(back.grid.taus, sde_km.grid.taus)
    ok = ~sde_km.missing
    assert np.allclose(back.d1_hat[ok], sde_km.d1_hat[ok])
    assert np.allclose(back.d2_hat[ok], sde_km.d2_hat[ok])
    assert np.array_equal(back.pair_counts, sde_km.pair_counts)
    assert np.allclose(back.weights, sde_km.weights)
