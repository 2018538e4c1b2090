"""Shared fixtures and independent oracle helpers for the test suite."""

import numba
import numpy as np
import pytest

from oscid.sde import OscillatorModel, SimConfig, Theta, simulate_vdp
from oscid.signals import EnvelopeSeries


@numba.njit(cache=True)
def _amp_sde_loop(eps, alpha, d, om, h, n_steps, noise, a0):
    out = np.empty(n_steps)
    a = a0
    for i in range(n_steps):
        drift = eps * a / 2.0 + alpha * a**3 / 8.0 + d / (2.0 * om * om * a)
        a = a + h * drift + noise[i]
        if a <= 0.0:
            a = -a
        out[i] = a
    return out


def amplitude_sde_envelope(
    theta: Theta, omega: float, t_max: float, dt: float = 0.01,
    substeps: int = 5, seed: int = 0, a0: float = 1.0, discard: float = 50.0,
) -> EnvelopeSeries:
    """Direct simulation of the averaged amplitude dynamics.

    Serves as model-exact input data for the KM estimator tests: the
    generated series follows the drift/diffusion pair the estimator is
    supposed to recover, with none of the envelope-extraction artifacts.
    """
    n_out = int(round(t_max / dt))
    h = dt / substeps
    d2 = theta.d / (2.0 * omega**2)
    rng = np.random.Generator(np.random.Philox(seed))
    noise = rng.standard_normal(n_out * substeps) * np.sqrt(2.0 * d2 * h)
    a = _amp_sde_loop(
        theta.epsilon, theta.alpha, theta.d, omega, h, n_out * substeps, noise, a0
    )
    a = a[substeps - 1 :: substeps]
    n_skip = int(round(discard / dt))
    return EnvelopeSeries(t0=discard, dt=dt, amplitudes=a[n_skip:], n_edge=0)


def exact_ou(
    mean: float, rate: float, sigma: float, dt: float, n: int, seed: int = 0,
    x0: float | None = None,
) -> np.ndarray:
    """Exactly discretized Ornstein-Uhlenbeck path (no integration error)."""
    rng = np.random.Generator(np.random.Philox(seed))
    decay = np.exp(-rate * dt)
    step_sd = sigma * np.sqrt((1.0 - decay**2) / (2.0 * rate))
    x = np.empty(n)
    x[0] = mean if x0 is None else x0
    shocks = rng.standard_normal(n - 1) * step_sd
    for k in range(1, n):
        x[k] = mean + (x[k - 1] - mean) * decay + shocks[k - 1]
    return x


THETA_STAR = Theta(0.1, -0.1, 0.1)
OMEGA_STAR = 2.0 * np.pi


@pytest.fixture(scope="session")
def vdp_record():
    """One standard supercritical synthetic record, reused across modules."""
    model = OscillatorModel(THETA_STAR, OMEGA_STAR)
    return simulate_vdp(model, SimConfig(t_max=2000.0, fs=100.0, substeps=10, seed=11))


@pytest.fixture(scope="session")
def identified(vdp_record):
    """Full identification of the standard record with both optimizers."""
    from oscid.afp import PdeConfig
    from oscid.ident import extrapolation_guess, lm_solve, nelder_mead_solve
    from oscid.pipeline import GridSettings, prepare_estimates

    omega, grid, km = prepare_estimates(vdp_record, GridSettings(epsilon_hint=1.0))
    theta0 = extrapolation_guess(km, omega)
    cfg = PdeConfig()
    fit_prop = lm_solve(theta0, omega, km, cfg)
    fit_nm = nelder_mead_solve(theta0, omega, km, cfg)
    return {
        "ts": vdp_record,
        "omega": omega,
        "grid": grid,
        "km": km,
        "theta0": theta0,
        "pde": cfg,
        "prop": fit_prop,
        "nm": fit_nm,
    }
