"""Estimate finite-time drift and diffusion coefficients from one record.

The conditional statistics of the envelope on an (amplitude, lag) grid
carry the deterministic and stochastic parts of the dynamics.  At small
lags the raw estimates are biased (the finite-time effect that motivates
fitting against the adjoint solution instead of extrapolating to lag 0);
this demo makes that bias visible by comparing against the known
coefficients of the generating model.
"""

import numpy as np

from oscid import (
    ModelCoeffs,
    OscillatorModel,
    SampleGrid,
    SimConfig,
    Theta,
    analytic_envelope,
    dominant_frequency,
    finite_time_km,
    model_coeffs,
    select_amplitude_grid,
    select_tau_grid,
    simulate_vdp,
)

theta = Theta(0.1, -0.1, 0.1)
model = OscillatorModel(theta, 2.0 * np.pi)
ts = simulate_vdp(model, SimConfig(t_max=2000.0, seed=11))

omega = dominant_frequency(ts)
print(f"spectral angular frequency: {omega:.4f} (true {2 * np.pi:.4f})")

env = analytic_envelope(ts, omega=omega)
taus = select_tau_grid(ts, epsilon_hint=1.0, n_tau=100)
amps = select_amplitude_grid(env, n_a=50)
print(f"lag grid: {taus[0]:.3f} .. {taus[-1]:.2f} s ({taus.size} lags)")
print(f"amplitude grid: {amps[0]:.3f} .. {amps[-1]:.3f} ({amps.size} bins)")

km = finite_time_km(env, SampleGrid(amps, taus))
print(f"grid cells without data: {km.missing.mean():.1%}")

mc = ModelCoeffs(theta, omega)
print("\ndrift at a few amplitudes, smallest lag vs zero-lag model value:")
print("  a      D1_hat(tau_1)   D1(model)")
for i in range(6, 45, 9):
    d1_ref, _ = model_coeffs(mc, amps[i])
    print(f"  {amps[i]:5.2f}  {km.d1_hat[i, 0]:+.5f}       {d1_ref:+.5f}")

d2_ref = model_coeffs(mc, 2.0)[1]
print("\ndiffusion estimate vs lag (true d/(2 omega^2) = %.5g):" % d2_ref)
i_mid = int(np.argmax(km.pair_counts[:, 0]))
print("  tau      D2_hat at the best-populated amplitude bin")
for j in range(0, taus.size, 12):
    print(f"  {taus[j]:6.2f}   {km.d2_hat[i_mid, j]:.5g}")
print("the smallest lags overshoot: that is the finite-time/binning bias"
      "\nthe adjoint-based fit absorbs instead of extrapolating through")
