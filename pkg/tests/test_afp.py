"""Adjoint solver tests: limits, convergence orders, and failure modes."""

import numpy as np
import pytest
from scipy.sparse import diags
from scipy.sparse.linalg import expm_multiply

from oscid.afp import (
    ModelCoeffs,
    PdeConfig,
    _domain,
    _operator,
    _trbdf2,
    model_coeffs,
    model_finite_time_km,
    solve_afp,
)
from oscid.errors import StiffnessError
from oscid.sde import Theta
from oscid.signals import SampleGrid

OM = 2.0 * np.pi
MC = ModelCoeffs(Theta(0.1, -0.1, 0.1), OM)


def test_model_coeffs_frozen_values():
    d1, d2 = model_coeffs(MC, 2.0)
    assert d1 == pytest.approx(6.3327e-4, rel=1e-4)
    assert d2 == pytest.approx(1.2665e-3, rel=1e-4)


def test_model_coeffs_zero_noise():
    mc = ModelCoeffs(Theta(0.3, -0.7, 0.0), OM)
    _, d2 = model_coeffs(mc, 1.0)
    assert d2 == 0.0


def test_model_coeffs_singular_tail_monotone():
    mc = ModelCoeffs(Theta(0.0, 0.0, 0.1), OM)
    a = np.linspace(5.0, 50.0, 20)
    d1, _ = model_coeffs(mc, a)
    assert np.all(d1 > 0)
    assert np.all(np.diff(d1) < 0)


def test_model_coeffs_rejects_nonpositive_amplitude():
    with pytest.raises(ValueError):
        model_coeffs(MC, 0.0)
    with pytest.raises(ValueError):
        model_coeffs(MC, np.array([1.0, -2.0]))


def test_short_time_limits_within_two_percent():
    tau = 1e-3 / OM
    cfg = PdeConfig(checkpoint_times=np.array([tau]))
    for a in (1.0, 2.0, 3.0):
        d1_ref, d2_ref = model_coeffs(MC, a)
        v1 = solve_afp(MC, 1, a, cfg).values[0]
        v2 = solve_afp(MC, 2, a, cfg).values[0]
        assert abs(v1 / tau - d1_ref) / abs(d1_ref) < 0.02
        assert abs(v2 / (2 * tau) - d2_ref) / abs(d2_ref) < 0.02


def test_short_time_error_shrinks_with_tau():
    taus = np.array([2.5e-4, 5e-4, 1e-3])
    cfg = PdeConfig(checkpoint_times=taus)
    for n in (1, 2):
        ref = model_coeffs(MC, 2.0)[n - 1]
        vals = solve_afp(MC, n, 2.0, cfg).values
        fact = 1.0 if n == 1 else 2.0
        errs = np.abs(vals / (fact * taus) - ref) / abs(ref)
        assert errs[0] < errs[1] < errs[2]
        ratios = errs[1:] / errs[:-1]
        assert np.all(ratios > 1.2) and np.all(ratios < 5.0)


def test_pointwise_grid_refinement_at_least_second_order():
    vals = []
    for nc in (200, 400, 800):
        cfg = PdeConfig(n_cells=nc, rel_tol=1e-10, abs_tol=1e-13,
                        checkpoint_times=np.array([0.5]))
        vals.append(solve_afp(MC, 1, 2.0, cfg).values[0])
    shrink = abs(vals[0] - vals[1]) / abs(vals[1] - vals[2])
    assert shrink > 3.2  # order two or better (superconvergent here)


def test_global_richardson_order_two():
    amps = np.linspace(0.3, 2.8, 20)
    taus = np.array([0.5, 1.0, 2.0, 5.0])
    grid = SampleGrid(amps, taus)
    mats = []
    for nc in (200, 400, 800):
        cfg = PdeConfig(n_cells=nc, rel_tol=1e-10, abs_tol=1e-13)
        d1, d2 = model_finite_time_km(MC, grid, cfg)
        mats.append(np.concatenate([d1.ravel(), d2.ravel()]))
    e_coarse = np.linalg.norm(mats[0] - mats[1])
    e_fine = np.linalg.norm(mats[1] - mats[2])
    order = np.log2(e_coarse / e_fine)
    assert 1.7 < order < 2.3


def test_domain_extension_stability():
    outs = []
    for factor in (1.5, 3.0):
        cfg = PdeConfig(a_max_factor=factor,
                        checkpoint_times=np.array([0.5, 2.0, 10.0]))
        outs.append(solve_afp(MC, 2, 2.0, cfg).values)
    rel = np.abs(outs[1] - outs[0]) / np.abs(outs[0])
    assert np.all(rel < 0.005)


def test_zero_noise_second_moment_nonnegative_and_vanishing():
    mc = ModelCoeffs(Theta(0.1, -0.1, 0.0), OM)
    taus = np.array([1e-3, 1e-2, 0.1, 1.0])
    cfg = PdeConfig(checkpoint_times=taus)
    sol = solve_afp(mc, 2, 1.5, cfg)
    assert np.all(sol.values >= -1e-12)
    d2_tau = sol.values / (2 * taus)
    assert d2_tau[0] == pytest.approx(0.0, abs=1e-6)


def test_model_km_matches_coeffs_at_small_lag():
    amps = np.linspace(0.3, 2.8, 25)
    taus = np.array([0.005, 0.5, 2.0])
    d1m, d2m = model_finite_time_km(MC, SampleGrid(amps, taus), PdeConfig())
    d1_ref, d2_ref = model_coeffs(MC, amps)
    assert np.all(np.abs(d1m[:, 0] - d1_ref) / np.abs(d1_ref) < 0.05)
    assert np.all(np.abs(d2m[:, 0] - d2_ref) / np.abs(d2_ref) < 0.05)


def test_model_km_second_moment_nonnegative():
    amps = np.linspace(0.3, 2.8, 25)
    taus = np.array([0.1, 1.0, 10.0, 40.0])
    _, d2m = model_finite_time_km(MC, SampleGrid(amps, taus), PdeConfig())
    assert np.all(d2m >= -1e-12)


def test_deterministic_outputs():
    amps = np.linspace(0.5, 2.5, 10)
    taus = np.array([0.2, 1.0, 3.0])
    grid = SampleGrid(amps, taus)
    a = model_finite_time_km(MC, grid, PdeConfig())
    b = model_finite_time_km(MC, grid, PdeConfig())
    assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])


def test_negative_noise_raises_catchable_stiffness():
    mc = ModelCoeffs(Theta(0.1, -0.1, -0.5), OM)
    grid = SampleGrid(np.linspace(0.5, 2.5, 10), np.array([0.5, 5.0, 20.0]))
    with pytest.raises(StiffnessError) as exc:
        model_finite_time_km(mc, grid, PdeConfig())
    assert exc.value.theta is not None


def test_trbdf2_matches_matrix_exponential_oracle():
    cfg = PdeConfig(checkpoint_times=np.array([0.5]))
    centers, da = _domain(cfg, 2.0, None)
    sub, diag_, sup = _operator(MC, centers, da)
    L = diags([sub, diag_, sup], [-1, 0, 1], format="csc")
    u0 = centers - 2.0
    oracle = expm_multiply(0.5 * L, u0)
    got = _trbdf2(sub, diag_, sup, u0, np.array([0.5]), 1e-8, 1e-12)[0]
    scale = np.max(np.abs(oracle))
    assert np.max(np.abs(got - oracle)) / scale < 1e-5


def test_pde_config_validation():
    with pytest.raises(ValueError):
        PdeConfig(a_max_factor=1.0)
    with pytest.raises(ValueError):
        PdeConfig(n_cells=10)
    with pytest.raises(ValueError):
        PdeConfig(rel_tol=0.0)
    with pytest.raises(ValueError):
        PdeConfig(checkpoint_times=np.array([0.2, 0.1]))
    with pytest.raises(ValueError):
        PdeConfig(checkpoint_times=np.array([-0.1, 0.2]))


def test_solve_afp_argument_validation():
    cfg = PdeConfig(checkpoint_times=np.array([0.1]))
    with pytest.raises(ValueError):
        solve_afp(MC, 3, 1.0, cfg)
    with pytest.raises(ValueError):
        solve_afp(MC, 1, -1.0, cfg)
    with pytest.raises(ValueError):
        solve_afp(MC, 1, 1.0, PdeConfig())  # no checkpoints configured
