"""Adjoint Fokker-Planck solver for model-side finite-time coefficients.

The amplitude equation's drift and diffusion are

    D1(a) = epsilon a/2 + alpha a^3/8 + d/(2 omega^2 a),
    D2(a) = d/(2 omega^2),

and the model-side finite-time coefficients come from the adjoint
evolution

    du/dt = D1(A) dA u + D2(A) dAA u,   u(A, 0) = (A - a_i)^n,
    u(0, t) = 0,

read off at A = a_i:  D(n)_tau(a_i) = u(a_i, tau) / (n! tau).

Discretization is method-of-lines on cell centers (first node at dA/2,
away from the 1/A drift singularity) with second-order central differences
for both terms; the absorbing boundary is folded in by odd reflection and
the outer boundary by zero-curvature linear extrapolation.  Time stepping
is adaptive TR-BDF2 (L-stable one-step pair) controlled by the configured
tolerances.  Since the operator is independent of time, all initial
conditions of one parameter point advance together as columns of a single
matrix, which is what makes residual evaluations affordable.

Breakdown (step-size underflow, non-finite state, negative second-moment
values) raises `StiffnessError`, which optimizers catch and treat as a
rejected candidate rather than a crash.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numba
import numpy as np

from .errors import StiffnessError
from .sde import Theta
from .signals import SampleGrid

__all__ = [
    "ModelCoeffs",
    "PdeConfig",
    "AfpSolution",
    "model_coeffs",
    "solve_afp",
    "model_finite_time_km",
]

_SQRT2 = math.sqrt(2.0)
_GAMMA = 2.0 - _SQRT2
_A1 = (_SQRT2 + 1.0) / 2.0       # u_gamma coefficient in the BDF2 stage
_A2 = (_SQRT2 - 1.0) / 2.0       # u_n coefficient in the BDF2 stage
_E1 = (1.0 - _SQRT2) / 3.0       # embedded error estimate weights
_E2 = 1.0 / 3.0
_E3 = (_SQRT2 - 2.0) / 3.0


@dataclass(frozen=True)
class ModelCoeffs:
    """Parameter triple plus angular frequency, as the solver needs them."""

    theta: Theta
    omega: float

    def __post_init__(self):
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ValueError("omega must be finite and > 0")


@dataclass(frozen=True, eq=False)
class PdeConfig:
    """Discretization and tolerance settings for the adjoint solves.

    ``checkpoint_times`` is the tau list read by `solve_afp`;
    `model_finite_time_km` takes its checkpoints from the sample grid
    instead.
    """

    a_max_factor: float = 1.5
    n_cells: int = 400
    rel_tol: float = 1e-6
    abs_tol: float = 1e-9
    checkpoint_times: np.ndarray | None = None

    def __post_init__(self):
        if not self.a_max_factor > 1.0:
            raise ValueError("a_max_factor must be > 1")
        if self.n_cells < 50:
            raise ValueError("n_cells must be >= 50")
        if not (self.rel_tol > 0 and self.abs_tol > 0):
            raise ValueError("tolerances must be > 0")
        if self.checkpoint_times is not None:
            cp = np.asarray(self.checkpoint_times, dtype=float)
            object.__setattr__(self, "checkpoint_times", cp)
            if cp.ndim != 1 or cp.size == 0 or np.any(cp <= 0):
                raise ValueError("checkpoint_times must be positive")
            if np.any(np.diff(cp) <= 0):
                raise ValueError("checkpoint_times must be strictly increasing")


@dataclass(frozen=True, eq=False)
class AfpSolution:
    """Adjoint solution sampled at the conditioning amplitude.

    ``values[j]`` is u(a_center, tau_j) for the j-th checkpoint; for
    moment order ``n = 2`` the values must be nonnegative (checked by the
    solver up to a -1e-12 undershoot).
    """

    n: int
    a_center: float
    values: np.ndarray


def model_coeffs(mc: ModelCoeffs, a):
    """Drift and diffusion of the averaged amplitude dynamics at ``a > 0``."""
    a = np.asarray(a, dtype=float)
    if np.any(a <= 0):
        raise ValueError("amplitude must be > 0 (drift is singular at the origin)")
    th = mc.theta
    d1 = th.epsilon * a / 2.0 + th.alpha * a**3 / 8.0 + th.d / (2.0 * mc.omega**2 * a)
    d2 = np.full_like(a, th.d / (2.0 * mc.omega**2))
    if a.ndim == 0:
        return float(d1), float(d2)
    return d1, d2


def _operator(mc: ModelCoeffs, centers: np.ndarray, da: float):
    """Tridiagonal MOL operator (sub, diag, sup) with boundaries folded in."""
    d1, d2 = model_coeffs(mc, centers)
    adv = d1 / (2.0 * da)
    dif = d2 / (da * da)
    sub = (dif - adv)[1:]
    diag = -2.0 * dif
    sup = (dif + adv)[:-1]
    # absorbing wall at A=0: odd reflection u(-da/2) = -u(da/2)
    diag = diag.copy()
    diag[0] -= dif[0] - adv[0]
    # outer edge: zero curvature, u(A_max + da/2) = 2 u_last - u_prev
    diag[-1] += 2.0 * (dif[-1] + adv[-1])
    sub = sub.copy()
    sub[-1] -= dif[-1] + adv[-1]
    return sub, diag, sup


def _apply(sub, diag, sup, u):
    out = diag[:, None] * u
    out[1:] += sub[:, None] * u[:-1]
    out[:-1] += sup[:, None] * u[1:]
    return out


@numba.njit(cache=True, error_model="numpy")
def _step(sub, diag, sup, u, fn, h, rel_tol, abs_tol):
    """One TR-BDF2 step for all columns at once.

    Factors I - (gamma h / 2) L by the Thomas algorithm once and reuses it
    for both stages and the filtered embedded error estimate.  Returns
    (u_next, f_next, scaled rms error); non-finite values propagate into
    the error so the caller can reject the step.
    """
    n, m = u.shape
    c = 0.5 * _GAMMA * h
    beta = np.empty(n)
    cw = np.empty(n - 1)
    beta[0] = 1.0 - c * diag[0]
    for k in range(1, n):
        cw[k - 1] = -c * sup[k - 1] / beta[k - 1]
        beta[k] = 1.0 - c * diag[k] + c * sub[k - 1] * cw[k - 1]

    ug = np.empty((n, m))
    un1 = np.empty((n, m))
    est = np.empty((n, m))
    # TR stage: (I - cL) ug = u + c fn
    for j in range(m):
        ug[0, j] = (u[0, j] + c * fn[0, j]) / beta[0]
    for k in range(1, n):
        a = -c * sub[k - 1]
        for j in range(m):
            ug[k, j] = (u[k, j] + c * fn[k, j] - a * ug[k - 1, j]) / beta[k]
    for k in range(n - 2, -1, -1):
        for j in range(m):
            ug[k, j] -= cw[k] * ug[k + 1, j]
    # BDF2 stage: (I - cL) un1 = a1 ug - a2 u
    for j in range(m):
        un1[0, j] = (_A1 * ug[0, j] - _A2 * u[0, j]) / beta[0]
    for k in range(1, n):
        a = -c * sub[k - 1]
        for j in range(m):
            un1[k, j] = (_A1 * ug[k, j] - _A2 * u[k, j] - a * un1[k - 1, j]) / beta[k]
    for k in range(n - 2, -1, -1):
        for j in range(m):
            un1[k, j] -= cw[k] * un1[k + 1, j]
    # f at the two stage values, fused with the raw error estimate
    fg0 = diag[0] * ug[0] + sup[0] * ug[1]
    f10 = diag[0] * un1[0] + sup[0] * un1[1]
    fnext = np.empty((n, m))
    fnext[0] = f10
    est[0] = h * (_E1 * fn[0] + _E2 * fg0 + _E3 * f10)
    for k in range(1, n - 1):
        for j in range(m):
            fg = sub[k - 1] * ug[k - 1, j] + diag[k] * ug[k, j] + sup[k] * ug[k + 1, j]
            f1 = sub[k - 1] * un1[k - 1, j] + diag[k] * un1[k, j] + sup[k] * un1[k + 1, j]
            fnext[k, j] = f1
            est[k, j] = h * (_E1 * fn[k, j] + _E2 * fg + _E3 * f1)
    for j in range(m):
        fg = sub[n - 2] * ug[n - 2, j] + diag[n - 1] * ug[n - 1, j]
        f1 = sub[n - 2] * un1[n - 2, j] + diag[n - 1] * un1[n - 1, j]
        fnext[n - 1, j] = f1
        est[n - 1, j] = h * (_E1 * fn[n - 1, j] + _E2 * fg + _E3 * f1)
    # stiff-accurate filter: (I - cL) est_f = est
    for j in range(m):
        est[0, j] = est[0, j] / beta[0]
    for k in range(1, n):
        a = -c * sub[k - 1]
        for j in range(m):
            est[k, j] = (est[k, j] - a * est[k - 1, j]) / beta[k]
    for k in range(n - 2, -1, -1):
        for j in range(m):
            est[k, j] -= cw[k] * est[k + 1, j]

    acc = 0.0
    for k in range(n):
        for j in range(m):
            s = abs_tol + rel_tol * max(abs(u[k, j]), abs(un1[k, j]))
            r = est[k, j] / s
            acc += r * r
    err = math.sqrt(acc / (n * m))
    return un1, fnext, err


def _trbdf2(sub, diag, sup, u0, checkpoints, rel_tol, abs_tol, theta=None):
    """Advance u' = L u through all checkpoints; returns stacked snapshots.

    Adaptive step control uses the embedded third-order error estimate of
    the TR-BDF2 pair, filtered through the stage matrix for stiff
    accuracy.  Raises StiffnessError on step-size underflow, non-finite
    state, or step-count explosion.
    """
    t_end = float(checkpoints[-1])
    u = np.array(u0, dtype=float, copy=True)
    squeeze = u.ndim == 1
    if squeeze:
        u = u[:, None]
    snapshots = np.empty((len(checkpoints),) + u.shape)
    t = 0.0
    h = checkpoints[0] / 8.0
    h_floor = max(t_end * 1e-14, 5e-292)
    max_steps = 200_000
    steps = 0
    icp = 0
    fn = _apply(sub, diag, sup, u)
    while icp < len(checkpoints):
        target = float(checkpoints[icp])
        h_step = min(h, target - t)
        un1, fn1, err = _step(sub, diag, sup, u, fn, h_step, rel_tol, abs_tol)
        steps += 1
        if steps > max_steps:
            raise StiffnessError(
                f"adjoint solve exceeded {max_steps} steps at t = {t:.6g}",
                theta=theta, t_fail=t,
            )
        if not math.isfinite(err) or err > 1.0:
            factor = 0.2 if not math.isfinite(err) else max(0.2, 0.9 * err ** (-1.0 / 3.0))
            h = h_step * factor
            if h < h_floor:
                raise StiffnessError(
                    f"adjoint solver step size underflow at t = {t:.6g}",
                    theta=theta, t_fail=t,
                )
            continue
        t += h_step
        u = un1
        fn = fn1
        h = h_step * min(5.0, max(0.2, 0.9 * err ** (-1.0 / 3.0)))
        h = max(h, h_floor)
        if target - t <= 1e-12 * target:
            snapshots[icp] = u
            icp += 1
    return snapshots[:, :, 0] if squeeze else snapshots


def _domain(cfg: PdeConfig, a_center: float, a_domain: float | None):
    a_max = cfg.a_max_factor * max(2.0 * a_center, a_domain or 0.0)
    da = a_max / cfg.n_cells
    centers = da * (0.5 + np.arange(cfg.n_cells))
    return centers, da


def _interp_weights(centers: np.ndarray, da: float, a):
    """Three-point (quadratic) interpolation stencil at amplitude(s) ``a``.

    Linear interpolation is not enough here: the initial data is quadratic
    in A, and its O(dA^2) interpolation error would swamp the O(tau)
    signal read off at small checkpoint times.  The quadratic stencil is
    exact on parabolas.
    """
    a = np.atleast_1d(np.asarray(a, dtype=float))
    k = np.clip(np.rint((a - centers[0]) / da).astype(int), 1, centers.size - 2)
    s = (a - centers[k]) / da
    w = np.stack([0.5 * s * (s - 1.0), 1.0 - s * s, 0.5 * s * (s + 1.0)])
    return k, w


def solve_afp(
    mc: ModelCoeffs,
    n: int,
    a_center: float,
    cfg: PdeConfig,
    a_domain: float | None = None,
) -> AfpSolution:
    """Solve the adjoint equation for one (n, a_center) initial condition.

    The domain reaches ``a_max_factor * max(2 a_center, a_domain)`` with a
    zero-curvature outflow closure, so its exact extent is immaterial
    (doubling the factor moves checkpointed values by well under a
    percent).  One solve yields the solution at every configured
    checkpoint time.
    """
    if n not in (1, 2):
        raise ValueError("moment order n must be 1 or 2")
    if a_center <= 0:
        raise ValueError("a_center must be > 0")
    if cfg.checkpoint_times is None:
        raise ValueError("PdeConfig.checkpoint_times must be set for solve_afp")
    centers, da = _domain(cfg, a_center, a_domain)
    sub, diag, sup = _operator(mc, centers, da)
    u0 = (centers - a_center) ** n
    snaps = _trbdf2(
        sub, diag, sup, u0, cfg.checkpoint_times, cfg.rel_tol, cfg.abs_tol,
        theta=mc.theta,
    )
    (k,), w = _interp_weights(centers, da, a_center)
    values = snaps[:, k - 1] * w[0, 0] + snaps[:, k] * w[1, 0] + snaps[:, k + 1] * w[2, 0]
    _check_nonnegative(n, values, mc.theta)
    return AfpSolution(n=n, a_center=float(a_center), values=values)


def _check_nonnegative(n: int, values: np.ndarray, theta):
    if n == 2:
        floor = -1e-12 * max(1.0, float(np.max(np.abs(values), initial=0.0)))
        if float(values.min(initial=0.0)) < floor:
            raise StiffnessError(
                "second-moment adjoint solution went negative "
                f"(min = {values.min():.3g}); solution is not trustworthy",
                theta=theta,
            )


def model_finite_time_km(mc: ModelCoeffs, grid: SampleGrid, cfg: PdeConfig):
    """Model-side finite-time coefficients on the whole sample grid.

    Returns ``(d1, d2)`` matrices of shape (n_a, n_tau).  All 2 n_a
    initial conditions share one operator and domain
    (``a_max_factor * 2 * max(a_i)``, the largest the per-solve rule would
    pick) and advance as columns of a single batched solve; results are
    identical to per-column solves up to the integration tolerances and
    deterministic regardless of scheduling.
    """
    amps = np.asarray(grid.amplitudes, dtype=float)
    taus = np.asarray(grid.taus, dtype=float)
    n_a = amps.size
    centers, da = _domain(cfg, float(amps[-1]), float(amps[-1]))
    sub, diag, sup = _operator(mc, centers, da)

    u0 = np.empty((cfg.n_cells, 2 * n_a))
    diff = centers[:, None] - amps[None, :]
    u0[:, :n_a] = diff
    u0[:, n_a:] = diff * diff
    try:
        snaps = _trbdf2(sub, diag, sup, u0, taus, cfg.rel_tol, cfg.abs_tol,
                        theta=mc.theta)
    except StiffnessError as exc:
        raise _tag_failure(exc, n_a) from None

    # quadratic interpolation of each column at its own conditioning amplitude
    k, w = _interp_weights(centers, da, amps)
    cols = np.arange(2 * n_a)
    ka = np.concatenate([k, k])
    wa = np.concatenate([w, w], axis=1)
    vals = (
        snaps[:, ka - 1, cols] * wa[0]
        + snaps[:, ka, cols] * wa[1]
        + snaps[:, ka + 1, cols] * wa[2]
    )

    d1 = (vals[:, :n_a] / taus[:, None]).T
    d2 = (vals[:, n_a:] / (2.0 * taus[:, None])).T
    for i in range(n_a):
        _check_nonnegative(2, vals[:, n_a + i], mc.theta)
    return d1, d2


def _tag_failure(exc: StiffnessError, n_a: int) -> StiffnessError:
    return StiffnessError(
        f"{exc} (batched adjoint solve over 2 x {n_a} initial conditions)",
        theta=exc.theta,
        t_fail=exc.t_fail,
    )
