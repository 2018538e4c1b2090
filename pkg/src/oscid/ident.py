"""Parameter identification: residual, optimizers, and initializer.

The residual stacks the data-side minus model-side finite-time
coefficients over (n, i, j) in lexicographic order; its weighted mean
square is the cost.  Because one residual evaluation costs a full batch of
adjoint solves, residual evaluations are the accounting unit for comparing
optimizers, and every evaluation bumps a shared counter.

Two solvers are provided: the damped least-squares loop with
finite-difference Jacobians (the fast path) and a classic Nelder-Mead
simplex baseline.  Both treat adjoint-solver breakdown as an infinitely
bad candidate instead of crashing, and both apply the same relative
step/cost stop thresholds.
"""

from __future__ import annotations

import math
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .afp import ModelCoeffs, PdeConfig, model_finite_time_km
from .errors import InitializerError, JacobianError, StiffnessError
from .km import KmEstimates
from .sde import Theta, TimeSeries
from .signals import analytic_envelope

__all__ = [
    "StopCriteria",
    "Residual",
    "LmState",
    "FitReport",
    "NoiseBalanceReport",
    "EvalCounter",
    "FALLBACK_THETA",
    "residual",
    "cost",
    "fd_jacobian",
    "lm_solve",
    "nelder_mead_solve",
    "extrapolation_guess",
    "stop_check",
    "noise_balance_report",
]

#: Starting point used when the extrapolation initializer fails:
#: marginally stable, weakly nonlinear, weakly forced.
FALLBACK_THETA = Theta(0.0, -0.01, 1e-3)

_COORDS = ("epsilon", "alpha", "d")


@dataclass(frozen=True)
class StopCriteria:
    theta_rtol: float = 1e-4
    cost_rtol: float = 1e-4
    max_iter: int = 200
    backtrack_cap: int = 30

    def __post_init__(self):
        if self.theta_rtol <= 0 or self.cost_rtol <= 0:
            raise ValueError("stop tolerances must be > 0")
        if self.max_iter < 1 or self.backtrack_cap < 1:
            raise ValueError("iteration caps must be >= 1")


class EvalCounter:
    """Thread-safe monotone counter of residual evaluations."""

    def __init__(self):
        self._count = 0
        self._lock = threading.Lock()

    def bump(self) -> int:
        with self._lock:
            self._count += 1
            return self._count

    @property
    def count(self) -> int:
        return self._count


@dataclass(frozen=True, eq=False)
class Residual:
    """Weighted residual vector, ordered (n, i, j) lexicographically.

    Missing data positions hold entry 0 with weight 0 and therefore never
    contribute to the cost.
    """

    entries: np.ndarray
    weight: np.ndarray
    eval_count_token: int = 0

    def __post_init__(self):
        if self.entries.shape != self.weight.shape:
            raise ValueError("entries and weight lengths differ")
        if np.any(self.weight < 0):
            raise ValueError("weights must be nonnegative")


@dataclass(frozen=True)
class LmState:
    """One accepted optimizer state.

    For the simplex baseline ``lambda_`` holds the simplex diameter
    instead of a damping factor; it stays positive either way.
    """

    theta: Theta
    lambda_: float
    cost: float
    iteration: int
    residual_evals: int

    def __post_init__(self):
        if not self.lambda_ > 0:
            raise ValueError("lambda must be > 0")
        if not math.isfinite(self.cost) or self.cost < 0:
            raise ValueError("cost must be finite and >= 0")


@dataclass(eq=False)
class FitReport:
    theta_hat: Theta
    cost_min: float
    iterations: int
    residual_evals: int
    converged: bool
    trajectory: list[LmState] = field(default_factory=list)
    method: str = "prop"
    failure: str | None = None

    def to_json_dict(self) -> dict:
        return {
            "method": self.method,
            "theta_hat": {
                "epsilon": self.theta_hat.epsilon,
                "alpha": self.theta_hat.alpha,
                "d": self.theta_hat.d,
            },
            "cost_min": self.cost_min,
            "iterations": self.iterations,
            "residual_evals": self.residual_evals,
            "converged": self.converged,
            "failure": self.failure,
            "trajectory": [
                {
                    "iteration": s.iteration,
                    "epsilon": s.theta.epsilon,
                    "alpha": s.theta.alpha,
                    "d": s.theta.d,
                    "lambda": s.lambda_,
                    "cost": s.cost,
                    "residual_evals": s.residual_evals,
                }
                for s in self.trajectory
            ],
        }

    def trajectory_csv_rows(self) -> list[str]:
        rows = ["iteration,epsilon,alpha,d,lambda,cost,residual_evals"]
        for s in self.trajectory:
            rows.append(
                f"{s.iteration},{s.theta.epsilon:.17g},{s.theta.alpha:.17g},"
                f"{s.theta.d:.17g},{s.lambda_:.17g},{s.cost:.17g},{s.residual_evals}"
            )
        return rows


def _stack_weights(km: KmEstimates) -> np.ndarray:
    return np.concatenate([km.weights.ravel(), km.weights.ravel()])


class _KmResidual:
    """Residual entries as a function of the raw parameter vector."""

    def __init__(self, omega: float, km: KmEstimates, cfg: PdeConfig,
                 counter: EvalCounter | None = None):
        self.omega = float(omega)
        self.km = km
        self.cfg = cfg
        self.counter = counter or EvalCounter()
        self.weight = _stack_weights(km)
        self.n_a = km.grid.n_a
        self.n_tau = km.grid.n_tau
        self._hat1 = np.nan_to_num(km.d1_hat, nan=0.0)
        self._hat2 = np.nan_to_num(km.d2_hat, nan=0.0)
        self._ok = ~km.missing

    def __call__(self, theta_vec: np.ndarray) -> np.ndarray:
        self.counter.bump()
        mc = ModelCoeffs(Theta.from_array(theta_vec), self.omega)
        d1m, d2m = model_finite_time_km(mc, self.km.grid, self.cfg)
        r1 = np.where(self._ok, self._hat1 - d1m, 0.0)
        r2 = np.where(self._ok, self._hat2 - d2m, 0.0)
        return np.concatenate([r1.ravel(), r2.ravel()])


def residual(
    theta: Theta,
    omega: float,
    km: KmEstimates,
    cfg: PdeConfig,
    counter: EvalCounter | None = None,
) -> Residual:
    """Evaluate the stacked residual at one parameter point.

    Exactly one counter bump per call; this is the unit every optimizer
    comparison is measured in.  Adjoint-solver breakdown propagates as
    StiffnessError with the offending parameters attached.
    """
    fn = _KmResidual(omega, km, cfg, counter)
    entries = fn(theta.as_array())
    return Residual(
        entries=entries, weight=fn.weight, eval_count_token=fn.counter.count
    )


def cost(res: Residual, n_a: int, n_tau: int) -> float:
    """Weighted mean-square cost, normalized by 2 * n_a * n_tau."""
    return float(res.weight @ (res.entries**2)) / (2.0 * n_a * n_tau)


def _cost_of(entries: np.ndarray, weight: np.ndarray, n_a: int, n_tau: int) -> float:
    return float(weight @ (entries**2)) / (2.0 * n_a * n_tau)


def _fd_steps(theta_vec: np.ndarray) -> np.ndarray:
    return np.maximum(np.abs(theta_vec) / 10.0, 1e-5)


def _fd_jacobian_core(fn, theta_vec, rho0, pool) -> np.ndarray:
    steps = _fd_steps(theta_vec)
    points = []
    for k in range(3):
        p = theta_vec.copy()
        p[k] += steps[k]
        points.append(p)
    if pool is None:
        results = []
        for k, p in enumerate(points):
            try:
                results.append(fn(p))
            except StiffnessError as exc:
                raise JacobianError(
                    f"perturbation of {_COORDS[k]} failed: {exc}", _COORDS[k]
                ) from exc
    else:
        futures = [pool.submit(fn, p) for p in points]
        results = []
        for k, fut in enumerate(futures):
            try:
                results.append(fut.result())
            except StiffnessError as exc:
                raise JacobianError(
                    f"perturbation of {_COORDS[k]} failed: {exc}", _COORDS[k]
                ) from exc
    return np.stack(
        [(results[k] - rho0) / steps[k] for k in range(3)], axis=1
    )


def fd_jacobian(
    theta: Theta,
    omega: float,
    km: KmEstimates,
    cfg: PdeConfig,
    counter: EvalCounter | None = None,
) -> np.ndarray:
    """Forward-difference Jacobian of the residual, shape (2 n_a n_tau, 3).

    Steps are ``max(|coordinate|/10, 1e-5)`` per coordinate; consumes one
    base evaluation plus three perturbed ones (the optimizers reuse their
    cached base residual instead).
    """
    fn = _KmResidual(omega, km, cfg, counter)
    rho0 = fn(theta.as_array())
    return _fd_jacobian_core(fn, theta.as_array(), rho0, pool=None)


def stop_check(
    prev: LmState, new: LmState, theta_rtol: float = 1e-4, cost_rtol: float = 1e-4
) -> bool:
    """Relative step-and-cost stop rule applied between iterations."""
    th0 = prev.theta.as_array()
    th1 = new.theta.as_array()
    dth = float(np.linalg.norm(th1 - th0)) / (1.0 + float(np.linalg.norm(th0)))
    de = abs(new.cost - prev.cost) / (1.0 + abs(prev.cost))
    return dth < theta_rtol and de < cost_rtol


def _solve_damped(nmat: np.ndarray, g: np.ndarray, lam: float) -> np.ndarray:
    """Solve (N + lam diag(N)) x = g by Cholesky factorization.

    N is symmetric positive semidefinite by construction; positive
    diagonal entries are asserted before factorizing, per the damped
    normal-equations contract.
    """
    dn = np.diag(nmat)
    if np.any(dn <= 0):
        raise np.linalg.LinAlgError(
            "normal matrix has a non-positive diagonal entry (rank-deficient "
            "Jacobian column)"
        )
    m = nmat + lam * np.diag(dn)
    c = np.linalg.cholesky(m)
    y = np.linalg.solve(c, g)
    return np.linalg.solve(c.T, y)


def _failure_report(theta_vec, cost_val, it, counter, traj, method, msg) -> FitReport:
    return FitReport(
        theta_hat=Theta.from_array(theta_vec),
        cost_min=cost_val,
        iterations=it,
        residual_evals=counter.count,
        converged=False,
        trajectory=traj,
        method=method,
        failure=msg,
    )


def _lm_minimize(fn, weight, n_a, n_tau, theta0_vec, stop: StopCriteria,
                 counter: EvalCounter, parallel: bool = True) -> FitReport:
    theta = np.asarray(theta0_vec, dtype=float).copy()
    rho = fn(theta)
    e_cur = _cost_of(rho, weight, n_a, n_tau)
    lam = 1.0
    state = LmState(Theta.from_array(theta), lam, e_cur, 0, counter.count)
    traj = [state]
    pool = ThreadPoolExecutor(max_workers=3) if parallel else None

    def eval_candidate(point):
        try:
            r = fn(point)
            return r, _cost_of(r, weight, n_a, n_tau)
        except StiffnessError:
            return None, math.inf

    try:
        for it in range(1, stop.max_iter + 1):
            try:
                jac = _fd_jacobian_core(fn, theta, rho, pool)
            except JacobianError as exc:
                return _failure_report(theta, e_cur, it - 1, counter, traj,
                                       "prop", str(exc))
            wj = weight[:, None] * jac
            nmat = jac.T @ wj
            g = jac.T @ (weight * rho)
            try:
                d0 = _solve_damped(nmat, g, lam)
                d1 = _solve_damped(nmat, g, lam / 2.0)
            except np.linalg.LinAlgError as exc:
                return _failure_report(theta, e_cur, it - 1, counter, traj,
                                       "prop", f"normal equations: {exc}")
            cands = [theta - d0, theta - d1]
            if pool is None:
                (r0, e0), (r1, e1) = (eval_candidate(c) for c in cands)
            else:
                futs = [pool.submit(eval_candidate, c) for c in cands]
                (r0, e0), (r1, e1) = (f.result() for f in futs)

            if e0 > e_cur and e1 > e_cur:
                # both candidates worse: inflate damping until not worse
                accepted = False
                for m in range(1, stop.backtrack_cap + 1):
                    lam_m = (2.0**m) * lam
                    try:
                        dm = _solve_damped(nmat, g, lam_m)
                    except np.linalg.LinAlgError as exc:
                        return _failure_report(theta, e_cur, it, counter, traj,
                                               "prop", f"normal equations: {exc}")
                    rm, em = eval_candidate(theta - dm)
                    if em <= e_cur:
                        theta = theta - dm
                        rho, e_cur, lam = rm, em, lam_m
                        accepted = True
                        break
                if not accepted:
                    return _failure_report(
                        theta, e_cur, it, counter, traj, "prop",
                        f"no acceptable step within {stop.backtrack_cap} "
                        "damping inflations (persistent stiffness or stall)",
                    )
            elif e0 <= e1:
                theta, rho, e_cur = cands[0], r0, e0
            else:
                theta, rho, e_cur = cands[1], r1, e1
                lam = lam / 2.0

            new_state = LmState(Theta.from_array(theta), lam, e_cur, it,
                                counter.count)
            traj.append(new_state)
            if stop_check(state, new_state, stop.theta_rtol, stop.cost_rtol):
                return FitReport(
                    theta_hat=new_state.theta, cost_min=e_cur, iterations=it,
                    residual_evals=counter.count, converged=True,
                    trajectory=traj, method="prop",
                )
            state = new_state
    finally:
        if pool is not None:
            pool.shutdown(wait=False)
    return _failure_report(theta, e_cur, stop.max_iter, counter, traj, "prop",
                           f"iteration cap {stop.max_iter} reached")


def lm_solve(
    theta0: Theta,
    omega: float,
    km: KmEstimates,
    cfg: PdeConfig,
    stop: StopCriteria | None = None,
    parallel: bool = True,
) -> FitReport:
    """Damped least-squares identification with finite-difference Jacobians.

    Each iteration spends 3 residual evaluations on the Jacobian (run
    concurrently), 2 on the damping candidates lambda and lambda/2
    (concurrently), and m extra when both candidates raise the cost and
    the damping has to be inflated by 2^m.  The accepted cost sequence is
    nonincreasing.  Persistent failure to find an acceptable step yields a
    non-converged report carrying the best point so far.
    """
    stop = stop or StopCriteria()
    fn = _KmResidual(omega, km, cfg)
    return _lm_minimize(
        fn, fn.weight, fn.n_a, fn.n_tau, theta0.as_array(), stop, fn.counter,
        parallel=parallel,
    )


def _simplex_diameter(simplex: np.ndarray) -> float:
    best = simplex[0]
    return float(max(np.linalg.norm(v - best) for v in simplex[1:]))


def _nm_minimize(costfn, theta0_vec, stop: StopCriteria, counter: EvalCounter,
                 method_tag: str = "nm") -> FitReport:
    n = theta0_vec.size
    simplex = [np.asarray(theta0_vec, dtype=float)]
    for k in range(n):
        v = simplex[0].copy()
        v[k] += _fd_steps(simplex[0])[k]
        simplex.append(v)
    simplex = np.array(simplex)
    fvals = np.array([costfn(v) for v in simplex])
    if not np.any(np.isfinite(fvals)):
        return _failure_report(simplex[0], math.inf if not math.isfinite(fvals[0])
                               else fvals[0], 0, counter, [], method_tag,
                               "no finite vertex in the initial simplex")

    def record(it):
        return LmState(
            Theta.from_array(simplex[0]),
            max(_simplex_diameter(simplex), 1e-300),
            float(fvals[0]),
            it,
            counter.count,
        )

    order = np.argsort(fvals, kind="stable")
    simplex, fvals = simplex[order], fvals[order]
    traj = [record(0)]
    converged = False
    it = 0
    for it in range(1, stop.max_iter + 1):
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = centroid + (centroid - worst)
        fr = costfn(xr)
        if fr < fvals[0]:
            xe = centroid + 2.0 * (xr - centroid)
            fe = costfn(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        else:
            if fr < fvals[-1]:
                xc = centroid + 0.5 * (xr - centroid)
                fc = costfn(xc)
                shrink = not fc <= fr
            else:
                xc = centroid - 0.5 * (centroid - worst)
                fc = costfn(xc)
                shrink = not fc < fvals[-1]
            if not shrink:
                simplex[-1], fvals[-1] = xc, fc
            else:
                for i in range(1, n + 1):
                    simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0])
                    fvals[i] = costfn(simplex[i])
        order = np.argsort(fvals, kind="stable")
        simplex, fvals = simplex[order], fvals[order]
        traj.append(record(it))
        if math.isfinite(fvals[0]):
            rel_x = max(
                float(np.linalg.norm(v - simplex[0])) for v in simplex[1:]
            ) / (1.0 + float(np.linalg.norm(simplex[0])))
            df = fvals[1:] - fvals[0]
            rel_f = float(np.max(df)) / (1.0 + abs(fvals[0])) if np.all(
                np.isfinite(df)) else math.inf
            if rel_x < stop.theta_rtol and rel_f < stop.cost_rtol:
                converged = True
                break
    if not math.isfinite(fvals[0]):
        return _failure_report(simplex[0], math.inf, it, counter, traj,
                               method_tag, "best vertex is infeasible")
    return FitReport(
        theta_hat=Theta.from_array(simplex[0]),
        cost_min=float(fvals[0]),
        iterations=it,
        residual_evals=counter.count,
        converged=converged,
        trajectory=traj,
        method=method_tag,
        failure=None if converged else f"iteration cap {stop.max_iter} reached",
    )


def nelder_mead_solve(
    theta0: Theta,
    omega: float,
    km: KmEstimates,
    cfg: PdeConfig,
    stop: StopCriteria | None = None,
) -> FitReport:
    """Nelder-Mead simplex baseline on the same cost.

    Standard coefficients (reflect 1, expand 2, contract 0.5, shrink 0.5);
    the initial simplex applies the finite-difference step rule per
    coordinate.  Every cost evaluation is one residual evaluation.
    Vertices where the adjoint solver breaks down get infinite cost and
    are rejected by the ordinary simplex moves; reaching the iteration cap
    reports ``converged = False`` rather than raising.
    """
    stop = stop or StopCriteria()
    fn = _KmResidual(omega, km, cfg)

    def costfn(theta_vec):
        try:
            return _cost_of(fn(theta_vec), fn.weight, fn.n_a, fn.n_tau)
        except StiffnessError:
            return math.inf

    return _nm_minimize(costfn, theta0.as_array(), stop, fn.counter)


def _exp_fit(taus: np.ndarray, values: np.ndarray):
    """Least-squares fit of log|v| = c1 tau + c0; returns (c0, c1)."""
    if taus.size < 2:
        return None
    a = np.column_stack([np.ones_like(taus), taus])
    sol, *_ = np.linalg.lstsq(a, np.log(np.abs(values)), rcond=None)
    return float(sol[0]), float(sol[1])


def extrapolation_guess(km: KmEstimates, omega: float) -> Theta:
    """Initial parameter guess by exponential extrapolation toward tau = 0.

    Per amplitude bin, log|D_hat| is fitted linearly in tau; the
    zero-lag intercepts give d (from the diffusion order) and then
    (epsilon, alpha) by a two-parameter least-squares fit of the drift
    law.  Bins need at least two usable lags (finite, nonzero, uniform
    sign); drift bins whose sign flips across lags are excluded from both
    fits.  Raises InitializerError when fewer than two bins survive.
    """
    amps = km.grid.amplitudes
    taus = km.grid.taus
    c0_drift: dict[int, tuple[float, float]] = {}  # i -> (sign, intercept)
    c0_diff: dict[int, float] = {}
    for i in range(km.grid.n_a):
        v1 = km.d1_hat[i]
        usable = np.isfinite(v1) & (v1 != 0.0)
        if usable.sum() >= 2:
            signs = np.sign(v1[usable])
            if np.all(signs == signs[0]):
                fit = _exp_fit(taus[usable], v1[usable])
                if fit is not None:
                    c0_drift[i] = (float(signs[0]), fit[0])
        v2 = km.d2_hat[i]
        usable = np.isfinite(v2) & (v2 > 0.0)
        if usable.sum() >= 2:
            fit = _exp_fit(taus[usable], v2[usable])
            if fit is not None:
                c0_diff[i] = fit[0]
    if len(c0_diff) < 2 or len(c0_drift) < 2:
        raise InitializerError(
            f"extrapolation needs at least 2 usable bins per order, got "
            f"{len(c0_drift)} drift and {len(c0_diff)} diffusion bins"
        )
    d_hat = 2.0 * omega**2 * float(np.mean([math.exp(c) for c in c0_diff.values()]))
    rows = []
    rhs = []
    for i, (sign, c0) in c0_drift.items():
        a = amps[i]
        rows.append([a / 2.0, a**3 / 8.0])
        rhs.append(sign * math.exp(c0) - d_hat / (2.0 * omega**2 * a))
    sol, *_ = np.linalg.lstsq(np.asarray(rows), np.asarray(rhs), rcond=None)
    return Theta(float(sol[0]), float(sol[1]), d_hat)


@dataclass(frozen=True, eq=False)
class NoiseBalanceReport:
    """Deterministic-versus-stochastic scale comparison for one record.

    ``ratio`` is mean|LHS| / sqrt(2 d); it is flagged infinite when d = 0.
    Amplitude statistics come from the Hilbert envelope of the record.
    """

    mean_abs_lhs: float
    sqrt_2d: float
    ratio: float
    ratio_is_finite: bool
    amp_mean: float
    amp_std: float
    amp_std_over_mean: float
    lhs_abs: np.ndarray
    t0: float
    dt: float


def noise_balance_report(
    ts: TimeSeries, theta: Theta, omega: float
) -> NoiseBalanceReport:
    """Compare the deterministic operator magnitude against sqrt(2 d).

    The left-hand side x'' - (epsilon + alpha x^2) x' + omega^2 x is
    evaluated samplewise with central finite differences on the interior
    of the record.
    """
    x = ts.samples
    if x.size < 16:
        raise ValueError("record too short for the noise-balance derivatives")
    if theta.d < 0:
        raise ValueError("noise balance needs d >= 0")
    dt = ts.dt
    d2x = (x[2:] - 2.0 * x[1:-1] + x[:-2]) / dt**2
    dx = (x[2:] - x[:-2]) / (2.0 * dt)
    xc = x[1:-1]
    lhs = d2x - (theta.epsilon + theta.alpha * xc**2) * dx + omega**2 * xc
    lhs_abs = np.abs(lhs)
    mean_abs = float(lhs_abs.mean())
    sqrt_2d = math.sqrt(2.0 * theta.d)
    finite = sqrt_2d > 0
    ratio = mean_abs / sqrt_2d if finite else math.inf
    env = analytic_envelope(ts, omega=omega)
    amp = env.valid
    amp_mean = float(amp.mean())
    amp_std = float(amp.std())
    return NoiseBalanceReport(
        mean_abs_lhs=mean_abs,
        sqrt_2d=sqrt_2d,
        ratio=ratio,
        ratio_is_finite=finite,
        amp_mean=amp_mean,
        amp_std=amp_std,
        amp_std_over_mean=amp_std / amp_mean if amp_mean > 0 else math.inf,
        lhs_abs=lhs_abs,
        t0=ts.t0 + dt,
        dt=dt,
    )
