"""Finite-time Kramers-Moyal estimation from an amplitude envelope.

For every grid point (a_i, tau_j) the conditional density of the envelope
a lag tau_j ahead, given that it currently sits in the cell around a_i, is
histogrammed and its first two centered moments give the finite-time drift
and diffusion estimates

    D_hat(n)[i, j] = 1/(n! tau_j) * Int (A - a_i)^n P(A | a_i, tau_j) dA

with trapezoid integration over A.  The conditioning cell width equals the
amplitude-grid spacing; the A axis covers the observed envelope range
extended by one empty cell on each side.  Cells with no (t, t+tau) pairs
are marked missing (NaN value, zero weight) and never imputed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, InsufficientDataError
from .signals import EnvelopeSeries, SampleGrid

__all__ = [
    "ConditionalDensity",
    "KmEstimates",
    "conditional_density",
    "finite_time_km",
    "write_km_csv",
    "read_km_csv",
]


@dataclass(frozen=True, eq=False)
class ConditionalDensity:
    """Histogram estimate of P(A, t+tau | a_i, t) on the A-axis centers."""

    source_bin: float
    lag: float
    a_centers: np.ndarray
    mass: np.ndarray
    pair_count: int

    def __post_init__(self):
        if np.any(np.asarray(self.mass) < 0):
            raise ValueError("mass must be nonnegative")


@dataclass(frozen=True, eq=False)
class KmEstimates:
    """Data-side finite-time coefficients and occupancy weights on the grid.

    All matrices are (n_a, n_tau).  Missing entries (no pairs) hold NaN in
    ``d1_hat``/``d2_hat`` and 0 in ``weights``.  Weights are per-lag
    occupancy frequencies: each column sums to 1 where any data exists.
    """

    grid: SampleGrid
    d1_hat: np.ndarray
    d2_hat: np.ndarray
    weights: np.ndarray
    pair_counts: np.ndarray

    def __post_init__(self):
        shape = (self.grid.n_a, self.grid.n_tau)
        for name in ("d1_hat", "d2_hat", "weights", "pair_counts"):
            m = np.asarray(getattr(self, name))
            if m.shape != shape:
                raise ValueError(f"{name} has shape {m.shape}, expected {shape}")
        if np.any(self.weights < 0):
            raise ValueError("weights must be nonnegative")
        missing = self.pair_counts == 0
        if np.any(self.weights[missing] != 0):
            raise ValueError("missing entries must carry zero weight")

    @property
    def missing(self) -> np.ndarray:
        return self.pair_counts == 0


def _integer_lags(taus: np.ndarray, dt: float) -> np.ndarray:
    lags = taus / dt
    rounded = np.rint(lags)
    if np.any(np.abs(lags - rounded) > 1e-6 * np.maximum(1.0, np.abs(lags))):
        raise ValueError("every tau must be an integer multiple of the envelope dt")
    lags = rounded.astype(int)
    if np.any(lags < 1):
        raise ValueError("every tau must be at least one sample")
    return lags


def _cell_index(values: np.ndarray, lo: float, width: float, n_cells: int) -> np.ndarray:
    """Index of the half-open cell [lo + k w, lo + (k+1) w); top edge inclusive."""
    idx = np.floor((values - lo) / width).astype(np.int64)
    top = lo + n_cells * width
    idx[values == top] = n_cells - 1
    return idx


def _joint_counts(
    amp: np.ndarray,
    valid: np.ndarray,
    lag: int,
    cond_lo: float,
    width: float,
    n_cond: int,
    targ_lo: float,
    n_targ: int,
) -> np.ndarray:
    """(n_cond, n_targ) pair counts for one lag, excluding edge samples."""
    ci = _cell_index(amp, cond_lo, width, n_cond)
    ti = _cell_index(amp, targ_lo, width, n_targ)
    head, tail = ci[:-lag], ti[lag:]
    ok = valid[:-lag] & valid[lag:] & (head >= 0) & (head < n_cond)
    ok &= (tail >= 0) & (tail < n_targ)
    flat = head[ok] * n_targ + tail[ok]
    return np.bincount(flat, minlength=n_cond * n_targ).reshape(n_cond, n_targ)


def _target_axis(lo_cell_edge: float, width: float, dmin: float, dmax: float):
    """Uniform A-axis cells extending one empty cell beyond the data range."""
    k_lo = math.floor((dmin - lo_cell_edge) / width) - 1
    k_hi = math.floor((dmax - lo_cell_edge) / width) + 1
    n = k_hi - k_lo + 1
    lo = lo_cell_edge + k_lo * width
    centers = lo + width * (0.5 + np.arange(n))
    return lo, n, centers


def conditional_density(
    env: EnvelopeSeries, a_i: float, tau: float, a_bins: int = 50
) -> ConditionalDensity:
    """Conditional amplitude density at one (a_i, tau) point.

    Histogram of a(t + tau) over all t whose a(t) falls in the cell of
    width range/``a_bins`` centered at ``a_i``, normalized to unit
    trapezoid integral.  An empty conditioning cell yields
    ``pair_count = 0`` with all-zero mass (not an error).
    """
    (lag,) = _integer_lags(np.array([tau], dtype=float), env.dt)
    y = env.valid
    if lag >= y.size:
        raise ValueError("tau reaches past the end of the record")
    dmin, dmax = float(y.min()), float(y.max())
    if dmax > dmin:
        width = (dmax - dmin) / a_bins
    else:
        width = max(1.0, abs(dmin))  # degenerate range: one nominal cell
    if not (dmin - width / 2 <= a_i <= dmax + width / 2):
        raise ValueError(f"a_i = {a_i} outside the envelope range [{dmin}, {dmax}]")
    cond_lo = a_i - width / 2.0
    targ_lo, n_targ, centers = _target_axis(cond_lo, width, dmin, dmax)
    counts = _joint_counts(
        env.amplitudes, env.valid_mask, lag, cond_lo, width, 1, targ_lo, n_targ
    )[0]
    pairs = int(counts.sum())
    if pairs == 0:
        mass = np.zeros(n_targ)
    else:
        mass = counts / np.trapezoid(counts.astype(float), dx=width)
    return ConditionalDensity(
        source_bin=float(a_i), lag=float(lag * env.dt),
        a_centers=centers, mass=mass, pair_count=pairs,
    )


def finite_time_km(env: EnvelopeSeries, grid: SampleGrid) -> KmEstimates:
    """Finite-time drift/diffusion estimates on the whole sample grid.

    Requires a uniformly spaced amplitude grid (the conditioning cell width
    is the grid spacing).  Raises InsufficientDataError when more than half
    of the grid cells have no pairs.
    """
    amps, taus = grid.amplitudes, grid.taus
    spacing = np.diff(amps)
    width = float(spacing.mean())
    if np.any(np.abs(spacing - width) > 1e-9 * width):
        raise ValueError("amplitude grid must be uniformly spaced")
    lags = _integer_lags(taus, env.dt)
    y = env.valid
    if lags[0] >= y.size:
        raise DataError("smallest tau reaches past the end of the record")
    dmin, dmax = float(y.min()), float(y.max())

    n_a, n_tau = grid.n_a, grid.n_tau
    cond_lo = float(amps[0]) - width / 2.0
    targ_lo, n_targ, centers = _target_axis(cond_lo, width, dmin, dmax)
    d1 = np.full((n_a, n_tau), np.nan)
    d2 = np.full((n_a, n_tau), np.nan)
    pair_counts = np.zeros((n_a, n_tau), dtype=np.int64)

    diff1 = centers[None, :] - amps[:, None]
    diff2 = diff1 * diff1
    for j, lag in enumerate(lags):
        if lag >= env.amplitudes.size:
            continue  # lag reaches past the record: whole column stays missing
        counts = _joint_counts(
            env.amplitudes, env.valid_mask, int(lag),
            cond_lo, width, n_a, targ_lo, n_targ,
        ).astype(float)
        pair_counts[:, j] = counts.sum(axis=1).astype(np.int64)
        norm = np.trapezoid(counts, dx=width, axis=1)
        filled = norm > 0
        tau = lag * env.dt
        m1 = np.trapezoid(diff1 * counts, dx=width, axis=1)
        m2 = np.trapezoid(diff2 * counts, dx=width, axis=1)
        d1[filled, j] = m1[filled] / norm[filled] / tau
        d2[filled, j] = m2[filled] / norm[filled] / (2.0 * tau)

    missing_frac = float((pair_counts == 0).mean())
    if missing_frac > 0.5:
        raise InsufficientDataError(
            f"{missing_frac:.0%} of grid cells have no (t, t+tau) pairs"
        )
    col_tot = pair_counts.sum(axis=0, dtype=float)
    weights = np.divide(
        pair_counts, col_tot[None, :],
        out=np.zeros((n_a, n_tau)), where=col_tot[None, :] > 0,
    )
    return KmEstimates(
        grid=grid, d1_hat=d1, d2_hat=d2, weights=weights, pair_counts=pair_counts
    )


_KM_HEADER = "n,i,j,a,tau,value,weight,pairs"


def write_km_csv(km: KmEstimates, path) -> None:
    """Serialize estimates for inspection or replay without raw data."""
    amps, taus = km.grid.amplitudes, km.grid.taus
    with open(path, "w", encoding="ascii", newline="\n") as f:
        f.write(_KM_HEADER + "\n")
        for n, mat in ((1, km.d1_hat), (2, km.d2_hat)):
            for i, a in enumerate(amps):
                for j, tau in enumerate(taus):
                    f.write(
                        f"{n},{i},{j},{a:.17g},{tau:.17g},{mat[i, j]:.17g},"
                        f"{km.weights[i, j]:.17g},{km.pair_counts[i, j]}\n"
                    )


def read_km_csv(path) -> KmEstimates:
    """Rebuild KmEstimates from the CSV written by `write_km_csv`."""
    raw = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding="ascii")
    if raw.dtype.names != tuple(_KM_HEADER.split(",")):
        raise DataError(f"{path}: expected header '{_KM_HEADER}'")
    i_max = int(raw["i"].max()) + 1
    j_max = int(raw["j"].max()) + 1
    amps = np.full(i_max, np.nan)
    taus = np.full(j_max, np.nan)
    d1 = np.full((i_max, j_max), np.nan)
    d2 = np.full((i_max, j_max), np.nan)
    weights = np.zeros((i_max, j_max))
    pairs = np.zeros((i_max, j_max), dtype=np.int64)
    for row in raw:
        i, j = int(row["i"]), int(row["j"])
        amps[i] = row["a"]
        taus[j] = row["tau"]
        (d1 if int(row["n"]) == 1 else d2)[i, j] = row["value"]
        weights[i, j] = row["weight"]
        pairs[i, j] = int(row["pairs"])
    if np.any(np.isnan(amps)) or np.any(np.isnan(taus)):
        raise DataError(f"{path}: incomplete grid coverage")
    grid = SampleGrid(amplitudes=amps, taus=taus)
    return KmEstimates(grid=grid, d1_hat=d1, d2_hat=d2, weights=weights, pair_counts=pairs)
