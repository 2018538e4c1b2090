"""Envelope extraction, spectral frequency estimate, and sampling grids.

Everything here is a pure function of its inputs.  The envelope keeps the
full record length but flags one carrier period at each end as
edge-affected (the discrete Hilbert transform is unreliable there);
downstream statistics skip flagged samples instead of trimming, so sample
indices stay aligned with the source series.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np
from scipy.signal import hilbert, welch

from .errors import (
    DataError,
    DegenerateSignalError,
    NoDominantFrequencyError,
    SelectionError,
)
from .sde import TimeSeries

__all__ = [
    "EnvelopeSeries",
    "SampleGrid",
    "analytic_envelope",
    "dominant_frequency",
    "autocorrelation",
    "select_tau_grid",
    "select_amplitude_grid",
    "segment_series",
    "band_pass",
]

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class EnvelopeSeries:
    """Amplitude trace a(t); same length and spacing as its source signal.

    ``n_edge`` samples at each end are edge-affected and must be excluded
    from statistics; `valid` gives the interior view.
    """

    t0: float
    dt: float
    amplitudes: np.ndarray
    n_edge: int = 0

    def __post_init__(self):
        amp = np.asarray(self.amplitudes, dtype=float)
        object.__setattr__(self, "amplitudes", amp)
        if not (math.isfinite(self.dt) and self.dt > 0):
            raise ValueError("dt must be finite and > 0")
        if amp.ndim != 1 or amp.size == 0:
            raise ValueError("amplitudes must be a nonempty 1-D array")
        if not np.all(np.isfinite(amp)):
            raise ValueError("amplitudes must be finite")
        if np.any(amp < 0):
            raise ValueError("amplitudes must be nonnegative")
        if self.n_edge < 0 or 2 * self.n_edge >= amp.size:
            raise ValueError("edge flags cover the whole record")

    def __len__(self) -> int:
        return self.amplitudes.size

    @property
    def valid(self) -> np.ndarray:
        """Interior (non-edge-affected) amplitude samples."""
        n = self.n_edge
        return self.amplitudes[n : self.amplitudes.size - n]

    @property
    def valid_mask(self) -> np.ndarray:
        m = np.zeros(self.amplitudes.size, dtype=bool)
        m[self.n_edge : self.amplitudes.size - self.n_edge] = True
        return m


@dataclass(frozen=True, eq=False)
class SampleGrid:
    """The (a_i, tau_j) lattice all finite-time statistics live on."""

    amplitudes: np.ndarray
    taus: np.ndarray

    def __post_init__(self):
        a = np.asarray(self.amplitudes, dtype=float)
        t = np.asarray(self.taus, dtype=float)
        object.__setattr__(self, "amplitudes", a)
        object.__setattr__(self, "taus", t)
        for name, v in (("amplitudes", a), ("taus", t)):
            if v.ndim != 1 or v.size < 2:
                raise ValueError(f"{name} needs at least 2 entries")
            if not np.all(np.isfinite(v)):
                raise ValueError(f"{name} must be finite")
            if np.any(np.diff(v) <= 0):
                raise ValueError(f"{name} must be strictly increasing")
        if np.any(t <= 0):
            raise ValueError("taus must be positive")

    @property
    def n_a(self) -> int:
        return self.amplitudes.size

    @property
    def n_tau(self) -> int:
        return self.taus.size


def analytic_envelope(ts: TimeSeries, omega: float | None = None) -> EnvelopeSeries:
    """Hilbert (analytic-signal) envelope |x + i H[x]| of the signal.

    The sample mean is removed first.  One full carrier period at each end
    is flagged as edge-affected; the period comes from ``omega`` when
    given, otherwise from `dominant_frequency` (no flags if the record is
    too short or has no spectral peak, e.g. an all-zero signal).
    """
    x = ts.samples
    if x.size < 16:
        raise DataError(f"record too short for envelope: {x.size} < 16 samples")
    env = np.abs(hilbert(x - x.mean()))
    if omega is None:
        try:
            omega = dominant_frequency(ts)
        except (DataError, NoDominantFrequencyError):
            omega = None
    n_edge = 0
    if omega is not None:
        period = 2.0 * np.pi / omega
        n_edge = int(round(period / ts.dt))
        n_edge = min(n_edge, (x.size - 1) // 2)
    return EnvelopeSeries(t0=ts.t0, dt=ts.dt, amplitudes=env, n_edge=n_edge)


def dominant_frequency(ts: TimeSeries) -> float:
    """Angular frequency of the strongest spectral peak.

    Averaged tapered periodogram (Welch, Hann window) with the peak bin
    refined by quadratic interpolation of log power over the three bins
    around it.  A peak must rise above 3x the median power; otherwise the
    spectrum is considered flat.
    """
    x = ts.samples
    n = x.size
    if n < 256:
        raise DataError(f"record too short for spectral analysis: {n} < 256")
    nperseg = min(n, max(256, n // 16))
    freqs, pxx = welch(x - x.mean(), fs=ts.fs, window="hann", nperseg=nperseg)
    # skip DC and Nyquist bins when searching for the peak
    k = 1 + int(np.argmax(pxx[1:-1]))
    floor = float(np.median(pxx))
    if floor <= 0 or pxx[k] <= 3.0 * floor:
        raise NoDominantFrequencyError(
            f"no spectral peak above 3x median power (peak/median = "
            f"{pxx[k] / floor if floor > 0 else math.inf:.3g})"
        )
    f = freqs[k]
    if 1 <= k < pxx.size - 1 and pxx[k - 1] > 0 and pxx[k + 1] > 0:
        lm, l0, lp = np.log(pxx[k - 1 : k + 2])
        denom = lm - 2.0 * l0 + lp
        if denom < 0:
            shift = 0.5 * (lm - lp) / denom
            f = f + shift * (freqs[1] - freqs[0])
    return 2.0 * np.pi * float(f)


def _full_autocorr(y: np.ndarray) -> np.ndarray:
    """Biased sample autocorrelation at all nonnegative lags (FFT based)."""
    n = y.size
    y = y - y.mean()
    var = float(np.dot(y, y))
    if var <= 0:
        raise DegenerateSignalError("constant signal: autocorrelation undefined")
    nfft = 1 << int(np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(y, nfft)
    acov = np.fft.irfft(f * np.conj(f), nfft)[:n]
    return acov / var


def autocorrelation(env: EnvelopeSeries, lag: float) -> float:
    """Biased autocorrelation of the mean-removed envelope at one lag.

    ``lag`` must be a nonnegative integer multiple of the sample spacing,
    shorter than the (edge-trimmed) record.
    """
    k = lag / env.dt
    if abs(k - round(k)) > 1e-6 * max(1.0, abs(k)):
        raise ValueError(f"lag {lag} is not an integer multiple of dt = {env.dt}")
    k = int(round(k))
    y = env.valid
    if k < 0 or k >= y.size:
        raise ValueError(f"lag {lag} outside the record (0 .. {(y.size - 1) * env.dt:g})")
    y = y - y.mean()
    var = float(np.dot(y, y))
    if var <= 0:
        raise DegenerateSignalError("constant envelope: autocorrelation undefined")
    return float(np.dot(y[: y.size - k], y[k:]) / var)


def select_tau_grid(series, epsilon_hint: float, n_tau: int = 100) -> np.ndarray:
    """Time-shift grid [tau_1, 100 tau_1] from signal decorrelation.

    ``tau_1`` is the smallest lag where the autocorrelation drops below
    0.97 (hint epsilon > 0) or 0.6 (hint epsilon <= 0); the crossing must
    occur within half the record.  Returns ``n_tau`` equally spaced lags
    rounded to sample multiples, de-duplicated.

    ``series`` may be the raw signal (`TimeSeries`) or its envelope
    (`EnvelopeSeries`).  The identification pipeline hands in the raw
    signal: its oscillating autocorrelation crosses the thresholds within
    a fraction of a carrier period, which keeps the lag window inside the
    amplitude-relaxation time.  Envelope-based selection stretches tau_1
    by the relaxation time itself, and for decaying oscillators that
    pushes nearly all lags into the stationary regime where only the
    amplitude distribution (not its dynamics) is sampled.
    """
    if n_tau < 2:
        raise ValueError("n_tau must be >= 2")
    threshold = 0.97 if epsilon_hint > 0 else 0.6
    values = series.valid if isinstance(series, EnvelopeSeries) else series.samples
    try:
        r = _full_autocorr(values)
    except DegenerateSignalError as exc:
        raise SelectionError(f"cannot select lags: {exc}") from exc
    half = r.size // 2
    below = np.nonzero(r[1 : half + 1] < threshold)[0]
    if below.size == 0:
        raise SelectionError(
            f"autocorrelation never drops below {threshold} within half the record"
        )
    k1 = int(below[0]) + 1
    lags = np.unique(np.rint(np.linspace(k1, 100 * k1, n_tau)).astype(int))
    if lags.size < n_tau:
        log.info(
            "tau grid: %d of %d lags remain after rounding de-duplication",
            lags.size,
            n_tau,
        )
    return lags * series.dt


def select_amplitude_grid(env: EnvelopeSeries, n_a: int = 50) -> np.ndarray:
    """Equally spaced amplitudes spanning the envelope range.

    The extreme endpoints are inset by half a bin width so every grid point
    has data on both sides.
    """
    if n_a < 2:
        raise ValueError("n_a must be >= 2")
    y = env.valid
    lo, hi = float(y.min()), float(y.max())
    if not hi > lo:
        raise DegenerateSignalError("degenerate envelope range (max == min)")
    w = (hi - lo) / n_a
    return lo + w / 2.0 + w * np.arange(n_a)


def segment_series(ts: TimeSeries, window: float) -> list[TimeSeries]:
    """Split into contiguous non-overlapping windows of ``window`` seconds.

    The trailing partial window is dropped.  Each window must hold at
    least 100 samples and fit inside the record.
    """
    n_win = int(round(window / ts.dt))
    if n_win < 100:
        raise ValueError(f"window of {n_win} samples is below the 100-sample minimum")
    n = len(ts)
    if n_win > n:
        raise DataError(f"window ({n_win} samples) longer than record ({n})")
    count = n // n_win
    log.info("segmented record into %d windows of %d samples", count, n_win)
    return [
        TimeSeries(
            t0=ts.t0 + k * n_win * ts.dt,
            dt=ts.dt,
            samples=ts.samples[k * n_win : (k + 1) * n_win],
        )
        for k in range(count)
    ]


def band_pass(ts: TimeSeries, f_center: float, half_width: float) -> TimeSeries:
    """Zero-phase spectral-mask band-pass filter.

    Keeps only frequency content in ``[f_center - half_width,
    f_center + half_width]``; output length equals input length.  The band
    must lie strictly inside (0, fs/2).
    """
    nyq = ts.fs / 2.0
    lo, hi = f_center - half_width, f_center + half_width
    if not (0.0 < lo < hi < nyq):
        raise ValueError(
            f"band [{lo:g}, {hi:g}] must lie strictly inside (0, {nyq:g})"
        )
    n = len(ts)
    spec = np.fft.rfft(ts.samples)
    freqs = np.fft.rfftfreq(n, ts.dt)
    spec[(freqs < lo) | (freqs > hi)] = 0.0
    return TimeSeries(t0=ts.t0, dt=ts.dt, samples=np.fft.irfft(spec, n))
