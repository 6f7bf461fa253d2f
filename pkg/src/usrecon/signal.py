"""Temporal calibration: delay between the pose stream and the image stream.

Sign convention: a positive lag ``k`` means the second signal is the first
one delayed by ``k`` samples, ``b[n] = a[n - k]``. For
``estimate_delay(pos_vertical, edge_depth)`` that means the images lag the
poses, so image ``n`` pairs with pose sample ``n - k``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .imaging import LineDetectionConfig, VerticalLineError, detect_line


class DegenerateSignalError(ValueError):
    pass


class NoPeakError(RuntimeError):
    pass


class InsufficientOverlapError(ValueError):
    pass


class EdgeNotFoundError(RuntimeError):
    pass


@dataclass(frozen=True)
class SampledSignal:
    values: np.ndarray
    rate: float
    start_time: float = 0.0

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if not self.rate > 0:
            raise ValueError(f"rate must be positive, got {self.rate}")
        if not np.all(np.isfinite(v)):
            raise ValueError("signal values must be finite")
        object.__setattr__(self, "values", v)

    @property
    def times(self) -> np.ndarray:
        return self.start_time + np.arange(len(self.values)) / self.rate


@dataclass(frozen=True)
class DelayEstimate:
    delay: float
    lag_samples: int
    peak_correlation: float
    rate: float


def demean_normalize(s: SampledSignal) -> SampledSignal:
    v = s.values
    if len(v) < 2:
        raise DegenerateSignalError("need at least 2 samples")
    d = v - v.mean()
    peak = np.abs(d).max()
    if peak == 0 or peak <= 1e-12 * max(1.0, np.abs(v).max()):
        raise DegenerateSignalError("constant signal cannot be normalized")
    return SampledSignal(d / peak, s.rate, s.start_time)


def resample(s: SampledSignal, rate: float) -> SampledSignal:
    """Linear resampling over the original time span."""
    if rate == s.rate:
        return s
    span = (len(s.values) - 1) / s.rate
    n = int(np.floor(span * rate + 1e-9)) + 1
    t = s.start_time + np.arange(n) / rate
    return SampledSignal(np.interp(t, s.times, s.values), rate, s.start_time)


def cross_correlate(a: SampledSignal, b: SampledSignal, max_lag: int):
    """Overlap-normalized cross-correlation.

    ``c[L] = sum(a[n] b[n+L]) / sqrt(sum(a[n]^2) sum(b[n+L]^2))`` over the
    samples where both exist, so every lag is scaled by its own overlap and
    stays inside [-1, 1]. Returns ``(lags, corr)``.
    """
    if a.rate != b.rate:
        raise ValueError("signals must share a rate; resample first")
    x, y = a.values, b.values
    if min(len(x), len(y)) < 2 * max_lag or max_lag < 0:
        raise InsufficientOverlapError(
            f"signals of length {len(x)} and {len(y)} too short for max_lag={max_lag}")
    lags = np.arange(-max_lag, max_lag + 1)
    corr = np.empty(len(lags))
    for i, L in enumerate(lags):
        # pairs (x[n], y[n + L]) for every n where both exist
        lo, hi = max(0, -L), min(len(x), len(y) - L)
        xs, ys = x[lo:hi], y[lo + L: hi + L]
        den = np.sqrt(np.dot(xs, xs) * np.dot(ys, ys))
        corr[i] = np.dot(xs, ys) / den if den > 0 else 0.0
    return lags, np.clip(corr, -1.0, 1.0)


def first_peak(lags, corr, min_peak: float = 0.5, direction: str = "both"):
    """First local maximum >= ``min_peak``, scanning outward from lag 0."""
    lags = np.asarray(lags)
    n = len(corr)
    zero = int(np.searchsorted(lags, 0))
    if direction == "positive":
        order = list(range(zero, n))
    elif direction == "negative":
        order = list(range(zero, -1, -1))
    elif direction == "both":
        order = [zero]
        for d in range(1, n):
            for i in (zero + d, zero - d):
                if 0 <= i < n:
                    order.append(i)
    else:
        raise ValueError(f"unknown direction {direction!r}")
    d_prev = None
    for i in order:
        if corr[i] < min_peak:
            continue
        left = corr[i - 1] if i > 0 else -np.inf
        right = corr[i + 1] if i < n - 1 else -np.inf
        if corr[i] >= left and corr[i] >= right:
            # equal |lag| on both sides: keep the stronger one
            if direction == "both" and i != zero:
                j = 2 * zero - i
                if 0 <= j < n and abs(lags[j]) == abs(lags[i]) and corr[j] > corr[i]:
                    jl = corr[j - 1] if j > 0 else -np.inf
                    jr = corr[j + 1] if j < n - 1 else -np.inf
                    if corr[j] >= jl and corr[j] >= jr:
                        i = j
            return int(lags[i]), float(corr[i])
    raise NoPeakError(f"no correlation peak >= {min_peak}")


def estimate_delay(pos_vertical: SampledSignal, image_edge_depth: SampledSignal,
                   max_lag: int | None = None, min_peak: float = 0.5,
                   direction: str = "both") -> DelayEstimate:
    """Delay of the image stream relative to the pose stream.

    Both signals are resampled to the lower rate, demeaned, scaled to
    [-1, 1] and cross-correlated; the first strong peak from lag 0 gives
    the delay, so its resolution is one sample at the lower rate.
    """
    rate = min(pos_vertical.rate, image_edge_depth.rate)
    a = demean_normalize(resample(pos_vertical, rate))
    b = demean_normalize(resample(image_edge_depth, rate))
    if max_lag is None:
        max_lag = min(len(a.values), len(b.values)) // 2
    lag, peak = first_peak(*cross_correlate(a, b, max_lag), min_peak=min_peak, direction=direction)
    return DelayEstimate(delay=lag / rate, lag_samples=lag, peak_correlation=peak, rate=rate)


def extract_edge_depth(frames, rate: float, cfg: LineDetectionConfig | None = None,
                       start_time: float = 0.0) -> SampledSignal:
    """Per-frame image row (pixels) of the detected edge line's midpoint.

    Frames without a line are filled by linear interpolation; more than half
    missing is an error.
    """
    frames = list(getattr(frames, "frames", frames))
    depth = np.full(len(frames), np.nan)
    for i, f in enumerate(frames):
        try:
            line = detect_line(f, cfg)
        except VerticalLineError:
            line = None
        if line is not None:
            depth[i] = line.midpoint[1]
    ok = np.isfinite(depth)
    if len(frames) == 0 or ok.sum() * 2 < len(frames) or ok.sum() < 2:
        raise EdgeNotFoundError(f"edge line found in only {ok.sum()} of {len(frames)} frames")
    idx = np.arange(len(frames))
    depth[~ok] = np.interp(idx[~ok], idx[ok], depth[ok])
    return SampledSignal(depth, rate, start_time)
