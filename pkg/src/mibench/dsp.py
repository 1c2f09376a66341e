"""Digital preprocessing: band-pass design, zero-phase filtering,
rational resampling, causal EMA standardization, and filter banks.

Filters are designed as Butterworth prototypes discretized by the bilinear
transform with frequency pre-warping and kept in second-order sections,
which stay numerically stable at the low normalized band edges EEG needs.
"""

from dataclasses import dataclass
from fractions import Fraction

import numpy as np
import scipy.signal

from .errors import ConfigError, DataError


@dataclass(frozen=True)
class IirFilter:
    """Cascaded biquads plus the design metadata they came from."""

    sos: np.ndarray  # (n_sections, 6) rows b0 b1 b2 a0 a1 a2
    order: int
    lo: float
    hi: float
    fs: float

    def poles(self):
        roots = [np.roots(section[3:]) for section in self.sos]
        return np.concatenate(roots)


@dataclass(frozen=True)
class FilterBank:
    """Band-pass filters with ascending, non-overlapping pass bands."""

    filters: tuple

    @property
    def edges(self):
        return [(f.lo, f.hi) for f in self.filters]

    def __len__(self):
        return len(self.filters)

    def __iter__(self):
        return iter(self.filters)


def butter_bandpass(order, lo, hi, fs):
    """Design an order-N Butterworth band-pass as second-order sections.

    Parameters
    ----------
    order : int
        Filter order of the analog prototype (>= 1).
    lo, hi : float
        Band edges in Hz, 0 < lo < hi < fs/2.
    fs : float
        Sampling rate in Hz.
    """
    if order < 1:
        raise ConfigError(f"filter order must be >= 1, got {order}")
    if not 0 < lo < hi < fs / 2:
        raise ConfigError(
            f"band edges must satisfy 0 < lo < hi < fs/2, got "
            f"({lo}, {hi}) at fs={fs}")
    sos = scipy.signal.butter(order, [lo, hi], btype="bandpass",
                              output="sos", fs=fs)
    return IirFilter(sos=sos, order=order, lo=float(lo), hi=float(hi),
                     fs=float(fs))


def sos_response(sos, freqs, fs):
    """Complex frequency response of a second-order-section cascade.

    Evaluates each biquad's rational transfer function directly on the unit
    circle; useful for verifying pass/stop-band behaviour of any design.
    """
    z = np.exp(-2j * np.pi * np.asarray(freqs, dtype=float) / fs)
    h = np.ones_like(z, dtype=complex)
    for b0, b1, b2, a0, a1, a2 in sos:
        h *= (b0 + b1 * z + b2 * z * z) / (a0 + a1 * z + a2 * z * z)
    return h


def _min_length(filt):
    # sosfiltfilt default reflective pad length
    ntaps = 2 * len(filt.sos) + 1
    return 3 * ntaps


def filtfilt(filt, x, axis=-1):
    """Zero-phase forward-backward filtering with reflective padding.

    The effective magnitude response is the squared design response and the
    phase response is identically zero, so oscillatory features are not
    shifted within the trial window.
    """
    x = np.asarray(x)
    min_len = _min_length(filt)
    if x.shape[axis] <= min_len:
        raise DataError(
            f"signal length {x.shape[axis]} too short for zero-phase "
            f"filtering (needs > {min_len} samples)")
    return scipy.signal.sosfiltfilt(filt.sos, x, axis=axis)


def resample(x, fs_in, fs_out, axis=-1):
    """Polyphase rational resampling with anti-aliasing at min(fs)/2.

    Output length is round(n * fs_out / fs_in) along ``axis``.
    """
    if fs_in <= 0 or fs_out <= 0:
        raise ConfigError("sampling rates must be positive")
    x = np.asarray(x)
    n = x.shape[axis]
    if n == 0:
        raise DataError("cannot resample an empty signal")
    if fs_in == fs_out:
        return x.copy()
    ratio = Fraction(fs_out) / Fraction(fs_in)
    up, down = ratio.numerator, ratio.denominator
    y = scipy.signal.resample_poly(x, up, down, axis=axis)
    target = round(n * fs_out / fs_in)
    if y.shape[axis] > target:
        sl = [slice(None)] * y.ndim
        sl[axis] = slice(0, target)
        y = y[tuple(sl)]
    return y


def ema_standardize(x, decay=0.999, axis=-1, sigma_floor=1e-8):
    """Causal per-channel standardization by exponential moving statistics.

    Running mean m[t] = decay * m[t-1] + (1 - decay) * x[t] with m[0] = x[0],
    and the analogous running variance of the deviations (v[0] = 0); the
    output is (x[t] - m[t]) / max(sigma[t], sigma_floor).  Output at time t
    depends only on samples up to t.
    """
    if not 0 < decay < 1:
        raise ConfigError(f"decay must be in (0, 1), got {decay}")
    x = np.asarray(x, dtype=np.float64)
    b, a = [1.0 - decay], [1.0, -decay]
    first = np.take(x, [0], axis=axis)
    # zi = decay * x[0] makes the recurrence start at m[0] = x[0]
    mean, _ = scipy.signal.lfilter(b, a, x, axis=axis, zi=decay * first)
    dev = x - mean
    var, _ = scipy.signal.lfilter(b, a, dev * dev, axis=axis,
                                  zi=np.zeros_like(first))
    sigma = np.maximum(np.sqrt(np.maximum(var, 0.0)), sigma_floor)
    return dev / sigma


def make_filter_bank(edges, order=3, fs=250.0):
    """One band-pass filter per (lo, hi) pair; edges must ascend and the
    bands may touch but not overlap."""
    if not edges:
        raise ConfigError("filter bank needs at least one band")
    prev_hi = None
    for lo, hi in edges:
        if not lo < hi:
            raise ConfigError(f"band ({lo}, {hi}) is not ascending")
        if prev_hi is not None and lo < prev_hi:
            raise ConfigError(
                f"bands must be sorted and non-overlapping; ({lo}, {hi}) "
                f"starts before {prev_hi}")
        prev_hi = hi
    return FilterBank(tuple(butter_bandpass(order, lo, hi, fs)
                            for lo, hi in edges))


def default_band_edges(lo=4.0, hi=40.0, width=4.0):
    """Contiguous bands covering [lo, hi] in steps of ``width`` Hz."""
    n = int(round((hi - lo) / width))
    return [(lo + i * width, lo + (i + 1) * width) for i in range(n)]
