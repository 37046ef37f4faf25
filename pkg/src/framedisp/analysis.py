"""Displacement time histories and their magnitude spectra."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .model import ControlSectionLayout, cub_spl_itp


@dataclass(frozen=True)
class DisplacementSeries:
    rate: float  # samples per second
    values: np.ndarray  # meters
    y0: float  # normalized height of the tracked point

    def __post_init__(self):
        if not self.rate > 0:
            raise ConfigError("sample rate must be positive", "fps")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("displacement values must be finite")

    @property
    def times(self) -> np.ndarray:
        return np.arange(len(self.values)) / self.rate

    @property
    def duration(self) -> float:
        return len(self.values) / self.rate

    def to_csv(self) -> str:
        rows = ["time_s,value_m"] + [f"{t:.6f},{v:.10g}" for t, v in zip(self.times, self.values)]
        return "\n".join(rows) + "\n"


@dataclass(frozen=True)
class Spectrum:
    freqs: np.ndarray  # Hz, 0 .. Nyquist
    magnitudes: np.ndarray

    @property
    def bin_width(self) -> float:
        return float(self.freqs[1] - self.freqs[0]) if len(self.freqs) > 1 else 0.0

    def to_csv(self) -> str:
        rows = ["freq_hz,magnitude"] + [f"{f:.6f},{m:.10g}" for f, m in zip(self.freqs, self.magnitudes)]
        return "\n".join(rows) + "\n"


def displacement_at(H_sequence, layout: ControlSectionLayout, h: float | None, y0: float,
                    rate: float = 1.0) -> DisplacementSeries:
    """Lateral displacement (m) of the section at normalized height ``y0`` per frame."""
    H_sequence = np.asarray(H_sequence, dtype=float)
    if H_sequence.ndim != 2 or H_sequence.shape[1] != layout.n:
        raise ShapeError(f"expected a (frames, {layout.n}) pose array, got {H_sequence.shape}")
    h = layout.total_height if h is None else h
    if not 0 <= y0 <= 1:
        raise DomainError("normalized height must lie in [0, 1]")
    w = layout.spline().weights(np.float64(y0))
    # validates the domain the same way single-point interpolation does
    cub_spl_itp(y0, layout, np.zeros(layout.n))
    return DisplacementSeries(rate, H_sequence @ w * h, float(y0))


def next_pow2(n: int) -> int:
    return 1 if n <= 1 else 1 << (n - 1).bit_length()


def fft(x) -> np.ndarray:
    """Iterative radix-2 decimation-in-time FFT; length must be a power of two."""
    a = np.array(x, dtype=complex)
    n = a.size
    if n == 0 or n & (n - 1):
        raise ShapeError("FFT length must be a power of two")
    bits = n.bit_length() - 1
    rev = np.zeros(n, dtype=np.intp)
    for i in range(bits):
        rev |= ((np.arange(n) >> i) & 1) << (bits - 1 - i)
    a = a[rev]
    size = 2
    while size <= n:
        half = size // 2
        tw = np.exp(-2j * np.pi * np.arange(half) / size)
        blocks = a.reshape(-1, size)
        even = blocks[:, :half].copy()
        odd = blocks[:, half:] * tw
        blocks[:, :half] = even + odd
        blocks[:, half:] = even - odd
        a = blocks.reshape(n)
        size *= 2
    return a


def ifft(X) -> np.ndarray:
    X = np.asarray(X, dtype=complex)
    return np.conj(fft(np.conj(X))) / X.size


def fft_spectrum(series: DisplacementSeries | np.ndarray, window: str = "none",
                 rate: float | None = None) -> Spectrum:
    """One-sided magnitude ``|X_k|`` of the zero-padded series.

    Bin ``k`` sits at ``k * rate / L`` with ``L`` the padded (power of two)
    length. ``window`` is ``"none"`` or ``"hann"``.
    """
    if isinstance(series, DisplacementSeries):
        values, rate = series.values, series.rate
    else:
        values = np.asarray(series, dtype=float)
        rate = 1.0 if rate is None else rate
    if len(values) < 2:
        raise ShapeError("need at least two samples")
    x = np.asarray(values, dtype=float)
    if window == "hann":
        x = x * np.hanning(len(x))
    elif window != "none":
        raise ConfigError(f"unknown window {window!r}", "window")
    L = next_pow2(len(x))
    X = fft(np.concatenate([x, np.zeros(L - len(x))]))
    k = np.arange(L // 2 + 1)
    return Spectrum(k * rate / L, np.abs(X[: L // 2 + 1]))


def dominant_frequency(spec: Spectrum, exclude_dc: bool = True) -> float:
    """Frequency of the largest magnitude; ties resolve to the lowest frequency."""
    if len(spec.freqs) == 0:
        raise ShapeError("empty spectrum")
    mags = np.asarray(spec.magnitudes, dtype=float)
    start = 1 if exclude_dc and len(mags) > 1 else 0
    # argmax returns the first maximum, i.e. the lowest frequency
    return float(spec.freqs[start + int(np.argmax(mags[start:]))])
