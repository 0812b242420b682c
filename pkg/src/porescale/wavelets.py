"""Wavelet engines: biorthogonal-1.5 DWT denoising and the continuous
wavelet transform used for scaleogram construction.

The CWT follows the L2 convention W(a, b) = (1/sqrt(a)) * integral
x(t) psi*((t - b) / a) dt, computed per scale by frequency-domain
multiplication. Scales and angular frequencies are dimensionless
(samples and radians/sample); callers convert via the sample rate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

_SQRT2 = math.sqrt(2.0)

# CDF spline 1/5 lowpass pair. The analysis filter is the 10-tap spline dual
# (integer numerators over 128); synthesis lowpass is the 2-tap Haar kernel.
# Correctness is pinned by the perfect-reconstruction tests, not by the table.
_DEC_LO = np.array([3, -3, -22, 22, 128, 128, 22, -22, -3, 3], dtype=np.float64) / (128 * _SQRT2)
_REC_LO = np.zeros(10, dtype=np.float64)
_REC_LO[4:6] = 1.0 / _SQRT2
_ALT = (-1.0) ** np.arange(10)
_DEC_HI = _ALT * _REC_LO
_REC_HI = _ALT * _DEC_LO

# Peak of g(xi) = xi*(1+xi)*exp(-xi^2/2): positive root of 1 + 2x - x^2 - x^3.
HHAT_XI_PEAK = 1.246979603717467


@dataclass(frozen=True)
class Signal:
    """A uniformly sampled real-valued time series."""

    samples: np.ndarray
    sample_rate_hz: float

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=np.float64)
        if samples.ndim != 1 or samples.size < 1:
            raise ValueError("signal must be a non-empty 1-D array")
        if not np.all(np.isfinite(samples)):
            raise ValueError("signal contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")
        object.__setattr__(self, "samples", samples)

    def __len__(self) -> int:
        return self.samples.size


@dataclass(frozen=True)
class HermitianHat:
    """Analytic hat-shaped wavelet defined by its frequency window.

    The response is g(xi) = xi*(1+xi)*exp(-xi^2/2) on the shifted axis
    xi = omega - mu and exactly zero for xi < 0, which makes the wavelet
    analytic and admissible. ``mu`` sets where the passband opens; the
    response peaks at omega = mu + HHAT_XI_PEAK.
    """

    mu: float = 5.0

    def freq_response(self, omega) -> np.ndarray:
        xi = np.asarray(omega, dtype=np.float64) - self.mu
        g = xi * (1.0 + xi) * np.exp(-0.5 * xi * xi)
        norm = 2.0 / math.sqrt(5.0) / math.pi**0.25
        return np.where(xi >= 0.0, norm * g, 0.0)

    @property
    def peak_omega(self) -> float:
        return self.mu + HHAT_XI_PEAK


@dataclass(frozen=True)
class Morlet:
    """Morlet wavelet with the admissibility correction term.

    freq response: pi^(-1/4) * (exp(-(omega-w0)^2/2) - K*exp(-omega^2/2))
    with K = exp(-w0^2/2), which cancels exactly at omega = 0.
    """

    omega0: float = 6.0

    def freq_response(self, omega) -> np.ndarray:
        om = np.asarray(omega, dtype=np.float64)
        k = math.exp(-0.5 * self.omega0 * self.omega0)
        return math.pi**-0.25 * (np.exp(-0.5 * (om - self.omega0) ** 2) - k * np.exp(-0.5 * om * om))

    @property
    def peak_omega(self) -> float:
        # correction term shifts the peak below omega0 by O(exp(-w0^2/2))
        return self.omega0


MotherWavelet = HermitianHat | Morlet


def wavelet_freq_response(wavelet: MotherWavelet, omega) -> np.ndarray:
    """Frequency-domain window of the mother wavelet at angular frequency omega."""
    return wavelet.freq_response(omega)


@dataclass(frozen=True)
class ScaleGrid:
    """Log-spaced dyadic scale grid with ``n_voices`` scales per octave."""

    a_min: float
    a_max: float
    n_voices: int = 8
    scales: np.ndarray = field(init=False)

    def __post_init__(self):
        if self.a_min <= 0 or self.a_max <= self.a_min:
            raise ValueError("require 0 < a_min < a_max")
        if self.n_voices < 1:
            raise ValueError("n_voices must be >= 1")
        n_octaves = math.log2(self.a_max / self.a_min)
        count = int(math.floor(self.n_voices * n_octaves)) + 1
        if count < 2:
            raise ValueError("grid spans fewer than 2 scales")
        j = np.arange(count, dtype=np.float64)
        object.__setattr__(self, "scales", self.a_min * 2.0 ** (j / self.n_voices))

    def __len__(self) -> int:
        return self.scales.size

    @classmethod
    def for_signal_length(
        cls,
        n_samples: int,
        wavelet: MotherWavelet,
        n_voices: int = 8,
        min_period: float = 2.0,
        max_period: float | None = None,
    ) -> "ScaleGrid":
        """Grid whose equivalent periods span ``min_period`` .. ``n_samples/2``.

        The scale of period p is a = p * peak_omega / (2*pi), so a sinusoid of
        period p lights up the row nearest that scale.
        """
        if max_period is None:
            max_period = n_samples / 2.0
        if max_period <= min_period:
            raise ValueError("max_period must exceed min_period")
        factor = wavelet.peak_omega / (2.0 * math.pi)
        return cls(a_min=min_period * factor, a_max=max_period * factor, n_voices=n_voices)

    def scale_for_frequency(self, freq_hz: float, sample_rate_hz: float, wavelet: MotherWavelet) -> float:
        """Scale at which the wavelet window peaks for a given physical frequency."""
        omega_digital = 2.0 * math.pi * freq_hz / sample_rate_hz
        return wavelet.peak_omega / omega_digital

    def nearest_index(self, scale: float) -> int:
        return int(np.argmin(np.abs(np.log(self.scales) - math.log(scale))))


@dataclass(frozen=True)
class CwtCoefficients:
    """Complex CWT matrix: rows are scales, columns are time shifts."""

    values: np.ndarray  # complex128, shape (n_scales, n_samples)
    scales: np.ndarray
    sample_times: np.ndarray

    def magnitude(self) -> np.ndarray:
        return np.abs(self.values)


def _fold(h: np.ndarray, n: int) -> np.ndarray:
    """Periodize a filter to length n (taps beyond n wrap, not truncate)."""
    if h.size <= n:
        return h
    out = np.zeros(n)
    for i, v in enumerate(h):
        out[i % n] += v
    return out


def _circ_corr(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    n = x.size
    return np.fft.irfft(np.fft.rfft(x) * np.conj(np.fft.rfft(_fold(h, n), n)), n)


def _circ_conv(x: np.ndarray, h: np.ndarray) -> np.ndarray:
    n = x.size
    return np.fft.irfft(np.fft.rfft(x) * np.fft.rfft(_fold(h, n), n), n)


def dwt_forward(samples: np.ndarray, levels: int) -> tuple[np.ndarray, list[np.ndarray], list[int]]:
    """Multi-level periodized bior1.5 analysis.

    Odd-length inputs are edge-padded by one sample per level before the
    split; the per-level pre-pad lengths are returned so the inverse can
    crop back exactly.
    """
    x = np.asarray(samples, dtype=np.float64)
    if levels < 1:
        raise ValueError("levels must be >= 1")
    if 2**levels > x.size:
        raise ValueError(f"signal of length {x.size} too short for {levels} levels")
    details: list[np.ndarray] = []
    lengths: list[int] = []
    approx = x
    for _ in range(levels):
        lengths.append(approx.size)
        if approx.size % 2:
            approx = np.concatenate([approx, approx[-1:]])
        a = _circ_corr(approx, _DEC_LO)[::2]
        d = _circ_corr(approx, _DEC_HI)[::2]
        details.append(d)
        approx = a
    return approx, details, lengths


def dwt_inverse(approx: np.ndarray, details: list[np.ndarray], lengths: list[int]) -> np.ndarray:
    """Inverse of :func:`dwt_forward`; exact up to floating-point roundoff."""
    x = np.asarray(approx, dtype=np.float64)
    for d, n_orig in zip(reversed(details), reversed(lengths)):
        n = 2 * d.size
        ua = np.zeros(n)
        ua[::2] = x
        ud = np.zeros(n)
        ud[::2] = d
        x = _circ_conv(ua, _REC_LO) + _circ_conv(ud, _REC_HI)
        x = x[:n_orig]
    return x


def dwt_denoise(signal: Signal, threshold: float = 0.5, levels: int = 4) -> Signal:
    """Hard-threshold wavelet denoising with the bior1.5 filter bank.

    Detail coefficients with magnitude below ``threshold`` are zeroed at
    every level; with threshold 0 the round trip is the identity up to
    reconstruction error.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    approx, details, lengths = dwt_forward(signal.samples, levels)
    if threshold > 0:
        details = [np.where(np.abs(d) < threshold, 0.0, d) for d in details]
    out = dwt_inverse(approx, details, lengths)
    return Signal(out, signal.sample_rate_hz)


def cwt(signal: Signal, wavelet: MotherWavelet, grid: ScaleGrid) -> CwtCoefficients:
    """Continuous wavelet transform of a signal over a scale grid.

    Each row is the cross-correlation of the signal with the conjugated,
    1/sqrt(a)-normalized dilated wavelet at every integer shift, computed as
    ifft(fft(x_padded) * conj(psi_hat(a*omega)) * sqrt(a)). The signal is
    reflect-padded on both sides by at least its own length, out to a
    power-of-two FFT size, then cropped back. Beyond keeping wrap-around off
    the interior, the radix-2 length makes the transform of a constant
    exactly zero: the FFT of a constant has exact zeros off the DC bin and
    psi_hat(0) == 0 kills the DC bin itself.
    """
    x = signal.samples
    n = x.size
    if n < 8:
        raise ValueError("cwt requires at least 8 samples")
    m = 1 << (3 * n - 2).bit_length()
    pad = (m - n) // 2
    xp = np.pad(x, (pad, m - n - pad), mode="reflect")
    spectrum = np.fft.fft(xp)
    omega = 2.0 * math.pi * np.fft.fftfreq(m)
    scales = grid.scales
    # (n_scales, m) window matrix; analytic wavelets zero the negative bins
    windows = wavelet.freq_response(scales[:, None] * omega[None, :])
    rows = np.fft.ifft(spectrum[None, :] * np.conj(windows) * np.sqrt(scales)[:, None], axis=1)
    values = rows[:, pad:pad + n]
    times = np.arange(n, dtype=np.float64) / signal.sample_rate_hz
    return CwtCoefficients(values=values, scales=scales.copy(), sample_times=times)
