"""Shared numeric primitives: DFT/IDFT, Kaiser FIR design, streaming FIR,
normalized sliding cross-correlation, and power helpers.

Conventions used package-wide:
  * DFT is unnormalized forward, 1/N inverse (numpy convention), so
    idft(dft(x)) == x and Parseval reads sum|x|^2 == sum|X|^2 / N.
  * Sample streams carry a global start index; every timing quantity in the
    receive chain is expressed on that shared counter.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import signal as _sig


class ConfigError(ValueError):
    """Invalid static configuration (sizes, orders, roots)."""


class DesignError(ValueError):
    """A filter design cannot meet its response specification."""


@dataclass(frozen=True)
class SampleStream:
    """Complex baseband samples plus the global index of samples[0].

    The array is treated as immutable once wrapped. All cross-stream
    arithmetic (channel sums, cancellation taps) aligns on global indices.
    """

    samples: np.ndarray
    start: int = 0

    def __post_init__(self):
        object.__setattr__(self, "samples", np.asarray(self.samples, dtype=np.complex128))

    def __len__(self) -> int:
        return len(self.samples)

    @property
    def end(self) -> int:
        """One past the last global index."""
        return self.start + len(self.samples)

    def power(self) -> float:
        """Mean power per complex sample."""
        if len(self.samples) == 0:
            return 0.0
        return float(np.mean(np.abs(self.samples) ** 2))

    def view(self, start: int, length: int) -> np.ndarray:
        """Samples for global index range [start, start+length); zero-padded
        outside the stream extent."""
        out = np.zeros(length, dtype=np.complex128)
        lo = max(start, self.start)
        hi = min(start + length, self.end)
        if hi > lo:
            out[lo - start : hi - start] = self.samples[lo - self.start : hi - self.start]
        return out

    def delayed(self, delay: int) -> "SampleStream":
        return SampleStream(self.samples, self.start + delay)

    def scaled(self, g: complex) -> "SampleStream":
        return SampleStream(self.samples * g, self.start)


def add_streams(*streams: SampleStream) -> SampleStream:
    """Sum streams on the global index axis (union extent, zero-padded)."""
    streams = [s for s in streams if len(s)]
    if not streams:
        return SampleStream(np.zeros(0))
    start = min(s.start for s in streams)
    end = max(s.end for s in streams)
    acc = np.zeros(end - start, dtype=np.complex128)
    for s in streams:
        acc[s.start - start : s.end - start] += s.samples
    return SampleStream(acc, start)


# ---------------------------------------------------------------------------
# DFT

_ALLOWED_MIN_SIZES = (64, 1024, 2048)


def _check_size(n: int, size: int):
    if size < 1 or (size & (size - 1)) != 0:
        raise ConfigError(f"DFT size must be a power of two, got {size}")
    if n != size:
        raise ConfigError(f"input length {n} does not match DFT size {size}")


def dft(x: np.ndarray, size: int) -> np.ndarray:
    """Unnormalized forward DFT of length `size` (power of two)."""
    x = np.asarray(x, dtype=np.complex128)
    _check_size(len(x), size)
    return np.fft.fft(x)


def idft(x: np.ndarray, size: int) -> np.ndarray:
    """Inverse DFT with the 1/N factor, so idft(dft(x), n) == x."""
    x = np.asarray(x, dtype=np.complex128)
    _check_size(len(x), size)
    return np.fft.ifft(x)


# ---------------------------------------------------------------------------
# FIR design and application

@dataclass(frozen=True)
class FirSpec:
    cutoff_hz: float
    stopband_atten_db: float
    passband_ripple_db: float
    sample_rate_hz: float
    num_taps: int = 255

    def __post_init__(self):
        if not self.cutoff_hz < self.sample_rate_hz / 2:
            raise ConfigError("cutoff_hz must be below Nyquist")
        if self.num_taps < 3 or self.num_taps % 2 == 0:
            raise ConfigError("num_taps must be odd and >= 3 (linear phase)")


@dataclass(frozen=True)
class FirFilter:
    taps: np.ndarray
    group_delay_samples: int
    stopband_edge_hz: float = 0.0


# Kaiser designs at exactly the requested attenuation measure a shade under it
# on a dense grid; design with headroom, verify against the raw spec.
_DESIGN_MARGIN_DB = 2.0


def design_lowpass(spec: FirSpec) -> FirFilter:
    """Windowed-sinc lowpass via Kaiser closed forms.

    The transition width follows from the tap count and the attenuation
    target; the stopband edge is cutoff + transition width. The measured
    response (4096-point grid) must meet all three spec numbers or a
    DesignError naming the violated constraint is raised.
    """
    atten = spec.stopband_atten_db + _DESIGN_MARGIN_DB
    beta = _sig.kaiser_beta(atten)
    # Kaiser tap-count relation solved for the transition width
    width_hz = (atten - 7.95) / (2.285 * (spec.num_taps - 1)) * spec.sample_rate_hz / (2 * np.pi)
    stop_edge = spec.cutoff_hz + width_hz
    if stop_edge >= spec.sample_rate_hz / 2:
        raise DesignError(
            f"num_taps={spec.num_taps} puts the stopband edge "
            f"({stop_edge:.0f} Hz) at or beyond Nyquist"
        )
    taps = _sig.firwin(
        spec.num_taps,
        spec.cutoff_hz + width_hz / 2,
        window=("kaiser", beta),
        fs=spec.sample_rate_hz,
    )

    freqs, h = _sig.freqz(taps, worN=4096, fs=spec.sample_rate_hz)
    mag_db = 20 * np.log10(np.maximum(np.abs(h), 1e-300))
    pass_mag = mag_db[freqs <= spec.cutoff_hz]
    stop_mag = mag_db[freqs >= stop_edge]
    if np.max(np.abs(pass_mag)) > spec.passband_ripple_db:
        raise DesignError(
            f"passband ripple {np.max(np.abs(pass_mag)):.3f} dB exceeds "
            f"{spec.passband_ripple_db} dB for num_taps={spec.num_taps}"
        )
    if len(stop_mag) and np.max(stop_mag) > -spec.stopband_atten_db:
        raise DesignError(
            f"stopband attenuation {-np.max(stop_mag):.2f} dB misses "
            f"{spec.stopband_atten_db} dB for num_taps={spec.num_taps}"
        )
    return FirFilter(taps=taps, group_delay_samples=(spec.num_taps - 1) // 2,
                     stopband_edge_hz=stop_edge)


def fir_apply(f: FirFilter, x: SampleStream) -> SampleStream:
    """Causal convolution; output start index shifted by the group delay so
    downstream sync indices refer to unfiltered timing."""
    if len(x) == 0:
        return SampleStream(np.zeros(0), x.start - f.group_delay_samples)
    y = _sig.lfilter(f.taps, [1.0], x.samples)
    return SampleStream(y, x.start - f.group_delay_samples)


# ---------------------------------------------------------------------------
# Sliding correlation

def sliding_xcorr(x: SampleStream | np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Energy-normalized magnitude-squared sliding correlation.

    out[n] = |sum_k x[n+k] conj(ref[k])|^2 / (sum|ref|^2 * sum_k |x[n+k]|^2),
    bounded in [0, 1] by Cauchy-Schwarz; lags with zero window energy map
    to 0. Lag n refers to global index x.start + n when x is a stream.
    """
    ref = np.asarray(ref, dtype=np.complex128)
    if len(ref) < 1:
        raise ConfigError("reference must have length >= 1")
    data = x.samples if isinstance(x, SampleStream) else np.asarray(x, dtype=np.complex128)
    if len(data) < len(ref):
        return np.zeros(0)
    num = np.abs(_sig.fftconvolve(data, np.conj(ref[::-1]), mode="valid")) ** 2
    csum = np.concatenate([[0.0], np.cumsum(np.abs(data) ** 2)])
    win_energy = np.maximum(csum[len(ref):] - csum[: -len(ref)], 0.0)
    ref_energy = float(np.sum(np.abs(ref) ** 2))
    out = np.zeros_like(num)
    ok = win_energy > 0.0
    out[ok] = num[ok] / (ref_energy * win_energy[ok])
    np.minimum(out, 1.0, out=out)
    return out


def db(power_ratio: float) -> float:
    return 10.0 * np.log10(power_ratio)
