"""Everything between one node's DAC and the other's ADC, plus the
self-interference loop: hardware impairments, multipath/delay channels,
passive isolation, and the single-tap active analog canceller.

Noise is injected exactly once, at the receiver input after the analog
cancellation sum; impairment and channel application are stateless given an
explicit RNG, so parallel scenario sweeps stay reproducible.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import ConfigError, SampleStream, add_streams


class TuningError(ValueError):
    """Active-tap tuning received an unusable probe."""


# ---------------------------------------------------------------------------
# Impairments (DAC quantization -> I/Q imbalance -> gain/phase offset -> PA)

@dataclass(frozen=True)
class PaModel:
    """Memoryless third-order polynomial: y = a1*x + a3*x*|x|^2."""
    a1: complex = 1.0
    a3: complex = 0.0


@dataclass(frozen=True)
class ImpairmentConfig:
    pa_enabled: bool = False
    pa: PaModel = field(default_factory=PaModel)
    iq_enabled: bool = False
    iq_gain_mismatch_db: float = 0.0
    iq_phase_mismatch_deg: float = 0.0
    offset_enabled: bool = False
    tx_gain_db: float = 0.0
    tx_phase_deg: float = 0.0
    dac_enabled: bool = False
    dac_bits: int = 16
    dac_full_scale: float | None = None  # None: auto-scale to the stream peak
    adc_enabled: bool = False
    adc_bits: int = 14
    adc_full_scale: float | None = None


def quantize(x: np.ndarray, bits: int, full_scale: float | None) -> np.ndarray:
    """Uniform mid-tread quantization of both rails, clipped at full scale."""
    if full_scale is None:
        peak = max(float(np.max(np.abs(x.real))), float(np.max(np.abs(x.imag))), 1e-300)
        full_scale = peak
    step = 2.0 * full_scale / (1 << bits)
    q = lambda v: np.clip(np.round(v / step) * step, -full_scale, full_scale)
    return q(x.real) + 1j * q(x.imag)


def _iq_imbalance(x: np.ndarray, gain_db: float, phase_deg: float) -> np.ndarray:
    # y = K1*x + K2*conj(x); off (0 dB, 0 deg) -> K1=1, K2=0
    g = 10.0 ** (gain_db / 20.0) * np.exp(1j * np.deg2rad(phase_deg))
    k1 = (1.0 + g) / 2.0
    k2 = (1.0 - g) / 2.0
    return k1 * x + k2 * np.conj(x)


def apply_impairments(cfg: ImpairmentConfig, x: SampleStream) -> SampleStream:
    """Transmit-side chain in order: DAC quantization, I/Q imbalance,
    gain/phase offset, PA polynomial. Every stage individually bypassable;
    all off is the identity, sample-exact."""
    y = x.samples
    if cfg.dac_enabled:
        y = quantize(y, cfg.dac_bits, cfg.dac_full_scale)
    if cfg.iq_enabled:
        y = _iq_imbalance(y, cfg.iq_gain_mismatch_db, cfg.iq_phase_mismatch_deg)
    if cfg.offset_enabled:
        y = y * (10.0 ** (cfg.tx_gain_db / 20.0) * np.exp(1j * np.deg2rad(cfg.tx_phase_deg)))
    if cfg.pa_enabled:
        y = cfg.pa.a1 * y + cfg.pa.a3 * y * np.abs(y) ** 2
    if y is x.samples:
        return x
    return SampleStream(y, x.start)


def adc_quantize(cfg: ImpairmentConfig, x: SampleStream) -> SampleStream:
    """Receiver-side converter model (applied after the analog sum)."""
    if not cfg.adc_enabled:
        return x
    return SampleStream(quantize(x.samples, cfg.adc_bits, cfg.adc_full_scale), x.start)


# ---------------------------------------------------------------------------
# Channels

@dataclass(frozen=True)
class ChannelRealization:
    """Sparse tapped delay line plus AWGN variance per complex sample."""
    taps: tuple  # ((delay_samples, complex_gain), ...)
    noise_power: float = 0.0

    def __post_init__(self):
        delays = [d for d, _ in self.taps]
        if any(d < 0 for d in delays):
            raise ConfigError("tap delays must be non-negative")
        if sorted(delays) != delays or len(set(delays)) != len(delays):
            raise ConfigError("tap delays must be strictly increasing")

    def scaled(self, g: float) -> "ChannelRealization":
        return ChannelRealization(tuple((d, c * g) for d, c in self.taps), self.noise_power)

    def max_delay(self) -> int:
        return max((d for d, _ in self.taps), default=0)

    def freq_response(self, bins: np.ndarray, fft_size: int) -> np.ndarray:
        """H[k] = sum_taps g * exp(-j 2 pi k d / N) on the given signed bins."""
        h = np.zeros(len(bins), dtype=np.complex128)
        for d, g in self.taps:
            h += g * np.exp(-2j * np.pi * bins * d / fft_size)
        return h


def apply_channel(ch: ChannelRealization, x: SampleStream,
                  rng: np.random.Generator | None = None) -> SampleStream:
    """y[n] = sum_taps g x[n-d] + w[n]; output extends to cover the last tap."""
    out = add_streams(*(x.delayed(d).scaled(g) for d, g in ch.taps)) \
        if ch.taps else SampleStream(np.zeros(len(x)), x.start)
    if ch.noise_power > 0.0:
        if rng is None:
            raise ConfigError("noisy channel application requires an explicit rng")
        n = len(out)
        w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(ch.noise_power / 2)
        out = SampleStream(out.samples + w, out.start)
    return out


def awgn(x: SampleStream, noise_power: float, rng: np.random.Generator) -> SampleStream:
    if noise_power <= 0.0:
        return x
    n = len(x)
    w = (rng.standard_normal(n) + 1j * rng.standard_normal(n)) * np.sqrt(noise_power / 2)
    return SampleStream(x.samples + w, x.start)


# ---------------------------------------------------------------------------
# Analog cancellation

@dataclass(frozen=True)
class ActiveTap:
    attenuation_db: float
    phase_shift_rad: float
    delay_samples: int

    @property
    def gain(self) -> complex:
        return 10.0 ** (-self.attenuation_db / 20.0) * np.exp(1j * self.phase_shift_rad)


@dataclass(frozen=True)
class AnalogCancelConfig:
    passive_isolation_db: float = 42.0
    active_enabled: bool = False
    active_tap: ActiveTap | None = None

    def __post_init__(self):
        if self.passive_isolation_db < 0:
            raise ConfigError("passive isolation must be >= 0 dB")


def passive_gain(cfg: AnalogCancelConfig) -> float:
    """Amplitude scale of the passive isolation stage."""
    return 10.0 ** (-cfg.passive_isolation_db / 20.0)


def analog_cancel(cfg: AnalogCancelConfig, si_at_rx: SampleStream,
                  tx_ref: SampleStream) -> SampleStream:
    """Subtract the tuned tap replica from the (already passively isolated)
    self-interference; pass-through when the active stage is off."""
    if not cfg.active_enabled:
        return si_at_rx
    if cfg.active_tap is None:
        raise ConfigError("active stage enabled without a tuned tap")
    tap = cfg.active_tap
    replica = tx_ref.delayed(tap.delay_samples).scaled(tap.gain)
    rep = replica.view(si_at_rx.start, len(si_at_rx))
    return SampleStream(si_at_rx.samples - rep, si_at_rx.start)


def tune_active_tap(tx_ref: SampleStream, si_at_rx: SampleStream,
                    max_delay: int = 64) -> ActiveTap:
    """Exhaustive integer-delay search with closed-form least-squares gain.

    For each candidate delay the optimal complex gain is
    <si, tx_d> / <tx_d, tx_d>; the (attenuation, phase, delay) triple with
    the smallest residual power wins. Optimal for a single-tap loop; on
    multi-tap loops the residual plateaus at the untouched taps' power.
    """
    if si_at_rx.power() == 0.0 or tx_ref.power() == 0.0:
        raise TuningError("zero-energy probe")
    best = None
    y = si_at_rx.samples
    for d in range(max_delay + 1):
        x = tx_ref.view(si_at_rx.start - d, len(si_at_rx))
        denom = np.vdot(x, x).real
        if denom <= 0.0:
            continue
        g = np.vdot(x, y) / denom
        resid = float(np.sum(np.abs(y - g * x) ** 2))
        if best is None or resid < best[0]:
            best = (resid, d, g)
    if best is None:
        raise TuningError("probe does not overlap the reference at any delay")
    _, d, g = best
    mag = abs(g)
    if mag <= 0.0:
        raise TuningError("least-squares gain collapsed to zero")
    return ActiveTap(
        attenuation_db=-20.0 * np.log10(mag),
        phase_shift_rad=float(np.angle(g)),
        delay_samples=d,
    )
