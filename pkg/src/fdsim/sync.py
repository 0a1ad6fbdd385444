"""Receiver front blocks: timing synchronization for the desired link and
the self-interference loop (orthogonal-root ZC correlation after the 1.4 MHz
lowpass), and least-squares channel estimation on the two disjoint
reference-symbol patterns with linear frequency interpolation.

Synchronization is two-stage:
  1. Coarse: lowpass the capture, slide the energy-normalized correlator
     against the time-domain sync templates of both roots, take the argmax
     over the first-occurrence window. The reported index points at the
     first sample of the OFDM symbol following the sync symbol.
  2. Integer refinement: demodulate reference-bearing symbols anchored at
     the coarse index and regress the per-subcarrier phase ramp with a
     1 -> 8 -> 64 pair-lag ladder; round to the nearest sample. The coarse
     argmax alone is noise-limited to ~1 sample of jitter; the wideband
     reference ramp pins the integer exactly.

The two sync occurrences per frame are identical, so absolute frame phase is
ambiguous from the sync sequence alone (no secondary sequence here);
scenarios start each node's stream at its frame 0 so the first detected
occurrence fixes the phase.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .dsp import FirFilter, FirSpec, SampleStream, design_lowpass, fir_apply, sliding_xcorr
from .waveform import (
    NODE_ROOTS,
    SYMBOLS_PER_FRAME,
    FrameConfig,
    ResourceGrid,
    RsPattern,
    pss_time_template,
    rs_pattern,
    rs_values,
)

DETECTION_THRESHOLD = 0.02  # floor on the normalized correlation peak
_REFINE_LAGS = (1, 8, 64)   # pair lags (in RS-position units) of the ramp ladder
_REFINE_MAX_SYMBOLS = 54


class SyncError(RuntimeError):
    """Neither correlation peak cleared the detection threshold."""

    def __init__(self, desired_peak: float, si_peak: float):
        super().__init__(
            f"sync failed: best peaks desired={desired_peak:.4g} si={si_peak:.4g}")
        self.desired_peak = desired_peak
        self.si_peak = si_peak


class EstimationError(ValueError):
    """Channel estimation lacks usable reference cells."""


@dataclass(frozen=True)
class SyncResult:
    desired_start_index: int
    si_start_index: int
    desired_peak: float
    si_peak: float
    threshold: float = DETECTION_THRESHOLD

    @property
    def desired_detected(self) -> bool:
        return self.desired_peak >= self.threshold

    @property
    def si_detected(self) -> bool:
        return self.si_peak >= self.threshold


@lru_cache(maxsize=8)
def sync_lowpass(sample_rate_hz: float) -> FirFilter:
    """The sync-path lowpass: 1.4 MHz cutoff, 50 dB stopband, 0.1 dB ripple."""
    return design_lowpass(FirSpec(
        cutoff_hz=1.4e6,
        stopband_atten_db=50.0,
        passband_ripple_db=0.1,
        sample_rate_hz=sample_rate_hz,
        num_taps=255,
    ))


_FOLD_GUARD = 64  # phase band around the window boundary that needs the
                  # refinement stage to disambiguate the occurrence


def _coarse_index(cfg: FrameConfig, filtered: SampleStream, rx_start: int,
                  template: np.ndarray) -> tuple[list[int], float]:
    """Correlation peak folded onto the half-frame phase axis.

    The sync symbol repeats every half-frame with identical content, so the
    lag axis is collapsed modulo the period (max across periods) before the
    argmax; the winning phase maps to the first occurrence, whose CP starts
    in [5L, half + 5L) relative to the capture start. Data around the sync
    symbol can tilt the discrete peak by a sample or two; near the phase
    boundary that tilt is ambiguous with a frame landing at the very end of
    the window, so both candidate anchors are returned for the refinement
    stage to arbitrate. Anchors point at the symbol after the sync symbol.
    """
    L = cfg.symbol_len
    half = cfg.half_frame_len
    span = int(2.2 * half)
    region = filtered.view(rx_start, span + len(template))
    corr = sliding_xcorr(region, template)
    if len(corr) == 0:
        return [rx_start], 0.0
    folded = np.zeros(min(half, len(corr)))
    for j in range(0, len(corr), half):
        chunk = corr[j : j + half]
        np.maximum(folded[: len(chunk)], chunk, out=folded[: len(chunk)])
    phase = int(np.argmax(folded))
    if phase >= 5 * L + _FOLD_GUARD:
        firsts = [phase]
    elif phase < 5 * L - _FOLD_GUARD:
        firsts = [phase + half]
    else:
        # could be a tilted peak of a frame phase near 0, or a frame landing
        # at the very end of the window: both anchors are a priori valid
        firsts = [phase, phase + half]
    return [rx_start + f + L for f in firsts], float(folded[phase])


def _ramp_delta(cfg: FrameConfig, rx: SampleStream, anchor: int,
                pattern: RsPattern, node_id: int) -> tuple[int, float]:
    """Integer timing correction from reference-symbol phase ramps.

    `anchor` is the coarse estimate of frame symbol 6. Demodulates subsequent
    reference-bearing symbols and regresses the frequency-domain ramp; a
    residual delay of delta samples appears as exp(-j 2 pi k delta / N).

    Returns (delta, quality): quality is the coherence of the adjacent-pair
    product in [0, 1]. A wrong anchor hypothesis (wrong pilot values, or a
    window over silence) destroys the coherence, so the caller can arbitrate
    between candidate anchors.
    """
    used = cfg.used_bins()
    positions = pattern.positions(cfg.used_subcarriers)
    bins = used[positions] % cfg.fft_size
    rows = []
    for i in range(_REFINE_MAX_SYMBOLS):
        sym = 6 + i
        if sym >= SYMBOLS_PER_FRAME or not pattern.has_rs(sym):
            continue
        w0 = anchor + i * cfg.symbol_len
        if w0 < rx.start or w0 + cfg.symbol_len > rx.end:
            continue
        x = rx.view(w0 + cfg.cp_len, cfg.fft_size)
        Y = np.fft.fft(x)
        rows.append(Y[bins] * np.conj(rs_values(node_id, sym, len(positions))))
    if not rows:
        return 0, 0.0
    H = np.asarray(rows)
    delta = 0.0
    quality = 0.0
    npos = H.shape[1]
    for stage, lag in enumerate(_REFINE_LAGS):
        if lag >= npos:
            break
        rot = np.exp(2j * np.pi * np.arange(npos) * pattern.subcarrier_stride * delta
                     / cfg.fft_size)
        Hr = H * rot
        pairs = Hr[:, lag:] * np.conj(Hr[:, :-lag])
        prod = np.sum(pairs)
        norm = np.sum(np.abs(pairs))
        if stage == 0:
            quality = float(abs(prod) / norm) if norm > 0 else 0.0
        if prod == 0:
            break
        step = 2 * np.pi * pattern.subcarrier_stride * lag / cfg.fft_size
        delta += -float(np.angle(prod)) / step
    return int(np.round(delta)), quality


def synchronize(cfg: FrameConfig, rx: SampleStream, own_root: int | None = None,
                peer_root: int | None = None, threshold: float = DETECTION_THRESHOLD,
                refine: bool = True) -> SyncResult:
    """Locate the desired-link and self-interference frame timings.

    The desired index correlates against the peer's root, the SI index
    against the node's own root. Raises SyncError when both peaks miss the
    threshold; a single-sided miss is reported through the peak values.
    """
    own_root = cfg.root if own_root is None else own_root
    peer_root = cfg.peer_root if peer_root is None else peer_root
    if len(rx) < cfg.half_frame_len:
        raise SyncError(0.0, 0.0)

    lpf = sync_lowpass(cfg.sample_rate_hz)
    filtered = fir_apply(lpf, rx)

    indices = {}
    peaks = {}
    for label, root in (("desired", peer_root), ("si", own_root)):
        template = pss_time_template(cfg, root)
        candidates, peak = _coarse_index(cfg, filtered, rx.start, template)
        idx = candidates[0]
        if refine and peak >= threshold:
            node_id = NODE_ROOTS.index(root)
            pattern = rs_pattern(node_id)
            best_quality = -1.0
            for cand in candidates:
                delta, quality = _ramp_delta(cfg, rx, cand, pattern, node_id)
                if abs(delta) > 2:
                    # large coarse error: re-anchor and regress once more
                    d2, quality = _ramp_delta(cfg, rx, cand + delta, pattern, node_id)
                    delta += d2
                if quality > best_quality:
                    best_quality = quality
                    idx = cand + delta
        indices[label] = idx
        peaks[label] = peak

    if peaks["desired"] < threshold and peaks["si"] < threshold:
        raise SyncError(peaks["desired"], peaks["si"])
    return SyncResult(
        desired_start_index=indices["desired"],
        si_start_index=indices["si"],
        desired_peak=peaks["desired"],
        si_peak=peaks["si"],
        threshold=threshold,
    )


# ---------------------------------------------------------------------------
# Channel estimation

@dataclass(frozen=True)
class ChannelEstimate:
    """Per-used-subcarrier complex gains; 1-D (frame average) or 2-D
    (one row per grid symbol, zero-order hold between RS symbols)."""

    kind: str  # "inter_node" | "intra_node"
    h: np.ndarray

    def at(self, symbol: int) -> np.ndarray:
        if self.h.ndim == 1:
            return self.h
        return self.h[min(symbol, self.h.shape[0] - 1)]


def ls_estimate_rs(grid_rx: ResourceGrid, pattern: RsPattern,
                   symbol_offset: int = 0) -> dict[int, np.ndarray]:
    """Scalar least squares at the pattern's reference cells.

    Hhat[k] = Y[k] / X_rs[k] per cell (pilots are unit modulus, so this is
    exact at zero noise). `symbol_offset` maps grid symbol t to the
    transmitter's frame symbol t + symbol_offset, which shifts both the RS
    schedule and the expected pilot values (used for the misaligned
    self-interference pattern).

    Returns {grid symbol: estimates at the pattern's RS positions}.
    """
    cfg = grid_rx.cfg
    used = cfg.used_bins()
    positions = pattern.positions(cfg.used_subcarriers)
    rows = used[positions] + cfg.fft_size // 2
    out = {}
    for t in range(grid_rx.n_symbols):
        m = t + symbol_offset
        if m < 0:
            continue
        fs = m % SYMBOLS_PER_FRAME
        if not pattern.has_rs(fs):
            continue
        ref = rs_values(pattern.node_id, fs, len(positions))
        out[t] = grid_rx.values[rows, t] / ref
    return out


def interpolate_linear(sparse: np.ndarray, pattern: RsPattern,
                       cfg: FrameConfig) -> np.ndarray:
    """Linear interpolation between adjacent RS subcarriers over the used
    band, constant extension outside the RS span."""
    positions = pattern.positions(cfg.used_subcarriers)
    if len(positions) < 2:
        raise EstimationError("need at least 2 reference cells to interpolate")
    axis = np.arange(cfg.used_subcarriers)
    return (np.interp(axis, positions, sparse.real)
            + 1j * np.interp(axis, positions, sparse.imag))


def estimate_pattern(grid_rx: ResourceGrid, pattern: RsPattern, kind: str,
                     symbol_offset: int = 0, time_mode: str = "average") -> ChannelEstimate:
    """LS at the pattern's cells + linear interpolation across frequency.

    time_mode "average" collapses all RS-bearing symbols into one frame
    average (static channels); "hold" keeps per-symbol estimates with
    zero-order hold between RS symbols.
    """
    sparse = ls_estimate_rs(grid_rx, pattern, symbol_offset)
    if not sparse:
        raise EstimationError(f"no reference cells for {kind} in the grid")
    cfg = grid_rx.cfg
    if time_mode == "average":
        mean = np.mean(np.stack(list(sparse.values())), axis=0)
        return ChannelEstimate(kind=kind, h=interpolate_linear(mean, pattern, cfg))
    if time_mode == "hold":
        h = np.zeros((grid_rx.n_symbols, cfg.used_subcarriers), dtype=np.complex128)
        current = None
        for t in range(grid_rx.n_symbols):
            if t in sparse:
                current = interpolate_linear(sparse[t], pattern, cfg)
            if current is None:
                # symbols before the first RS symbol reuse it once known
                continue
            h[t] = current
        first = min(sparse)
        h[:first] = h[first]
        return ChannelEstimate(kind=kind, h=h)
    raise ValueError(f"unknown time_mode {time_mode!r}")


def estimate_both(grid_rx: ResourceGrid, cfg: FrameConfig,
                  own_symbol_offset: int = 0,
                  time_mode: str = "average") -> tuple[ChannelEstimate, ChannelEstimate]:
    """(inter_node, intra_node) estimates from the two disjoint patterns.

    The inter-node estimate reads the peer's cells (grid is aligned to the
    desired timing); the intra-node estimate reads the node's own cells with
    the counter offset applied. Window misalignment below the CP shows up as
    a phase ramp and is deliberately absorbed into the intra estimate.
    """
    inter = estimate_pattern(grid_rx, rs_pattern(1 - cfg.node_id), "inter_node",
                             symbol_offset=0, time_mode=time_mode)
    intra = estimate_pattern(grid_rx, rs_pattern(cfg.node_id), "intra_node",
                             symbol_offset=own_symbol_offset, time_mode=time_mode)
    return inter, intra
