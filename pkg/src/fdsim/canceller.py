"""Frequency-domain digital self-interference cancellation with
counter-based symbol alignment, followed by zero-forcing equalization and
hard-decision demapping.

The per-symbol path is a chain of generator stages (window -> demodulate ->
rebuild/cancel -> equalize -> demap); each stage hands one symbol to the
next, so the dataflow is a bounded, backpressured FIFO of depth one.

Alignment: with desired frame phase p_d and self-interference phase p_si,
write p_si - p_d = q*L + r (L = symbol length, 0 <= r < L). When r <= cp_len
the receive window over desired symbol t sees a cyclic rotation of own
transmitted symbol t - q, i.e. a pure per-subcarrier phase ramp that the
intra-node channel estimate absorbs. Beyond the CP the overlap is no longer
cyclic and cancellation collapses (exercised as a negative test).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dsp import SampleStream
from .sync import ChannelEstimate
from .waveform import FrameConfig, ResourceGrid, layout_masks, qam_demap


class AlignmentError(RuntimeError):
    """Counter points outside the transmitted symbol range."""


@dataclass
class CancellerState:
    """Alignment bookkeeping for the rebuild-and-subtract path.

    `counter` advances by one OFDM symbol per processed symbol and selects
    which own transmitted symbol is mixed into the current receive window.
    """

    cfg: FrameConfig                       # own node's config (grid layout of own tx)
    own_symbols: np.ndarray                # (n_symbols, used) own tx frequency cells
    intra: ChannelEstimate
    symbol_offset: int                     # own symbol index = counter + symbol_offset
    cyclic_offset: int                     # r above, samples; > cp_len means ISI regime
    counter: int = 0

    @property
    def within_cp(self) -> bool:
        return 0 <= self.cyclic_offset <= self.cfg.cp_len


def make_state(cfg: FrameConfig, own_grids: list[ResourceGrid],
               intra: ChannelEstimate, desired_frame_start: int,
               si_frame_start: int) -> CancellerState:
    """Derive the counter alignment from the two sync indices."""
    used_rows = cfg.used_bins() + cfg.fft_size // 2
    cells = np.concatenate([g.values[used_rows, :] for g in own_grids], axis=1).T
    q, r = divmod(si_frame_start - desired_frame_start, cfg.symbol_len)
    return CancellerState(
        cfg=cfg,
        own_symbols=np.ascontiguousarray(cells),
        intra=intra,
        symbol_offset=-q,
        cyclic_offset=r,
    )


def rebuild_si(state: CancellerState, symbol: int | None = None) -> np.ndarray:
    """SIhat[k] = Hhat_intra[k] * X_own[k] for the counter-selected symbol."""
    t = state.counter if symbol is None else symbol
    m = t + state.symbol_offset
    if m < 0 or m >= state.own_symbols.shape[0]:
        raise AlignmentError(
            f"counter {t} (own symbol {m}) outside the transmitted range "
            f"0..{state.own_symbols.shape[0] - 1}")
    return state.intra.at(t) * state.own_symbols[m]


def cancel_digital(rx_symbol: np.ndarray, rebuilt_si: np.ndarray) -> np.ndarray:
    """Yhat[k] = Y[k] - SIhat[k]."""
    return rx_symbol - rebuilt_si


ZF_FLOOR = 1e-6


def zf_equalize(cleaned: np.ndarray, h_inter: np.ndarray,
                floor: float = ZF_FLOOR) -> tuple[np.ndarray, np.ndarray]:
    """Per-subcarrier division; bins with |H| below the floor are flagged
    erased and excluded from downstream accounting."""
    erased = np.abs(h_inter) < floor
    z = np.zeros_like(cleaned)
    ok = ~erased
    z[ok] = cleaned[ok] / h_inter[ok]
    return z, erased


@dataclass
class DecodedSymbol:
    index: int
    equalized: np.ndarray     # equalized data cells (fill order), erased included
    bits: np.ndarray          # hard decisions on those cells
    evm_db: float             # data-aided when a reference was given, else NaN
    erased: int = 0


@dataclass
class FrameDecode:
    """Aggregate of one decode run.

    data_cells/bits cover every data cell in deterministic fill order so the
    caller can align them with the transmitted payload; erased_mask marks
    deep-faded cells to exclude from EVM/BER accounting.
    """
    symbols: list = field(default_factory=list)
    bits: np.ndarray | None = None
    data_cells: np.ndarray | None = None
    erased_mask: np.ndarray | None = None
    pre_cancel_power: float = 0.0            # residual-SI grid power before subtraction
    post_cancel_power: float = 0.0           # and after (component-level instrument)
    failed_symbols: int = 0


def _window_stage(cfg, start_index, n_symbols):
    for t in range(n_symbols):
        yield t, start_index + t * cfg.symbol_len


def _demod_stage(cfg, rx, windows):
    bins = cfg.used_bins() % cfg.fft_size
    for t, w0 in windows:
        x = rx.view(w0 + cfg.cp_len, cfg.fft_size)
        yield t, np.fft.fft(x)[bins]


def _cancel_stage(state, symbols, si_probe_cols, out: FrameDecode):
    for t, y in symbols:
        if state is None:
            yield t, y
            continue
        state.counter = t
        si_hat = rebuild_si(state)
        if si_probe_cols is not None:
            pre = si_probe_cols(t)
            out.pre_cancel_power += float(np.sum(np.abs(pre) ** 2))
            out.post_cancel_power += float(np.sum(np.abs(pre - si_hat) ** 2))
        yield t, cancel_digital(y, si_hat)


def _equalize_stage(inter, cleaned):
    for t, y in cleaned:
        z, erased = zf_equalize(y, inter.at(t))
        yield t, z, erased


def decode_frames(rx: SampleStream, desired_cfg: FrameConfig, frame_start: int,
                  n_frames: int, inter: ChannelEstimate,
                  state: CancellerState | None,
                  reference_grids: list[ResourceGrid] | None = None,
                  si_probe_cols=None) -> FrameDecode:
    """Run the per-symbol pipeline over `n_frames` desired frames.

    `si_probe_cols(t)`, when given, returns the used-band column of the
    isolated self-interference component for window t, so cancellation depth
    is instrumented without the desired signal or noise in the ratio.
    `reference_grids` (the transmitter's grids) enable data-aided EVM.
    """
    cfg = desired_cfg
    n_symbols = n_frames * cfg.symbols_per_frame
    out = FrameDecode()
    data_mask, _, _, _ = layout_masks(cfg, cfg.symbols_per_frame)
    used_rows = cfg.used_bins() + cfg.fft_size // 2
    data_in_used = data_mask[used_rows, :]   # (used, 120) bool

    ref_cells = None
    if reference_grids is not None:
        ref_cells = [g.values[used_rows, :] for g in reference_grids]

    pipeline = _equalize_stage(
        inter,
        _cancel_stage(state,
                      _demod_stage(cfg, rx, _window_stage(cfg, frame_start, n_symbols)),
                      si_probe_cols, out),
    )

    bits_all, cells_all, erased_all = [], [], []
    for t, z, erased in pipeline:
        fs = t % cfg.symbols_per_frame
        frame = t // cfg.symbols_per_frame
        dsel = data_in_used[:, fs]
        cells = z[dsel]
        cell_erased = erased[dsel]
        bits = qam_demap(cells, cfg.qam_order)
        evm_db = float("nan")
        if ref_cells is not None:
            ref = ref_cells[frame][dsel, fs]
            keep = ~cell_erased
            if keep.any():
                err = float(np.mean(np.abs(cells[keep] - ref[keep]) ** 2))
                refp = float(np.mean(np.abs(ref[keep]) ** 2))
                evm_db = 10 * np.log10(err / refp) if err > 0 else -np.inf
        out.symbols.append(DecodedSymbol(index=t, equalized=cells, bits=bits,
                                         evm_db=evm_db, erased=int(cell_erased.sum())))
        bits_all.append(bits)
        cells_all.append(cells)
        erased_all.append(cell_erased)
    out.bits = np.concatenate(bits_all) if bits_all else np.zeros(0, dtype=np.int64)
    out.data_cells = np.concatenate(cells_all) if cells_all else np.zeros(0, complex)
    out.erased_mask = np.concatenate(erased_all) if erased_all else np.zeros(0, bool)
    return out
