"""LTE-downlink-style frame construction and parsing.

Covers Gray QAM mapping, Zadoff-Chu synchronization sequences, reference
symbol placement, subcarrier mapping with zero padding, and OFDM
modulation/demodulation (IFFT + cyclic prefix and the inverse).

Grid layout (both numerology profiles):
  * 20 slots x 6 symbols = 120 OFDM symbols per 10 ms frame.
  * Sync sequence on 62 subcarriers around DC (DC excluded) in the last
    symbol of slots 0 and 10 (frame symbols 5 and 65), once per half-frame.
  * Reference symbols on every 6th used subcarrier, offset 0 for node 0 and
    offset 3 for node 1, in per-slot symbols {0, 3}. Each node nulls the
    other node's reference cells so the two patterns stay cell-disjoint.
  * Everything else on the used band is payload; remaining bins, including
    DC, are zero padding.
"""

from __future__ import annotations

import os
from dataclasses import dataclass
from math import gcd

import numpy as np

from .dsp import ConfigError, SampleStream, dft, idft

SYMBOLS_PER_FRAME = 120
PSS_SYMBOLS = (5, 65)  # last symbol of slots 0 and 10
RS_SLOT_SYMBOLS = (0, 3)
RS_STRIDE = 6
NODE_ROOTS = (25, 29)
NODE_RS_OFFSETS = (0, 3)

# cell tags
NULL, DATA, RS, PSS = 0, 1, 2, 3


@dataclass(frozen=True)
class FrameConfig:
    fft_size: int
    cp_len: int
    sample_rate_hz: float
    used_subcarriers: int
    qam_order: int
    node_id: int
    subcarrier_spacing_hz: float = 15e3
    slots_per_frame: int = 20
    symbols_per_slot: int = 6
    full_duplex: bool = True  # reserve the peer's RS cells (FDD baseline does not)

    def __post_init__(self):
        if self.node_id not in (0, 1):
            raise ConfigError("node_id must be 0 or 1")
        if self.qam_order not in (4, 16, 64):
            raise ConfigError(f"unsupported QAM order {self.qam_order}")
        if self.used_subcarriers % 2 or self.used_subcarriers > self.fft_size - 1:
            raise ConfigError("used_subcarriers must be even and leave room for DC")
        dur = (self.slots_per_frame * self.symbols_per_slot
               * (self.fft_size + self.cp_len) / self.sample_rate_hz)
        if abs(dur - 10e-3) > 1e-12:
            raise ConfigError(f"frame duration {dur * 1e3:.6f} ms != 10 ms")

    @property
    def symbol_len(self) -> int:
        return self.fft_size + self.cp_len

    @property
    def symbols_per_frame(self) -> int:
        return self.slots_per_frame * self.symbols_per_slot

    @property
    def frame_len(self) -> int:
        return self.symbols_per_frame * self.symbol_len

    @property
    def half_frame_len(self) -> int:
        return self.frame_len // 2

    @property
    def root(self) -> int:
        return NODE_ROOTS[self.node_id]

    @property
    def peer_root(self) -> int:
        return NODE_ROOTS[1 - self.node_id]

    def used_bins(self) -> np.ndarray:
        """Signed subcarrier indices of the used band, ascending, DC excluded."""
        h = self.used_subcarriers // 2
        return np.concatenate([np.arange(-h, 0), np.arange(1, h + 1)])


def fd_20mhz(qam_order: int = 4, node_id: int = 0) -> FrameConfig:
    """Full-duplex 20 MHz profile: 2048 FFT, 512 CP, 30.72 MS/s."""
    return FrameConfig(2048, 512, 30.72e6, 1200, qam_order, node_id, full_duplex=True)


def fdd_10mhz(qam_order: int = 4, node_id: int = 0) -> FrameConfig:
    """Half-duplex 10 MHz baseline: 1024 FFT, 256 CP, 15.36 MS/s."""
    return FrameConfig(1024, 256, 15.36e6, 600, qam_order, node_id, full_duplex=False)


# ---------------------------------------------------------------------------
# QAM (LTE Gray tables, unit average energy)

def _qam_axis_levels(bits_per_axis: int) -> np.ndarray:
    # LTE per-axis amplitude from the Gray-coded bit group, recursive form:
    # 1 bit -> {1}, 2 bits -> {2 -/+ 1}, 3 bits -> {4 -/+ (2 -/+ 1)}
    if bits_per_axis == 1:
        return np.array([1.0])
    inner = _qam_axis_levels(bits_per_axis - 1)
    base = 2.0 ** (bits_per_axis - 1)
    return np.concatenate([base - inner, base + inner])


def _build_constellation(order: int) -> np.ndarray:
    """Constellation indexed by the integer value of the bit group (MSB first).

    Bits alternate I/Q per the LTE mapping: even-position bits steer I,
    odd-position bits steer Q; a leading 1 on an axis flips its sign.
    """
    k = int(np.log2(order))
    ka = k // 2
    levels = _qam_axis_levels(ka)
    pts = np.empty(order, dtype=np.complex128)
    for idx in range(order):
        bits = [(idx >> (k - 1 - b)) & 1 for b in range(k)]
        i_bits = bits[0::2]
        q_bits = bits[1::2]
        i_mag = levels[int("".join(map(str, i_bits[1:])), 2)] if ka > 1 else 1.0
        q_mag = levels[int("".join(map(str, q_bits[1:])), 2)] if ka > 1 else 1.0
        re = (1 - 2 * i_bits[0]) * i_mag
        im = (1 - 2 * q_bits[0]) * q_mag
        pts[idx] = re + 1j * im
    return pts / np.sqrt(np.mean(np.abs(pts) ** 2))


_CONSTELLATIONS = {m: _build_constellation(m) for m in (4, 16, 64)}


def constellation(order: int) -> np.ndarray:
    if order not in _CONSTELLATIONS:
        raise ConfigError(f"unsupported QAM order {order}")
    return _CONSTELLATIONS[order]


def qam_map(bits: np.ndarray, order: int) -> np.ndarray:
    """Gray-mapped square QAM, unit average energy; bits MSB-first per symbol."""
    table = constellation(order)
    bits = np.asarray(bits, dtype=np.int64)
    k = int(np.log2(order))
    if len(bits) % k:
        raise ConfigError(f"bit count {len(bits)} not divisible by log2({order})")
    if len(bits) == 0:
        return np.zeros(0, dtype=np.complex128)
    groups = bits.reshape(-1, k)
    idx = groups @ (1 << np.arange(k - 1, -1, -1))
    return table[idx]


def qam_demap(symbols: np.ndarray, order: int) -> np.ndarray:
    """Minimum-distance hard decision; exact ties go to the lower index."""
    table = constellation(order)
    symbols = np.asarray(symbols, dtype=np.complex128)
    k = int(np.log2(order))
    if len(symbols) == 0:
        return np.zeros(0, dtype=np.int64)
    d2 = np.abs(symbols[:, None] - table[None, :]) ** 2
    idx = np.argmin(d2, axis=1)   # argmin takes the first (lowest) index on ties
    shifts = np.arange(k - 1, -1, -1)
    return ((idx[:, None] >> shifts) & 1).reshape(-1).astype(np.int64)


# ---------------------------------------------------------------------------
# Synchronization sequence

PSS_LEN = 63
PSS_K = np.concatenate([np.arange(-31, 0), np.arange(1, 32)])


@dataclass(frozen=True)
class PssSequence:
    root_u: int
    values: np.ndarray  # 62 entries, indexed by PSS_K

    @property
    def subcarriers(self) -> np.ndarray:
        return PSS_K


def generate_pss(root_u: int) -> PssSequence:
    """Constant-amplitude polyphase sequence on 62 subcarriers around DC.

    Two-branch closed form over k in [-31,-1] and [1,31]:
      P[k] = exp(-j pi u k (k+1) / 63)        for k < 0
      P[k] = exp(-j pi u (k+1)(k+2) / 63)     for k > 0
    """
    if gcd(root_u, PSS_LEN) != 1:
        raise ConfigError(f"root {root_u} is not coprime to {PSS_LEN}")
    k = PSS_K.astype(np.float64)
    vals = np.where(
        k < 0,
        np.exp(-1j * np.pi * root_u * k * (k + 1) / PSS_LEN),
        np.exp(-1j * np.pi * root_u * (k + 1) * (k + 2) / PSS_LEN),
    )
    return PssSequence(root_u=root_u, values=vals)


# ---------------------------------------------------------------------------
# Reference symbols

@dataclass(frozen=True)
class RsPattern:
    node_id: int
    subcarrier_offset: int
    subcarrier_stride: int = RS_STRIDE
    symbol_indices: tuple = RS_SLOT_SYMBOLS

    def positions(self, used_subcarriers: int) -> np.ndarray:
        """Indices into the ascending used-subcarrier axis."""
        return np.arange(self.subcarrier_offset, used_subcarriers, self.subcarrier_stride)

    def has_rs(self, frame_symbol: int) -> bool:
        return frame_symbol % 6 in self.symbol_indices


def rs_pattern(node_id: int) -> RsPattern:
    return RsPattern(node_id=node_id, subcarrier_offset=NODE_RS_OFFSETS[node_id])


class _Lcg:
    """Deterministic 32-bit linear congruential generator (Numerical Recipes)."""

    def __init__(self, seed: int):
        self.state = (seed * 2654435761 + 1) & 0xFFFFFFFF

    def next_u2(self) -> int:
        self.state = (1664525 * self.state + 1013904223) & 0xFFFFFFFF
        return (self.state >> 30) & 0x3


def rs_values(node_id: int, frame_symbol: int, count: int) -> np.ndarray:
    """Unit-modulus QPSK pilot values for one RS-bearing symbol.

    Fixed per (node, frame symbol): the per-frame look-up table.
    """
    lcg = _Lcg(seed=(node_id + 1) * 0x9E3779B9 + frame_symbol)
    quad = np.array([lcg.next_u2() for _ in range(count)])
    return np.exp(1j * (np.pi / 4 + np.pi / 2 * quad))


# ---------------------------------------------------------------------------
# Resource grid

@dataclass
class ResourceGrid:
    """Frequency-domain lattice: values[bin, symbol] over the full FFT axis
    (bin b holds subcarrier k = b - fft_size/2), kinds tagged per cell."""

    cfg: FrameConfig
    values: np.ndarray  # complex (fft_size, n_symbols)
    kinds: np.ndarray   # uint8  (fft_size, n_symbols)

    @property
    def n_symbols(self) -> int:
        return self.values.shape[1]

    def bin_of(self, k: np.ndarray | int) -> np.ndarray | int:
        """Row index for signed subcarrier k."""
        return k + self.cfg.fft_size // 2

    def cells(self, kind: int) -> np.ndarray:
        return self.kinds == kind


def _empty_grid(cfg: FrameConfig, n_symbols: int) -> ResourceGrid:
    return ResourceGrid(
        cfg=cfg,
        values=np.zeros((cfg.fft_size, n_symbols), dtype=np.complex128),
        kinds=np.zeros((cfg.fft_size, n_symbols), dtype=np.uint8),
    )


def layout_masks(cfg: FrameConfig, n_symbols: int = SYMBOLS_PER_FRAME):
    """(data, rs_own, rs_peer_reserved, pss) boolean masks over (fft, sym).

    rs_peer_reserved is all-False for half-duplex configs.
    """
    fft = cfg.fft_size
    used = cfg.used_bins()
    mid = fft // 2
    data = np.zeros((fft, n_symbols), bool)
    rs_own = np.zeros_like(data)
    rs_peer = np.zeros_like(data)
    pss = np.zeros_like(data)
    own = rs_pattern(cfg.node_id)
    peer = rs_pattern(1 - cfg.node_id)
    for s in range(n_symbols):
        fs = s % SYMBOLS_PER_FRAME
        data[used + mid, s] = True
        if own.has_rs(fs):
            rs_own[used[own.positions(cfg.used_subcarriers)] + mid, s] = True
            if cfg.full_duplex:
                rs_peer[used[peer.positions(cfg.used_subcarriers)] + mid, s] = True
        if fs in PSS_SYMBOLS:
            pss[PSS_K + mid, s] = True
    data &= ~(rs_own | rs_peer | pss)
    return data, rs_own, rs_peer, pss


def data_cell_count(cfg: FrameConfig) -> int:
    """Payload cells per frame (capacity query used by the throughput oracle)."""
    data, _, _, _ = layout_masks(cfg)
    return int(data.sum())


def frame_payload_bits(cfg: FrameConfig) -> int:
    return data_cell_count(cfg) * int(np.log2(cfg.qam_order))


def build_frame(cfg: FrameConfig, payload_bits: np.ndarray) -> ResourceGrid:
    """Map payload + pilots + sync onto one frame.

    Payload bits fill data cells lowest-subcarrier-first within each symbol,
    symbols in order, so golden vectors are stable. A zero-length payload
    builds a pilot/sync-only frame (data cells stay Null).
    """
    need = frame_payload_bits(cfg)
    payload_bits = np.asarray(payload_bits, dtype=np.int64)
    if len(payload_bits) not in (0, need):
        raise ConfigError(f"payload must be exactly {need} bits (or empty), "
                          f"got {len(payload_bits)}")
    with_data = len(payload_bits) > 0
    grid = _empty_grid(cfg, SYMBOLS_PER_FRAME)
    data_m, rs_m, peer_m, pss_m = layout_masks(cfg)
    symbols = qam_map(payload_bits, cfg.qam_order)

    own = rs_pattern(cfg.node_id)
    pss_vals = generate_pss(cfg.root).values
    mid = cfg.fft_size // 2
    used = cfg.used_bins()
    pos = 0
    for s in range(SYMBOLS_PER_FRAME):
        if with_data:
            col_data = data_m[:, s]
            n = int(col_data.sum())
            # column order is ascending bin = ascending subcarrier
            grid.values[col_data, s] = symbols[pos : pos + n]
            pos += n
        if own.has_rs(s):
            rs_pos = own.positions(cfg.used_subcarriers)
            grid.values[used[rs_pos] + mid, s] = rs_values(cfg.node_id, s, len(rs_pos))
        if s in PSS_SYMBOLS:
            grid.values[PSS_K + mid, s] = pss_vals
    assert pos == len(symbols)
    if with_data:
        grid.kinds[data_m] = DATA
    grid.kinds[rs_m] = RS
    grid.kinds[pss_m] = PSS
    return grid


def extract_payload_bits(grid: ResourceGrid) -> np.ndarray:
    """Hard-demap the data cells of a (received) grid in fill order."""
    data_m, _, _, _ = layout_masks(grid.cfg, grid.n_symbols)
    syms = []
    for s in range(grid.n_symbols):
        syms.append(grid.values[data_m[:, s], s])
    return qam_demap(np.concatenate(syms), grid.cfg.qam_order)


# ---------------------------------------------------------------------------
# OFDM modulation

def _bins_to_fft_input(cfg: FrameConfig, column: np.ndarray) -> np.ndarray:
    """Centered-bin column -> natural FFT bin order (k>=0 at [k], k<0 at [N+k])."""
    return np.roll(column, -(cfg.fft_size // 2))


def ofdm_modulate(cfg: FrameConfig, grid: ResourceGrid, start: int = 0) -> SampleStream:
    """IDFT each symbol column and prepend the cyclic prefix.

    Stream length is n_symbols * (fft_size + cp_len); sample 0 carries global
    index `start`.
    """
    if grid.values.shape[0] != cfg.fft_size:
        raise ConfigError("grid fft axis does not match config")
    n_sym = grid.n_symbols
    out = np.empty(n_sym * cfg.symbol_len, dtype=np.complex128)
    for s in range(n_sym):
        spec = _bins_to_fft_input(cfg, grid.values[:, s])
        x = idft(spec, cfg.fft_size)
        out[s * cfg.symbol_len : s * cfg.symbol_len + cfg.cp_len] = x[-cfg.cp_len:]
        out[s * cfg.symbol_len + cfg.cp_len : (s + 1) * cfg.symbol_len] = x
    return SampleStream(out, start)


class TruncationError(ValueError):
    """Stream ends before a full OFDM symbol can be demodulated."""


def ofdm_demodulate(cfg: FrameConfig, stream: SampleStream, start_index: int,
                    n_symbols: int | None = None) -> ResourceGrid:
    """Strip CP, DFT, return the frequency-domain grid.

    `start_index` is the global index of the first CP sample. Inverse of
    ofdm_modulate under perfect timing. Cell tags reflect cfg's layout.
    """
    avail = (stream.end - start_index) // cfg.symbol_len
    if n_symbols is None:
        n_symbols = int(avail)
    if n_symbols < 1 or avail < n_symbols:
        raise TruncationError(
            f"need {n_symbols} symbols from index {start_index}, have {max(avail, 0)}")
    grid = _empty_grid(cfg, n_symbols)
    mid = cfg.fft_size // 2
    for s in range(n_symbols):
        w0 = start_index + s * cfg.symbol_len + cfg.cp_len
        x = stream.view(w0, cfg.fft_size)
        grid.values[:, s] = np.roll(dft(x, cfg.fft_size), mid)
    data_m, rs_m, peer_m, pss_m = layout_masks(cfg, n_symbols)
    grid.kinds[data_m] = DATA
    grid.kinds[rs_m] = RS
    grid.kinds[pss_m] = PSS
    return grid


def pss_time_template(cfg: FrameConfig, root_u: int) -> np.ndarray:
    """Time-domain (CP included) modulated sync symbol for one root."""
    g = _empty_grid(cfg, 1)
    mid = cfg.fft_size // 2
    g.values[PSS_K + mid, 0] = generate_pss(root_u).values
    return ofdm_modulate(cfg, g).samples


# ---------------------------------------------------------------------------
# Golden-vector IQ file format: interleaved float32 LE (re, im) + text sidecar

def write_iq(path: str, stream: SampleStream, header: dict):
    interleaved = np.empty(2 * len(stream), dtype="<f4")
    interleaved[0::2] = stream.samples.real.astype(np.float32)
    interleaved[1::2] = stream.samples.imag.astype(np.float32)
    interleaved.tofile(path)
    with open(path + ".hdr", "w") as fh:
        for k, v in header.items():
            fh.write(f"{k} = {v}\n")
        fh.write(f"start_index = {stream.start}\n")
        fh.write(f"num_samples = {len(stream)}\n")


def read_iq(path: str) -> tuple[SampleStream, dict]:
    raw = np.fromfile(path, dtype="<f4")
    samples = raw[0::2].astype(np.float64) + 1j * raw[1::2].astype(np.float64)
    header = {}
    hdr_path = path + ".hdr"
    if os.path.exists(hdr_path):
        with open(hdr_path) as fh:
            for line in fh:
                if "=" in line:
                    k, v = line.split("=", 1)
                    header[k.strip()] = v.strip()
    start = int(header.get("start_index", 0))
    return SampleStream(samples, start), header
