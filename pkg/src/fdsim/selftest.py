"""Quick always-runnable invariant checks behind `fdsim selftest`.

A trimmed mirror of the property suite: one pass/fail line per check, no
calibrated scenarios, a few seconds total.
"""

from __future__ import annotations

import numpy as np

from .canceller import cancel_digital
from .dsp import FirSpec, SampleStream, design_lowpass, dft, idft, sliding_xcorr
from .sync import interpolate_linear
from .waveform import (
    build_frame,
    extract_payload_bits,
    fd_20mhz,
    frame_payload_bits,
    ofdm_demodulate,
    ofdm_modulate,
    qam_demap,
    qam_map,
    rs_pattern,
)


def _check_parseval(rng):
    x = rng.standard_normal(2048) + 1j * rng.standard_normal(2048)
    X = dft(x, 2048)
    lhs = np.sum(np.abs(x) ** 2)
    rhs = np.sum(np.abs(X) ** 2) / 2048
    return abs(lhs - rhs) / lhs < 1e-9


def _check_roundtrip_dft(rng):
    x = rng.standard_normal(1024) + 1j * rng.standard_normal(1024)
    return np.max(np.abs(idft(dft(x, 1024), 1024) - x)) < 1e-9


def _check_qam_roundtrip(rng):
    for order in (4, 16, 64):
        bits = rng.integers(0, 2, size=int(np.log2(order)) * 600)
        if not np.array_equal(qam_demap(qam_map(bits, order), order), bits):
            return False
    return True


def _check_ofdm_roundtrip(rng):
    cfg = fd_20mhz(qam_order=16, node_id=0)
    bits = rng.integers(0, 2, size=frame_payload_bits(cfg))
    grid = build_frame(cfg, bits)
    stream = ofdm_modulate(cfg, grid)
    back = ofdm_demodulate(cfg, stream, 0)
    return np.array_equal(extract_payload_bits(back), bits)


def _check_xcorr_bounds(rng):
    x = SampleStream(rng.standard_normal(4000) + 1j * rng.standard_normal(4000))
    ref = rng.standard_normal(64) + 1j * rng.standard_normal(64)
    out = sliding_xcorr(x, ref)
    return out.min() >= 0.0 and out.max() <= 1.0


def _check_lpf(rng):
    f = design_lowpass(FirSpec(1.4e6, 50.0, 0.1, 30.72e6, 255))
    return f.group_delay_samples == 127


def _check_interp_affine(rng):
    cfg = fd_20mhz()
    pat = rs_pattern(0)
    pos = pat.positions(cfg.used_subcarriers)
    sparse = (0.3 + 0.002 * pos) + 1j * (1.0 - 0.001 * pos)
    full = interpolate_linear(sparse, pat, cfg)
    axis = np.arange(cfg.used_subcarriers)
    truth = (0.3 + 0.002 * axis) + 1j * (1.0 - 0.001 * axis)
    inside = (axis >= pos[0]) & (axis <= pos[-1])
    return np.max(np.abs(full[inside] - truth[inside])) < 1e-12


def _check_cancel_linearity(rng):
    y = rng.standard_normal(1200) + 1j * rng.standard_normal(1200)
    s = rng.standard_normal(1200) + 1j * rng.standard_normal(1200)
    return np.max(np.abs(cancel_digital(y, s) + s - y)) <= 4 * np.finfo(float).eps * np.max(np.abs(y))


CHECKS = [
    ("parseval", _check_parseval),
    ("dft round trip", _check_roundtrip_dft),
    ("qam round trip", _check_qam_roundtrip),
    ("ofdm round trip", _check_ofdm_roundtrip),
    ("xcorr bounded", _check_xcorr_bounds),
    ("lpf design", _check_lpf),
    ("interpolator affine-exact", _check_interp_affine),
    ("cancel subtraction linearity", _check_cancel_linearity),
]


def run_selftest() -> int:
    rng = np.random.default_rng(20140)
    failures = 0
    for name, fn in CHECKS:
        try:
            ok = fn(rng)
        except Exception as e:
            ok = False
            name = f"{name} ({e!r})"
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
        failures += not ok
    return 1 if failures else 0
