"""Link quantification: dB power ratios, EVM, BER, goodput, and the per-run
CSV report.

Throughput counts only correctly decoded payload bits (a QAM symbol with any
errored bit contributes nothing), summed over both directions and divided by
the simulated time. Full-duplex runs both directions on the 20 MHz profile;
the baseline runs each direction on its own 10 MHz band.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

from .waveform import constellation, qam_demap

DEPTH_CAP_DB = 150.0  # +inf sentinel cap in reports


class MeasurementError(ValueError):
    """A power ratio was requested against a zero reference."""


def cancellation_depth_db(power_before: float, power_after: float) -> float:
    """10 log10(before/after); zero `after` maps to +inf (capped when
    written to a report)."""
    if power_before <= 0.0:
        raise MeasurementError("reference power must be positive")
    if power_after <= 0.0:
        return math.inf
    return 10.0 * math.log10(power_before / power_after)


def evm_percent(equalized: np.ndarray, reference: np.ndarray | None = None,
                order: int | None = None) -> float:
    """RMS error vector magnitude as a percentage of the RMS reference.

    Data-aided when `reference` is given (the mode every automated test
    uses); otherwise blind against the nearest constellation point of
    `order` (demo parity with a live front panel).
    """
    z = np.asarray(equalized, dtype=np.complex128)
    if len(z) == 0:
        raise MeasurementError("EVM needs at least one symbol")
    if reference is None:
        if order is None:
            raise MeasurementError("blind EVM needs the constellation order")
        pts = constellation(order)
        k = int(np.log2(order))
        idx = qam_demap(z, order).reshape(-1, k) @ (1 << np.arange(k - 1, -1, -1))
        reference = pts[idx]
    ref = np.asarray(reference, dtype=np.complex128)
    err = np.mean(np.abs(z - ref) ** 2)
    refp = np.mean(np.abs(ref) ** 2)
    if refp <= 0.0:
        raise MeasurementError("reference constellation has zero power")
    return float(np.sqrt(err / refp) * 100.0)


def bit_error_rate(tx_bits: np.ndarray, rx_bits: np.ndarray,
                   exclude: np.ndarray | None = None,
                   bits_per_cell: int = 1) -> float:
    """Hard-decision BER; `exclude` marks erased cells (per-cell mask) whose
    bits leave the accounting entirely."""
    tx = np.asarray(tx_bits)
    rx = np.asarray(rx_bits)
    if len(tx) != len(rx):
        raise MeasurementError(f"bit vectors differ in length: {len(tx)} vs {len(rx)}")
    keep = np.ones(len(tx), dtype=bool)
    if exclude is not None:
        keep = ~np.repeat(np.asarray(exclude, dtype=bool), bits_per_cell)
    n = int(keep.sum())
    if n == 0:
        return 0.0
    return float(np.sum(tx[keep] != rx[keep]) / n)


def good_bits(tx_bits: np.ndarray, rx_bits: np.ndarray, bits_per_cell: int,
              exclude: np.ndarray | None = None) -> int:
    """Correctly decoded payload bits with symbol-granularity exclusion:
    a cell with any bit error (or an erased flag) contributes zero."""
    tx = np.asarray(tx_bits).reshape(-1, bits_per_cell)
    rx = np.asarray(rx_bits).reshape(-1, bits_per_cell)
    ok = np.all(tx == rx, axis=1)
    if exclude is not None:
        ok &= ~np.asarray(exclude, dtype=bool)
    return int(ok.sum()) * bits_per_cell


def throughput_bps(good_bit_counts: list[int], elapsed_s: float) -> float:
    """Goodput over simulated time, summed across directions."""
    if elapsed_s <= 0.0:
        raise MeasurementError("elapsed time must be positive")
    return float(sum(good_bit_counts)) / elapsed_s


# ---------------------------------------------------------------------------
# Run report

REPORT_COLUMNS = (
    "scenario_id", "seed", "duplex_mode", "qam_order", "snr_db",
    "analog_passive_db", "analog_total_db", "digital_db",
    "total_cancellation_db", "evm_percent", "ber", "throughput_bps",
    # sync block appendix
    "sync_desired_index", "sync_si_index", "sync_desired_peak", "sync_si_peak",
)

_DB_COLUMNS = {"analog_passive_db", "analog_total_db", "digital_db",
               "total_cancellation_db"}


@dataclass
class LinkReport:
    scenario_id: str
    seed: int
    duplex_mode: str                    # "full" | "fdd_baseline"
    qam_order: int
    snr_db: float | None = None
    analog_passive_db: float | None = None
    analog_total_db: float | None = None
    digital_db: float | None = None
    total_cancellation_db: float | None = None
    evm_percent: float | None = None
    ber: float | None = None
    throughput_bps: float | None = None
    sync_desired_index: int | None = None
    sync_si_index: int | None = None
    sync_desired_peak: float | None = None
    sync_si_peak: float | None = None
    errors: list = field(default_factory=list)   # recorded, never thrown

    def check_identity(self, tol_db: float = 0.1) -> bool:
        """total = analog_total + digital, on the shared grid-power basis."""
        vals = (self.total_cancellation_db, self.analog_total_db, self.digital_db)
        if any(v is None or not math.isfinite(v) for v in vals):
            return True
        return abs(vals[0] - (vals[1] + vals[2])) <= tol_db

    def row(self) -> list[str]:
        out = []
        for name in REPORT_COLUMNS:
            v = getattr(self, name)
            if v is None:
                out.append("")
            elif name in _DB_COLUMNS:
                v = min(v, DEPTH_CAP_DB)
                out.append(f"{v:.1f}")
            elif isinstance(v, float):
                out.append(f"{v:.6g}")
            else:
                out.append(str(v))
        return out


def write_csv(reports: list[LinkReport], path: str) -> None:
    """Header always present; decimal point, no locale formatting."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(REPORT_COLUMNS)
        for r in reports:
            w.writerow(r.row())
