"""Scenario configuration: one TOML table per scenario.

Grammar (all keys optional unless noted):

    [[scenario]]
    id = "fig6a_on"                 # required, unique within a suite
    profile = "fd_20mhz"            # or "fdd_10mhz" (the baseline)
    qam_down = 4                    # observed node's own transmission
    qam_up = 64                     # peer -> observed; 0 = peer silent
    snr_db = 30.0                   # receiver noise relative to the desired
                                    # signal (or to the residual SI when the
                                    # peer is silent); omit for noiseless
    num_frames = 10
    seed = 1
    digital_canceller = true
    estimator_time_mode = "average" # or "hold"

    [scenario.analog]
    passive_isolation_db = 42.0
    active_enabled = true
    tune_max_delay = 64

    [[scenario.si_channel]]         # coupling path before passive isolation
    delay = 3
    gain_db = 0.0
    phase_deg = 0.0

    [[scenario.desired_channel]]
    delay = 0
    gain_db = -40.0

    [scenario.impairments]          # all stages default off
    pa_enabled = false
    pa_a1 = 1.0
    pa_a3 = 0.0
    iq_enabled = false
    iq_gain_mismatch_db = 0.0
    iq_phase_mismatch_deg = 0.0
    offset_enabled = false
    tx_gain_db = 0.0
    tx_phase_deg = 0.0
    dac_enabled = false
    adc_enabled = false
"""

from __future__ import annotations

import sys
from dataclasses import dataclass, field

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib as _toml
else:
    import tomli as _toml

from .dsp import ConfigError
from .frontend import AnalogCancelConfig, ChannelRealization, ImpairmentConfig, PaModel
from .waveform import FrameConfig, fd_20mhz, fdd_10mhz

PROFILES = ("fd_20mhz", "fdd_10mhz")


class SuiteParseError(ValueError):
    """Config file rejected, with location diagnostics."""


def _taps_from_tables(tables) -> tuple:
    taps = []
    for t in tables:
        delay = int(t.get("delay", 0))
        gain = 10.0 ** (float(t.get("gain_db", 0.0)) / 20.0)
        gain = gain * np.exp(1j * np.deg2rad(float(t.get("phase_deg", 0.0))))
        taps.append((delay, complex(gain)))
    taps.sort(key=lambda p: p[0])
    return tuple(taps)


def _impairments_from_table(t: dict) -> ImpairmentConfig:
    return ImpairmentConfig(
        pa_enabled=bool(t.get("pa_enabled", False)),
        pa=PaModel(a1=complex(t.get("pa_a1", 1.0)), a3=complex(t.get("pa_a3", 0.0))),
        iq_enabled=bool(t.get("iq_enabled", False)),
        iq_gain_mismatch_db=float(t.get("iq_gain_mismatch_db", 0.0)),
        iq_phase_mismatch_deg=float(t.get("iq_phase_mismatch_deg", 0.0)),
        offset_enabled=bool(t.get("offset_enabled", False)),
        tx_gain_db=float(t.get("tx_gain_db", 0.0)),
        tx_phase_deg=float(t.get("tx_phase_deg", 0.0)),
        dac_enabled=bool(t.get("dac_enabled", False)),
        dac_bits=int(t.get("dac_bits", 16)),
        adc_enabled=bool(t.get("adc_enabled", False)),
        adc_bits=int(t.get("adc_bits", 14)),
    )


@dataclass(frozen=True)
class Scenario:
    id: str
    profile: str = "fd_20mhz"
    qam_down: int = 4
    qam_up: int = 4                      # 0 = peer silent
    snr_db: float | None = None
    num_frames: int = 1
    seed: int = 0
    digital_canceller: bool = True
    estimator_time_mode: str = "average"
    passive_isolation_db: float = 42.0
    active_enabled: bool = False
    tune_max_delay: int = 64
    si_taps: tuple = ((0, 1.0 + 0.0j),)
    desired_taps: tuple = ((0, 1.0 + 0.0j),)
    impairments: ImpairmentConfig = field(default_factory=ImpairmentConfig)

    def __post_init__(self):
        if self.profile not in PROFILES:
            raise ConfigError(f"unknown profile {self.profile!r}")
        if self.num_frames < 1:
            raise ConfigError("num_frames must be >= 1")
        # exercise the sub-config invariants now, not mid-run
        ChannelRealization(self.si_taps)
        ChannelRealization(self.desired_taps)
        AnalogCancelConfig(passive_isolation_db=self.passive_isolation_db)

    @property
    def duplex_mode(self) -> str:
        return "full" if self.profile == "fd_20mhz" else "fdd_baseline"

    @property
    def peer_silent(self) -> bool:
        return self.qam_up == 0

    def config_for(self, node_id: int) -> FrameConfig:
        order = self.qam_down if node_id == 0 else (self.qam_up or self.qam_down)
        make = fd_20mhz if self.profile == "fd_20mhz" else fdd_10mhz
        return make(qam_order=order, node_id=node_id)

    def si_channel(self) -> ChannelRealization:
        return ChannelRealization(self.si_taps)

    def desired_channel(self) -> ChannelRealization:
        return ChannelRealization(self.desired_taps)


def scenario_from_table(t: dict) -> Scenario:
    if "id" not in t:
        raise SuiteParseError("scenario table is missing the 'id' key")
    known = {
        "id", "profile", "qam_down", "qam_up", "snr_db", "num_frames", "seed",
        "digital_canceller", "estimator_time_mode", "analog", "si_channel",
        "desired_channel", "impairments",
    }
    unknown = set(t) - known
    if unknown:
        raise SuiteParseError(f"scenario {t['id']!r}: unknown keys {sorted(unknown)}")
    analog = t.get("analog", {})
    try:
        return Scenario(
            id=str(t["id"]),
            profile=t.get("profile", "fd_20mhz"),
            qam_down=int(t.get("qam_down", 4)),
            qam_up=int(t.get("qam_up", 4)),
            snr_db=float(t["snr_db"]) if "snr_db" in t else None,
            num_frames=int(t.get("num_frames", 1)),
            seed=int(t.get("seed", 0)),
            digital_canceller=bool(t.get("digital_canceller", True)),
            estimator_time_mode=str(t.get("estimator_time_mode", "average")),
            passive_isolation_db=float(analog.get("passive_isolation_db", 42.0)),
            active_enabled=bool(analog.get("active_enabled", False)),
            tune_max_delay=int(analog.get("tune_max_delay", 64)),
            si_taps=_taps_from_tables(t.get("si_channel", [{"delay": 0}])),
            desired_taps=_taps_from_tables(t.get("desired_channel", [{"delay": 0}])),
            impairments=_impairments_from_table(t.get("impairments", {})),
        )
    except (ConfigError, ValueError, TypeError) as e:
        raise SuiteParseError(f"scenario {t.get('id')!r}: {e}") from e


def load_suite(path: str) -> list[Scenario]:
    """Parse a suite file; duplicate scenario ids are rejected here."""
    with open(path, "rb") as fh:
        try:
            doc = _toml.load(fh)
        except _toml.TOMLDecodeError as e:
            raise SuiteParseError(f"{path}: {e}") from e
    tables = doc.get("scenario", [])
    if not isinstance(tables, list):
        raise SuiteParseError(f"{path}: 'scenario' must be an array of tables")
    scenarios = [scenario_from_table(t) for t in tables]
    seen = {}
    for i, s in enumerate(scenarios):
        if s.id in seen:
            raise SuiteParseError(
                f"{path}: duplicate scenario id {s.id!r} (tables {seen[s.id]} and {i})")
        seen[s.id] = i
    return scenarios
