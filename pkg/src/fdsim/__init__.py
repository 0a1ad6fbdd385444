"""Desk-scale, bit-faithful simulator of an in-band full-duplex LTE-like
radio link: OFDM downlink frames through a modeled self-interference front
end (dual-polarization isolation + active analog tap + impairments) and the
full receive chain (ZC sync, LS estimation, frequency-domain digital
self-interference cancellation, ZF equalization)."""

from .dsp import ConfigError, DesignError, FirFilter, FirSpec, SampleStream
from .frontend import (
    ActiveTap,
    AnalogCancelConfig,
    ChannelRealization,
    ImpairmentConfig,
    PaModel,
)
from .metrics import LinkReport
from .scenario import Scenario, load_suite
from .sync import ChannelEstimate, SyncError, SyncResult, synchronize
from .waveform import FrameConfig, ResourceGrid, fd_20mhz, fdd_10mhz

__version__ = "0.1.0"

__all__ = [
    "ActiveTap", "AnalogCancelConfig", "ChannelEstimate", "ChannelRealization",
    "ConfigError", "DesignError", "FirFilter", "FirSpec", "FrameConfig",
    "ImpairmentConfig", "LinkReport", "PaModel", "ResourceGrid", "SampleStream",
    "Scenario", "SyncError", "SyncResult", "fd_20mhz", "fdd_10mhz",
    "load_suite", "synchronize",
]
