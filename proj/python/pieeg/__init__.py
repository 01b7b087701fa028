"""PiEEG acquisition chain from Python.

Signals are float64 NumPy arrays shaped ``(channels, samples)`` in microvolts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from os import PathLike
from typing import Any

import numpy as np

from . import _pieeg
from ._pieeg import (
    FRAME_BYTES,
    GAINS,
    SAMPLE_RATES,
    ConfigError,
    DesignError,
    DetectorConfigError,
    FrameError,
    RecordingFormatError,
    RecordingIoError,
    alpha_index,
    bandpass,
    bandpass_sos,
    decode_frame,
    encode_frame,
    export_csv,
    make_status,
    microvolts_to_raw,
    raw_to_microvolts,
    run_cli,
    sign_extend_24,
    validate_config,
    welch_psd,
    write_recording,
)

__all__ = [
    "FRAME_BYTES", "GAINS", "SAMPLE_RATES",
    "ConfigError", "DesignError", "DetectorConfigError", "FrameError", "RecordingFormatError", "RecordingIoError",
    "Recording", "alpha_index", "analyze", "bandpass", "bandpass_sos", "decode_frame", "detect", "encode_frame",
    "export_csv", "make_status", "microvolts_to_raw", "raw_to_microvolts", "read_recording", "render_scenario",
    "run_cli", "sign_extend_24", "validate_config", "welch_psd", "write_recording",
]


def render_scenario(scenario: str | PathLike, sample_rate: int = 250, gain: int = 24) -> np.ndarray:
    """Simulate a scenario (YAML text or a path to a .scn file)."""
    text = str(scenario)
    if "\n" not in text and not text.lstrip().startswith("{"):
        with open(text, encoding="utf-8") as f:
            text = f.read()
    return _pieeg.render_scenario(text, sample_rate, gain)


def detect(data: np.ndarray, fs: float, detectors: str = "blink,chew,alpha", offline: bool = True) -> list[dict]:
    """Blink/chew/alpha events. ``offline`` uses zero-phase filtering, else the causal path."""
    return json.loads(_pieeg._detect(np.asarray(data, dtype=float), fs, detectors, offline))


def analyze(data: np.ndarray, fs: float, detectors: str = "blink,chew,alpha") -> dict[str, Any]:
    """Offline report: events plus per-channel band powers."""
    return json.loads(_pieeg._analyze(np.asarray(data, dtype=float), fs, detectors))


@dataclass
class Recording:
    header: dict[str, Any]
    data: np.ndarray
    warnings: list[str] = field(default_factory=list)
    complete: bool = True

    @property
    def fs(self) -> float:
        return float(self.header["sample_rate"])


def read_recording(path: str | PathLike) -> Recording:
    header, data, warnings, complete = _pieeg._read_recording(path)
    return Recording(json.loads(header), data, list(warnings), complete)
