"""Synthetic patients with a controllable pre-ictal signature.

Each channel is Gaussian noise around a baseline mean.  Before every
seizure the mean drifts linearly, reaching ``drift`` baseline standard
deviations at onset.  Blood volume pulse also carries a sinusoidal pulse.
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

from ..errors import ConfigError, ContractError
from .series import ChannelSeries, PatientRecording, SeizureAnnotation

SYNTH_CHANNELS = ("BVP", "EDA", "HR", "TEMP", "ACC_X", "ACC_Y", "ACC_Z")
START_TIME_MS = 1_600_000_000_000

DEFAULT_RATES = {"BVP": 8.0, "EDA": 4.0, "HR": 1.0, "TEMP": 4.0, "ACC_X": 4.0, "ACC_Y": 4.0, "ACC_Z": 4.0}
DEFAULT_BASELINE = {
    "BVP": (0.0, 20.0),
    "EDA": (2.0, 0.3),
    "HR": (75.0, 4.0),
    "TEMP": (33.0, 0.2),
    "ACC_X": (-10.0, 4.0),
    "ACC_Y": (20.0, 4.0),
    "ACC_Z": (55.0, 4.0),
}


@dataclass
class PatientProfile:
    patient_id: str
    seizures: list[tuple[float, str]]  # (onset in hours from start, seizure type)
    baseline: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(DEFAULT_BASELINE))
    drift: dict[str, float] = field(default_factory=dict)
    ramp_minutes: float = 60.0
    preictal_horizon_minutes: float = 60.0
    noise_level: float = 1.0
    pulse_amplitude: float = 2.0
    sample_rates: dict[str, float] = field(default_factory=lambda: dict(DEFAULT_RATES))
    rng_seed: int = 0
    start_time_ms: int = START_TIME_MS

    def __post_init__(self):
        if self.ramp_minutes > self.preictal_horizon_minutes:
            raise ConfigError(f"{self.patient_id}: ramp longer than the pre-ictal horizon")
        if self.noise_level < 0:
            raise ConfigError(f"{self.patient_id}: noise level must be >= 0")
        onsets = [s[0] for s in self.seizures]
        if any(b <= a for a, b in zip(onsets, onsets[1:])):
            raise ConfigError(f"{self.patient_id}: seizure onsets must be increasing")
        unknown = set(self.drift) - set(SYNTH_CHANNELS)
        if unknown:
            raise ConfigError(f"{self.patient_id}: drift for unknown channels {sorted(unknown)}")


def _ramp(t_s: np.ndarray, onsets_s: list[float], ramp_s: float) -> np.ndarray:
    out = np.zeros_like(t_s)
    for onset in onsets_s:
        inside = (t_s >= onset - ramp_s) & (t_s < onset)
        out[inside] = (t_s[inside] - (onset - ramp_s)) / ramp_s
    return out


def synth_generate(profile: PatientProfile, duration_hours: float) -> PatientRecording:
    """Deterministic synthetic recording for one patient."""
    duration_s = duration_hours * 3600.0
    horizon_s = profile.preictal_horizon_minutes * 60.0
    onsets_s = [h * 3600.0 for h, _ in profile.seizures]
    for onset in onsets_s:
        if onset - horizon_s < 0 or onset >= duration_s:
            raise ContractError(
                f"{profile.patient_id}: seizure at {onset / 3600:.3f} h does not fit a {duration_hours} h "
                f"recording with a {profile.preictal_horizon_minutes} min horizon"
            )
    rng = np.random.default_rng(profile.rng_seed)
    ramp_s = profile.ramp_minutes * 60.0
    series = {}
    for ch in SYNTH_CHANNELS:
        rate = profile.sample_rates[ch]
        n = int(np.floor(duration_s * rate)) + 1
        t = np.arange(n) / rate
        mean, std = profile.baseline[ch]
        shape = profile.drift.get(ch, 0.0) * _ramp(t, onsets_s, ramp_s)
        noise = rng.standard_normal(n) * profile.noise_level
        values = mean + std * (noise + shape)
        if ch == "BVP":
            beat_hz = profile.baseline["HR"][0] / 60.0
            values = values + std * profile.pulse_amplitude * np.sin(2 * np.pi * beat_hz * t)
        series[ch] = ChannelSeries(profile.patient_id, ch, profile.start_time_ms, rate, values)
    annotations = [
        SeizureAnnotation(profile.patient_id, f"{profile.patient_id}-sz{i + 1}",
                          profile.start_time_ms + int(round(onset * 1000)), kind)
        for i, (onset, (_, kind)) in enumerate(zip(onsets_s, profile.seizures))
    ]
    return PatientRecording(profile.patient_id, series, annotations)


@dataclass
class SyntheticCorpus:
    duration_hours: float
    profiles: list[PatientProfile]


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in (override or {}).items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def load_profiles(path: str | Path) -> SyntheticCorpus:
    """Read a corpus description: shared ``defaults`` plus a ``patients`` list.

    A patient entry may set ``invert: true`` to negate its drift and
    ``drift_scale`` to multiply it.
    """
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"synthetic profile file not found: {path}")
    with open(path) as fh:
        doc = yaml.safe_load(fh) or {}
    defaults = doc.get("defaults", {})
    if "patients" not in doc:
        raise ConfigError(f"{path}: no 'patients' list")
    duration = float(defaults.get("duration_hours", doc.get("duration_hours", 8.25)))
    profiles = []
    for i, entry in enumerate(doc["patients"]):
        merged = _merge({k: v for k, v in defaults.items() if k != "duration_hours"}, entry)
        invert = bool(merged.pop("invert", False))
        scale = float(merged.pop("drift_scale", 1.0)) * (-1.0 if invert else 1.0)
        baseline = {**DEFAULT_BASELINE, **{k: tuple(v) for k, v in merged.pop("baseline", {}).items()}}
        drift = {k: float(v) * scale for k, v in merged.pop("drift", {}).items()}
        rates = {**DEFAULT_RATES, **{k: float(v) for k, v in merged.pop("sample_rates", {}).items()}}
        seizures = [(float(h), str(kind)) for h, kind in merged.pop("seizures")]
        merged.setdefault("rng_seed", i)
        if "seed" in merged:
            merged["rng_seed"] = merged.pop("seed")
        try:
            profiles.append(PatientProfile(
                patient_id=str(merged.pop("patient_id")), seizures=seizures, baseline=baseline,
                drift=drift, sample_rates=rates, **merged,
            ))
        except TypeError as exc:
            raise ConfigError(f"{path}: bad patient entry #{i}: {exc}") from None
    return SyntheticCorpus(duration, profiles)
