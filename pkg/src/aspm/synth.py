"""Seeded generator of labeled strain-gauge-like respiration recordings.

The carrier is a sinusoid whose amplitude is scaled down inside apnea and
hypopnea events.  Baseline random-walk drift, occasional step shifts and
Gaussian noise are layered on top.  Event placement, carrier phase and the
nuisance components draw from independent RNG streams, so two configs that
differ only in nuisance settings share the exact same events.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .signal import (
    PERIOD_SECONDS, Device, Event, EventAnnotation, EventKind, Recording,
)


class SynthConfigError(ValueError):
    pass


@dataclass(frozen=True)
class SynthConfig:
    duration: float = 4 * 3600.0
    breath_rate: float = 0.25
    breath_amplitude: float = 1.0
    apnea_rate: float = 15.0            # events per hour
    event_duration_range: tuple = (10.0, 40.0)
    hypopnea_fraction: float = 0.3
    apnea_gain: float = 0.05
    hypopnea_gain: float = 0.6
    drift_sd: float = 0.0               # per-sample random-walk step
    shift_probability: float = 0.0      # per minute
    shift_sd: float = 3.0
    noise_sd: float = 0.05
    sample_rate: float = 10.0
    jitter_sd: float = 0.0
    artifact_rate: float = 0.0          # artifact segments per hour
    artifact_duration_range: tuple = (30.0, 180.0)
    period_aligned: bool = False        # keep every event inside one 60 s period
    seed: int = 0
    subject_id: str = "synth"
    device: Device = Device.LOW_QUALITY
    recording_id: str = ""

    def validate(self) -> None:
        nonneg = ("duration", "breath_rate", "breath_amplitude", "apnea_rate", "drift_sd",
                  "shift_probability", "shift_sd", "noise_sd", "jitter_sd", "artifact_rate")
        for name in nonneg:
            v = getattr(self, name)
            if not (math.isfinite(v) and v >= 0):
                raise SynthConfigError(f"{name} must be finite and >= 0, got {v}")
        if self.sample_rate <= 0:
            raise SynthConfigError("sample_rate must be > 0")
        if self.duration * self.sample_rate < 1:
            raise SynthConfigError("duration too short for a single sample")
        lo, hi = self.event_duration_range
        if lo < 10.0 or hi < lo:
            raise SynthConfigError(f"event_duration_range must satisfy 10 <= lo <= hi, got {(lo, hi)}")
        if self.period_aligned and hi > PERIOD_SECONDS:
            raise SynthConfigError("period-aligned events cannot exceed 60 s")
        alo, ahi = self.artifact_duration_range
        if alo <= 0 or ahi < alo:
            raise SynthConfigError("artifact_duration_range must satisfy 0 < lo <= hi")
        for name in ("hypopnea_fraction", "apnea_gain", "hypopnea_gain", "shift_probability"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise SynthConfigError(f"{name} must lie in [0, 1], got {v}")


def _place_events(cfg: SynthConfig, rng: np.random.Generator) -> list[Event]:
    lo, hi = cfg.event_duration_range
    n_target = rng.poisson(cfg.apnea_rate * cfg.duration / 3600.0)
    events: list[Event] = []
    taken_slots: set[int] = set()
    n_slots = int(cfg.duration // PERIOD_SECONDS)
    for _ in range(n_target):
        dur = float(rng.uniform(lo, hi))
        kind = EventKind.HYPOPNEA if rng.random() < cfg.hypopnea_fraction else EventKind.APNEA
        for _attempt in range(100):
            if cfg.period_aligned:
                if n_slots == 0:
                    break
                slot = int(rng.integers(n_slots))
                if slot in taken_slots:
                    continue
                start = slot * PERIOD_SECONDS + float(rng.uniform(0.0, PERIOD_SECONDS - dur))
            else:
                if cfg.duration <= dur:
                    break
                start = float(rng.uniform(0.0, cfg.duration - dur))
            # a few seconds of normal breathing must separate consecutive events
            if any(start < ev.end + 5.0 and ev.start < start + dur + 5.0 for ev in events):
                continue
            events.append(Event(start, start + dur, kind))
            if cfg.period_aligned:
                taken_slots.add(slot)
            break
    events.sort(key=lambda e: e.start)
    return events


def _place_artifacts(cfg: SynthConfig, rng: np.random.Generator) -> list[Event]:
    lo, hi = cfg.artifact_duration_range
    out = []
    for _ in range(rng.poisson(cfg.artifact_rate * cfg.duration / 3600.0)):
        dur = float(rng.uniform(lo, hi))
        start = float(rng.uniform(0.0, max(cfg.duration - dur, 0.0)))
        out.append(Event(start, min(start + dur, cfg.duration), EventKind.ARTIFACT))
    return out


def _timestamps(cfg: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    n = int(round(cfg.duration * cfg.sample_rate))
    dt = 1.0 / cfg.sample_rate
    t = np.arange(n) * dt
    if cfg.jitter_sd > 0:
        # clipped jitter keeps samples strictly ordered and non-negative
        j = np.clip(rng.normal(0.0, cfg.jitter_sd, n), -0.45 * dt, 0.45 * dt)
        j[0] = abs(j[0])
        t = t + j
    return t


def generate(cfg: SynthConfig) -> tuple[Recording, EventAnnotation]:
    cfg.validate()
    ss = np.random.SeedSequence(cfg.seed)
    ev_rng, phase_rng, time_rng, drift_rng, shift_rng, noise_rng, art_rng = (
        np.random.default_rng(s) for s in ss.spawn(7)
    )
    events = _place_events(cfg, ev_rng)
    artifacts = _place_artifacts(cfg, art_rng)
    phase = float(phase_rng.uniform(0.0, 2.0 * np.pi))

    t = _timestamps(cfg, time_rng)
    n = t.size
    gain = np.ones(n)
    for ev in events:
        g = cfg.apnea_gain if ev.kind == EventKind.APNEA else cfg.hypopnea_gain
        gain[(t >= ev.start) & (t < ev.end)] = g
    x = cfg.breath_amplitude * gain * np.sin(2.0 * np.pi * cfg.breath_rate * t + phase)

    if cfg.drift_sd > 0:
        x = x + np.cumsum(drift_rng.normal(0.0, cfg.drift_sd, n))
    if cfg.shift_probability > 0:
        n_min = int(math.ceil(cfg.duration / 60.0))
        hits = shift_rng.random(n_min) < cfg.shift_probability
        steps = np.where(hits, shift_rng.normal(0.0, cfg.shift_sd, n_min), 0.0)
        level = np.cumsum(steps)
        # a shift in minute m lands at a random second inside that minute
        offsets = shift_rng.uniform(0.0, 60.0, n_min)
        change_t = np.arange(n_min) * 60.0 + offsets
        idx = np.searchsorted(change_t, t, side="right") - 1
        x = x + np.where(idx >= 0, level[np.clip(idx, 0, None)], 0.0)
    if cfg.noise_sd > 0:
        x = x + noise_rng.normal(0.0, cfg.noise_sd, n)
    for ev in artifacts:
        m = (t >= ev.start) & (t < ev.end)
        x[m] += noise_rng.normal(0.0, 5.0 * max(cfg.breath_amplitude, 1e-3), int(m.sum()))

    rec_id = cfg.recording_id or f"{cfg.subject_id}_{Device(cfg.device).value}"
    rec = Recording(cfg.subject_id, Device(cfg.device), t, x, cfg.sample_rate, rec_id)
    return rec, EventAnnotation(rec_id, tuple(events + artifacts))


# Nuisance presets for the two device roles.
HIGH_QUALITY_NUISANCE = dict(drift_sd=0.0, shift_probability=0.0, noise_sd=0.05)
LOW_QUALITY_NUISANCE = dict(drift_sd=0.01, shift_probability=0.05, shift_sd=3.0, noise_sd=0.15)


def cohort_configs(n_subjects: int = 20, hours: float = 4.0, ahi_range=(0.0, 40.0),
                   seed: int = 0, **overrides) -> list[SynthConfig]:
    """Per-subject configs with AHIs spread evenly over ``ahi_range``.

    Breathing rate and amplitude vary between subjects; extra keyword
    arguments override every config.
    """
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0xC0]))
    ahis = np.linspace(ahi_range[0], ahi_range[1], n_subjects)
    rng.shuffle(ahis)
    out = []
    for i, ahi in enumerate(ahis):
        base = SynthConfig(
            duration=hours * 3600.0,
            breath_rate=float(rng.uniform(0.2, 0.3)),
            breath_amplitude=float(rng.uniform(0.7, 1.3)),
            apnea_rate=float(ahi),
            seed=int(rng.integers(2**63)),
            subject_id=f"S{i:02d}",
        )
        out.append(replace(base, **overrides))
    return out


def device_variant(cfg: SynthConfig, device: Device, **overrides) -> SynthConfig:
    """Same subject and events, nuisance model of ``device``."""
    device = Device(device)
    preset = HIGH_QUALITY_NUISANCE if device == Device.HIGH_QUALITY else LOW_QUALITY_NUISANCE
    params = {**preset, **overrides}
    return replace(cfg, device=device, recording_id=f"{cfg.subject_id}_{device.value}", **params)
