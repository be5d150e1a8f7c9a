"""Synthetic two-domain speech-like corpora for desk-scale experiments.

Utterances are harmonic stacks with slowly drifting fundamentals, vibrato,
and smooth amplitude envelopes: strong temporal continuity makes masked
frames predictable from their neighbors, which is exactly what the masked
training task needs to demonstrate. Training sets use disjoint per-utterance
seeds in the two domains (non-parallel by construction); evaluation sets
share contour seeds across domains so converted files have an index-paired
reference.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .features import Waveform, save_waveform


@dataclass(frozen=True)
class VoiceParams:
    """One domain's voice: fundamental range and spectral envelope."""

    f0_hz: float = 160.0
    drift_semitones: float = 2.0
    vibrato_hz: float = 5.0
    vibrato_semitones: float = 0.3
    n_harmonics: int = 10
    harmonic_decay: float = 1.0          # amplitude of harmonic k ~ k**-decay
    formant_centers_hz: tuple = ()       # optional resonance bumps
    formant_bandwidth_hz: float = 500.0

    def to_dict(self) -> dict:
        return {
            "f0_hz": self.f0_hz,
            "drift_semitones": self.drift_semitones,
            "vibrato_hz": self.vibrato_hz,
            "vibrato_semitones": self.vibrato_semitones,
            "n_harmonics": self.n_harmonics,
            "harmonic_decay": self.harmonic_decay,
            "formant_centers_hz": list(self.formant_centers_hz),
            "formant_bandwidth_hz": self.formant_bandwidth_hz,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "VoiceParams":
        d = dict(d)
        d["formant_centers_hz"] = tuple(d.get("formant_centers_hz", ()))
        return cls(**d)


@dataclass(frozen=True)
class SynthSpec:
    n_utterances: int = 10
    n_eval_utterances: int = 0
    duration_range_s: tuple = (1.2, 2.0)
    voice_a: VoiceParams = field(default_factory=VoiceParams)
    voice_b: VoiceParams = field(
        default_factory=lambda: VoiceParams(f0_hz=260.0,
                                            formant_centers_hz=()))
    noise_floor: float = 1e-3
    sample_rate_hz: int = 22050
    seed: int = 0

    def __post_init__(self):
        if self.n_utterances < 1:
            raise ValueError("need at least one utterance per domain")
        if self.duration_range_s[0] <= 0 \
                or self.duration_range_s[0] > self.duration_range_s[1]:
            raise ValueError("bad duration range")
        if self.voice_a == self.voice_b:
            raise ValueError("domains must differ in at least one parameter")
        nyquist = self.sample_rate_hz / 2
        for voice in (self.voice_a, self.voice_b):
            top = voice.f0_hz * 2 ** ((voice.drift_semitones
                                       + voice.vibrato_semitones) / 12.0)
            if top * voice.n_harmonics >= nyquist:
                raise ValueError(
                    f"harmonic stack of f0={voice.f0_hz} with "
                    f"{voice.n_harmonics} harmonics exceeds Nyquist")


@dataclass
class ManifestRow:
    file: str
    domain: str
    split: str
    f0_mean_hz: float
    f0_min_hz: float
    f0_max_hz: float
    duration_s: float


def _sentence_latents(rng: np.random.Generator, spec: SynthSpec) -> dict:
    """Domain-independent 'what is said': contour and envelope shapes."""
    lo, hi = spec.duration_range_s
    return {
        "duration_s": rng.uniform(lo, hi),
        "drift_rate_hz": rng.uniform(0.2, 0.6),
        "drift_phase": rng.uniform(0, 2 * np.pi),
        "drift_scale": rng.uniform(0.5, 1.0),
        "vibrato_phase": rng.uniform(0, 2 * np.pi),
        "amp_rate_hz": rng.uniform(0.5, 1.5),
        "amp_phase": rng.uniform(0, 2 * np.pi),
        "noise_key": int(rng.integers(0, 2 ** 31)),
    }


def _render(latents: dict, voice: VoiceParams, spec: SynthSpec):
    """Apply a domain voice to sentence latents; returns (samples, f0 track)."""
    sr = spec.sample_rate_hz
    n = int(round(latents["duration_s"] * sr))
    t = np.arange(n) / sr
    drift = voice.drift_semitones * latents["drift_scale"] * np.sin(
        2 * np.pi * latents["drift_rate_hz"] * t + latents["drift_phase"])
    vibrato = voice.vibrato_semitones * np.sin(
        2 * np.pi * voice.vibrato_hz * t + latents["vibrato_phase"])
    f0 = voice.f0_hz * 2.0 ** ((drift + vibrato) / 12.0)
    phase = 2 * np.pi * np.cumsum(f0) / sr
    envelope = 0.6 + 0.4 * np.sin(
        2 * np.pi * latents["amp_rate_hz"] * t + latents["amp_phase"]) ** 2
    signal = np.zeros(n)
    for k in range(1, voice.n_harmonics + 1):
        amp = k ** -voice.harmonic_decay
        if voice.formant_centers_hz:
            mean_fk = k * voice.f0_hz
            bumps = sum(
                np.exp(-0.5 * ((mean_fk - c) / voice.formant_bandwidth_hz) ** 2)
                for c in voice.formant_centers_hz)
            amp = amp * (0.1 + bumps)
        signal += amp * np.sin(k * phase)
    signal *= envelope
    noise_rng = np.random.default_rng(latents["noise_key"])
    signal += spec.noise_floor * noise_rng.standard_normal(n)
    fade = min(int(0.02 * sr), n // 4)
    ramp = np.linspace(0.0, 1.0, fade)
    signal[:fade] *= ramp
    signal[-fade:] *= ramp[::-1]
    signal *= 0.7 / np.max(np.abs(signal))
    return signal, f0


def generate(spec: SynthSpec, out_dir) -> list[ManifestRow]:
    """Write the two-domain corpus and its manifest; returns manifest rows.

    Layout: out_dir/<domain>/<split>/<name>.wav with domains 'a' and 'b',
    splits 'train' and (when n_eval_utterances > 0) 'eval'. Same spec and
    seed always produce bit-identical files.
    """
    out_dir = Path(out_dir)
    rows: list[ManifestRow] = []
    jobs = []
    for index in range(spec.n_utterances):
        for code, domain in ((0, "a"), (1, "b")):
            # disjoint sentence seeds: nothing is parallel across domains
            rng = np.random.default_rng([spec.seed & 0x7FFFFFFF, code, index])
            jobs.append((domain, "train", index, _sentence_latents(rng, spec)))
    for index in range(spec.n_eval_utterances):
        rng = np.random.default_rng([spec.seed & 0x7FFFFFFF, 2, index])
        latents = _sentence_latents(rng, spec)
        for domain in ("a", "b"):
            # shared latents: eval files are index-paired across domains
            jobs.append((domain, "eval", index, latents))
    for domain, split, index, latents in jobs:
        voice = spec.voice_a if domain == "a" else spec.voice_b
        samples, f0 = _render(latents, voice, spec)
        rel = Path(domain) / split / f"{domain}_{index:03d}.wav"
        path = out_dir / rel
        path.parent.mkdir(parents=True, exist_ok=True)
        save_waveform(path, Waveform(samples, spec.sample_rate_hz))
        rows.append(ManifestRow(
            file=str(rel), domain=domain, split=split,
            f0_mean_hz=float(f0.mean()), f0_min_hz=float(f0.min()),
            f0_max_hz=float(f0.max()),
            duration_s=len(samples) / spec.sample_rate_hz))
    manifest_path = out_dir / "manifest.csv"
    with open(manifest_path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["file", "domain", "split", "f0_mean_hz",
                         "f0_min_hz", "f0_max_hz", "duration_s"])
        for row in rows:
            writer.writerow([row.file, row.domain, row.split,
                             f"{row.f0_mean_hz:.3f}", f"{row.f0_min_hz:.3f}",
                             f"{row.f0_max_hz:.3f}", f"{row.duration_s:.4f}"])
    return rows
