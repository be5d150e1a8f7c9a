"""Waveform I/O, log mel-spectrogram extraction, and corpus normalization."""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.io import wavfile

DEFAULT_SAMPLE_RATE = 22050
FEATURE_FORMAT_VERSION = 1
STD_FLOOR = 1e-8


class AudioFormatError(ValueError):
    """Input audio violates the expected PCM WAV contract."""


class NonMonoAudioError(AudioFormatError):
    """More than one channel in the input file."""


class UnsupportedEncodingError(AudioFormatError):
    """Sample encoding the loader does not handle."""


class SampleRateError(AudioFormatError):
    """Sample rate differs from the configured rate and resampling is off."""


class NormalizationError(ValueError):
    """Normalize/denormalize called on a spectrogram in the wrong state."""


@dataclass
class Waveform:
    """Mono audio samples scaled to [-1, 1]."""

    samples: np.ndarray
    sample_rate_hz: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float64)
        if self.samples.ndim != 1 or self.samples.size == 0:
            raise ValueError("waveform must be a non-empty 1-D sample array")
        if not np.all(np.isfinite(self.samples)):
            raise ValueError("waveform contains non-finite samples")
        if self.sample_rate_hz <= 0:
            raise ValueError("sample_rate_hz must be positive")

    @property
    def duration_s(self) -> float:
        return self.samples.size / self.sample_rate_hz


@dataclass(frozen=True)
class StftConfig:
    """Analysis settings shared by feature extraction and reconstruction."""

    window_length: int = 1024
    hop_length: int = 256
    mel_bins: int = 80
    fmin_hz: float = 0.0
    fmax_hz: float = 11025.0
    log_floor: float = 1e-5

    def __post_init__(self):
        if self.hop_length > self.window_length:
            raise ValueError("hop_length must not exceed window_length")
        if self.hop_length <= 0 or self.window_length <= 0:
            raise ValueError("window_length and hop_length must be positive")
        if self.mel_bins < 1:
            raise ValueError("mel_bins must be >= 1")
        if not (0.0 <= self.fmin_hz < self.fmax_hz):
            raise ValueError("need 0 <= fmin_hz < fmax_hz")
        if self.log_floor <= 0.0:
            raise ValueError("log_floor must be positive")

    def validate_rate(self, sample_rate_hz: int) -> None:
        if self.fmax_hz > sample_rate_hz / 2:
            raise ValueError(
                f"fmax_hz {self.fmax_hz} exceeds Nyquist for rate {sample_rate_hz}"
            )

    def to_dict(self) -> dict:
        return {
            "window_length": self.window_length,
            "hop_length": self.hop_length,
            "mel_bins": self.mel_bins,
            "fmin_hz": self.fmin_hz,
            "fmax_hz": self.fmax_hz,
            "log_floor": self.log_floor,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "StftConfig":
        return cls(**{k: d[k] for k in cls().to_dict()})


@dataclass
class MelSpectrogram:
    """Log mel energies, bins along axis 0 and frames along axis 1."""

    values: np.ndarray
    domain_tag: str = ""
    normalized: bool = False

    def __post_init__(self):
        self.values = np.asarray(self.values)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError("mel values must be a 2-D (bins x frames) matrix")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mel values contain non-finite entries")

    @property
    def n_bins(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


@dataclass
class NormStats:
    """Per-bin mean and standard deviation of a training corpus."""

    mean: np.ndarray
    std: np.ndarray
    corpus_id: str = ""

    def __post_init__(self):
        self.mean = np.atleast_1d(np.asarray(self.mean, dtype=np.float64))
        self.std = np.atleast_1d(np.asarray(self.std, dtype=np.float64))
        if self.mean.shape != self.std.shape:
            raise ValueError("mean and std must have matching shapes")
        if np.any(self.std <= 0.0):
            raise ValueError("std must be positive elementwise")

    def to_dict(self) -> dict:
        return {
            "mean": self.mean.tolist(),
            "std": self.std.tolist(),
            "corpus_id": self.corpus_id,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "NormStats":
        return cls(np.asarray(d["mean"]), np.asarray(d["std"]), d.get("corpus_id", ""))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2))

    @classmethod
    def load(cls, path) -> "NormStats":
        return cls.from_dict(json.loads(Path(path).read_text()))


def load_waveform(path, expected_rate: int = DEFAULT_SAMPLE_RATE,
                  resample: bool = False) -> Waveform:
    """Read a mono PCM WAV file and scale samples to [-1, 1].

    16-bit and 32-bit integer PCM and 32/64-bit float encodings are accepted.
    A rate other than `expected_rate` raises unless `resample` is set.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no such audio file: {path}")
    try:
        rate, data = wavfile.read(str(path))
    except ValueError as exc:
        raise UnsupportedEncodingError(f"{path}: {exc}") from exc
    if data.ndim != 1:
        raise NonMonoAudioError(
            f"non-mono input: {path} has {data.shape[1]} channels"
        )
    if data.dtype == np.int16:
        samples = data.astype(np.float64) / 32768.0
    elif data.dtype == np.int32:
        samples = data.astype(np.float64) / 2147483648.0
    elif data.dtype in (np.float32, np.float64):
        samples = data.astype(np.float64)
    else:
        raise UnsupportedEncodingError(
            f"unsupported sample encoding {data.dtype} in {path}"
        )
    if rate != expected_rate:
        if not resample:
            raise SampleRateError(
                f"{path}: rate {rate} != expected {expected_rate}; "
                "pass resample to convert"
            )
        from scipy.signal import resample_poly

        g = np.gcd(int(rate), int(expected_rate))
        samples = resample_poly(samples, expected_rate // g, rate // g)
        rate = expected_rate
    return Waveform(np.clip(samples, -1.0, 1.0), int(rate))


def save_waveform(path, wav: Waveform) -> None:
    """Write 16-bit PCM WAV."""
    clipped = np.clip(wav.samples, -1.0, 1.0)
    pcm = np.round(clipped * 32767.0).astype(np.int16)
    wavfile.write(str(path), wav.sample_rate_hz, pcm)


def hz_to_mel(f):
    return 2595.0 * np.log10(1.0 + np.asarray(f, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filterbank(cfg: StftConfig, sample_rate_hz: int) -> np.ndarray:
    """Triangular mel filterbank, shape (mel_bins, n_fft//2 + 1), peak value 1."""
    cfg.validate_rate(sample_rate_hz)
    n_bins = cfg.window_length // 2 + 1
    fft_freqs = np.linspace(0.0, sample_rate_hz / 2.0, n_bins)
    mel_points = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz),
                             cfg.mel_bins + 2)
    hz_points = mel_to_hz(mel_points)
    fb = np.zeros((cfg.mel_bins, n_bins), dtype=np.float64)
    for i in range(cfg.mel_bins):
        left, center, right = hz_points[i], hz_points[i + 1], hz_points[i + 2]
        rising = (fft_freqs - left) / max(center - left, 1e-12)
        falling = (right - fft_freqs) / max(right - center, 1e-12)
        fb[i] = np.clip(np.minimum(rising, falling), 0.0, 1.0)
    return fb


def mel_center_frequencies(cfg: StftConfig) -> np.ndarray:
    """Center frequency (Hz) of each mel filter."""
    mel_points = np.linspace(hz_to_mel(cfg.fmin_hz), hz_to_mel(cfg.fmax_hz),
                             cfg.mel_bins + 2)
    return mel_to_hz(mel_points[1:-1])


def frame_count(n_samples: int, cfg: StftConfig) -> int:
    """Frames produced for an n-sample input under center padding."""
    pad = cfg.window_length // 2
    return 1 + (n_samples + 2 * pad - cfg.window_length) // cfg.hop_length


def _frame_signal(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    pad = cfg.window_length // 2
    padded = np.pad(samples, pad, mode="reflect")
    frames = np.lib.stride_tricks.sliding_window_view(padded, cfg.window_length)
    return frames[:: cfg.hop_length]


def stft(samples: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Complex STFT, shape (window_length//2 + 1, frames); Hann window,
    reflect center padding by window_length//2."""
    if samples.size < cfg.window_length:
        raise ValueError(
            f"waveform of {samples.size} samples is shorter than one "
            f"window ({cfg.window_length})"
        )
    frames = _frame_signal(np.asarray(samples, dtype=np.float64), cfg)
    window = np.hanning(cfg.window_length)
    return np.fft.rfft(frames * window, axis=1).T


def istft(spec: np.ndarray, cfg: StftConfig) -> np.ndarray:
    """Inverse of `stft` by windowed overlap-add; returns (T-1)*hop samples."""
    frames = np.fft.irfft(spec.T, n=cfg.window_length, axis=1)
    window = np.hanning(cfg.window_length)
    n_frames = frames.shape[0]
    length = (n_frames - 1) * cfg.hop_length + cfg.window_length
    num = np.zeros(length)
    den = np.zeros(length)
    wsq = window * window
    for t in range(n_frames):
        start = t * cfg.hop_length
        num[start:start + cfg.window_length] += frames[t] * window
        den[start:start + cfg.window_length] += wsq
    out = num / np.maximum(den, 1e-8)
    pad = cfg.window_length // 2
    return out[pad:length - pad]


def mel_spectrogram(wav: Waveform, cfg: StftConfig = StftConfig()) -> MelSpectrogram:
    """80-bin (by default) log mel-spectrogram of a waveform.

    Power spectra are projected through the triangular filterbank, clamped at
    cfg.log_floor, and log-compressed. Output frame count follows
    `frame_count`.
    """
    spec = stft(wav.samples, cfg)
    power = np.abs(spec) ** 2
    fb = mel_filterbank(cfg, wav.sample_rate_hz)
    mel_power = fb @ power
    values = np.log(np.maximum(mel_power, cfg.log_floor))
    return MelSpectrogram(values=values, normalized=False)


class MomentAccumulator:
    """Streaming per-bin mean/variance with an order-stable parallel merge."""

    def __init__(self, n_bins: int):
        self.count = 0
        self.mean = np.zeros(n_bins, dtype=np.float64)
        self.m2 = np.zeros(n_bins, dtype=np.float64)

    def update(self, values: np.ndarray) -> None:
        """Fold in a (bins x frames) block."""
        values = np.asarray(values, dtype=np.float64)
        n = values.shape[1]
        if n == 0:
            return
        block_mean = values.mean(axis=1)
        block_m2 = ((values - block_mean[:, None]) ** 2).sum(axis=1)
        self._merge_raw(n, block_mean, block_m2)

    def merge(self, other: "MomentAccumulator") -> None:
        self._merge_raw(other.count, other.mean, other.m2)

    def _merge_raw(self, n_b, mean_b, m2_b) -> None:
        n_a = self.count
        if n_b == 0:
            return
        if n_a == 0:
            self.count = n_b
            self.mean = mean_b.copy()
            self.m2 = m2_b.copy()
            return
        delta = mean_b - self.mean
        total = n_a + n_b
        self.mean = self.mean + delta * (n_b / total)
        self.m2 = self.m2 + m2_b + delta * delta * (n_a * n_b / total)
        self.count = total

    def finalize(self, corpus_id: str = "") -> NormStats:
        if self.count == 0:
            raise ValueError("no frames accumulated")
        var = self.m2 / self.count
        std = np.sqrt(var)
        degenerate = std < STD_FLOOR
        if np.any(degenerate):
            warnings.warn(
                f"{int(degenerate.sum())} mel bin(s) have (near-)zero variance; "
                f"std clamped to {STD_FLOOR}",
                RuntimeWarning,
            )
            std = np.maximum(std, STD_FLOOR)
        return NormStats(mean=self.mean, std=std, corpus_id=corpus_id)


def compute_norm_stats(corpus, corpus_id: str = "") -> NormStats:
    """Per-bin mean/std over all frames of a corpus of unnormalized mels."""
    corpus = list(corpus)
    if not corpus:
        raise ValueError("empty corpus")
    acc = None
    for mel in corpus:
        if mel.normalized:
            raise NormalizationError("corpus statistics require unnormalized input")
        if acc is None:
            acc = MomentAccumulator(mel.n_bins)
        acc.update(mel.values)
    return acc.finalize(corpus_id)


def normalize(mel: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    """(v - mean) / std per bin."""
    if mel.normalized:
        raise NormalizationError("input is already normalized")
    values = (np.asarray(mel.values, dtype=np.float64)
              - stats.mean[:, None]) / stats.std[:, None]
    return MelSpectrogram(values=values, domain_tag=mel.domain_tag, normalized=True)


def denormalize(mel: MelSpectrogram, stats: NormStats) -> MelSpectrogram:
    """v * std + mean per bin; inverse of `normalize`."""
    if not mel.normalized:
        raise NormalizationError("input is not normalized")
    values = (np.asarray(mel.values, dtype=np.float64)
              * stats.std[:, None] + stats.mean[:, None])
    return MelSpectrogram(values=values, domain_tag=mel.domain_tag, normalized=False)


def write_feature_file(path, mel: MelSpectrogram, cfg: StftConfig,
                       stats_id: str = "") -> None:
    """Write raw little-endian float32, bin-major, plus a sidecar text header.

    The header (path + '.json') records dims, the analysis config, the
    normalization-stats id, and the format version. Round trips are bit-exact.
    """
    path = Path(path)
    values = np.ascontiguousarray(mel.values, dtype="<f4")
    path.write_bytes(values.tobytes(order="C"))
    header = {
        "format_version": FEATURE_FORMAT_VERSION,
        "n_bins": mel.n_bins,
        "n_frames": mel.n_frames,
        "stft": cfg.to_dict(),
        "norm_stats_id": stats_id,
        "normalized": mel.normalized,
        "domain_tag": mel.domain_tag,
    }
    Path(str(path) + ".json").write_text(json.dumps(header, indent=2))


def read_feature_file(path) -> tuple[MelSpectrogram, dict]:
    """Read a feature file written by `write_feature_file`."""
    path = Path(path)
    header_path = Path(str(path) + ".json")
    if not path.is_file() or not header_path.is_file():
        raise FileNotFoundError(f"feature file or header missing for {path}")
    header = json.loads(header_path.read_text())
    if header.get("format_version") != FEATURE_FORMAT_VERSION:
        raise ValueError(
            f"unsupported feature format version {header.get('format_version')}"
        )
    raw = np.frombuffer(path.read_bytes(), dtype="<f4")
    n_bins, n_frames = header["n_bins"], header["n_frames"]
    if raw.size != n_bins * n_frames:
        raise ValueError(
            f"feature payload of {path} has {raw.size} values, "
            f"header says {n_bins}x{n_frames}"
        )
    mel = MelSpectrogram(
        values=raw.reshape(n_bins, n_frames),
        domain_tag=header.get("domain_tag", ""),
        normalized=header.get("normalized", False),
    )
    return mel, header


def griffin_lim_audition(mel: MelSpectrogram, cfg: StftConfig,
                         sample_rate_hz: int = DEFAULT_SAMPLE_RATE,
                         iterations: int = 60, seed: int = 0) -> Waveform:
    """Audition-quality waveform from a log mel-spectrogram.

    Inverts the filterbank by non-negative least squares per frame, then runs
    iterative phase refinement starting from seeded random phases. Meant for
    listening checks only, not synthesis quality.
    """
    if mel.normalized:
        raise NormalizationError("denormalize before reconstruction")
    fb = mel_filterbank(cfg, sample_rate_hz)
    mel_power = np.exp(np.asarray(mel.values, dtype=np.float64))
    mel_power = np.maximum(mel_power - cfg.log_floor, 0.0)
    # Moore-Penrose inversion with clipping; cheap and adequate for audition.
    linear_power = np.clip(np.linalg.pinv(fb) @ mel_power, 0.0, None)
    magnitude = np.sqrt(linear_power)
    rng = np.random.default_rng(seed)
    phase = np.exp(2j * np.pi * rng.random(magnitude.shape))
    signal = istft(magnitude * phase, cfg)
    for _ in range(iterations):
        spec = stft(signal, cfg)
        spec = spec[:, : magnitude.shape[1]]
        if spec.shape[1] < magnitude.shape[1]:
            spec = np.pad(spec, ((0, 0), (0, magnitude.shape[1] - spec.shape[1])))
        phase = np.exp(1j * np.angle(spec))
        signal = istft(magnitude * phase, cfg)
    peak = np.max(np.abs(signal))
    if peak > 1.0:
        signal = signal / peak
    return Waveform(signal, sample_rate_hz)
