"""Conversion at test time: all-ones mask, arbitrary utterance lengths."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .features import MelSpectrogram, NormStats, StftConfig, \
    griffin_lim_audition, normalize, denormalize, read_feature_file, \
    save_waveform, write_feature_file
from .models import TEMPORAL_DOWNSAMPLE
from .training import TrainConfig, TrainState, load_checkpoint

MIN_CONVERT_FRAMES = 4

DIRECTIONS = ("xy", "yx")


@dataclass
class ConversionBundle:
    """A loaded checkpoint plus the per-domain normalization statistics."""

    state: TrainState
    cfg: TrainConfig
    stats_x: NormStats | None
    stats_y: NormStats | None

    @classmethod
    def load(cls, path, force: bool = False) -> "ConversionBundle":
        state, cfg, stats_x, stats_y = load_checkpoint(path, force=force)
        for net in state.converters() + state.discriminators():
            net.eval()
        return cls(state, cfg, stats_x, stats_y)

    def converter(self, direction: str):
        if direction not in DIRECTIONS:
            raise ValueError(f"direction must be one of {DIRECTIONS}")
        return self.state.conv_xy if direction == "xy" else self.state.conv_yx


def convert(bundle: ConversionBundle, mel: MelSpectrogram, direction: str
            ) -> MelSpectrogram:
    """Convert one normalized spectrogram; returns the denormalized result.

    The input must be normalized with the source-domain statistics. Frame
    counts that are not multiples of the temporal downsampling factor are
    reflect-padded internally and cropped back, so the output always has the
    input's frame count.
    """
    if not mel.normalized:
        raise ValueError("convert expects input normalized with the "
                         "source-domain statistics")
    n_frames = mel.n_frames
    if n_frames < MIN_CONVERT_FRAMES:
        raise ValueError(
            f"{n_frames} frames is below the minimum of {MIN_CONVERT_FRAMES}")
    values = np.asarray(mel.values, dtype=np.float64)
    remainder = n_frames % TEMPORAL_DOWNSAMPLE
    if remainder:
        pad = TEMPORAL_DOWNSAMPLE - remainder
        values = np.pad(values, ((0, 0), (0, pad)), mode="reflect")
    net = bundle.converter(direction)
    x = torch.as_tensor(values, dtype=torch.float32)[None, None]
    with torch.no_grad():
        if bundle.cfg.model_mode == "mask":
            out = net(x, torch.ones_like(x))
        else:
            out = net(x)
    out = out[0, 0].numpy().astype(np.float64)[:, :n_frames]
    converted = MelSpectrogram(out, domain_tag="y" if direction == "xy" else "x",
                               normalized=True)
    target_stats = bundle.stats_y if direction == "xy" else bundle.stats_x
    if target_stats is None:
        raise ValueError("checkpoint carries no target-domain statistics; "
                         "cannot denormalize the conversion")
    return denormalize(converted, target_stats)


@dataclass
class FileReport:
    file: str
    status: str
    detail: str = ""


def convert_corpus(bundle: ConversionBundle, dir_in, dir_out, direction: str,
                   write_wav: bool = False, stft: StftConfig | None = None,
                   gl_iterations: int = 60, seed: int = 0,
                   sample_rate_hz: int = 22050) -> list[FileReport]:
    """Convert every feature file in dir_in; returns one report row per file.

    Inputs are unnormalized feature files; they are normalized with the
    source-domain statistics from the checkpoint, converted, denormalized,
    and written to dir_out. A failing file is flagged in its report row
    without aborting the rest.
    """
    dir_in, dir_out = Path(dir_in), Path(dir_out)
    files = sorted(p for p in dir_in.glob("*.mel") if p.is_file())
    if not files:
        raise FileNotFoundError(f"no feature files (*.mel) in {dir_in}")
    dir_out.mkdir(parents=True, exist_ok=True)
    source_stats = bundle.stats_x if direction == "xy" else bundle.stats_y
    if source_stats is None:
        raise ValueError("checkpoint carries no source-domain statistics")
    stft = stft or StftConfig(mel_bins=bundle.cfg.n_mels)
    report = []
    for path in files:
        try:
            mel, header = read_feature_file(path)
            normalized = normalize(mel, source_stats)
            converted = convert(bundle, normalized, direction)
            out_path = dir_out / path.name
            write_feature_file(out_path, converted, stft,
                               stats_id=header.get("norm_stats_id", ""))
            if write_wav:
                wav = griffin_lim_audition(converted, stft, sample_rate_hz,
                                           iterations=gl_iterations, seed=seed)
                save_waveform(out_path.with_suffix(".wav"), wav)
            report.append(FileReport(path.name, "ok"))
        except Exception as exc:  # per-file fault isolation
            report.append(FileReport(path.name, "error",
                                     f"{type(exc).__name__}: {exc}"))
    return report
