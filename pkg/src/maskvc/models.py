"""Converter and discriminator networks.

The converter is a 2D-downsample / 1D-residual / 2D-upsample CNN with gated
linear units throughout; the mask-aware variant takes the spectrogram and its
mask as two input channels, the plain variant takes one channel. The
discriminator is a fully convolutional patch classifier emitting a grid of
realness scores.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn


class NonFiniteActivationError(RuntimeError):
    """A forward pass produced NaN/Inf; message names the first bad stage."""


@dataclass(frozen=True)
class ModelPreset:
    """Channel widths for one model scale."""

    name: str
    conv_width: int
    disc_width: int


PRESETS = {
    # conv_width 96 puts the converter at ~16.3M parameters.
    "full": ModelPreset("full", conv_width=96, disc_width=64),
    # widths / 8: CPU-scale training in tests and desk experiments.
    "desk": ModelPreset("desk", conv_width=12, disc_width=8),
    # near-minimal widths for finite-difference gradient checks.
    "micro": ModelPreset("micro", conv_width=2, disc_width=2),
}

TEMPORAL_DOWNSAMPLE = 4  # two stride-2 stages in time
FREQ_DOWNSAMPLE = 4      # two stride-2 stages in frequency
MIN_DISC_FRAMES = 8


def glu_conv2d(in_ch, out_ch, kernel, stride=1, padding=0):
    """Conv producing 2*out_ch channels, gated down to out_ch."""
    return nn.Conv2d(in_ch, 2 * out_ch, kernel, stride=stride, padding=padding)


class Converter(nn.Module):
    """Spectrogram-to-spectrogram converter preserving input dims.

    in_channels=2 consumes (spectrogram, mask) pairs; in_channels=1 is the
    plain single-channel variant of the same network.
    """

    def __init__(self, n_mels: int = 80, width: int = 96, in_channels: int = 2):
        super().__init__()
        if n_mels % FREQ_DOWNSAMPLE != 0:
            raise ValueError(f"n_mels must be divisible by {FREQ_DOWNSAMPLE}")
        if in_channels not in (1, 2):
            raise ValueError("in_channels must be 1 or 2")
        w = width
        self.n_mels = n_mels
        self.width = w
        self.in_channels = in_channels
        f4 = n_mels // FREQ_DOWNSAMPLE
        flat = 4 * w * f4

        self.conv_in = glu_conv2d(in_channels, w, (5, 15), padding=(2, 7))
        self.down1 = glu_conv2d(w, 2 * w, (5, 5), stride=2, padding=2)
        self.norm_down1 = nn.InstanceNorm2d(4 * w, affine=True)
        self.down2 = glu_conv2d(2 * w, 4 * w, (5, 5), stride=2, padding=2)
        self.norm_down2 = nn.InstanceNorm2d(8 * w, affine=True)

        self.to_1d = nn.Conv1d(flat, 2 * w, 1)
        self.norm_1d_in = nn.InstanceNorm1d(2 * w, affine=True)
        self.res_first = nn.ModuleList(
            [nn.Conv1d(2 * w, 4 * w, 3, padding=1) for _ in range(6)])
        self.res_first_norm = nn.ModuleList(
            [nn.InstanceNorm1d(4 * w, affine=True) for _ in range(6)])
        self.res_second = nn.ModuleList(
            [nn.Conv1d(2 * w, 2 * w, 3, padding=1) for _ in range(6)])
        self.res_second_norm = nn.ModuleList(
            [nn.InstanceNorm1d(2 * w, affine=True) for _ in range(6)])
        self.to_2d = nn.Conv1d(2 * w, flat, 1)
        self.norm_1d_out = nn.InstanceNorm1d(flat, affine=True)

        self.up1 = glu_conv2d(4 * w, 8 * w, (3, 3), padding=1)
        self.norm_up1 = nn.InstanceNorm2d(4 * w, affine=True)
        self.up2 = glu_conv2d(2 * w, 4 * w, (3, 3), padding=1)
        self.norm_up2 = nn.InstanceNorm2d(2 * w, affine=True)
        self.shuffle = nn.PixelShuffle(2)
        self.conv_out = nn.Conv2d(w, 1, (5, 15), padding=(2, 7))

    def _run(self, x: torch.Tensor, record: list) -> torch.Tensor:
        def step(name, t):
            record.append((name, t))
            return t

        b = x.shape[0]
        h = step("conv_in", F.glu(self.conv_in(x), dim=1))
        h = step("down1", F.glu(self.norm_down1(self.down1(h)), dim=1))
        h = step("down2", F.glu(self.norm_down2(self.down2(h)), dim=1))
        f4, t4 = h.shape[2], h.shape[3]
        h = h.reshape(b, -1, t4)
        h = step("to_1d", self.norm_1d_in(self.to_1d(h)))
        for i in range(6):
            r = F.glu(self.res_first_norm[i](self.res_first[i](h)), dim=1)
            r = self.res_second_norm[i](self.res_second[i](r))
            h = step(f"res{i}", h + r)
        h = step("to_2d", self.norm_1d_out(self.to_2d(h)))
        h = h.reshape(b, -1, f4, t4)
        h = step("up1", F.glu(self.norm_up1(self.shuffle(self.up1(h))), dim=1))
        h = step("up2", F.glu(self.norm_up2(self.shuffle(self.up2(h))), dim=1))
        return step("conv_out", self.conv_out(h))

    def forward(self, spec: torch.Tensor, mask: torch.Tensor | None = None
                ) -> torch.Tensor:
        """spec: (B, 1, F, T) or (F, T); mask broadcast the same way.

        T must be divisible by the temporal downsampling factor. Output has
        the same (B, 1, F, T) shape as the input.
        """
        squeeze = spec.dim() == 2
        if squeeze:
            spec = spec[None, None]
            if mask is not None and mask.dim() == 2:
                mask = mask[None, None]
        if spec.shape[2] != self.n_mels:
            raise ValueError(
                f"expected {self.n_mels} mel bins, got {spec.shape[2]}")
        if spec.shape[3] % TEMPORAL_DOWNSAMPLE != 0:
            raise ValueError(
                f"frame count {spec.shape[3]} not divisible by "
                f"{TEMPORAL_DOWNSAMPLE}")
        if self.in_channels == 2:
            if mask is None:
                raise ValueError("mask-aware converter needs a mask channel")
            x = torch.cat([spec, mask.to(spec.dtype)], dim=1)
        else:
            x = spec
        record: list = []
        out = self._run(x, record)
        if not torch.isfinite(out).all():
            for idx, (name, t) in enumerate(record):
                if not torch.isfinite(t).all():
                    raise NonFiniteActivationError(
                        f"non-finite activation at stage {idx} ({name})")
            raise NonFiniteActivationError("non-finite converter output")
        return out[0, 0] if squeeze else out


class Discriminator(nn.Module):
    """Patch-level realness scorer; one score per (F/8, T/8) cell."""

    def __init__(self, n_mels: int = 80, width: int = 64):
        super().__init__()
        d = width
        self.n_mels = n_mels
        self.conv_in = glu_conv2d(1, d, (3, 3), padding=1)
        self.block1 = glu_conv2d(d, 2 * d, (3, 3), stride=2, padding=1)
        self.norm1 = nn.InstanceNorm2d(4 * d, affine=True)
        self.block2 = glu_conv2d(2 * d, 4 * d, (3, 3), stride=2, padding=1)
        self.norm2 = nn.InstanceNorm2d(8 * d, affine=True)
        self.block3 = glu_conv2d(4 * d, 8 * d, (3, 3), stride=2, padding=1)
        self.norm3 = nn.InstanceNorm2d(16 * d, affine=True)
        self.conv_out = nn.Conv2d(8 * d, 1, (3, 3), padding=1)

    @staticmethod
    def grid_shape(n_mels: int, n_frames: int) -> tuple[int, int]:
        """Score-grid dims for a given input: three ceil-halvings each axis."""
        f, t = n_mels, n_frames
        for _ in range(3):
            f = (f + 1) // 2
            t = (t + 1) // 2
        return f, t

    def forward(self, spec: torch.Tensor) -> torch.Tensor:
        squeeze = spec.dim() == 2
        if squeeze:
            spec = spec[None, None]
        if spec.shape[2] < MIN_DISC_FRAMES or spec.shape[3] < MIN_DISC_FRAMES:
            raise ValueError(
                f"input {tuple(spec.shape[2:])} smaller than the "
                f"discriminator receptive field")
        h = F.glu(self.conv_in(spec), dim=1)
        h = F.glu(self.norm1(self.block1(h)), dim=1)
        h = F.glu(self.norm2(self.block2(h)), dim=1)
        h = F.glu(self.norm3(self.block3(h)), dim=1)
        out = self.conv_out(h)
        return out[0, 0] if squeeze else out


def count_params(module: nn.Module) -> int:
    """Exact count of learnable scalars."""
    return sum(p.numel() for p in module.parameters())


def build_converter(preset: str, n_mels: int = 80, in_channels: int = 2
                    ) -> Converter:
    return Converter(n_mels=n_mels, width=PRESETS[preset].conv_width,
                     in_channels=in_channels)


def build_discriminator(preset: str, n_mels: int = 80) -> Discriminator:
    return Discriminator(n_mels=n_mels, width=PRESETS[preset].disc_width)
