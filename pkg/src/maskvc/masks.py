"""Binary spectrogram masks for the filling-in-frames training task.

Four families are supported:
  fif     one contiguous block of whole frames zeroed
  fif_ns  scattered frames zeroed (chosen without replacement)
  fis     one contiguous band of whole mel bins zeroed
  fip     independent per-cell dropout-style zeroing

Sizes are percentages of the masked axis, either constant or drawn
uniformly from [0, x_percent] per call.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass

import numpy as np

from .features import MelSpectrogram

MASK_FAMILIES = ("fif", "fif_ns", "fis", "fip")
SIZE_MODES = ("constant", "uniform")


@dataclass(frozen=True)
class MaskPolicy:
    family: str = "fif"
    size_mode: str = "uniform"
    x_percent: float = 50.0

    def __post_init__(self):
        if self.family not in MASK_FAMILIES:
            raise ValueError(f"unknown mask family {self.family!r}")
        if self.size_mode not in SIZE_MODES:
            raise ValueError(f"unknown size mode {self.size_mode!r}")
        if not (0.0 <= self.x_percent <= 100.0):
            raise ValueError("x_percent must lie in [0, 100]")

    def label(self) -> str:
        """Short name of the variant, e.g. 'fif 0-50' or 'fif 25'."""
        pct = f"{self.x_percent:g}"
        if self.size_mode == "uniform":
            return f"{self.family} 0-{pct}"
        return f"{self.family} {pct}"

    def to_dict(self) -> dict:
        return {
            "family": self.family,
            "size_mode": self.size_mode,
            "x_percent": self.x_percent,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MaskPolicy":
        return cls(d["family"], d["size_mode"], float(d["x_percent"]))


@dataclass
class Mask:
    """F x T matrix over {0, 1} with its sampling provenance."""

    values: np.ndarray
    policy: MaskPolicy
    seed_trace: str = ""

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float32)
        if self.values.ndim != 2:
            raise ValueError("mask must be 2-D")

    @property
    def zero_count(self) -> int:
        return int((self.values == 0.0).sum())


@dataclass
class MaskedMel:
    """Elementwise product of a spectrogram with a mask."""

    values: np.ndarray
    source_mask: Mask


def round_half_up(v: float) -> int:
    return int(math.floor(v + 0.5))


def _rng_digest(rng: np.random.Generator) -> str:
    state = repr(rng.bit_generator.state).encode()
    return hashlib.sha1(state).hexdigest()[:12]


def all_ones_mask(dims: tuple[int, int]) -> Mask:
    """The no-missing-frames mask used at conversion time."""
    n_bins, n_frames = dims
    if n_bins < 1 or n_frames < 1:
        raise ValueError("mask dims must be >= 1")
    policy = MaskPolicy(family="fif", size_mode="constant", x_percent=0.0)
    return Mask(np.ones((n_bins, n_frames), dtype=np.float32), policy, "all-ones")


def sample_mask(policy: MaskPolicy, dims: tuple[int, int],
                rng: np.random.Generator) -> Mask:
    """Draw one mask; deterministic given (policy, dims, generator state).

    The masked-axis size is s percent: constant mode uses x_percent, uniform
    mode redraws s ~ U[0, x_percent] per call. Frame/bin counts round half-up;
    a rounded size of zero yields an all-ones mask.
    """
    n_bins, n_frames = dims
    if n_bins < 1 or n_frames < 1:
        raise ValueError("mask dims must be >= 1")
    trace = _rng_digest(rng)
    if policy.size_mode == "constant":
        s = policy.x_percent
    else:
        s = rng.uniform(0.0, policy.x_percent)
    values = np.ones((n_bins, n_frames), dtype=np.float32)
    if policy.family == "fif":
        k = round_half_up(n_frames * s / 100.0)
        if k > 0:
            start = int(rng.integers(0, n_frames - k + 1))
            values[:, start:start + k] = 0.0
    elif policy.family == "fif_ns":
        k = round_half_up(n_frames * s / 100.0)
        if k > 0:
            frames = rng.choice(n_frames, size=k, replace=False)
            values[:, frames] = 0.0
    elif policy.family == "fis":
        k = round_half_up(n_bins * s / 100.0)
        if k > 0:
            start = int(rng.integers(0, n_bins - k + 1))
            values[start:start + k, :] = 0.0
    else:  # fip
        values[rng.random((n_bins, n_frames)) < s / 100.0] = 0.0
    return Mask(values=values, policy=policy,
                seed_trace=f"{policy.label()}@{trace}")


def apply_mask(mel: MelSpectrogram, mask: Mask) -> MaskedMel:
    """Elementwise product; kept entries are bit-identical to the input."""
    if mel.values.shape != mask.values.shape:
        raise ValueError(
            f"mask shape {mask.values.shape} does not match "
            f"spectrogram shape {mel.values.shape}"
        )
    return MaskedMel(values=mel.values * mask.values, source_mask=mask)
