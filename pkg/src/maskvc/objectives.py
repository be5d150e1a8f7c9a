"""Loss terms for adversarial cycle training, in least-squares form.

All reductions are means over elements, so the loss weights are independent
of crop size. Scalar helpers accept either torch tensors (with autograd) or
numpy arrays; `full_objective` combines already-computed terms and works on
tensors and plain floats alike.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import torch


class NonFiniteLossError(RuntimeError):
    """A loss term evaluated to NaN/Inf; message names the term."""


@dataclass(frozen=True)
class LossWeights:
    lambda_cyc: float = 10.0
    lambda_id: float = 5.0
    id_active_until: int = 10_000

    def __post_init__(self):
        if self.lambda_cyc < 0 or self.lambda_id < 0 or self.id_active_until < 0:
            raise ValueError("loss weights must be non-negative")

    def to_dict(self) -> dict:
        return {
            "lambda_cyc": self.lambda_cyc,
            "lambda_id": self.lambda_id,
            "id_active_until": self.id_active_until,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "LossWeights":
        return cls(float(d["lambda_cyc"]), float(d["lambda_id"]),
                   int(d["id_active_until"]))


@dataclass
class LossBreakdown:
    """Per-term values for one training step.

    adv_*, adv2_* hold the converter-side adversarial terms; d_* hold the
    four discriminators' own losses, whose sum is total_d.
    """

    adv_xy: float = 0.0
    adv_yx: float = 0.0
    cyc_xyx: float = 0.0
    cyc_yxy: float = 0.0
    id_xy: float = 0.0
    id_yx: float = 0.0
    adv2_xyx: float = 0.0
    adv2_yxy: float = 0.0
    total_g: float = 0.0
    total_d: float = 0.0
    d_x: float = 0.0
    d_y: float = 0.0
    d2_x: float = 0.0
    d2_y: float = 0.0

    LOG_FIELDS = ("adv_xy", "adv_yx", "cyc_xyx", "cyc_yxy", "id_xy", "id_yx",
                  "adv2_xyx", "adv2_yxy", "total_g", "total_d")

    def as_floats(self) -> "LossBreakdown":
        out = LossBreakdown()
        for f in fields(self):
            v = getattr(self, f.name)
            setattr(out, f.name, float(v))
        return out

    def to_dict(self) -> dict:
        return {f.name: float(getattr(self, f.name)) for f in fields(self)}


def _check_finite(name, value):
    if torch.is_tensor(value):
        ok = bool(torch.isfinite(value).all())
    else:
        ok = bool(np.all(np.isfinite(value)))
    if not ok:
        raise NonFiniteLossError(f"non-finite values in {name}")


def lsgan_d_loss(scores_real, scores_fake):
    """Least-squares discriminator loss: real toward 1, fake toward 0."""
    _check_finite("scores_real", scores_real)
    _check_finite("scores_fake", scores_fake)
    return ((scores_real - 1.0) ** 2).mean() + (scores_fake ** 2).mean()


def lsgan_g_loss(scores_fake):
    """Least-squares generator loss: fake scores pushed toward 1."""
    _check_finite("scores_fake", scores_fake)
    return ((scores_fake - 1.0) ** 2).mean()


def log_gan_losses(scores_real, scores_fake):
    """Sigmoid/log adversarial losses. Reference mode for tests only; the
    training loop always uses the least-squares forms."""
    _check_finite("scores_real", scores_real)
    _check_finite("scores_fake", scores_fake)
    if torch.is_tensor(scores_real):
        sig, log = torch.sigmoid, torch.log
    else:
        sig, log = (lambda v: 1.0 / (1.0 + np.exp(-v))), np.log
    eps = 1e-12
    d = -(log(sig(scores_real) + eps)).mean() - (log(1.0 - sig(scores_fake) + eps)).mean()
    g = -(log(sig(scores_fake) + eps)).mean()
    return d, g


def _mean_abs_diff(a, b, what):
    ashape = tuple(a.shape)
    bshape = tuple(b.shape)
    if ashape != bshape:
        raise ValueError(f"{what}: shape mismatch {ashape} vs {bshape}")
    return abs(a - b).mean()


def masked_cycle_loss(original, reconstructed):
    """Mean absolute error between the input and its cyclic reconstruction.

    Identical to the plain cycle loss as a function of its arguments; the
    masking lives in how `reconstructed` was produced.
    """
    return _mean_abs_diff(reconstructed, original, "cycle loss")


def identity_loss(mapped, original):
    """Mean absolute error between a same-domain mapping and its input."""
    return _mean_abs_diff(mapped, original, "identity loss")


def second_adv_losses(scores_real, scores_recon):
    """(discriminator, generator) least-squares losses for the
    reconstruction-level adversarial game."""
    return (lsgan_d_loss(scores_real, scores_recon),
            lsgan_g_loss(scores_recon))


def full_objective(breakdown: LossBreakdown, weights: LossWeights,
                   iteration: int):
    """Weighted totals for one step.

    Returns (g_total, d_total): the converters minimize g_total, the four
    discriminators minimize d_total. The identity terms participate only
    while iteration < weights.id_active_until (strict cutoff).
    """
    b = breakdown
    g_total = (b.adv_xy + b.adv_yx
               + weights.lambda_cyc * (b.cyc_xyx + b.cyc_yxy)
               + b.adv2_xyx + b.adv2_yxy)
    if iteration < weights.id_active_until:
        g_total = g_total + weights.lambda_id * (b.id_xy + b.id_yx)
    d_total = b.d_x + b.d_y + b.d2_x + b.d2_y
    _check_finite("g_total", g_total)
    _check_finite("d_total", d_total)
    return g_total, d_total
