"""Dual-direction adversarial training loop with per-sample mask freshness.

Every iteration derives its own RNG streams from (seed, iteration), so runs
are bit-reproducible and a resumed run continues exactly like an
uninterrupted one.
"""

from __future__ import annotations

import hashlib
import json
import time
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .features import MelSpectrogram, NormStats
from .masks import MaskPolicy, sample_mask
from .models import Converter, Discriminator, PRESETS, build_converter, \
    build_discriminator
from .objectives import LossBreakdown, LossWeights, NonFiniteLossError, \
    full_objective, identity_loss, lsgan_d_loss, lsgan_g_loss, masked_cycle_loss

CHECKPOINT_VERSION = 1
CONFIG_VERSION = 1
STREAM_DATA = 0
STREAM_MASK = 1


class ConfigMismatchError(RuntimeError):
    """Checkpoint was produced under a different configuration."""


class CorpusError(ValueError):
    """Training corpus is unusable (empty or all-too-short)."""


@dataclass(frozen=True)
class TrainConfig:
    iterations: int = 500_000
    lr_converter: float = 2e-4
    lr_discriminator: float = 1e-4
    beta1: float = 0.5
    beta2: float = 0.999
    batch_size: int = 1
    crop_frames: int = 64
    weights: LossWeights = field(default_factory=LossWeights)
    mask_policy: MaskPolicy = field(
        default_factory=lambda: MaskPolicy("fif", "uniform", 50.0))
    model_mode: str = "mask"  # "mask": 2-channel converter; "v2": 1-channel
    preset: str = "desk"
    n_mels: int = 80
    seed: int = 0
    checkpoint_every: int = 5000

    def __post_init__(self):
        if self.lr_converter <= 0 or self.lr_discriminator <= 0:
            raise ValueError("learning rates must be positive")
        if self.batch_size != 1:
            raise ValueError("only batch_size 1 is supported")
        if self.crop_frames % 4 != 0:
            raise ValueError("crop_frames must be divisible by the temporal "
                             "downsampling factor (4)")
        if self.model_mode not in ("mask", "v2"):
            raise ValueError("model_mode must be 'mask' or 'v2'")
        if self.preset not in PRESETS:
            raise ValueError(f"unknown preset {self.preset!r}")

    def to_dict(self) -> dict:
        return {
            "config_version": CONFIG_VERSION,
            "iterations": self.iterations,
            "lr_converter": self.lr_converter,
            "lr_discriminator": self.lr_discriminator,
            "beta1": self.beta1,
            "beta2": self.beta2,
            "batch_size": self.batch_size,
            "crop_frames": self.crop_frames,
            "weights": self.weights.to_dict(),
            "mask_policy": self.mask_policy.to_dict(),
            "model_mode": self.model_mode,
            "preset": self.preset,
            "n_mels": self.n_mels,
            "seed": self.seed,
            "checkpoint_every": self.checkpoint_every,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        version = d.pop("config_version", CONFIG_VERSION)
        if version != CONFIG_VERSION:
            raise ValueError(f"unsupported config version {version}")
        d["weights"] = LossWeights.from_dict(d["weights"])
        d["mask_policy"] = MaskPolicy.from_dict(d["mask_policy"])
        return cls(**d)


def config_hash(cfg: TrainConfig) -> str:
    canonical = json.dumps(cfg.to_dict(), sort_keys=True)
    return hashlib.sha256(canonical.encode()).hexdigest()


@dataclass
class TrainState:
    """Both converters, all four discriminators, and optimizer state."""

    conv_xy: Converter
    conv_yx: Converter
    disc_x: Discriminator
    disc_y: Discriminator
    disc2_x: Discriminator
    disc2_y: Discriminator
    opt_converters: torch.optim.Adam
    opt_discriminators: torch.optim.Adam
    iteration: int = 0

    def converters(self):
        return (self.conv_xy, self.conv_yx)

    def discriminators(self):
        return (self.disc_x, self.disc_y, self.disc2_x, self.disc2_y)


def init_train_state(cfg: TrainConfig) -> TrainState:
    """Fresh networks and optimizers, weight init seeded by cfg.seed."""
    torch.manual_seed(cfg.seed)
    in_channels = 2 if cfg.model_mode == "mask" else 1
    conv_xy = build_converter(cfg.preset, cfg.n_mels, in_channels)
    conv_yx = build_converter(cfg.preset, cfg.n_mels, in_channels)
    discs = [build_discriminator(cfg.preset, cfg.n_mels) for _ in range(4)]
    opt_g = torch.optim.Adam(
        list(conv_xy.parameters()) + list(conv_yx.parameters()),
        lr=cfg.lr_converter, betas=(cfg.beta1, cfg.beta2))
    opt_d = torch.optim.Adam(
        [p for d in discs for p in d.parameters()],
        lr=cfg.lr_discriminator, betas=(cfg.beta1, cfg.beta2))
    return TrainState(conv_xy, conv_yx, *discs,
                      opt_converters=opt_g, opt_discriminators=opt_d)


def _values_of(mel) -> np.ndarray:
    return mel.values if isinstance(mel, MelSpectrogram) else np.asarray(mel)


def crop_frames(mel, n: int, rng: np.random.Generator):
    """Contiguous n-frame crop with a uniformly random start."""
    values = _values_of(mel)
    n_frames = values.shape[1]
    if n_frames < n:
        raise ValueError(f"utterance of {n_frames} frames shorter than crop {n}")
    start = int(rng.integers(0, n_frames - n + 1))
    out = values[:, start:start + n]
    if isinstance(mel, MelSpectrogram):
        return MelSpectrogram(out.copy(), domain_tag=mel.domain_tag,
                              normalized=mel.normalized)
    return out


def _iteration_rng(seed: int, iteration: int, stream: int) -> np.random.Generator:
    return np.random.default_rng([seed & 0x7FFFFFFF, iteration, stream])


def _cycle_forward(state: TrainState, x, y, mask_x, mask_y, mode: str):
    """Both conversion directions plus their cyclic reconstructions."""
    ones = torch.ones_like(x)
    if mode == "mask":
        y_fake = state.conv_xy(x * mask_x, mask_x)
        x_fake = state.conv_yx(y * mask_y, mask_y)
        x_rec = state.conv_yx(y_fake, ones)
        y_rec = state.conv_xy(x_fake, ones)
    else:
        y_fake = state.conv_xy(x)
        x_fake = state.conv_yx(y)
        x_rec = state.conv_yx(y_fake)
        y_rec = state.conv_xy(x_fake)
    return y_fake, x_fake, x_rec, y_rec


def generator_objective(state: TrainState, x, y, mask_x, mask_y,
                        weights: LossWeights, iteration: int, mode: str):
    """g_total and its terms as tensors, at the current parameters.

    Shared by the training step (after the discriminator update) and by the
    finite-difference gradient check.
    """
    y_fake, x_fake, x_rec, y_rec = _cycle_forward(state, x, y, mask_x, mask_y,
                                                  mode)
    bd = LossBreakdown()
    bd.adv_xy = lsgan_g_loss(state.disc_y(y_fake))
    bd.adv_yx = lsgan_g_loss(state.disc_x(x_fake))
    bd.adv2_xyx = lsgan_g_loss(state.disc2_x(x_rec))
    bd.adv2_yxy = lsgan_g_loss(state.disc2_y(y_rec))
    bd.cyc_xyx = masked_cycle_loss(x, x_rec)
    bd.cyc_yxy = masked_cycle_loss(y, y_rec)
    if iteration < weights.id_active_until:
        ones = torch.ones_like(x)
        if mode == "mask":
            bd.id_xy = identity_loss(state.conv_xy(y, ones), y)
            bd.id_yx = identity_loss(state.conv_yx(x, ones), x)
        else:
            bd.id_xy = identity_loss(state.conv_xy(y), y)
            bd.id_yx = identity_loss(state.conv_yx(x), x)
    g_total, _ = full_objective(bd, weights, iteration)
    return g_total, bd


def train_step(state: TrainState, x_crop, y_crop, cfg: TrainConfig
               ) -> tuple[TrainState, LossBreakdown]:
    """One optimization step over both directions.

    Masks are freshly drawn from the (seed, iteration) stream. The
    discriminators update first on detached outputs, then the converters
    update against the refreshed discriminators.
    """
    i = state.iteration
    x = torch.as_tensor(_values_of(x_crop), dtype=torch.float32)[None, None]
    y = torch.as_tensor(_values_of(y_crop), dtype=torch.float32)[None, None]
    if x.shape != y.shape:
        raise ValueError(f"crop shapes differ: {tuple(x.shape)} vs {tuple(y.shape)}")
    dims = (x.shape[2], x.shape[3])

    mask_x = mask_y = None
    if cfg.model_mode == "mask":
        rng = _iteration_rng(cfg.seed, i, STREAM_MASK)
        mask_x = torch.as_tensor(
            sample_mask(cfg.mask_policy, dims, rng).values)[None, None]
        mask_y = torch.as_tensor(
            sample_mask(cfg.mask_policy, dims, rng).values)[None, None]

    bd = LossBreakdown()
    # Discriminator phase: converter outputs detached.
    y_fake, x_fake, x_rec, y_rec = _cycle_forward(
        state, x, y, mask_x, mask_y, cfg.model_mode)
    bd.d_x = lsgan_d_loss(state.disc_x(x), state.disc_x(x_fake.detach()))
    bd.d_y = lsgan_d_loss(state.disc_y(y), state.disc_y(y_fake.detach()))
    bd.d2_x = lsgan_d_loss(state.disc2_x(x), state.disc2_x(x_rec.detach()))
    bd.d2_y = lsgan_d_loss(state.disc2_y(y), state.disc2_y(y_rec.detach()))
    _, d_total = full_objective(bd, cfg.weights, i)
    state.opt_discriminators.zero_grad()
    d_total.backward()
    state.opt_discriminators.step()

    # Converter phase: adversarial terms against the updated discriminators.
    bd.adv_xy = lsgan_g_loss(state.disc_y(y_fake))
    bd.adv_yx = lsgan_g_loss(state.disc_x(x_fake))
    bd.adv2_xyx = lsgan_g_loss(state.disc2_x(x_rec))
    bd.adv2_yxy = lsgan_g_loss(state.disc2_y(y_rec))
    bd.cyc_xyx = masked_cycle_loss(x, x_rec)
    bd.cyc_yxy = masked_cycle_loss(y, y_rec)
    if i < cfg.weights.id_active_until:
        ones = torch.ones_like(x)
        if cfg.model_mode == "mask":
            bd.id_xy = identity_loss(state.conv_xy(y, ones), y)
            bd.id_yx = identity_loss(state.conv_yx(x, ones), x)
        else:
            bd.id_xy = identity_loss(state.conv_xy(y), y)
            bd.id_yx = identity_loss(state.conv_yx(x), x)
    g_total, _ = full_objective(bd, cfg.weights, i)
    state.opt_converters.zero_grad()
    g_total.backward()
    state.opt_converters.step()

    bd.total_g = g_total
    bd.total_d = d_total
    out = bd.as_floats()
    for name, value in out.to_dict().items():
        if not np.isfinite(value):
            raise NonFiniteLossError(
                f"iteration {i}: loss term {name} is non-finite; "
                f"breakdown: {out.to_dict()}")
    state.iteration = i + 1
    return state, out


def save_checkpoint(path, state: TrainState, cfg: TrainConfig,
                    stats_x: NormStats | None = None,
                    stats_y: NormStats | None = None) -> None:
    """Versioned binary checkpoint; see load_checkpoint."""
    payload = {
        "checkpoint_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "config_hash": config_hash(cfg),
        "iteration": state.iteration,
        "nets": {
            "conv_xy": state.conv_xy.state_dict(),
            "conv_yx": state.conv_yx.state_dict(),
            "disc_x": state.disc_x.state_dict(),
            "disc_y": state.disc_y.state_dict(),
            "disc2_x": state.disc2_x.state_dict(),
            "disc2_y": state.disc2_y.state_dict(),
        },
        "opt_converters": state.opt_converters.state_dict(),
        "opt_discriminators": state.opt_discriminators.state_dict(),
        "torch_rng_state": torch.get_rng_state(),
        "stats_x": stats_x.to_dict() if stats_x is not None else None,
        "stats_y": stats_y.to_dict() if stats_y is not None else None,
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, expected_config: TrainConfig | None = None,
                    force: bool = False):
    """Load a checkpoint; returns (state, cfg, stats_x, stats_y).

    If expected_config is given and its hash differs from the stored one,
    loading fails unless force is set.
    """
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"no checkpoint at {path}")
    payload = torch.load(path, weights_only=True)
    if payload.get("checkpoint_version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"unsupported checkpoint version {payload.get('checkpoint_version')}")
    cfg = TrainConfig.from_dict(payload["config"])
    if expected_config is not None:
        if config_hash(expected_config) != payload["config_hash"] and not force:
            raise ConfigMismatchError(
                "checkpoint config hash does not match the requested config "
                "(pass force to override)")
    state = init_train_state(cfg)
    for name in payload["nets"]:
        getattr(state, name).load_state_dict(payload["nets"][name])
    state.opt_converters.load_state_dict(payload["opt_converters"])
    state.opt_discriminators.load_state_dict(payload["opt_discriminators"])
    state.iteration = int(payload["iteration"])
    torch.set_rng_state(payload["torch_rng_state"])
    stats_x = NormStats.from_dict(payload["stats_x"]) if payload["stats_x"] else None
    stats_y = NormStats.from_dict(payload["stats_y"]) if payload["stats_y"] else None
    return state, cfg, stats_x, stats_y


def prepare_corpus(corpus, crop: int) -> list[np.ndarray]:
    """Normalize container types and drop utterances shorter than the crop."""
    usable = []
    for idx, mel in enumerate(corpus):
        values = _values_of(mel)
        if values.shape[1] < crop:
            warnings.warn(
                f"skipping utterance {idx}: {values.shape[1]} frames < "
                f"crop {crop}", RuntimeWarning)
            continue
        usable.append(np.asarray(values, dtype=np.float64))
    return usable


class TrainingLog:
    """Line-delimited JSON stream of per-iteration loss records."""

    def __init__(self, path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self._fh = self.path.open("a")

    def write(self, iteration: int, wall_time_s: float,
              breakdown: LossBreakdown) -> None:
        record = {"iteration": iteration, "wall_time_s": round(wall_time_s, 4)}
        record.update(breakdown.to_dict())
        self._fh.write(json.dumps(record) + "\n")
        self._fh.flush()

    def close(self) -> None:
        self._fh.close()


def read_training_log(path) -> list[dict]:
    return [json.loads(line) for line in Path(path).read_text().splitlines()
            if line.strip()]


def run_training(cfg: TrainConfig, corpus_x, corpus_y, out_dir=None,
                 resume=None, stats_x: NormStats | None = None,
                 stats_y: NormStats | None = None,
                 progress: bool = False) -> TrainState:
    """Train to cfg.iterations; returns the final state.

    corpus_x / corpus_y are unpaired collections of normalized spectrograms
    (arrays or MelSpectrogram). With out_dir set, checkpoints land in
    out_dir every cfg.checkpoint_every iterations (plus a final one) and the
    loss log streams to out_dir/train_log.jsonl.
    """
    torch.set_num_threads(1)  # these tensor sizes run faster single-threaded
    cx = prepare_corpus(corpus_x, cfg.crop_frames)
    cy = prepare_corpus(corpus_y, cfg.crop_frames)
    if not cx or not cy:
        raise CorpusError("both corpora need at least one utterance of "
                          f">= {cfg.crop_frames} frames")

    if resume is not None:
        state, cfg_loaded, ckpt_sx, ckpt_sy = load_checkpoint(
            resume, expected_config=cfg)
        stats_x = stats_x or ckpt_sx
        stats_y = stats_y or ckpt_sy
    else:
        state = init_train_state(cfg)

    log = None
    if out_dir is not None:
        out_dir = Path(out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        log = TrainingLog(out_dir / "train_log.jsonl")

    start_wall = time.time()
    try:
        while state.iteration < cfg.iterations:
            i = state.iteration
            rng = _iteration_rng(cfg.seed, i, STREAM_DATA)
            xm = cx[int(rng.integers(0, len(cx)))]
            x_crop = crop_frames(xm, cfg.crop_frames, rng)
            ym = cy[int(rng.integers(0, len(cy)))]
            y_crop = crop_frames(ym, cfg.crop_frames, rng)
            state, bd = train_step(state, x_crop, y_crop, cfg)
            if log is not None:
                log.write(i, time.time() - start_wall, bd)
            if progress and (i + 1) % 500 == 0:
                print(f"iter {i + 1}/{cfg.iterations} "
                      f"g={bd.total_g:.4f} d={bd.total_d:.4f}", flush=True)
            if out_dir is not None and cfg.checkpoint_every > 0 \
                    and state.iteration % cfg.checkpoint_every == 0:
                save_checkpoint(
                    out_dir / f"checkpoint_{state.iteration:08d}.pt",
                    state, cfg, stats_x, stats_y)
    finally:
        if log is not None:
            log.close()

    if out_dir is not None:
        save_checkpoint(out_dir / "checkpoint_final.pt", state, cfg,
                        stats_x, stats_y)
    return state
