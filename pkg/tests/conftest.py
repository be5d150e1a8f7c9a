"""Shared fixtures: tiny deterministic corpora and feature sets."""

import numpy as np
import pytest
import torch

from maskvc import synth
from maskvc.features import StftConfig, Waveform, compute_norm_stats, \
    mel_spectrogram

torch.set_num_threads(1)


@pytest.fixture(scope="session")
def tone_wav():
    """One second of a 440 Hz tone at the standard rate."""
    sr = 22050
    t = np.arange(sr) / sr
    return Waveform(0.5 * np.sin(2 * np.pi * 440.0 * t), sr)


@pytest.fixture(scope="session")
def synth_corpus_dir(tmp_path_factory):
    """Small two-domain corpus: 6 train + 2 eval utterances per domain."""
    out = tmp_path_factory.mktemp("corpus")
    spec = synth.SynthSpec(n_utterances=6, n_eval_utterances=2,
                           duration_range_s=(1.0, 1.4), seed=11)
    rows = synth.generate(spec, out)
    return out, rows


@pytest.fixture(scope="session")
def small_mel_corpus(synth_corpus_dir):
    """Log-mel features (8 bins, for micro-preset tests) of the corpus."""
    out, _ = synth_corpus_dir
    cfg = StftConfig(mel_bins=8)
    corpora = {}
    for domain in ("a", "b"):
        mels = []
        for wav_path in sorted((out / domain / "train").glob("*.wav")):
            from maskvc.features import load_waveform

            mels.append(mel_spectrogram(load_waveform(wav_path), cfg))
        corpora[domain] = mels
    stats = {d: compute_norm_stats(corpora[d], corpus_id=d) for d in corpora}
    return cfg, corpora, stats
