"""Feature-extraction contracts: WAV loading, mel pipeline, normalization."""

import math

import numpy as np
import pytest
from scipy.io import wavfile

from maskvc.features import (
    MelSpectrogram,
    MomentAccumulator,
    NonMonoAudioError,
    NormStats,
    NormalizationError,
    SampleRateError,
    StftConfig,
    UnsupportedEncodingError,
    Waveform,
    compute_norm_stats,
    denormalize,
    frame_count,
    griffin_lim_audition,
    hz_to_mel,
    load_waveform,
    mel_filterbank,
    mel_spectrogram,
    mel_to_hz,
    normalize,
    read_feature_file,
    save_waveform,
    write_feature_file,
)


def _write_pcm16(path, samples, rate=22050):
    wavfile.write(str(path), rate, np.asarray(samples, dtype=np.int16))


class TestLoadWaveform:
    def test_one_second_pcm16(self, tmp_path):
        path = tmp_path / "one.wav"
        _write_pcm16(path, np.zeros(22050) + 1000)
        wav = load_waveform(path)
        assert wav.samples.size == 22050
        assert wav.sample_rate_hz == 22050

    def test_all_zero_pcm_is_exactly_zero(self, tmp_path):
        path = tmp_path / "zero.wav"
        _write_pcm16(path, np.zeros(4096))
        wav = load_waveform(path)
        assert np.all(wav.samples == 0.0)

    def test_stereo_rejected(self, tmp_path):
        path = tmp_path / "stereo.wav"
        wavfile.write(str(path), 22050,
                      np.zeros((1000, 2), dtype=np.int16))
        with pytest.raises(NonMonoAudioError):
            load_waveform(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_waveform(tmp_path / "nope.wav")

    def test_unsupported_encoding(self, tmp_path):
        path = tmp_path / "u8.wav"
        wavfile.write(str(path), 22050,
                      (np.zeros(1000) + 128).astype(np.uint8))
        with pytest.raises(UnsupportedEncodingError):
            load_waveform(path)

    def test_rate_mismatch_and_resample(self, tmp_path):
        path = tmp_path / "slow.wav"
        _write_pcm16(path, np.zeros(16000), rate=16000)
        with pytest.raises(SampleRateError):
            load_waveform(path)
        wav = load_waveform(path, resample=True)
        assert wav.sample_rate_hz == 22050
        assert abs(wav.samples.size - 22050) <= 2

    def test_float32_roundtrip(self, tmp_path):
        path = tmp_path / "f32.wav"
        data = (np.sin(np.linspace(0, 20, 3000)) * 0.3).astype(np.float32)
        wavfile.write(str(path), 22050, data)
        wav = load_waveform(path)
        assert np.allclose(wav.samples, data, atol=1e-7)

    def test_pcm16_save_load_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        wav = Waveform(rng.uniform(-0.9, 0.9, 5000), 22050)
        save_waveform(tmp_path / "rt.wav", wav)
        back = load_waveform(tmp_path / "rt.wav")
        assert np.max(np.abs(back.samples - wav.samples)) < 1.0 / 32767


class TestMelSpectrogram:
    def test_silence_clamps_to_log_floor(self):
        cfg = StftConfig()
        wav = Waveform(np.zeros(22050) + 1e-300, 22050)
        mel = mel_spectrogram(wav, cfg)
        assert np.all(mel.values == math.log(cfg.log_floor))

    def test_frame_count_one_second(self):
        cfg = StftConfig()
        wav = Waveform(np.random.default_rng(0).normal(0, 0.1, 22050), 22050)
        mel = mel_spectrogram(wav, cfg)
        assert mel.n_frames == 87

    def test_frame_count_formula_random_lengths(self):
        cfg = StftConfig()
        rng = np.random.default_rng(1)
        for _ in range(25):
            n = int(rng.integers(cfg.window_length, 60000))
            wav = Waveform(rng.normal(0, 0.1, n), 22050)
            mel = mel_spectrogram(wav, cfg)
            assert mel.n_frames == frame_count(n, cfg)
            assert mel.n_frames == 1 + (n + 2 * 512 - 1024) // 256

    def test_tone_peaks_in_band_containing_440(self, tone_wav):
        cfg = StftConfig()
        mel = mel_spectrogram(tone_wav, cfg)
        # independent filterbank geometry: textbook mel points
        edges = mel_to_hz(np.linspace(hz_to_mel(cfg.fmin_hz),
                                      hz_to_mel(cfg.fmax_hz),
                                      cfg.mel_bins + 2))
        argmax = np.argmax(mel.values, axis=0)
        for bin_idx in argmax:
            left, right = edges[bin_idx], edges[bin_idx + 2]
            assert left < 440.0 < right

    def test_too_short_waveform(self):
        cfg = StftConfig()
        with pytest.raises(ValueError):
            mel_spectrogram(Waveform(np.zeros(100) + 0.1, 22050), cfg)

    def test_deterministic(self, tone_wav):
        a = mel_spectrogram(tone_wav).values
        b = mel_spectrogram(tone_wav).values
        assert np.array_equal(a, b)


class TestFilterbank:
    def test_rows_non_negative_and_interior_bins_covered(self):
        cfg = StftConfig()
        fb = mel_filterbank(cfg, 22050)
        assert np.all(fb >= 0.0)
        freqs = np.linspace(0, 11025, cfg.window_length // 2 + 1)
        interior = (freqs > cfg.fmin_hz) & (freqs < cfg.fmax_hz)
        assert np.all(fb.sum(axis=0)[interior] > 0.0)

    def test_fmax_beyond_nyquist_rejected(self):
        cfg = StftConfig(fmax_hz=12000.0)
        with pytest.raises(ValueError):
            mel_filterbank(cfg, 22050)


class TestNormStats:
    def test_constant_corpus_clamps_std(self):
        mel = MelSpectrogram(np.full((4, 10), 3.25))
        with pytest.warns(RuntimeWarning):
            stats = compute_norm_stats([mel])
        assert np.allclose(stats.mean, 3.25)
        assert np.all(stats.std == 1e-8)

    def test_two_point_statistics(self):
        a = MelSpectrogram(np.zeros((4, 3)))
        b = MelSpectrogram(np.zeros((4, 3)) + 2.0)
        stats = compute_norm_stats([a, b])
        assert np.allclose(stats.mean, 1.0)
        assert np.allclose(stats.std, 1.0)

    def test_normalize_then_restat_is_standard(self):
        rng = np.random.default_rng(7)
        corpus = [MelSpectrogram(rng.normal(2.0, 1.5, (16, 40)))
                  for _ in range(5)]
        stats = compute_norm_stats(corpus)
        renorm = [normalize(m, stats) for m in corpus]
        restat = compute_norm_stats(
            [MelSpectrogram(m.values) for m in renorm])
        assert np.max(np.abs(restat.mean)) < 1e-6
        assert np.max(np.abs(restat.std - 1.0)) < 1e-6

    def test_empty_corpus(self):
        with pytest.raises(ValueError):
            compute_norm_stats([])

    def test_merge_is_order_independent(self):
        rng = np.random.default_rng(9)
        blocks = [rng.normal(0, 1, (6, n)) for n in (11, 3, 27, 8)]
        acc1 = MomentAccumulator(6)
        for b in blocks:
            acc1.update(b)
        acc2 = MomentAccumulator(6)
        for b in reversed(blocks):
            acc2.update(b)
        shard_a, shard_b = MomentAccumulator(6), MomentAccumulator(6)
        shard_a.update(blocks[0])
        shard_a.update(blocks[2])
        shard_b.update(blocks[1])
        shard_b.update(blocks[3])
        shard_b.merge(shard_a)
        s1, s2, s3 = (a.finalize() for a in (acc1, acc2, shard_b))
        for other in (s2, s3):
            assert np.allclose(s1.mean, other.mean, atol=1e-12)
            assert np.allclose(s1.std, other.std, atol=1e-12)

    def test_normalized_input_rejected(self):
        mel = MelSpectrogram(np.ones((2, 4)), normalized=True)
        with pytest.raises(NormalizationError):
            compute_norm_stats([mel])


class TestNormalizeDenormalize:
    def setup_method(self):
        rng = np.random.default_rng(5)
        self.stats = NormStats(mean=rng.normal(0, 2, 8),
                               std=rng.uniform(0.5, 2.0, 8))
        self.mel = MelSpectrogram(rng.normal(0, 3, (8, 20)))

    def test_value_at_mean_maps_to_zero(self):
        mel = MelSpectrogram(np.tile(self.stats.mean[:, None], (1, 5)))
        out = normalize(mel, self.stats)
        assert np.max(np.abs(out.values)) == 0.0

    def test_round_trip_identity(self):
        back = denormalize(normalize(self.mel, self.stats), self.stats)
        assert np.max(np.abs(back.values - self.mel.values)) < 1e-6

    def test_matches_scalar_oracle(self):
        out = normalize(self.mel, self.stats)
        for i in range(8):
            for j in range(0, 20, 7):
                expected = (self.mel.values[i, j] - self.stats.mean[i]) \
                    / self.stats.std[i]
                assert abs(out.values[i, j] - expected) < 1e-12

    def test_double_normalization_rejected(self):
        out = normalize(self.mel, self.stats)
        with pytest.raises(NormalizationError):
            normalize(out, self.stats)
        with pytest.raises(NormalizationError):
            denormalize(self.mel, self.stats)


class TestFeatureFiles:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(2)
        cfg = StftConfig()
        mel = MelSpectrogram(
            rng.normal(0, 2, (80, 33)).astype(np.float32), domain_tag="x")
        path = tmp_path / "u.mel"
        write_feature_file(path, mel, cfg, stats_id="train-x")
        back, header = read_feature_file(path)
        assert np.array_equal(back.values,
                              mel.values.astype(np.float32))
        assert header["norm_stats_id"] == "train-x"
        assert header["stft"] == cfg.to_dict()
        assert header["format_version"] == 1
        assert back.domain_tag == "x"

    def test_truncated_payload_rejected(self, tmp_path):
        cfg = StftConfig()
        mel = MelSpectrogram(np.zeros((8, 8), dtype=np.float32))
        path = tmp_path / "u.mel"
        write_feature_file(path, mel, cfg)
        path.write_bytes(path.read_bytes()[:-8])
        with pytest.raises(ValueError):
            read_feature_file(path)

    def test_missing_header(self, tmp_path):
        (tmp_path / "x.mel").write_bytes(b"\x00" * 16)
        with pytest.raises(FileNotFoundError):
            read_feature_file(tmp_path / "x.mel")


class TestGriffinLim:
    def test_tone_round_trip_recovers_dominant_frequency(self, tone_wav):
        cfg = StftConfig()
        mel = mel_spectrogram(tone_wav, cfg)
        wav = griffin_lim_audition(mel, cfg, iterations=40, seed=0)
        spectrum = np.abs(np.fft.rfft(wav.samples))
        freqs = np.fft.rfftfreq(wav.samples.size, 1 / 22050)
        peak = freqs[np.argmax(spectrum)]
        bin_width = 22050 / cfg.window_length
        assert abs(peak - 440.0) <= bin_width

    def test_zero_spectrogram_is_near_silent(self):
        cfg = StftConfig()
        mel = MelSpectrogram(np.full((80, 40), math.log(cfg.log_floor)))
        wav = griffin_lim_audition(mel, cfg, iterations=5, seed=0)
        rms = float(np.sqrt(np.mean(wav.samples ** 2)))
        assert rms < 1e-3

    def test_zero_iterations_deterministic(self, tone_wav):
        cfg = StftConfig()
        mel = mel_spectrogram(tone_wav, cfg)
        a = griffin_lim_audition(mel, cfg, iterations=0, seed=42)
        b = griffin_lim_audition(mel, cfg, iterations=0, seed=42)
        assert np.array_equal(a.samples, b.samples)

    def test_normalized_input_rejected(self):
        cfg = StftConfig()
        mel = MelSpectrogram(np.zeros((80, 40)), normalized=True)
        with pytest.raises(NormalizationError):
            griffin_lim_audition(mel, cfg)
