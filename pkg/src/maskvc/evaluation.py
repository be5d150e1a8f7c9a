"""Objective evaluation: mel-cepstral distortion and the ablation harness.

Mel-cepstra are orthonormal cosine transforms of our log-mel features, so
absolute distortion numbers are not comparable to results computed with a
different analyzer; the harness ranks variants against each other under
shared data and seeds.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fft import dct

from .features import MelSpectrogram, NormStats, normalize, read_feature_file
from .models import count_params
from .runtime import ConversionBundle, convert
from .training import TrainConfig, run_training

MCD_CONSTANT = 10.0 * math.sqrt(2.0) / math.log(10.0)

# Published full-scale MCD (dB) for these variants on the four standard
# speaker pairs. Desk-scale numbers use a different analyzer and corpus and
# are NOT comparable; only orderings carry over.
REFERENCE_FULL_SCALE_MCD = {
    "fif 0":      {"SF-TF": 7.66, "SM-TM": 7.11, "SF-TM": 6.91, "SM-TF": 8.11},
    "fif 25":     {"SF-TF": 7.45, "SM-TM": 6.85, "SF-TM": 6.76, "SM-TF": 7.84},
    "fif 0-25":   {"SF-TF": 7.45, "SM-TM": 6.83, "SF-TM": 6.78, "SM-TF": 7.80},
    "fif 0-50":   {"SF-TF": 7.37, "SM-TM": 6.77, "SF-TM": 6.73, "SM-TF": 7.64},
    "fif 0-75":   {"SF-TF": 7.40, "SM-TM": 6.75, "SF-TM": 6.72, "SM-TF": 7.66},
    "fif_ns 0-50": {"SF-TF": 7.53, "SM-TM": 7.00, "SF-TM": 6.90, "SM-TF": 7.97},
    "fis 0-50":   {"SF-TF": 7.52, "SM-TM": 6.95, "SF-TM": 6.88, "SM-TF": 7.94},
    "fip 0-50":   {"SF-TF": 7.65, "SM-TM": 6.97, "SF-TM": 7.09, "SM-TF": 8.24},
    "v2":         {"SF-TF": 7.66, "SM-TM": 7.07, "SF-TM": 6.96, "SM-TF": 8.07},
}


@dataclass
class MelCepstrum:
    """Cosine-transform coefficients per frame, shape (order, frames)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2 or self.values.shape[1] < 1:
            raise ValueError("mel-cepstrum must be (order x frames)")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("mel-cepstrum contains non-finite entries")

    @property
    def order(self) -> int:
        return self.values.shape[0]

    @property
    def n_frames(self) -> int:
        return self.values.shape[1]


def mel_cepstrum(mel: MelSpectrogram, order: int = 35) -> MelCepstrum:
    """Orthonormal DCT-II of each log-mel frame, truncated to `order`."""
    if mel.normalized:
        raise ValueError("mel-cepstrum expects denormalized log-mel input")
    if order > mel.n_bins:
        raise ValueError(f"order {order} exceeds {mel.n_bins} mel bins")
    if order < 1:
        raise ValueError("order must be >= 1")
    coeffs = dct(np.asarray(mel.values, dtype=np.float64), type=2, axis=0,
                 norm="ortho")
    return MelCepstrum(coeffs[:order])


@dataclass
class DtwResult:
    path: np.ndarray  # (L, 2) index pairs, monotone, (0,0) .. (Ta-1, Tb-1)
    cost: float       # summed per-pair Euclidean distance along the path


def dtw_align(a: MelCepstrum, b: MelCepstrum) -> DtwResult:
    """Monotone alignment minimizing summed Euclidean frame distance.

    Distances use coefficients 1..order-1 (the energy coefficient is
    excluded). Steps are (1,0), (0,1), (1,1); ties break toward the
    diagonal, then toward advancing the first sequence.
    """
    av = a.values[1:].T  # (Ta, order-1)
    bv = b.values[1:].T
    ta, tb = av.shape[0], bv.shape[0]
    diff = av[:, None, :] - bv[None, :, :]
    dist = np.sqrt((diff * diff).sum(axis=2))
    acc = np.full((ta, tb), np.inf)
    move = np.zeros((ta, tb), dtype=np.uint8)  # 0 diag, 1 up, 2 left
    acc[0, 0] = dist[0, 0]
    for i in range(1, ta):
        acc[i, 0] = acc[i - 1, 0] + dist[i, 0]
        move[i, 0] = 1
    for j in range(1, tb):
        acc[0, j] = acc[0, j - 1] + dist[0, j]
        move[0, j] = 2
    for i in range(1, ta):
        row = acc[i]
        prev = acc[i - 1]
        for j in range(1, tb):
            best = prev[j - 1]
            m = 0
            if prev[j] < best:
                best = prev[j]
                m = 1
            if row[j - 1] < best:
                best = row[j - 1]
                m = 2
            row[j] = best + dist[i, j]
            move[i, j] = m
    i, j = ta - 1, tb - 1
    rev = [(i, j)]
    while (i, j) != (0, 0):
        m = move[i, j]
        if m == 0:
            i, j = i - 1, j - 1
        elif m == 1:
            i -= 1
        else:
            j -= 1
        rev.append((i, j))
    path = np.array(rev[::-1], dtype=np.int64)
    return DtwResult(path=path, cost=float(acc[ta - 1, tb - 1]))


def mcd(converted: MelCepstrum, target: MelCepstrum) -> float:
    """Mel-cepstral distortion in dB over the DTW alignment path.

    Coefficient 0 is excluded; the per-pair distance is scaled by
    10*sqrt(2)/ln(10) and averaged along the path.
    """
    if converted.order != target.order:
        raise ValueError("mel-cepstrum orders differ")
    result = dtw_align(converted, target)
    if len(result.path) == 0:
        raise ValueError("empty alignment path")
    ca = converted.values[1:]
    cb = target.values[1:]
    diffs = ca[:, result.path[:, 0]] - cb[:, result.path[:, 1]]
    return float(MCD_CONSTANT * np.mean(np.sqrt((diffs * diffs).sum(axis=0))))


def mcd_between_dirs(converted_dir, target_dir, order: int = 35) -> list[dict]:
    """Pair feature files by name across two directories and score each pair."""
    converted_dir, target_dir = Path(converted_dir), Path(target_dir)
    names = sorted(p.name for p in converted_dir.glob("*.mel"))
    if not names:
        raise FileNotFoundError(f"no feature files in {converted_dir}")
    rows = []
    for name in names:
        target_path = target_dir / name
        if not target_path.is_file():
            rows.append({"file": name, "mcd_db": float("nan"),
                         "status": "missing target"})
            continue
        conv_mel, _ = read_feature_file(converted_dir / name)
        tgt_mel, _ = read_feature_file(target_path)
        value = mcd(mel_cepstrum(conv_mel, order), mel_cepstrum(tgt_mel, order))
        rows.append({"file": name, "mcd_db": value, "status": "ok"})
    return rows


@dataclass(frozen=True)
class AblationVariant:
    label: str
    cfg: TrainConfig


@dataclass
class AblationCorpora:
    """Shared data for every ablation cell.

    train_x / train_y: unpaired training utterances (unnormalized log-mel).
    eval_pairs: (source, target-reference) utterances, index-paired, used
    for distortion scoring after conversion.
    """

    train_x: list
    train_y: list
    eval_pairs_xy: list
    eval_pairs_yx: list
    stats_x: NormStats
    stats_y: NormStats


@dataclass
class AblationReport:
    rows: list = field(default_factory=list)
    failures: list = field(default_factory=list)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.DictWriter(
                fh, fieldnames=["variant", "pair", "mcd_db", "param_count",
                                "seed"])
            writer.writeheader()
            for row in self.rows:
                writer.writerow(row)

    def render_table(self) -> str:
        variants = []
        for row in self.rows:
            if row["variant"] not in variants:
                variants.append(row["variant"])
        pairs = []
        for row in self.rows:
            if row["pair"] not in pairs:
                pairs.append(row["pair"])
        lines = ["variant          " + "".join(f"{p:>12}" for p in pairs)
                 + "      #param"]
        for v in variants:
            cells = []
            param = ""
            for p in pairs:
                match = [r for r in self.rows
                         if r["variant"] == v and r["pair"] == p]
                cells.append(f"{match[0]['mcd_db']:12.3f}" if match
                             else " " * 12)
                if match:
                    param = f"{match[0]['param_count']:>12}"
            lines.append(f"{v:<17}" + "".join(cells) + param)
        if self.failures:
            lines.append("")
            lines.append("failed cells:")
            for f in self.failures:
                lines.append(f"  {f['variant']}: {f['error']}")
        lines.append("")
        lines.append("reference full-scale MCD [dB] (different corpus and "
                     "analyzer; orderings only):")
        header = ["SF-TF", "SM-TM", "SF-TM", "SM-TF"]
        lines.append("variant          " + "".join(f"{p:>12}" for p in header))
        for label, vals in REFERENCE_FULL_SCALE_MCD.items():
            lines.append(f"{label:<17}"
                         + "".join(f"{vals[p]:12.2f}" for p in header))
        return "\n".join(lines)


def _run_ablation_cell(variant: AblationVariant, corpora: AblationCorpora,
                       order: int):
    """Train one variant and score both conversion directions."""
    norm_x = [normalize(m, corpora.stats_x) for m in corpora.train_x]
    norm_y = [normalize(m, corpora.stats_y) for m in corpora.train_y]
    state = run_training(variant.cfg, norm_x, norm_y)
    bundle = ConversionBundle(state, variant.cfg, corpora.stats_x,
                              corpora.stats_y)
    params = count_params(state.conv_xy)
    rows = []
    for direction, pairs, src_stats in (
            ("xy", corpora.eval_pairs_xy, corpora.stats_x),
            ("yx", corpora.eval_pairs_yx, corpora.stats_y)):
        if not pairs:
            continue
        scores = []
        for src, ref in pairs:
            out = convert(bundle, normalize(src, src_stats), direction)
            scores.append(mcd(mel_cepstrum(out, order),
                              mel_cepstrum(ref, order)))
        rows.append({
            "variant": variant.label,
            "pair": "A-B" if direction == "xy" else "B-A",
            "mcd_db": float(np.mean(scores)),
            "param_count": params,
            "seed": variant.cfg.seed,
        })
    return rows


def run_ablation(matrix: list, corpora: AblationCorpora, order: int = 35,
                 workers: int = 1) -> AblationReport:
    """Train and score every variant in the matrix.

    Cells are independent; with workers > 1 they run in parallel processes.
    A failed cell is recorded in report.failures and the remaining cells
    still report.
    """
    report = AblationReport()
    if workers > 1:
        import multiprocessing as mp

        ctx = mp.get_context("spawn")
        with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
            futures = {pool.submit(_run_ablation_cell, v, corpora, order): v
                       for v in matrix}
            for future, variant in futures.items():
                try:
                    report.rows.extend(future.result())
                except Exception as exc:
                    report.failures.append({"variant": variant.label,
                                            "error": str(exc)})
    else:
        for variant in matrix:
            try:
                report.rows.extend(_run_ablation_cell(variant, corpora, order))
            except Exception as exc:
                report.failures.append({"variant": variant.label,
                                        "error": str(exc)})
    order_key = {v.label: i for i, v in enumerate(matrix)}
    report.rows.sort(key=lambda r: (order_key[r["variant"]], r["pair"]))
    return report
