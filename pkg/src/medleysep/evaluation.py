"""Separation metrics (BSS-eval SDR, SI-SDR, improvements) and the
segment-wise evaluation harness with category aggregation and the
16-bit save-load regression mode.
"""

from __future__ import annotations

import json
import logging
import os
import tempfile
from dataclasses import asdict, dataclass

import numpy as np
from scipy.linalg import solve_toeplitz, toeplitz
from scipy.signal import fftconvolve

from .audio_core import AudioBuffer, read_wav, resample, write_wav
from .objectives import si_sdr as _si_sdr_torch

logger = logging.getLogger(__name__)

DEFAULT_FILTER_TAPS = 512
SDR_CAP_DB = 200.0
RIDGE = 1e-9


def si_sdr_metric(est: np.ndarray, ref: np.ndarray) -> float:
    """Scale-invariant SDR in dB (capped at +200)."""
    return float(_si_sdr_torch(np.asarray(est, dtype=np.float64),
                               np.asarray(ref, dtype=np.float64)))


def _project_onto_delays(est: np.ndarray, ref: np.ndarray, taps: int) -> np.ndarray:
    """Least-squares projection of est onto the span of ref delayed by
    0..taps-1 samples (classic time-invariant BSS-eval target)."""
    n = est.size
    # autocorrelation of ref and cross-correlation est<->ref via FFT
    auto = fftconvolve(ref, ref[::-1])[n - 1 : n - 1 + taps]
    cross = fftconvolve(est, ref[::-1])[n - 1 : n - 1 + taps]
    try:
        coeffs = solve_toeplitz(auto, cross)
        if not np.all(np.isfinite(coeffs)):
            raise np.linalg.LinAlgError("non-finite Toeplitz solution")
    except np.linalg.LinAlgError:
        logger.warning("singular projection system; ridge-regularized solve")
        G = toeplitz(auto) + RIDGE * np.eye(taps)
        coeffs = np.linalg.solve(G, cross)
    proj = fftconvolve(ref, coeffs)[:n]
    return proj


def bss_sdr(est, ref_list, target_index: int, filter_taps: int = DEFAULT_FILTER_TAPS) -> float:
    """BSS-eval SDR in dB: the target is the projection of the estimate onto
    delayed copies of the target reference; everything else is distortion."""
    est = np.asarray(getattr(est, "samples", est), dtype=np.float64)
    refs = [np.asarray(getattr(r, "samples", r), dtype=np.float64) for r in ref_list]
    ref = refs[target_index]
    if any(r.size != est.size for r in refs):
        raise ValueError("estimate and references must share length")
    taps = min(filter_taps, est.size)
    if taps < filter_taps:
        logger.warning("segment shorter than filter; reduced taps to %d", taps)
    s_target = _project_onto_delays(est, ref, taps)
    distortion = est - s_target
    num = float(np.sum(s_target**2))
    den = float(np.sum(distortion**2))
    if den <= num * 10 ** (-SDR_CAP_DB / 10):
        return SDR_CAP_DB
    if num == 0.0:
        return -SDR_CAP_DB
    return 10.0 * np.log10(num / den)


def improvement(metric_fn, est, refs, mixture, idx: int) -> float:
    """Gain of the estimate over scoring the raw mixture: metric(est) -
    metric(mixture), both against reference idx."""
    return metric_fn(est, refs, idx) - metric_fn(mixture, refs, idx)


def _metric_si_sdr(est, refs, idx):
    est = np.asarray(getattr(est, "samples", est), dtype=np.float64)
    ref = np.asarray(getattr(refs[idx], "samples", refs[idx]), dtype=np.float64)
    return si_sdr_metric(est, ref)


def _metric_bss_sdr(est, refs, idx):
    return bss_sdr(est, refs, idx)


@dataclass
class EvalRecord:
    segment_id: str
    category: str
    n_singings: int
    n_singers: int
    sdr_i: list
    si_sdr_i: list
    permutation_used: list
    clipped_eval: bool


@dataclass(frozen=True)
class EvalOptions:
    permutation_mode: str = "auto"  # "auto" | "fixed"
    clipped_eval: bool = False
    resample_to: int | None = None
    filter_taps: int = DEFAULT_FILTER_TAPS


def _save_load_16bit(buf: AudioBuffer) -> AudioBuffer:
    with tempfile.NamedTemporaryFile(suffix=".wav", delete=False) as tmp:
        path = tmp.name
    try:
        write_wav(path, buf, "int16")
        return read_wav(path)
    finally:
        os.unlink(path)


def score_segment(estimates, stems, mixture, options: EvalOptions):
    """Metrics for one segment under the best (or fixed) permutation.
    Returns (sdr_i list, si_sdr_i list, permutation)."""
    n = len(stems)
    if len(estimates) != n:
        raise ValueError("estimate/stem count mismatch")
    if options.clipped_eval:
        estimates = [_save_load_16bit(e) for e in estimates]
    if options.permutation_mode == "fixed" or n == 1:
        perms = [tuple(range(n))]
    else:
        from itertools import permutations as _perms

        perms = list(_perms(range(n)))
    best_perm, best_score = None, None
    for perm in perms:
        score = sum(
            improvement(_metric_si_sdr, estimates[i], stems, mixture, perm[i])
            for i in range(n)
        )
        if best_score is None or score > best_score:
            best_score, best_perm = score, perm
    si_sdri = [improvement(_metric_si_sdr, estimates[i], stems, mixture, best_perm[i])
               for i in range(n)]
    sdri = [improvement(_metric_bss_sdr, estimates[i], stems, mixture, best_perm[i])
            for i in range(n)]
    return sdri, si_sdri, list(best_perm)


def evaluate_dataset(separate_fn, segments, options: EvalOptions = EvalOptions()):
    """Score a separator over MedleyVox-style segments.

    `separate_fn(mixture, stems)` returns estimate buffers aligned to the
    stems (oracles use the stems; learned models ignore them). Returns
    (records, summary)."""
    records = []
    skipped = []
    for seg in segments:
        try:
            mixture = read_wav(seg.mixture_path)
            stems = [read_wav(p) for p in seg.stem_paths]
        except (OSError, ValueError) as e:
            logger.warning("skipping %s: %s", seg.segment_id, e)
            skipped.append(seg.segment_id)
            continue
        if options.resample_to:
            mixture = resample(mixture, options.resample_to)
            stems = [resample(s, options.resample_to) for s in stems]
        estimates = separate_fn(mixture, stems)
        opts = options
        if seg.category == "main_vs_rest":
            opts = EvalOptions(permutation_mode="fixed",
                               clipped_eval=options.clipped_eval,
                               resample_to=options.resample_to,
                               filter_taps=options.filter_taps)
        sdri, si_sdri, perm = score_segment(estimates, stems, mixture, opts)
        records.append(EvalRecord(
            segment_id=seg.segment_id, category=seg.category,
            n_singings=seg.n_singings, n_singers=seg.n_singers,
            sdr_i=sdri, si_sdr_i=si_sdri, permutation_used=perm,
            clipped_eval=options.clipped_eval,
        ))
    return records, summarize(records, skipped)


def summarize(records, skipped=()):
    """Mean and median SDRi / SI-SDRi per category and per
    (n_singings, n_singers) cell."""
    def _agg(recs):
        sdr = [v for r in recs for v in r.sdr_i]
        sisdr = [v for r in recs for v in r.si_sdr_i]
        return {
            "n_segments": len(recs),
            "sdr_i_mean": float(np.mean(sdr)) if sdr else None,
            "sdr_i_median": float(np.median(sdr)) if sdr else None,
            "si_sdr_i_mean": float(np.mean(sisdr)) if sisdr else None,
            "si_sdr_i_median": float(np.median(sisdr)) if sisdr else None,
        }

    by_cat, by_cell = {}, {}
    for r in records:
        by_cat.setdefault(r.category, []).append(r)
        by_cell.setdefault((r.category, r.n_singings, r.n_singers), []).append(r)
    summary = {
        "n_segments": len(records),
        "n_skipped": len(skipped),
        "skipped": list(skipped),
        "overall": _agg(records),
        "by_category": {c: _agg(rs) for c, rs in sorted(by_cat.items())},
        "by_cell": {f"{c}/singings={ns}/singers={nr}": _agg(rs)
                    for (c, ns, nr), rs in sorted(by_cell.items())},
    }
    return summary


def write_records(path, records) -> None:
    """One EvalRecord as JSON per line."""
    with open(path, "w", encoding="utf-8") as f:
        for r in records:
            f.write(json.dumps(asdict(r)) + "\n")
