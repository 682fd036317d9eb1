"""Calibration (Gaussian NLL) and quality (PSNR) metrics.

Per-pixel NLL averages over the three channels rather than summing, so
values stay on a single-channel scale; the choice shifts every pixel by
the same factor and never changes orderings.  The variance floor guards
pixels where all members agree bit-for-bit (variance exactly 0).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

VARIANCE_FLOOR = 1e-6
PSNR_CAP = 99.0


def gaussian_nll(true_rgb, mu, psi_sq):
    """Channel-averaged NLL of true_rgb under N(mu, I * psi_sq).

    Vectorized: true_rgb/mu broadcast as (..., 3), psi_sq as (...,);
    returns (...,) (a scalar for single pixels).
    """
    true_rgb = np.asarray(true_rgb, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64)
    if not (np.all(np.isfinite(true_rgb)) and np.all(np.isfinite(mu))):
        raise ValueError("colours must be finite")
    v = np.maximum(np.asarray(psi_sq, dtype=np.float64), VARIANCE_FLOOR)
    sq = np.mean((true_rgb - mu) ** 2, axis=-1)
    out = 0.5 * np.log(2.0 * np.pi * v) + sq / (2.0 * v)
    return out if out.ndim else float(out)


def image_nll(stats, truth):
    """Mean and median per-pixel NLL of an ensemble render vs ground truth."""
    pixels = truth.pixels
    if stats.mu_rgb.shape != pixels.shape:
        raise ValueError("statistics and ground truth dimensions differ")
    per_pixel = gaussian_nll(pixels, stats.mu_rgb, stats.psi_sq)
    return float(np.mean(per_pixel)), float(np.median(per_pixel))


def psnr(image, truth):
    """-10 log10(MSE) over all pixels and channels, capped at 99 dB."""
    a = image.pixels if hasattr(image, "pixels") else np.asarray(image)
    b = truth.pixels if hasattr(truth, "pixels") else np.asarray(truth)
    if a.shape != b.shape:
        raise ValueError("image dimensions differ")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_CAP
    return min(PSNR_CAP, -10.0 * np.log10(mse))


def rescale_psnr(series):
    """Affine map sending series[0] to 0 and max(series) to 1.

    A constant-from-the-start series (max equals the first entry) maps
    to all zeros.
    """
    series = np.asarray(series, dtype=np.float64)
    if series.size < 1:
        raise ValueError("series must be non-empty")
    span = series.max() - series[0]
    if span == 0.0:
        return np.zeros_like(series)
    return (series - series[0]) / span


@dataclass
class NllReport:
    """Per-image NLL aggregates and their across-image summary.

    Means and medians come from the identical per-pixel sets; standard
    deviations are population (divisor n) across images.
    """

    per_image_mean: np.ndarray
    per_image_median: np.ndarray
    mean_of_means: float
    mean_of_medians: float
    std_of_means: float
    std_of_medians: float


def nll_report(pairs):
    """Aggregate (mean, median) NLL pairs, one per test image."""
    pairs = list(pairs)
    if not pairs:
        raise ValueError("need at least one image")
    means = np.array([p[0] for p in pairs], dtype=np.float64)
    medians = np.array([p[1] for p in pairs], dtype=np.float64)
    return NllReport(
        per_image_mean=means,
        per_image_median=medians,
        mean_of_means=float(means.mean()),
        mean_of_medians=float(medians.mean()),
        std_of_means=float(means.std()),
        std_of_medians=float(medians.std()),
    )
