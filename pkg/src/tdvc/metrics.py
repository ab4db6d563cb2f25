"""Distortion and rate-efficiency metrics: PSNR, SSIM, BD-rate.

PSNR is capped at 99 dB so identical frames stay finite in CSV output.
SSIM follows the classic 11x11 Gaussian-window formulation (sigma 1.5,
stabilizers C1=(0.01 peak)^2, C2=(0.03 peak)^2) evaluated on the region
where the window fits entirely. BD-rate fits a least-squares cubic of
log10(rate) against PSNR per curve and integrates the gap over the common
PSNR interval.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.ndimage import correlate1d

from .errors import DomainError

PSNR_CAP_DB = 99.0
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5

RD_CSV_HEADER = "scene,camera,rank,qp,bytes,bitrate_kbps,psnr_db,ssim"


def _check_pair(reference, test, peak):
    ref = np.asarray(reference, dtype=np.float64)
    tst = np.asarray(test, dtype=np.float64)
    if ref.ndim != 2 or tst.ndim != 2:
        raise DomainError("frames must be single-channel 2-D images")
    if ref.shape != tst.shape:
        raise DomainError(f"frame dims differ: {ref.shape} vs {tst.shape}")
    if peak not in (255, 65535):
        raise DomainError(f"peak must be 255 or 65535, got {peak}")
    return ref, tst


def psnr(reference, test, peak: int) -> float:
    """Peak signal-to-noise ratio in dB, capped at 99."""
    ref, tst = _check_pair(reference, test, peak)
    mse = float(np.mean((ref - tst) ** 2))
    if mse == 0.0:
        return PSNR_CAP_DB
    return min(10.0 * np.log10(peak * peak / mse), PSNR_CAP_DB)


def _gaussian_window():
    ax = np.arange(SSIM_WINDOW) - SSIM_WINDOW // 2
    g = np.exp(-(ax.astype(np.float64) ** 2) / (2.0 * SSIM_SIGMA**2))
    return g / g.sum()


def _filter_valid(img, kernel1d):
    half = SSIM_WINDOW // 2
    out = correlate1d(img, kernel1d, axis=0, mode="constant")
    out = correlate1d(out, kernel1d, axis=1, mode="constant")
    return out[half:-half, half:-half]


def ssim(reference, test, peak: int) -> float:
    """Mean local structural similarity over all fully covered windows."""
    ref, tst = _check_pair(reference, test, peak)
    if min(ref.shape) < SSIM_WINDOW:
        raise DomainError(
            f"frames must be at least {SSIM_WINDOW}x{SSIM_WINDOW} for SSIM, got {ref.shape}"
        )
    g = _gaussian_window()
    c1 = (0.01 * peak) ** 2
    c2 = (0.03 * peak) ** 2
    mu_r = _filter_valid(ref, g)
    mu_t = _filter_valid(tst, g)
    var_r = _filter_valid(ref * ref, g) - mu_r * mu_r
    var_t = _filter_valid(tst * tst, g) - mu_t * mu_t
    cov = _filter_valid(ref * tst, g) - mu_r * mu_t
    num = (2.0 * mu_r * mu_t + c1) * (2.0 * cov + c2)
    den = (mu_r * mu_r + mu_t * mu_t + c1) * (var_r + var_t + c2)
    return float(np.mean(num / den))


@dataclass
class RDCurve:
    """Rate-distortion operating points, sorted by bitrate."""

    bitrate_kbps: np.ndarray
    psnr_db: np.ndarray

    def __post_init__(self):
        rate = np.asarray(self.bitrate_kbps, dtype=np.float64)
        quality = np.asarray(self.psnr_db, dtype=np.float64)
        if rate.shape != quality.shape or rate.ndim != 1:
            raise DomainError("curve needs matching 1-D rate and PSNR arrays")
        if rate.size < 4:
            raise DomainError(f"curve needs >= 4 points, got {rate.size}")
        if np.any(rate <= 0):
            raise DomainError("bitrates must be positive")
        order = np.argsort(rate)
        rate = rate[order]
        quality = quality[order]
        if np.any(np.diff(rate) == 0):
            raise DomainError("duplicate bitrates in curve")
        self.bitrate_kbps = rate
        self.psnr_db = quality

    @classmethod
    def from_points(cls, points) -> "RDCurve":
        pts = list(points)
        return cls(
            np.array([p[0] for p in pts], dtype=np.float64),
            np.array([p[1] for p in pts], dtype=np.float64),
        )


def bd_rate(anchor: RDCurve, test: RDCurve) -> float:
    """Bjontegaard delta bitrate of ``test`` against ``anchor`` in percent.

    Negative means the test curve needs less rate at equal quality. The PSNR
    ranges must overlap by at least 3 dB.
    """
    lo = max(anchor.psnr_db.min(), test.psnr_db.min())
    hi = min(anchor.psnr_db.max(), test.psnr_db.max())
    if hi - lo < 3.0:
        raise DomainError(
            f"PSNR overlap [{lo:.3f}, {hi:.3f}] dB is below the 3 dB minimum"
        )
    poly_anchor = np.polyfit(anchor.psnr_db, np.log10(anchor.bitrate_kbps), 3)
    poly_test = np.polyfit(test.psnr_db, np.log10(test.bitrate_kbps), 3)
    int_anchor = np.polyint(poly_anchor)
    int_test = np.polyint(poly_test)
    avg_anchor = (np.polyval(int_anchor, hi) - np.polyval(int_anchor, lo)) / (hi - lo)
    avg_test = (np.polyval(int_test, hi) - np.polyval(int_test, lo)) / (hi - lo)
    delta = avg_test - avg_anchor
    return float(100.0 * (10.0**delta - 1.0))
