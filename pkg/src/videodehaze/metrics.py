"""Full-reference quality metrics (PSNR, SSIM) and per-clip evaluation.

Both metrics operate on RGB frames in [0, 1] with no colour conversion.
PSNR uses a peak of 1.0:

    PSNR = 10 * log10(1 / MSE)

and is +infinity for identical frames. SSIM follows the standard Gaussian-
window formulation (11 x 11 window, sigma 1.5, C1 = 0.01^2, C2 = 0.03^2),
computed per channel over valid window positions only (no padding), then
averaged across channels.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import signal

from .errors import DimensionError
from .frames import Frame, FrameSequence

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_C1 = 0.01 ** 2
SSIM_C2 = 0.03 ** 2


def _as_image(x) -> np.ndarray:
    data = x.data if isinstance(x, Frame) else np.asarray(x)
    if data.ndim != 3 or data.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 array, got shape {data.shape}")
    return data.astype(np.float64)


def psnr(a, b) -> float:
    """Peak signal-to-noise ratio in dB; +inf when the frames are identical."""
    x, y = _as_image(a), _as_image(b)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    mse = float(np.mean((x - y) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_window(size: int, sigma: float) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords ** 2) / (2.0 * sigma * sigma))
    kernel = np.outer(g, g)
    return kernel / kernel.sum()


def ssim(a, b, window: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> float:
    """Mean structural similarity over valid window positions, averaged
    across the three channels. Identical frames score exactly 1.0."""
    x, y = _as_image(a), _as_image(b)
    if x.shape != y.shape:
        raise DimensionError(f"shape mismatch: {x.shape} vs {y.shape}")
    h, w = x.shape[:2]
    if h < window or w < window:
        raise DimensionError(f"frame {h}x{w} is smaller than the {window}x{window} SSIM window")
    kernel = _gaussian_window(window, sigma)

    def windowed_mean(img: np.ndarray) -> np.ndarray:
        return signal.convolve(img, kernel, mode="valid", method="auto")

    scores = []
    for c in range(3):
        xc, yc = x[:, :, c], y[:, :, c]
        mu_x = windowed_mean(xc)
        mu_y = windowed_mean(yc)
        var_x = windowed_mean(xc * xc) - mu_x * mu_x
        var_y = windowed_mean(yc * yc) - mu_y * mu_y
        cov = windowed_mean(xc * yc) - mu_x * mu_y
        score = ((2.0 * mu_x * mu_y + SSIM_C1) * (2.0 * cov + SSIM_C2)) / (
            (mu_x * mu_x + mu_y * mu_y + SSIM_C1) * (var_x + var_y + SSIM_C2)
        )
        scores.append(float(score.mean()))
    return float(np.mean(scores))


def _mean_with_inf(values: list[float]) -> float:
    """Mean of the finite entries; +inf only if every entry is infinite."""
    finite = [v for v in values if math.isfinite(v)]
    if not finite:
        return math.inf if values else math.nan
    return float(np.mean(finite))


@dataclass
class EvalReport:
    """Per-frame and aggregate quality scores for one clip."""

    clip_id: str
    frame_psnr: list[float]
    frame_ssim: list[float]

    @property
    def mean_psnr(self) -> float:
        return _mean_with_inf(self.frame_psnr)

    @property
    def mean_ssim(self) -> float:
        return float(np.mean(self.frame_ssim)) if self.frame_ssim else math.nan

    def summary(self) -> dict:
        return {
            "clip_id": self.clip_id,
            "frames": len(self.frame_psnr),
            "mean_psnr": self.mean_psnr,
            "mean_ssim": self.mean_ssim,
        }

    def write_csv(self, path: Path | str) -> None:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["frame", "psnr", "ssim"])
            for i, (p, s) in enumerate(zip(self.frame_psnr, self.frame_ssim)):
                writer.writerow([i, repr(p), repr(s)])


def evaluate_clip(pred: FrameSequence, gt: FrameSequence) -> EvalReport:
    """Score a restored clip against its ground truth, frame by frame."""
    if len(pred) != len(gt):
        raise ValueError(
            f"clip {pred.clip_id!r}: {len(pred)} restored frames vs {len(gt)} ground-truth frames"
        )
    frame_psnr = [psnr(p, g) for p, g in zip(pred.frames, gt.frames)]
    frame_ssim = [ssim(p, g) for p, g in zip(pred.frames, gt.frames)]
    return EvalReport(pred.clip_id, frame_psnr, frame_ssim)


def aggregate_summaries(reports: list[EvalReport]) -> dict:
    """Combined summary across clips: unweighted mean of the per-clip means."""
    overall_psnr = _mean_with_inf([r.mean_psnr for r in reports])
    overall_ssim = float(np.mean([r.mean_ssim for r in reports])) if reports else math.nan
    return {
        "clips": {r.clip_id: r.summary() for r in reports},
        "overall": {"mean_psnr": overall_psnr, "mean_ssim": overall_ssim},
    }


def write_summary_json(summary: dict, path: Path | str) -> None:
    """JSON-serialize a summary; infinities become the string "inf"."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    def encode(obj):
        if isinstance(obj, dict):
            return {k: encode(v) for k, v in obj.items()}
        if isinstance(obj, float) and not math.isfinite(obj):
            return "inf" if obj > 0 else "-inf"
        return obj

    with open(path, "w") as fh:
        json.dump(encode(summary), fh, indent=2)
        fh.write("\n")
