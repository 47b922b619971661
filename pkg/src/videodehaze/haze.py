"""Atmospheric scattering model: haze synthesis, inversion and density maps.

A hazy observation I is modelled from the clear scene J, a transmission map t
and an airlight A as

    I(x) = J(x) * t(x) + A(x) * (1 - t(x))

Transmission is per-pixel in [0, 1] (1 = no haze) and shared by all three
colour channels; airlight is either a scalar or a per-pixel RGB map.
``synthesize_hazy`` applies the model, ``invert_hazy`` solves it for J, and
``generate_haze_sequence`` draws temporally coherent random transmission maps
for building synthetic training clips.

All model arithmetic runs in float64 so that synthesis followed by inversion
round-trips to well below 8-bit quantization error.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn.functional as F
from scipy import ndimage

from .errors import DimensionError, DomainError
from .frames import Frame

# Transmission values below this are never generated: they correspond to a
# pixel that is almost pure airlight, which carries no recoverable scene.
MIN_TRANSMISSION = 0.02

DEFAULT_HAZE_WINDOW = 15


def _check_airlight(airlight) -> np.ndarray | float:
    if np.isscalar(airlight):
        a = float(airlight)
        if not 0.0 <= a <= 1.0:
            raise ValueError(f"airlight must lie in [0, 1], got {a}")
        return a
    a = np.asarray(airlight)
    if a.ndim != 3 or a.shape[2] != 3:
        raise DimensionError(f"airlight map must be H x W x 3, got shape {a.shape}")
    if float(a.min()) < 0.0 or float(a.max()) > 1.0:
        raise ValueError("airlight values must lie in [0, 1]")
    return a


@dataclass(frozen=True)
class HazeParams:
    """Transmission map plus airlight for one frame."""

    transmission: np.ndarray
    airlight: np.ndarray | float

    def __post_init__(self):
        t = np.asarray(self.transmission)
        if t.ndim != 2:
            raise DimensionError(f"transmission must be an H x W map, got shape {t.shape}")
        if float(t.min()) < 0.0 or float(t.max()) > 1.0:
            raise ValueError("transmission must lie in [0, 1]")
        object.__setattr__(self, "transmission", t)
        object.__setattr__(self, "airlight", _check_airlight(self.airlight))

    def _check_frame(self, frame: Frame) -> None:
        if self.transmission.shape != (frame.height, frame.width):
            raise DimensionError(
                f"transmission map {self.transmission.shape} does not match "
                f"frame {frame.height}x{frame.width}"
            )
        if isinstance(self.airlight, np.ndarray) and self.airlight.shape != frame.data.shape:
            raise DimensionError(
                f"airlight map {self.airlight.shape} does not match frame {frame.data.shape}"
            )


def synthesize_hazy(clear: Frame, params: HazeParams) -> Frame:
    """Apply the scattering model to a clear frame.

    With J and A in [0, 1] the output is a convex combination of the two, so
    it stays in [0, 1] without clipping.
    """
    params._check_frame(clear)
    j = clear.data.astype(np.float64)
    t = params.transmission.astype(np.float64)[:, :, None]
    a = params.airlight if np.isscalar(params.airlight) else params.airlight.astype(np.float64)
    hazy = j * t + a * (1.0 - t)
    return Frame(np.clip(hazy, 0.0, 1.0))


def invert_hazy(hazy: Frame, params: HazeParams, t_floor: float = 0.1) -> Frame:
    """Solve the scattering model for the clear frame: J = (I - A(1 - t)) / t.

    Inversion divides by the transmission, so maps with values below
    ``t_floor`` are refused rather than silently amplifying noise.
    """
    params._check_frame(hazy)
    t_min = float(params.transmission.min())
    if t_min < t_floor:
        raise DomainError(
            f"transmission reaches {t_min:.4f}, below the inversion floor {t_floor}"
        )
    i = hazy.data.astype(np.float64)
    t = params.transmission.astype(np.float64)[:, :, None]
    a = params.airlight if np.isscalar(params.airlight) else params.airlight.astype(np.float64)
    j = (i - a * (1.0 - t)) / t
    return Frame(np.clip(j, 0.0, 1.0))


# ---------------------------------------------------------------------------
# haze density maps


def estimate_haze_map(frame: Frame | np.ndarray, window: int = DEFAULT_HAZE_WINDOW) -> np.ndarray:
    """Dark-channel haze density: channel minimum, then a window x window
    spatial minimum filter with edge replication.

    Bright, haze-free regions score near their darkest channel value; dense
    haze pushes all channels toward the airlight, raising the map.
    Returns an H x W array in the range of the input values.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    data = frame.data if isinstance(frame, Frame) else np.asarray(frame)
    if data.ndim != 3 or data.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 array, got shape {data.shape}")
    channel_min = data.min(axis=2)
    return ndimage.minimum_filter(channel_min, size=window, mode="nearest")


def dark_channel(x: torch.Tensor, window: int = DEFAULT_HAZE_WINDOW) -> torch.Tensor:
    """Differentiable dark channel for batched tensors.

    ``x`` is [B, 3, H, W]; the result is [B, 1, H, W]. Matches
    ``estimate_haze_map`` (replicate-padded minimum filter), implemented as a
    max-pool on the negated channel minimum.
    """
    if window < 1 or window % 2 == 0:
        raise ValueError(f"window must be odd and positive, got {window}")
    if x.dim() != 4 or x.size(1) != 3:
        raise DimensionError(f"expected a [B, 3, H, W] tensor, got shape {tuple(x.shape)}")
    channel_min = x.min(dim=1, keepdim=True).values
    pad = window // 2
    padded = F.pad(channel_min, (pad, pad, pad, pad), mode="replicate")
    return -F.max_pool2d(-padded, kernel_size=window, stride=1)


# ---------------------------------------------------------------------------
# synthetic haze fields


@dataclass(frozen=True)
class HazeFieldSpec:
    """Recipe for a temporally coherent sequence of random haze fields.

    base_transmission   mean haze level; 1.0 means no haze at all
    spatial_smoothness  Gaussian correlation length of the field, in pixels
    temporal_drift      max per-pixel transmission change between frames
    airlight_value      scalar airlight shared by the whole sequence
    seed                drives every random draw; same seed, same fields
    """

    base_transmission: float
    spatial_smoothness: float = 8.0
    temporal_drift: float = 0.0
    airlight_value: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.base_transmission <= 1.0:
            raise ValueError(f"base_transmission must lie in (0, 1], got {self.base_transmission}")
        if self.spatial_smoothness <= 0.0:
            raise ValueError(f"spatial_smoothness must be positive, got {self.spatial_smoothness}")
        if self.temporal_drift < 0.0:
            raise ValueError(f"temporal_drift must be non-negative, got {self.temporal_drift}")
        if not 0.0 <= self.airlight_value <= 1.0:
            raise ValueError(f"airlight_value must lie in [0, 1], got {self.airlight_value}")


def _smooth_unit_field(rng: np.random.Generator, height: int, width: int, smoothness: float) -> np.ndarray:
    """Zero-mean smooth noise scaled so its largest magnitude is 1."""
    noise = rng.standard_normal((height, width))
    field = ndimage.gaussian_filter(noise, sigma=smoothness, mode="reflect")
    field -= field.mean()
    peak = float(np.abs(field).max())
    if peak > 0.0:
        field /= peak
    return field


def generate_haze_sequence(spec: HazeFieldSpec, n_frames: int, height: int, width: int) -> list[HazeParams]:
    """Draw one transmission map per frame, varying smoothly in space and time.

    The first map is the base transmission plus smooth noise; its amplitude is
    capped so values keep clear of both 0 and the [0, 1] bounds (at
    base_transmission 1.0 the amplitude is zero and every map is exactly 1).
    Each following map adds an independent smooth step of per-pixel magnitude
    at most ``temporal_drift``; with drift 0 all maps are identical.
    """
    if n_frames < 1:
        raise ValueError(f"n_frames must be at least 1, got {n_frames}")
    if height < 1 or width < 1:
        raise DimensionError(f"field size must be positive, got {height}x{width}")
    rng = np.random.default_rng(spec.seed)
    base = spec.base_transmission
    amplitude = max(0.0, min(0.15, base - 0.05, 1.0 - base))
    t = base + amplitude * _smooth_unit_field(rng, height, width, spec.spatial_smoothness)
    t = np.clip(t, MIN_TRANSMISSION, 1.0)
    maps = [t]
    for _ in range(1, n_frames):
        if spec.temporal_drift == 0.0:
            maps.append(maps[-1].copy())
            continue
        step = spec.temporal_drift * _smooth_unit_field(rng, height, width, spec.spatial_smoothness)
        maps.append(np.clip(maps[-1] + step, MIN_TRANSMISSION, 1.0))
    return [HazeParams(m, spec.airlight_value) for m in maps]
