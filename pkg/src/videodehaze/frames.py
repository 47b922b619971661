"""Frame containers, clip loading, temporal windowing and crop/scale sampling.

Clips live on disk as directories of numerically named image files:

    <root>/<clip_id>/hazy/0001.png
    <root>/<clip_id>/gt/0001.png

In memory every frame is an H x W x 3 float array in [0, 1], RGB order.
Training samples are five-frame time units centred on a reference frame,
paired with the clean reference frame.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
import torch
import torch.nn.functional as F
from PIL import Image

from .errors import DimensionError

IMAGE_SUFFIXES = (".png", ".jpg", ".jpeg", ".bmp")

# Frames per time unit, and where the reference frame sits inside it.
WINDOW_SIZE = 5
REFERENCE_INDEX = 2


def _validate_image_array(data) -> None:
    if not isinstance(data, np.ndarray):
        raise TypeError(f"frame data must be a numpy array, got {type(data).__name__}")
    if data.ndim != 3 or data.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 array, got shape {tuple(data.shape)}")
    if data.shape[0] < 1 or data.shape[1] < 1:
        raise DimensionError("frame must be at least 1 x 1 pixels")
    if not np.issubdtype(data.dtype, np.floating):
        raise ValueError(f"frame data must be floating point, got dtype {data.dtype}")
    lo, hi = float(data.min()), float(data.max())
    if lo < 0.0 or hi > 1.0:
        raise ValueError(f"frame values must lie in [0, 1], got range [{lo}, {hi}]")


@dataclass(frozen=True)
class Frame:
    """One RGB image: H x W x 3 floats in [0, 1]."""

    data: np.ndarray

    def __post_init__(self):
        _validate_image_array(self.data)

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def width(self) -> int:
        return int(self.data.shape[1])


@dataclass(frozen=True)
class FrameSequence:
    """An ordered clip of frames sharing one resolution."""

    frames: tuple[Frame, ...]
    clip_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) < 1:
            raise ValueError("a frame sequence needs at least one frame")
        h, w = self.frames[0].height, self.frames[0].width
        for i, f in enumerate(self.frames):
            if (f.height, f.width) != (h, w):
                raise DimensionError(
                    f"frame {i} is {f.height}x{f.width}, expected {h}x{w} "
                    f"(clip {self.clip_id!r} mixes resolutions)"
                )

    def __len__(self) -> int:
        return len(self.frames)

    def __getitem__(self, t: int) -> Frame:
        return self.frames[t]

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width


@dataclass(frozen=True)
class TimeUnit:
    """Five consecutive (boundary-replicated) frames around a reference frame.

    ``frames[REFERENCE_INDEX]`` is the frame the model restores; ``t`` records
    which source-clip index it came from.
    """

    frames: tuple[Frame, ...]
    t: int

    def __post_init__(self):
        object.__setattr__(self, "frames", tuple(self.frames))
        if len(self.frames) != WINDOW_SIZE:
            raise ValueError(f"a time unit holds exactly {WINDOW_SIZE} frames, got {len(self.frames)}")
        h, w = self.frames[0].height, self.frames[0].width
        for f in self.frames:
            if (f.height, f.width) != (h, w):
                raise DimensionError("time unit frames must share one resolution")

    @property
    def reference(self) -> Frame:
        return self.frames[REFERENCE_INDEX]

    @property
    def height(self) -> int:
        return self.frames[0].height

    @property
    def width(self) -> int:
        return self.frames[0].width


@dataclass(frozen=True)
class SamplePair:
    """A hazy time unit paired with the clean version of its reference frame."""

    input: TimeUnit
    target: Frame

    def __post_init__(self):
        if (self.input.height, self.input.width) != (self.target.height, self.target.width):
            raise DimensionError(
                f"input is {self.input.height}x{self.input.width} but target is "
                f"{self.target.height}x{self.target.width}"
            )


# ---------------------------------------------------------------------------
# tensor conversion


def frame_to_tensor(frame: Frame, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Frame -> [3, H, W] tensor."""
    return torch.from_numpy(np.ascontiguousarray(frame.data.transpose(2, 0, 1))).to(dtype)


def unit_to_tensor(unit: TimeUnit, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """TimeUnit -> [5, 3, H, W] tensor in temporal order."""
    return torch.stack([frame_to_tensor(f, dtype) for f in unit.frames], dim=0)


def array_from_tensor(x: torch.Tensor) -> np.ndarray:
    """[3, H, W] tensor -> H x W x 3 array (no clamping)."""
    return x.detach().cpu().numpy().transpose(1, 2, 0)


def frame_from_array(arr: np.ndarray, clamp: bool = False) -> Frame:
    """Wrap an H x W x 3 array as a Frame, optionally clipping into [0, 1]."""
    if clamp:
        arr = np.clip(arr, 0.0, 1.0)
    return Frame(np.ascontiguousarray(arr))


# ---------------------------------------------------------------------------
# disk I/O


def _numeric_key(path: Path) -> int:
    try:
        return int(path.stem)
    except ValueError:
        raise ValueError(
            f"frame filenames must be numeric (e.g. 0042.png), got {path.name!r}"
        ) from None


def list_frame_files(directory: Path | str) -> list[Path]:
    """Image files in a directory, sorted by the integer value of their stem."""
    directory = Path(directory)
    if not directory.is_dir():
        raise FileNotFoundError(f"frame directory not found: {directory}")
    files = [p for p in directory.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES and p.is_file()]
    if not files:
        raise FileNotFoundError(f"no image files in {directory}")
    return sorted(files, key=_numeric_key)


def load_frame(path: Path | str) -> Frame:
    with Image.open(path) as img:
        rgb = img.convert("RGB")
        data = np.asarray(rgb, dtype=np.float32) / 255.0
    return Frame(data)


def save_frame(frame: Frame, path: Path | str) -> None:
    """Quantize to 8-bit and write as an image (format from the suffix)."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    quantized = np.clip(np.rint(frame.data * 255.0), 0, 255).astype(np.uint8)
    Image.fromarray(quantized, mode="RGB").save(path)


def load_sequence(directory: Path | str, clip_id: str | None = None) -> FrameSequence:
    """Load every image in a directory as one clip, in numeric filename order."""
    directory = Path(directory)
    files = list_frame_files(directory)
    frames = tuple(load_frame(p) for p in files)
    return FrameSequence(frames, clip_id if clip_id is not None else directory.name)


def save_sequence(seq: FrameSequence, directory: Path | str, names: Sequence[str] | None = None) -> None:
    """Write a clip to a directory, one image per frame.

    ``names`` preserves the source filenames; by default frames are written as
    00000.png, 00001.png, ...
    """
    directory = Path(directory)
    if names is not None and len(names) != len(seq):
        raise ValueError(f"got {len(names)} names for {len(seq)} frames")
    for i, frame in enumerate(seq.frames):
        name = names[i] if names is not None else f"{i:05d}.png"
        save_frame(frame, directory / name)


# ---------------------------------------------------------------------------
# dataset layout


def discover_clips(root: Path | str) -> list[str]:
    """Clip ids under a dataset root (directories containing hazy/ and gt/)."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root not found: {root}")
    ids = sorted(
        p.name for p in root.iterdir()
        if p.is_dir() and (p / "hazy").is_dir() and (p / "gt").is_dir()
    )
    if not ids:
        raise FileNotFoundError(f"no clips under {root} (expected <clip>/hazy and <clip>/gt)")
    return ids


def load_clip_pair(root: Path | str, clip_id: str) -> tuple[FrameSequence, FrameSequence]:
    """Load the hazy and clean sequences of one clip and check they line up."""
    root = Path(root)
    hazy = load_sequence(root / clip_id / "hazy", clip_id)
    gt = load_sequence(root / clip_id / "gt", clip_id)
    if len(hazy) != len(gt):
        raise ValueError(f"clip {clip_id!r}: {len(hazy)} hazy frames vs {len(gt)} clean frames")
    if (hazy.height, hazy.width) != (gt.height, gt.width):
        raise DimensionError(f"clip {clip_id!r}: hazy and clean resolutions differ")
    return hazy, gt


def load_paired_clips(root: Path | str) -> list[tuple[FrameSequence, FrameSequence]]:
    return [load_clip_pair(root, cid) for cid in discover_clips(root)]


# ---------------------------------------------------------------------------
# sampling


def window(seq: FrameSequence, t: int) -> TimeUnit:
    """The five-frame time unit centred on frame ``t``.

    Indices past either end of the clip are replaced by the nearest valid
    frame, so every frame of a clip — including the first and last two — has a
    full-width unit.
    """
    if not 0 <= t < len(seq):
        raise IndexError(f"frame index {t} out of range for clip of length {len(seq)}")
    last = len(seq) - 1
    picks = [min(max(t + offset, 0), last) for offset in range(-REFERENCE_INDEX, WINDOW_SIZE - REFERENCE_INDEX)]
    return TimeUnit(tuple(seq[i] for i in picks), t=t)


def random_crop_pair(pair: SamplePair, size: int, seed: int) -> SamplePair:
    """Crop the same random size x size patch from every frame of a pair."""
    if size < 1:
        raise ValueError(f"crop size must be positive, got {size}")
    h, w = pair.input.height, pair.input.width
    if size > h or size > w:
        raise DimensionError(f"crop size {size} exceeds frame size {h}x{w}")
    rng = np.random.default_rng(seed)
    y = int(rng.integers(0, h - size + 1))
    x = int(rng.integers(0, w - size + 1))
    cropped = tuple(Frame(f.data[y:y + size, x:x + size].copy()) for f in pair.input.frames)
    target = Frame(pair.target.data[y:y + size, x:x + size].copy())
    return SamplePair(TimeUnit(cropped, t=pair.input.t), target)


def hflip_pair(pair: SamplePair) -> SamplePair:
    """Mirror every frame of a pair left-right."""
    flipped = tuple(Frame(f.data[:, ::-1].copy()) for f in pair.input.frames)
    target = Frame(pair.target.data[:, ::-1].copy())
    return SamplePair(TimeUnit(flipped, t=pair.input.t), target)


def _check_ratio(ratio: float) -> None:
    if not 0.0 < ratio <= 1.0:
        raise ValueError(f"scale ratio must lie in (0, 1], got {ratio}")


def resample_frame(frame: Frame, ratio: float) -> Frame:
    """Bilinear, antialiased downscale by ``ratio`` (1.0 is the identity)."""
    _check_ratio(ratio)
    if ratio == 1.0:
        return frame
    out_h = max(1, round(frame.height * ratio))
    out_w = max(1, round(frame.width * ratio))
    x = frame_to_tensor(frame).unsqueeze(0)
    y = F.interpolate(x, size=(out_h, out_w), mode="bilinear", align_corners=False, antialias=True)
    return frame_from_array(array_from_tensor(y[0]), clamp=True)


def resample_pair(pair: SamplePair, ratio: float) -> SamplePair:
    """Downscale input frames and target together (one batched resize)."""
    _check_ratio(ratio)
    if ratio == 1.0:
        return pair
    out_h = max(1, round(pair.input.height * ratio))
    out_w = max(1, round(pair.input.width * ratio))
    stacked = torch.stack(
        [frame_to_tensor(f) for f in pair.input.frames] + [frame_to_tensor(pair.target)], dim=0
    )
    resized = F.interpolate(stacked, size=(out_h, out_w), mode="bilinear", align_corners=False, antialias=True)
    frames = tuple(frame_from_array(array_from_tensor(resized[i]), clamp=True) for i in range(WINDOW_SIZE))
    target = frame_from_array(array_from_tensor(resized[WINDOW_SIZE]), clamp=True)
    return SamplePair(TimeUnit(frames, t=pair.input.t), target)


def multi_scale_expand(pairs: Sequence[SamplePair], ratios: Sequence[float]) -> list[SamplePair]:
    """Augment a sample list with downscaled copies.

    Returns the original pairs followed by one block per ratio, so the result
    holds ``len(pairs) * (1 + len(ratios))`` samples.
    """
    for r in ratios:
        _check_ratio(r)
    out = list(pairs)
    for r in ratios:
        out.extend(resample_pair(p, r) for p in pairs)
    return out
