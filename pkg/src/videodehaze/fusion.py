"""Frame-fusion U-Net: three frames plus a haze map in, one restored frame out.

The network concatenates three temporally adjacent frames with a single-plane
haze density map (input planes, in order: previous frame, middle frame, next
frame, haze map), encodes with strided convolutions and channel attention,
decodes with pixel-shuffle upsampling and summation skips, and adds its output
to the middle frame — so the convolutions only have to learn a correction.

On top of the usual same-level skips, the deepest encoder feature is projected
by a 1x1 conv and bilinearly upsampled into every decoder merge, giving each
scale a view of the global haze context.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import ChannelAttention, pixel_shuffle_upsample, seeded_init_
from .errors import DimensionError
from .frames import Frame, array_from_tensor, frame_to_tensor

FUSION_INPUT_PLANES = ("frame_prev", "frame_mid", "frame_next", "haze_map")


@dataclass(frozen=True)
class FusionConfig:
    """Architecture knobs for one fusion network."""

    base_channels: int = 32
    depth: int = 2
    first_kernel: int = 7
    attention_enabled: bool = True
    in_frames: int = 3
    extra_planes: int = 1

    def __post_init__(self):
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be positive, got {self.base_channels}")
        if self.depth < 1:
            raise ValueError(f"depth must be at least 1, got {self.depth}")
        if self.first_kernel < 1 or self.first_kernel % 2 == 0:
            raise ValueError(f"first_kernel must be odd, got {self.first_kernel}")
        if self.in_frames < 1 or self.extra_planes < 0:
            raise ValueError("in_frames must be >= 1 and extra_planes >= 0")

    @property
    def in_channels(self) -> int:
        return self.in_frames * 3 + self.extra_planes

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.depth


class FusionNet(nn.Module):
    """See module docstring. Input [B, in_frames*3, H, W] + [B, 1, H, W] map;
    output [B, 3, H, W], unclamped."""

    def __init__(self, config: FusionConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels * (2 ** level) for level in range(config.depth + 1)]

        self.fuse = nn.Conv2d(config.in_channels, chans[0], config.first_kernel,
                              padding=config.first_kernel // 2)
        self.down = nn.ModuleList(
            nn.Conv2d(chans[l - 1], chans[l], kernel_size=3, stride=2, padding=1)
            for l in range(1, config.depth + 1)
        )
        self.attn = nn.ModuleList(
            ChannelAttention(chans[l]) if config.attention_enabled else nn.Identity()
            for l in range(1, config.depth + 1)
        )
        self.mid = nn.Conv2d(chans[-1], chans[-1], kernel_size=3, padding=1)

        self.up = nn.ModuleList()
        self.context = nn.ModuleList()  # deepest feature -> each merge level
        self.decode = nn.ModuleList()
        for l in range(config.depth, 0, -1):
            self.up.append(pixel_shuffle_upsample(chans[l], chans[l - 1]))
            self.context.append(nn.Conv2d(chans[-1], chans[l - 1], kernel_size=1))
            self.decode.append(nn.Conv2d(chans[l - 1], chans[l - 1], kernel_size=3, padding=1))
        self.out = nn.Conv2d(chans[0], 3, kernel_size=3, padding=1)

        # Summation skips require equal channel counts at every merge point.
        for i, l in enumerate(range(config.depth, 0, -1)):
            up_out = self.up[i][0].out_channels // 4
            assert up_out == chans[l - 1] == self.context[i].out_channels, (
                f"merge at level {l - 1}: decoder {up_out}, encoder {chans[l - 1]}, "
                f"context {self.context[i].out_channels}"
            )

    def forward(self, frames: torch.Tensor, haze_map: torch.Tensor) -> torch.Tensor:
        cfg = self.config
        if frames.dim() != 4 or frames.size(1) != cfg.in_frames * 3:
            raise DimensionError(
                f"expected frames [B, {cfg.in_frames * 3}, H, W], got {tuple(frames.shape)}"
            )
        if haze_map.dim() != 4 or haze_map.size(1) != cfg.extra_planes:
            raise DimensionError(
                f"expected haze map [B, {cfg.extra_planes}, H, W], got {tuple(haze_map.shape)}"
            )
        if haze_map.shape[2:] != frames.shape[2:] or haze_map.size(0) != frames.size(0):
            raise DimensionError(
                f"haze map {tuple(haze_map.shape)} does not match frames {tuple(frames.shape)}"
            )
        h, w = frames.shape[2:]
        factor = cfg.downsample_factor
        if h % factor or w % factor:
            raise DimensionError(
                f"spatial size {h}x{w} must be divisible by {factor} (depth {cfg.depth})"
            )

        mid_plane = (cfg.in_frames // 2) * 3
        middle = frames[:, mid_plane:mid_plane + 3]
        x = torch.cat([frames, haze_map], dim=1)

        encoded = [F.relu(self.fuse(x))]
        for down, attn in zip(self.down, self.attn):
            encoded.append(attn(F.relu(down(encoded[-1]))))

        deepest = encoded[-1]
        y = F.relu(self.mid(deepest))
        for i, l in enumerate(range(cfg.depth, 0, -1)):
            skip = encoded[l - 1]
            context = F.interpolate(self.context[i](deepest), size=skip.shape[2:],
                                    mode="bilinear", align_corners=False)
            y = self.up[i](y) + skip + context
            y = F.relu(self.decode[i](y))
        return middle + self.out(y)


def build_fusion(config: FusionConfig, seed: int = 0) -> FusionNet:
    """Construct a fusion network with deterministic, seed-controlled weights."""
    return seeded_init_(FusionNet(config), seed)


def fusion_forward(net: FusionNet, frames: Sequence[Frame], haze_map: np.ndarray) -> np.ndarray:
    """Fuse three frames into a restored middle frame.

    ``frames`` are (previous, middle, next); ``haze_map`` is the H x W density
    map of the middle frame. Returns the raw network output as an H x W x 3
    array — not clamped, since training operates on unclamped values.
    """
    if len(frames) != net.config.in_frames:
        raise ValueError(f"expected {net.config.in_frames} frames, got {len(frames)}")
    h, w = frames[0].height, frames[0].width
    for f in frames:
        if (f.height, f.width) != (h, w):
            raise DimensionError("fusion input frames must share one resolution")
    hm = np.asarray(haze_map)
    if hm.shape != (h, w):
        raise DimensionError(f"haze map shape {hm.shape} does not match frames {h}x{w}")
    param = next(net.parameters())
    x = torch.cat([frame_to_tensor(f, param.dtype) for f in frames], dim=0).unsqueeze(0)
    m = torch.from_numpy(np.ascontiguousarray(hm)).to(param.dtype).reshape(1, 1, h, w)
    with torch.no_grad():
        y = net(x.to(param.device), m.to(param.device))
    return array_from_tensor(y[0])
