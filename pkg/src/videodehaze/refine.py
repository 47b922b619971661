"""Refinement U-Net: polishes a fused frame using the original hazy frame.

Takes the preliminary restored frame together with the hazy reference frame
(six input planes), runs an encoder-decoder built from multi-kernel residual
blocks, and adds the result onto the preliminary frame. Downsampling is by
strided conv, upsampling by pixel shuffle, skips are summations — the same
conventions as the fusion network, but with residual blocks doing the work at
every scale.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import MultiKernelResidualBlock, pixel_shuffle_upsample, seeded_init_
from .errors import DimensionError
from .frames import Frame, array_from_tensor, frame_to_tensor


@dataclass(frozen=True)
class RefineConfig:
    """Architecture knobs for the refinement network."""

    base_channels: int = 32
    depth: int = 2
    blocks_per_level: int = 2
    branch_kernels: tuple[int, ...] = (3, 5)

    def __post_init__(self):
        object.__setattr__(self, "branch_kernels", tuple(self.branch_kernels))
        if self.base_channels < 1:
            raise ValueError(f"base_channels must be positive, got {self.base_channels}")
        if self.depth < 1:
            raise ValueError(f"depth must be at least 1, got {self.depth}")
        if self.blocks_per_level < 1:
            raise ValueError(f"blocks_per_level must be at least 1, got {self.blocks_per_level}")
        if not self.branch_kernels:
            raise ValueError("branch_kernels must not be empty")
        for k in self.branch_kernels:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"branch kernels must be odd, got {k}")

    @property
    def downsample_factor(self) -> int:
        return 2 ** self.depth


class RefineNet(nn.Module):
    """See module docstring. Input two [B, 3, H, W] tensors (preliminary,
    hazy reference); output [B, 3, H, W], unclamped."""

    def __init__(self, config: RefineConfig):
        super().__init__()
        self.config = config
        chans = [config.base_channels * (2 ** level) for level in range(config.depth + 1)]

        def stack(channels: int) -> nn.Sequential:
            return nn.Sequential(*[
                MultiKernelResidualBlock(channels, config.branch_kernels)
                for _ in range(config.blocks_per_level)
            ])

        self.head = nn.Conv2d(6, chans[0], kernel_size=3, padding=1)
        self.encode = nn.ModuleList(stack(chans[l]) for l in range(config.depth + 1))
        self.down = nn.ModuleList(
            nn.Conv2d(chans[l - 1], chans[l], kernel_size=3, stride=2, padding=1)
            for l in range(1, config.depth + 1)
        )
        self.up = nn.ModuleList()
        self.decode = nn.ModuleList()
        for l in range(config.depth, 0, -1):
            self.up.append(pixel_shuffle_upsample(chans[l], chans[l - 1]))
            self.decode.append(stack(chans[l - 1]))
        self.out = nn.Conv2d(chans[0], 3, kernel_size=3, padding=1)

    def forward(self, preliminary: torch.Tensor, reference: torch.Tensor) -> torch.Tensor:
        if preliminary.dim() != 4 or preliminary.size(1) != 3:
            raise DimensionError(f"expected [B, 3, H, W], got {tuple(preliminary.shape)}")
        if reference.shape != preliminary.shape:
            raise DimensionError(
                f"reference shape {tuple(reference.shape)} does not match "
                f"preliminary {tuple(preliminary.shape)}"
            )
        h, w = preliminary.shape[2:]
        factor = self.config.downsample_factor
        if h % factor or w % factor:
            raise DimensionError(
                f"spatial size {h}x{w} must be divisible by {factor} (depth {self.config.depth})"
            )

        x = F.relu(self.head(torch.cat([preliminary, reference], dim=1)))
        feats = [self.encode[0](x)]
        for l in range(1, self.config.depth + 1):
            x = F.relu(self.down[l - 1](feats[-1]))
            feats.append(self.encode[l](x))

        y = feats[-1]
        for i, l in enumerate(range(self.config.depth, 0, -1)):
            y = self.up[i](y) + feats[l - 1]
            y = self.decode[i](y)
        return preliminary + self.out(y)


def build_refine(config: RefineConfig, seed: int = 0) -> RefineNet:
    """Construct a refinement network with deterministic, seed-controlled weights."""
    return seeded_init_(RefineNet(config), seed)


def refine_forward(net: RefineNet, preliminary: Frame | np.ndarray, reference: Frame) -> np.ndarray:
    """Refine one preliminary frame against its hazy reference.

    ``preliminary`` may be a Frame or a raw (possibly unclamped) H x W x 3
    array straight from the fusion stage. Returns the raw refined frame as an
    H x W x 3 array, unclamped.
    """
    pre = preliminary.data if isinstance(preliminary, Frame) else np.asarray(preliminary)
    if pre.ndim != 3 or pre.shape[2] != 3:
        raise DimensionError(f"expected an H x W x 3 array, got shape {pre.shape}")
    if pre.shape != reference.data.shape:
        raise DimensionError(
            f"preliminary {pre.shape} does not match reference {reference.data.shape}"
        )
    param = next(net.parameters())
    p = torch.from_numpy(np.ascontiguousarray(pre.transpose(2, 0, 1))).to(param.dtype).unsqueeze(0)
    r = frame_to_tensor(reference, param.dtype).unsqueeze(0)
    with torch.no_grad():
        y = net(p.to(param.device), r.to(param.device))
    return array_from_tensor(y[0])
