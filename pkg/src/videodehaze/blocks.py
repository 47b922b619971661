"""Shared network building blocks: attention, residual blocks, upsampling."""

from __future__ import annotations

import math

import torch
import torch.nn as nn
import torch.nn.functional as F


class ChannelAttention(nn.Module):
    """Global-average-pool channel gate.

    Pools each channel to a scalar, squeezes through a small bottleneck,
    and rescales the input by a per-channel sigmoid weight.
    """

    def __init__(self, channels: int, reduction: int = 8):
        super().__init__()
        hidden = max(channels // reduction, 1)
        self.squeeze = nn.Conv2d(channels, hidden, kernel_size=1)
        self.excite = nn.Conv2d(hidden, channels, kernel_size=1)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        g = x.mean(dim=(2, 3), keepdim=True)
        g = torch.sigmoid(self.excite(F.relu(self.squeeze(g))))
        return x * g


class MultiKernelResidualBlock(nn.Module):
    """Residual block with parallel conv branches of different kernel sizes.

    The branch outputs are summed, passed through ReLU and channel attention,
    then added back onto the input:  x + CA(relu(sum_k conv_k(x))).
    """

    def __init__(self, channels: int, kernels: tuple[int, ...] = (3, 5), reduction: int = 8):
        super().__init__()
        if not kernels:
            raise ValueError("need at least one branch kernel")
        for k in kernels:
            if k < 1 or k % 2 == 0:
                raise ValueError(f"branch kernels must be odd, got {k}")
        self.branches = nn.ModuleList(
            nn.Conv2d(channels, channels, kernel_size=k, padding=k // 2) for k in kernels
        )
        self.attention = ChannelAttention(channels, reduction)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        z = self.branches[0](x)
        for branch in self.branches[1:]:
            z = z + branch(x)
        return x + self.attention(F.relu(z))


def pixel_shuffle_upsample(in_channels: int, out_channels: int) -> nn.Sequential:
    """2x upsampling as conv + depth-to-space, which avoids the checkerboard
    artifacts of strided transposed convolutions."""
    return nn.Sequential(
        nn.Conv2d(in_channels, out_channels * 4, kernel_size=3, padding=1),
        nn.PixelShuffle(2),
    )


def seeded_init_(module: nn.Module, seed: int) -> nn.Module:
    """Deterministically re-initialize every conv in ``module``.

    Weights get Kaiming-normal values from a dedicated generator (so the
    global torch RNG is never touched or consumed), biases are zeroed. All
    networks in this package are built purely from convolutions; the assert
    guards that assumption so no parameter can slip through uninitialized.
    """
    gen = torch.Generator().manual_seed(seed)
    covered = 0
    with torch.no_grad():
        for m in module.modules():
            if isinstance(m, nn.Conv2d):
                fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1] // m.groups
                std = math.sqrt(2.0 / fan_in)
                noise = torch.randn(m.weight.shape, generator=gen, dtype=torch.float32)
                m.weight.copy_(noise * std)
                covered += m.weight.numel()
                if m.bias is not None:
                    m.bias.zero_()
                    covered += m.bias.numel()
    total = sum(p.numel() for p in module.parameters())
    assert covered == total, f"seeded init covered {covered} of {total} parameters"
    return module


def count_parameters(module: nn.Module) -> int:
    return sum(p.numel() for p in module.parameters())


def zero_parameters_(module: nn.Module) -> nn.Module:
    """Set every parameter to zero (mainly for identity-path checks)."""
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module
