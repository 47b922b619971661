"""Training objectives: smooth-L1 reconstruction, perceptual distance, and
the staged total loss.

The reconstruction term applies the smooth-L1 penalty

    phi(z) = 0.5 * z^2        if |z| < 1
             |z| - 0.5        otherwise

elementwise, sums over the three colour channels and averages over pixels.
The perceptual term compares feature activations of a frozen extractor with
per-layer L1 distances. The total combines both over the stage-2 and stage-3
outputs:

    L = sum_s w_s * (alpha * L1_s + beta * Perc_s)

with alpha = 10 and beta = 1 by default, so reconstruction dominates and the
perceptual term acts as a texture regularizer.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .blocks import seeded_init_
from .errors import DimensionError
from .frames import Frame

DEFAULT_VGG_LAYERS = ("relu1_2", "relu2_2", "relu3_4")

# Index of each ReLU inside torchvision's vgg19().features.
_VGG19_RELU_INDEX = {
    "relu1_1": 1, "relu1_2": 3,
    "relu2_1": 6, "relu2_2": 8,
    "relu3_1": 11, "relu3_2": 13, "relu3_3": 15, "relu3_4": 17,
    "relu4_1": 20, "relu4_2": 22, "relu4_3": 24, "relu4_4": 26,
    "relu5_1": 29, "relu5_2": 31, "relu5_3": 33, "relu5_4": 35,
}


@dataclass(frozen=True)
class LossWeights:
    """Weights of the total loss.

    alpha / beta      balance of reconstruction vs. perceptual term
    layer_weights     one weight per extractor layer
    stage_weights     (stage-2, stage-3) contributions
    """

    alpha: float = 10.0
    beta: float = 1.0
    layer_weights: tuple[float, ...] = (1.0, 1.0, 1.0)
    stage_weights: tuple[float, float] = (1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "layer_weights", tuple(self.layer_weights))
        object.__setattr__(self, "stage_weights", tuple(self.stage_weights))
        if self.alpha < 0.0 or self.beta < 0.0:
            raise ValueError("alpha and beta must be non-negative")
        if not self.layer_weights:
            raise ValueError("layer_weights must not be empty")
        if len(self.stage_weights) != 2:
            raise ValueError(f"stage_weights needs exactly two entries, got {len(self.stage_weights)}")


def _as_batched(x, dtype=None, device=None) -> torch.Tensor:
    """Frame / H x W x 3 array / CHW or BCHW tensor -> [B, 3, H, W] tensor."""
    if isinstance(x, Frame):
        x = x.data
    if isinstance(x, np.ndarray):
        if x.ndim != 3 or x.shape[2] != 3:
            raise DimensionError(f"expected an H x W x 3 array, got shape {x.shape}")
        x = torch.from_numpy(np.ascontiguousarray(x.transpose(2, 0, 1)))
    if not isinstance(x, torch.Tensor):
        raise TypeError(f"cannot interpret {type(x).__name__} as image data")
    if x.dim() == 3:
        x = x.unsqueeze(0)
    if x.dim() != 4 or x.size(1) != 3:
        raise DimensionError(f"expected [B, 3, H, W], got {tuple(x.shape)}")
    if dtype is not None or device is not None:
        x = x.to(dtype=dtype, device=device)
    return x


def smooth_l1(pred, target) -> torch.Tensor:
    """Smooth-L1 distance: channel sums of phi, averaged over all pixels."""
    p = _as_batched(pred)
    t = _as_batched(target, dtype=p.dtype, device=p.device)
    if p.shape != t.shape:
        raise DimensionError(f"pred {tuple(p.shape)} vs target {tuple(t.shape)}")
    z = p - t
    phi = torch.where(z.abs() < 1.0, 0.5 * z * z, z.abs() - 0.5)
    return phi.sum(dim=1).mean()


class FeatureExtractor(nn.Module):
    """A frozen convolutional pyramid exposing selected activations.

    Two flavours: ``vgg19`` uses ImageNet-pretrained VGG-19 features (needs
    torchvision plus a weight download), ``random_surrogate`` is a small
    fixed-seed random pyramid producing activations of the same shapes as the
    default VGG taps — useful offline and for tests, since random projections
    still separate images well enough for a distance.
    """

    def __init__(self, features: nn.Sequential, tap_indices: Sequence[int],
                 layer_names: Sequence[str], mean: Sequence[float], std: Sequence[float]):
        super().__init__()
        if len(tap_indices) != len(layer_names) or not tap_indices:
            raise ValueError("need one name per tap, at least one tap")
        if list(tap_indices) != sorted(tap_indices):
            raise ValueError("tap indices must be ascending")
        self.features = features
        self.tap_indices = tuple(tap_indices)
        self.layer_names = tuple(layer_names)
        self.register_buffer("input_mean", torch.tensor(mean).reshape(1, 3, 1, 1))
        self.register_buffer("input_std", torch.tensor(std).reshape(1, 3, 1, 1))
        for p in self.features.parameters():
            p.requires_grad_(False)
        self.eval()

    @property
    def num_layers(self) -> int:
        return len(self.tap_indices)

    def forward(self, x: torch.Tensor) -> list[torch.Tensor]:
        x = (x - self.input_mean.to(x.dtype)) / self.input_std.to(x.dtype)
        taps = []
        for i, layer in enumerate(self.features):
            x = layer(x)
            if i in self.tap_indices:
                taps.append(x)
            if i == self.tap_indices[-1]:
                break
        return taps

    @classmethod
    def vgg19(cls, layers: Sequence[str] = DEFAULT_VGG_LAYERS) -> "FeatureExtractor":
        for name in layers:
            if name not in _VGG19_RELU_INDEX:
                raise ValueError(f"unknown VGG-19 layer {name!r}")
        indices = [_VGG19_RELU_INDEX[name] for name in layers]
        if sorted(indices) != list(indices):
            raise ValueError("VGG layers must be listed shallow to deep")
        try:
            from torchvision.models import VGG19_Weights, vgg19
            features = vgg19(weights=VGG19_Weights.IMAGENET1K_V1).features
        except Exception as exc:  # torchvision missing or weights not downloadable
            raise RuntimeError(
                f"pretrained VGG-19 features are unavailable ({exc}); "
                "use FeatureExtractor.random_surrogate() instead"
            ) from exc
        trimmed = nn.Sequential(*[features[i] for i in range(max(indices) + 1)])
        return cls(trimmed, indices, layers,
                   mean=(0.485, 0.456, 0.406), std=(0.229, 0.224, 0.225))

    @classmethod
    def random_surrogate(cls, seed: int = 0, channels: tuple[int, ...] = (64, 128, 256)) -> "FeatureExtractor":
        layers: list[nn.Module] = []
        taps = []
        in_ch = 3
        for i, out_ch in enumerate(channels):
            stride = 1 if i == 0 else 2
            layers.append(nn.Conv2d(in_ch, out_ch, kernel_size=3, stride=stride, padding=1))
            layers.append(nn.ReLU())
            taps.append(len(layers) - 1)
            in_ch = out_ch
        features = seeded_init_(nn.Sequential(*layers), seed)
        names = tuple(f"surrogate{i + 1}" for i in range(len(channels)))
        return cls(features, taps, names, mean=(0.5, 0.5, 0.5), std=(0.5, 0.5, 0.5))


def perceptual_loss(pred, target, extractor: FeatureExtractor,
                    layer_weights: Sequence[float] | None = None) -> torch.Tensor:
    """Weighted L1 distance between extractor activations of pred and target.

    Normalized by the number of input pixels (batch * H * W); the target pass
    runs without gradients.
    """
    p = _as_batched(pred)
    t = _as_batched(target, dtype=p.dtype, device=p.device)
    if p.shape != t.shape:
        raise DimensionError(f"pred {tuple(p.shape)} vs target {tuple(t.shape)}")
    if layer_weights is None:
        layer_weights = [1.0] * extractor.num_layers
    if len(layer_weights) != extractor.num_layers:
        raise ValueError(
            f"got {len(layer_weights)} layer weights for {extractor.num_layers} extractor layers"
        )
    n_pixels = p.size(0) * p.size(2) * p.size(3)
    feats_pred = extractor(p)
    with torch.no_grad():
        feats_target = extractor(t)
    loss = p.new_zeros(())
    for weight, fp, ft in zip(layer_weights, feats_pred, feats_target):
        if weight != 0.0:
            loss = loss + weight * (fp - ft).abs().sum()
    return loss / n_pixels


def total_loss(outputs, target, weights: LossWeights = LossWeights(),
               extractor: FeatureExtractor | None = None) -> tuple[torch.Tensor, dict[str, float]]:
    """Combine stage-2 and stage-3 losses against one clean target.

    ``outputs`` is anything with ``o2``/``o3`` attributes or an (o2, o3)
    tuple; o3 may be None (stage-2-only training), in which case the stage-3
    terms are zero. When beta is 0 the extractor is never consulted and may
    be None. Returns the scalar loss (a tensor, so it can be backpropagated)
    plus a float breakdown for logging.
    """
    if hasattr(outputs, "o2"):
        o2, o3 = outputs.o2, getattr(outputs, "o3", None)
    else:
        o2, o3 = outputs
    if weights.beta != 0.0 and extractor is None:
        raise ValueError("perceptual weight beta is nonzero but no extractor was given")

    def stage_terms(pred):
        l1 = smooth_l1(pred, target)
        if weights.beta != 0.0:
            perc = perceptual_loss(pred, target, extractor, weights.layer_weights)
        else:
            perc = l1.new_zeros(())
        return l1, perc

    w2, w3 = weights.stage_weights
    l1_o2, perc_o2 = stage_terms(o2)
    total = w2 * (weights.alpha * l1_o2 + weights.beta * perc_o2)
    breakdown = {
        "l1_o2": float(l1_o2.detach()),
        "perc_o2": float(perc_o2.detach()),
        "l1_o3": 0.0,
        "perc_o3": 0.0,
    }
    if o3 is not None:
        l1_o3, perc_o3 = stage_terms(o3)
        total = total + w3 * (weights.alpha * l1_o3 + weights.beta * perc_o3)
        breakdown["l1_o3"] = float(l1_o3.detach())
        breakdown["perc_o3"] = float(perc_o3.detach())
    return total, breakdown
