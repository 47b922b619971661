"""The progressive dehazing pipeline: grouped fusion, re-fusion, refinement.

A five-frame time unit (f0..f4, reference f2) flows through three stages:

  stage 1   one fusion network, applied to the three overlapping triplets
            (f0,f1,f2), (f1,f2,f3), (f2,f3,f4) with *shared* parameters,
            yields preliminary frames o1_a, o1_b, o1_c
  stage 2   a second fusion network (own parameters) fuses that triplet
            into a single frame o2
  stage 3   the refinement network polishes o2 against the hazy reference f2

Each fusion call also receives the dark-channel haze map of its middle input
frame; the stage-2 map is recomputed from o1_b inside the graph, so gradients
flow through it. The whole model therefore owns exactly three parameter sets:
shared stage-1 fusion, stage-2 fusion, refiner.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from .errors import CheckpointVersionError, DimensionError
from .frames import (
    Frame,
    FrameSequence,
    TimeUnit,
    array_from_tensor,
    frame_from_array,
    unit_to_tensor,
    window,
)
from .fusion import FUSION_INPUT_PLANES, FusionConfig, FusionNet, build_fusion
from .haze import DEFAULT_HAZE_WINDOW, dark_channel
from .refine import RefineConfig, RefineNet, build_refine

CHECKPOINT_FORMAT_VERSION = 1

# Training / inference modes: the full three-stage pipeline, or the ablation
# that stops at stage 2 and leaves the refiner untouched.
MODE_FULL = "full"
MODE_STAGE2_ONLY = "stage2_only"
MODES = (MODE_FULL, MODE_STAGE2_ONLY)


@dataclass
class StageOutputs:
    """Raw per-stage outputs for one time unit, as H x W x 3 arrays.

    Values are straight from the networks — unclamped — so losses see exactly
    what the model produced. ``o1`` follows triplet order (a, b, c).
    """

    o1: tuple[np.ndarray, np.ndarray, np.ndarray]
    o2: np.ndarray
    o3: np.ndarray


class DehazeModel(nn.Module):
    """Container for the three parameter sets plus the staged forward pass."""

    def __init__(self, shared_fusion: FusionNet, stage2_fusion: FusionNet,
                 refiner: RefineNet, haze_window: int = DEFAULT_HAZE_WINDOW):
        super().__init__()
        if haze_window < 1 or haze_window % 2 == 0:
            raise ValueError(f"haze_window must be odd and positive, got {haze_window}")
        self.shared_fusion = shared_fusion
        self.stage2_fusion = stage2_fusion
        self.refiner = refiner
        self.haze_window = haze_window

    @property
    def downsample_factor(self) -> int:
        return max(
            self.shared_fusion.config.downsample_factor,
            self.stage2_fusion.config.downsample_factor,
            self.refiner.config.downsample_factor,
        )

    def _stage1_and_2(self, frames: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor]:
        if frames.dim() != 5 or frames.size(1) != 5 or frames.size(2) != 3:
            raise DimensionError(f"expected [B, 5, 3, H, W], got {tuple(frames.shape)}")
        f = frames.unbind(dim=1)
        o1 = []
        for triplet in ((f[0], f[1], f[2]), (f[1], f[2], f[3]), (f[2], f[3], f[4])):
            haze_map = dark_channel(triplet[1], self.haze_window)
            o1.append(self.shared_fusion(torch.cat(triplet, dim=1), haze_map))
        haze_map2 = dark_channel(o1[1], self.haze_window)
        o2 = self.stage2_fusion(torch.cat(o1, dim=1), haze_map2)
        return o1, o2

    def forward(self, frames: torch.Tensor) -> tuple[list[torch.Tensor], torch.Tensor, torch.Tensor]:
        """frames [B, 5, 3, H, W] -> (o1 list of three [B, 3, H, W], o2, o3)."""
        o1, o2 = self._stage1_and_2(frames)
        o3 = self.refiner(o2, frames[:, 2])
        return o1, o2, o3

    def forward_stage2(self, frames: torch.Tensor) -> torch.Tensor:
        """Stages 1 and 2 only; the refiner is never invoked."""
        _, o2 = self._stage1_and_2(frames)
        return o2


def build_model(fusion_config: FusionConfig | None = None,
                refine_config: RefineConfig | None = None,
                haze_window: int = DEFAULT_HAZE_WINDOW,
                seed: int = 0) -> DehazeModel:
    """Assemble the full pipeline with deterministic weights.

    The three parameter sets get distinct seeds derived from ``seed`` so the
    two fusion networks never start out identical.
    """
    fusion_config = fusion_config or FusionConfig()
    refine_config = refine_config or RefineConfig()
    return DehazeModel(
        shared_fusion=build_fusion(fusion_config, seed),
        stage2_fusion=build_fusion(fusion_config, seed + 1),
        refiner=build_refine(refine_config, seed + 2),
        haze_window=haze_window,
    )


# ---------------------------------------------------------------------------
# frame-level forward passes


def _unit_batch(model: DehazeModel, unit: TimeUnit) -> torch.Tensor:
    param = next(model.parameters())
    return unit_to_tensor(unit, param.dtype).unsqueeze(0).to(param.device)


def model_forward(model: DehazeModel, unit: TimeUnit) -> StageOutputs:
    """Run the full pipeline on one time unit; returns all stage outputs."""
    with torch.no_grad():
        o1, o2, o3 = model(_unit_batch(model, unit))
    return StageOutputs(
        o1=tuple(array_from_tensor(o[0]) for o in o1),
        o2=array_from_tensor(o2[0]),
        o3=array_from_tensor(o3[0]),
    )


def model_forward_stage2(model: DehazeModel, unit: TimeUnit) -> np.ndarray:
    """Run stages 1 and 2 on one time unit; returns the raw o2 frame."""
    with torch.no_grad():
        o2 = model.forward_stage2(_unit_batch(model, unit))
    return array_from_tensor(o2[0])


def _pad_to_multiple(x: torch.Tensor, factor: int) -> tuple[torch.Tensor, int, int]:
    h, w = x.shape[-2:]
    pad_h = (-h) % factor
    pad_w = (-w) % factor
    if pad_h or pad_w:
        # Reflection needs at least 2 pixels per padded pixel; tiny frames
        # fall back to edge replication.
        mode = "reflect" if pad_h < h and pad_w < w else "replicate"
        x = F.pad(x.reshape(-1, *x.shape[-3:]), (0, pad_w, 0, pad_h), mode=mode).reshape(
            *x.shape[:-2], h + pad_h, w + pad_w
        )
    return x, h, w


def dehaze_sequence(model: DehazeModel, seq: FrameSequence, mode: str = MODE_FULL) -> FrameSequence:
    """Dehaze a whole clip frame by frame.

    Each output frame comes from the time unit centred on it (clip boundaries
    replicate the nearest frame). Arbitrary resolutions are handled by
    reflect-padding to the model's downsampling multiple and cropping back.
    Outputs are clamped to [0, 1].
    """
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}, got {mode!r}")
    factor = model.downsample_factor
    restored = []
    with torch.no_grad():
        for t in range(len(seq)):
            batch = _unit_batch(model, window(seq, t))
            batch, h, w = _pad_to_multiple(batch, factor)
            if mode == MODE_STAGE2_ONLY:
                out = model.forward_stage2(batch)
            else:
                _, _, out = model(batch)
            restored.append(frame_from_array(array_from_tensor(out[0, :, :h, :w]), clamp=True))
    return FrameSequence(tuple(restored), clip_id=seq.clip_id)


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(model: DehazeModel, path: Path | str, extra: dict | None = None) -> None:
    """Serialize the three parameter sets plus everything needed to rebuild.

    The payload stays within plain containers and tensors so it loads under
    ``torch.load(weights_only=True)``.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = {
        "format_version": CHECKPOINT_FORMAT_VERSION,
        "fusion_config": asdict(model.shared_fusion.config),
        "refine_config": {**asdict(model.refiner.config),
                          "branch_kernels": list(model.refiner.config.branch_kernels)},
        "haze_window": model.haze_window,
        "input_planes": list(FUSION_INPUT_PLANES),
        "shared_fusion": model.shared_fusion.state_dict(),
        "stage2_fusion": model.stage2_fusion.state_dict(),
        "refiner": model.refiner.state_dict(),
    }
    if extra:
        overlap = set(extra) & set(payload)
        if overlap:
            raise ValueError(f"extra keys collide with checkpoint fields: {sorted(overlap)}")
        payload.update(extra)
    torch.save(payload, path)


def load_checkpoint(path: Path | str) -> tuple[DehazeModel, dict]:
    """Rebuild a model from a checkpoint; returns (model, full payload)."""
    path = Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"checkpoint not found: {path}")
    payload = torch.load(path, map_location="cpu", weights_only=True)
    version = payload.get("format_version")
    if version != CHECKPOINT_FORMAT_VERSION:
        raise CheckpointVersionError(
            f"checkpoint {path} has format version {version!r}, "
            f"this build reads version {CHECKPOINT_FORMAT_VERSION}"
        )
    fusion_config = FusionConfig(**payload["fusion_config"])
    refine_raw = dict(payload["refine_config"])
    refine_raw["branch_kernels"] = tuple(refine_raw["branch_kernels"])
    refine_config = RefineConfig(**refine_raw)
    model = DehazeModel(
        shared_fusion=FusionNet(fusion_config),
        stage2_fusion=FusionNet(fusion_config),
        refiner=RefineNet(refine_config),
        haze_window=payload["haze_window"],
    )
    model.shared_fusion.load_state_dict(payload["shared_fusion"])
    model.stage2_fusion.load_state_dict(payload["stage2_fusion"])
    model.refiner.load_state_dict(payload["refiner"])
    return model, payload
