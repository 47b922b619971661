"""Training loop: epoch scheduling, Adam updates, checkpointing and resume.

The sample pool enumerates every (clip, frame, scale) combination once per
epoch in a seeded random order; each sample is a five-frame hazy time unit
plus its clean reference frame, randomly cropped to the training patch size.
Losses are logged per step to a CSV file, checkpoints are written at every
epoch boundary, and a run can resume from a checkpoint bit-for-bit: model
weights, Adam moments and the numpy RNG state are all restored.

Loading and sampling run single-threaded — at the frame sizes this package
targets, the optimizer step dominates and simplicity wins over throughput.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from .errors import NonFiniteLossError
from .frames import (
    FrameSequence,
    SamplePair,
    hflip_pair,
    random_crop_pair,
    resample_pair,
    unit_to_tensor,
    frame_to_tensor,
    window,
)
from .losses import FeatureExtractor, LossWeights, total_loss
from .metrics import evaluate_clip, _mean_with_inf
from .pipeline import (
    MODE_FULL,
    MODE_STAGE2_ONLY,
    MODES,
    DehazeModel,
    dehaze_sequence,
    load_checkpoint,
    save_checkpoint,
)

LOSS_LOG_COLUMNS = ("step", "epoch", "lr", "total", "l1_o2", "l1_o3", "perc_o2", "perc_o3")


@dataclass(frozen=True)
class TrainConfig:
    """Optimization schedule and sampling parameters."""

    epochs: int = 300
    lr: float = 1e-4
    lr_drop_epoch: int = 200
    lr_drop_factor: float = 0.1
    patch: int = 512
    batch_size: int = 4
    seed: int = 0
    mode: str = MODE_FULL
    expand_ratios: tuple[float, ...] = ()
    flip_augment: bool = False
    eval_every: int = 0
    checkpoint_dir: str = "checkpoints"
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        object.__setattr__(self, "expand_ratios", tuple(self.expand_ratios))
        if self.epochs < 0:
            raise ValueError(f"epochs must be non-negative, got {self.epochs}")
        if self.lr <= 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if self.lr_drop_epoch < 0:
            raise ValueError(f"lr_drop_epoch must be non-negative, got {self.lr_drop_epoch}")
        if not 0.0 < self.lr_drop_factor <= 1.0:
            raise ValueError(f"lr_drop_factor must lie in (0, 1], got {self.lr_drop_factor}")
        if self.patch < 1:
            raise ValueError(f"patch must be positive, got {self.patch}")
        if self.batch_size < 1:
            raise ValueError(f"batch_size must be positive, got {self.batch_size}")
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.eval_every < 0:
            raise ValueError(f"eval_every must be non-negative, got {self.eval_every}")
        for r in self.expand_ratios:
            if not 0.0 < r <= 1.0:
                raise ValueError(f"expand ratios must lie in (0, 1], got {r}")


@dataclass
class TrainState:
    """Where a run stands: progress counters, best validation scores, and the
    serialized optimizer / RNG state needed to continue exactly."""

    epoch: int = 0
    step: int = 0
    best_psnr: float = -math.inf
    best_ssim: float = -math.inf
    optimizer_state: dict | None = None
    rng_state: dict | None = None


def lr_schedule(epoch: int, config: TrainConfig) -> float:
    """Constant learning rate with a single multiplicative drop."""
    if epoch < config.lr_drop_epoch:
        return config.lr
    return config.lr * config.lr_drop_factor


def _set_lr(optimizer: torch.optim.Optimizer, lr: float) -> None:
    for group in optimizer.param_groups:
        group["lr"] = lr


def _grad_norms(model: DehazeModel) -> dict[str, float]:
    norms = {}
    for name, sub in (("shared_fusion", model.shared_fusion),
                      ("stage2_fusion", model.stage2_fusion),
                      ("refiner", model.refiner)):
        total = 0.0
        for p in sub.parameters():
            if p.grad is not None:
                total += float(p.grad.detach().pow(2).sum())
        norms[name] = math.sqrt(total)
    return norms


def _batch_tensors(batch: Sequence[SamplePair], dtype: torch.dtype,
                   device: torch.device) -> tuple[torch.Tensor, torch.Tensor]:
    inputs = torch.stack([unit_to_tensor(pair.input, dtype) for pair in batch], dim=0)
    targets = torch.stack([frame_to_tensor(pair.target, dtype) for pair in batch], dim=0)
    return inputs.to(device), targets.to(device)


def train_step(model: DehazeModel, batch: Sequence[SamplePair], optimizer: torch.optim.Optimizer,
               config: TrainConfig, extractor: FeatureExtractor | None = None,
               lr: float | None = None) -> tuple[float, dict[str, float], dict[str, float]]:
    """One optimization step on a batch of sample pairs.

    Runs the staged forward pass for the configured mode, the total loss, one
    backward pass and one Adam update. Returns (loss value, per-subnet
    gradient norms, loss breakdown). A non-finite loss aborts immediately —
    continuing would silently poison the weights.
    """
    if not batch:
        raise ValueError("empty batch")
    if lr is not None:
        _set_lr(optimizer, lr)
    param = next(model.parameters())
    inputs, targets = _batch_tensors(batch, param.dtype, param.device)

    if config.mode == MODE_STAGE2_ONLY:
        o2 = model.forward_stage2(inputs)
        loss, breakdown = total_loss((o2, None), targets, config.loss, extractor)
    else:
        _, o2, o3 = model(inputs)
        loss, breakdown = total_loss((o2, o3), targets, config.loss, extractor)

    loss_value = float(loss.detach())
    if not math.isfinite(loss_value):
        raise NonFiniteLossError(
            f"loss became {loss_value} (breakdown {breakdown}); aborting training"
        )
    optimizer.zero_grad(set_to_none=True)
    loss.backward()
    norms = _grad_norms(model)
    optimizer.step()
    return loss_value, norms, breakdown


def _sample_index(clips: Sequence[tuple[FrameSequence, FrameSequence]],
                  ratios: tuple[float, ...]) -> list[tuple[int, int, float]]:
    """Every (clip, frame, scale) combination trained on once per epoch."""
    scales = (1.0,) + ratios
    return [
        (ci, t, s)
        for ci, (hazy, _) in enumerate(clips)
        for t in range(len(hazy))
        for s in scales
    ]


def _make_sample(clips: Sequence[tuple[FrameSequence, FrameSequence]],
                 entry: tuple[int, int, float], config: TrainConfig,
                 rng: np.random.Generator) -> SamplePair:
    ci, t, scale = entry
    hazy, gt = clips[ci]
    pair = SamplePair(window(hazy, t), gt[t])
    if scale != 1.0:
        pair = resample_pair(pair, scale)
    if config.flip_augment and rng.random() < 0.5:
        pair = hflip_pair(pair)
    if (pair.input.height, pair.input.width) != (config.patch, config.patch):
        pair = random_crop_pair(pair, config.patch, seed=int(rng.integers(0, 2 ** 31)))
    return pair


def _validate_geometry(model: DehazeModel, config: TrainConfig,
                       clips: Sequence[tuple[FrameSequence, FrameSequence]]) -> None:
    factor = model.downsample_factor
    if config.patch % factor:
        raise ValueError(f"patch {config.patch} is not divisible by the model factor {factor}")
    scales = (1.0,) + config.expand_ratios
    for hazy, _ in clips:
        for s in scales:
            h = max(1, round(hazy.height * s))
            w = max(1, round(hazy.width * s))
            if config.patch > h or config.patch > w:
                raise ValueError(
                    f"patch {config.patch} exceeds clip {hazy.clip_id!r} at scale {s} ({h}x{w})"
                )


def _evaluate(model: DehazeModel, clips: Sequence[tuple[FrameSequence, FrameSequence]],
              mode: str) -> tuple[float, float]:
    reports = [evaluate_clip(dehaze_sequence(model, hazy, mode), gt) for hazy, gt in clips]
    mean_psnr = _mean_with_inf([r.mean_psnr for r in reports])
    mean_ssim = float(np.mean([r.mean_ssim for r in reports]))
    return mean_psnr, mean_ssim


def fit(model: DehazeModel, train_clips: Sequence[tuple[FrameSequence, FrameSequence]],
        val_clips: Sequence[tuple[FrameSequence, FrameSequence]] = (),
        config: TrainConfig = TrainConfig(), extractor: FeatureExtractor | None = None,
        resume_from: Path | str | None = None) -> TrainState:
    """Train for ``config.epochs`` epochs, checkpointing every epoch.

    Writes ``latest.pt`` (always) and ``best.pt`` (when validation PSNR
    improves) under ``config.checkpoint_dir``, plus ``loss_log.csv`` with one
    row per step. ``resume_from`` continues a previous run exactly where its
    checkpoint left off — same sample order, same Adam moments — so an
    interrupted 10-epoch run and a straight-through one produce identical
    weights and logs.
    """
    if not train_clips:
        raise ValueError("no training clips")
    if config.loss.beta != 0.0 and extractor is None:
        extractor = FeatureExtractor.random_surrogate(seed=0)
        param = next(model.parameters())
        extractor.to(dtype=param.dtype, device=param.device)
    _validate_geometry(model, config, train_clips)

    ckpt_dir = Path(config.checkpoint_dir)
    ckpt_dir.mkdir(parents=True, exist_ok=True)
    log_path = ckpt_dir / "loss_log.csv"

    optimizer = torch.optim.Adam(model.parameters(), lr=config.lr)
    rng = np.random.default_rng(config.seed)
    state = TrainState()

    if resume_from is not None:
        _, payload = load_checkpoint(resume_from)
        model.shared_fusion.load_state_dict(payload["shared_fusion"])
        model.stage2_fusion.load_state_dict(payload["stage2_fusion"])
        model.refiner.load_state_dict(payload["refiner"])
        trainer_state = payload["trainer_state"]
        state.epoch = trainer_state["epoch"]
        state.step = trainer_state["step"]
        state.best_psnr = float(trainer_state["best_psnr"])
        state.best_ssim = float(trainer_state["best_ssim"])
        optimizer.load_state_dict(payload["optimizer"])
        rng.bit_generator.state = trainer_state["rng_state"]

    index = _sample_index(train_clips, config.expand_ratios)
    log_exists = log_path.is_file() and resume_from is not None
    log_file = open(log_path, "a" if log_exists else "w", newline="")
    log = csv.writer(log_file)
    if not log_exists:
        log.writerow(LOSS_LOG_COLUMNS)

    def checkpoint(path: Path) -> None:
        state.optimizer_state = optimizer.state_dict()
        state.rng_state = rng.bit_generator.state
        save_checkpoint(model, path, extra={
            "optimizer": state.optimizer_state,
            "trainer_state": {
                "epoch": state.epoch,
                "step": state.step,
                "best_psnr": float(state.best_psnr),
                "best_ssim": float(state.best_ssim),
                "rng_state": state.rng_state,
            },
        })

    try:
        for epoch in range(state.epoch, config.epochs):
            lr = lr_schedule(epoch, config)
            _set_lr(optimizer, lr)
            order = rng.permutation(len(index))
            for start in range(0, len(order), config.batch_size):
                chosen = order[start:start + config.batch_size]
                batch = [_make_sample(train_clips, index[i], config, rng) for i in chosen]
                loss_value, _, breakdown = train_step(model, batch, optimizer, config, extractor)
                log.writerow([state.step, epoch, repr(lr), repr(loss_value),
                              repr(breakdown["l1_o2"]), repr(breakdown["l1_o3"]),
                              repr(breakdown["perc_o2"]), repr(breakdown["perc_o3"])])
                state.step += 1
            state.epoch = epoch + 1
            log_file.flush()

            if config.eval_every and val_clips and state.epoch % config.eval_every == 0:
                mean_psnr, mean_ssim = _evaluate(model, val_clips, config.mode)
                if mean_psnr > state.best_psnr:
                    state.best_psnr = mean_psnr
                    state.best_ssim = mean_ssim
                    checkpoint(ckpt_dir / "best.pt")
            checkpoint(ckpt_dir / "latest.pt")
        # A zero-epoch run (or one already at its target) still records state.
        checkpoint(ckpt_dir / "latest.pt")
    finally:
        log_file.close()
    return state
