import csv
import math

import numpy as np
import pytest
import torch

from videodehaze.errors import NonFiniteLossError
from videodehaze.frames import FrameSequence, SamplePair, window
from videodehaze.fusion import FusionConfig
from videodehaze.haze import HazeFieldSpec, generate_haze_sequence, synthesize_hazy
from videodehaze.losses import LossWeights
from videodehaze.pipeline import build_model, load_checkpoint
from videodehaze.refine import RefineConfig
from videodehaze.trainer import (
    LOSS_LOG_COLUMNS,
    TrainConfig,
    fit,
    lr_schedule,
    train_step,
)

from oracles import adam_reference
from synthclips import make_clean_clip

SMALL_FUSION = FusionConfig(base_channels=8, depth=2)
SMALL_REFINE = RefineConfig(base_channels=8, depth=1, blocks_per_level=1)


def small_model(seed: int = 0):
    return build_model(SMALL_FUSION, SMALL_REFINE, haze_window=3, seed=seed)


def hazy_gt_clip(seed: int, n_frames: int = 6, size: int = 16,
                 clip_id: str = "clip") -> tuple[FrameSequence, FrameSequence]:
    gt = make_clean_clip(seed, n_frames, size, size, clip_id=clip_id)
    spec = HazeFieldSpec(base_transmission=0.7, spatial_smoothness=4.0,
                         temporal_drift=0.0, airlight_value=0.8, seed=seed)
    maps = generate_haze_sequence(spec, n_frames, size, size)
    hazy = FrameSequence([synthesize_hazy(f, p) for f, p in zip(gt.frames, maps)],
                         clip_id=clip_id)
    return hazy, gt


def one_batch(clips, batch_size: int = 2) -> list[SamplePair]:
    hazy, gt = clips[0]
    return [SamplePair(window(hazy, t), gt[t]) for t in range(batch_size)]


def state_snapshot(model) -> dict[str, torch.Tensor]:
    return {k: v.clone() for k, v in model.state_dict().items()}


def states_equal(a: dict, b: dict) -> bool:
    return all(torch.equal(a[k], b[k]) for k in a) and a.keys() == b.keys()


class TestLrSchedule:
    def test_before_drop(self):
        cfg = TrainConfig(lr=1e-4, lr_drop_epoch=200, lr_drop_factor=0.1)
        assert lr_schedule(0, cfg) == 1e-4
        assert lr_schedule(199, cfg) == 1e-4

    def test_after_drop(self):
        cfg = TrainConfig(lr=1e-4, lr_drop_epoch=200, lr_drop_factor=0.1)
        assert lr_schedule(200, cfg) == pytest.approx(1e-5)
        assert lr_schedule(299, cfg) == pytest.approx(1e-5)

    def test_factor_one_is_constant(self):
        cfg = TrainConfig(lr=3e-4, lr_drop_factor=1.0)
        assert lr_schedule(0, cfg) == lr_schedule(500, cfg) == 3e-4


class TestOptimizerAgainstReference:
    def test_adam_matches_scalar_reference(self):
        # quadratic bowl: grad of 0.5*(p - target)^2 is p - target
        targets = [3.0, -1.5, 0.25]
        start = [0.0, 0.0, 0.0]

        params = torch.tensor(start, dtype=torch.float64, requires_grad=True)
        opt = torch.optim.Adam([params], lr=0.1)
        for _ in range(10):
            opt.zero_grad()
            loss = 0.5 * ((params - torch.tensor(targets, dtype=torch.float64)) ** 2).sum()
            loss.backward()
            opt.step()

        expected = adam_reference(
            start,
            lambda th: [th[i] - targets[i] for i in range(3)],
            lr=0.1,
            steps=10,
        )
        for got, want in zip(params.detach().tolist(), expected):
            assert got == pytest.approx(want, abs=1e-10)


class TestTrainStep:
    def test_zero_lr_keeps_params_bitwise(self):
        model = small_model()
        clips = [hazy_gt_clip(0)]
        before = state_snapshot(model)
        opt = torch.optim.Adam(model.parameters(), lr=1e-4)
        cfg = TrainConfig(patch=16, batch_size=2, loss=LossWeights(beta=0.0))
        train_step(model, one_batch(clips), opt, cfg, lr=0.0)
        assert states_equal(before, state_snapshot(model))

    def test_first_step_loss_deterministic(self):
        clips = [hazy_gt_clip(0)]
        cfg = TrainConfig(patch=16, batch_size=2, loss=LossWeights(beta=0.0))
        losses = []
        for _ in range(2):
            model = small_model()
            opt = torch.optim.Adam(model.parameters(), lr=1e-4)
            value, _, _ = train_step(model, one_batch(clips), opt, cfg)
            losses.append(value)
        assert losses[0] == losses[1]

    def test_gradients_reach_all_three_subnets(self):
        model = small_model()
        clips = [hazy_gt_clip(0)]
        opt = torch.optim.Adam(model.parameters(), lr=1e-4)
        cfg = TrainConfig(patch=16, batch_size=2, loss=LossWeights(beta=0.0))
        _, norms, _ = train_step(model, one_batch(clips), opt, cfg)
        assert set(norms) == {"shared_fusion", "stage2_fusion", "refiner"}
        assert all(v > 0 for v in norms.values())

    def test_stage2_only_skips_refiner(self):
        model = small_model()
        clips = [hazy_gt_clip(0)]
        refiner_before = {k: v.clone() for k, v in model.refiner.state_dict().items()}
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        cfg = TrainConfig(patch=16, batch_size=2, mode="stage2_only",
                          loss=LossWeights(beta=0.0))
        _, norms, breakdown = train_step(model, one_batch(clips), opt, cfg)
        assert norms["refiner"] == 0.0
        assert breakdown["l1_o3"] == 0.0
        after = model.refiner.state_dict()
        assert all(torch.equal(refiner_before[k], after[k]) for k in refiner_before)

    def test_loss_decreases_when_overfitting_one_batch(self):
        model = small_model()
        clips = [hazy_gt_clip(0)]
        batch = one_batch(clips)
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        cfg = TrainConfig(patch=16, batch_size=2, loss=LossWeights(beta=0.0))
        first, _, _ = train_step(model, batch, opt, cfg)
        last = first
        for _ in range(199):
            last, _, _ = train_step(model, batch, opt, cfg)
        assert last < 0.5 * first

    def test_non_finite_loss_aborts(self):
        model = small_model()
        clips = [hazy_gt_clip(0)]
        with torch.no_grad():
            next(model.shared_fusion.parameters()).fill_(math.nan)
        opt = torch.optim.Adam(model.parameters(), lr=1e-4)
        cfg = TrainConfig(patch=16, batch_size=2, loss=LossWeights(beta=0.0))
        with pytest.raises(NonFiniteLossError):
            train_step(model, one_batch(clips), opt, cfg)

    def test_empty_batch_rejected(self):
        model = small_model()
        opt = torch.optim.Adam(model.parameters(), lr=1e-4)
        with pytest.raises(ValueError):
            train_step(model, [], opt, TrainConfig())


class TestFit:
    def small_config(self, tmp_path, **overrides):
        defaults = dict(epochs=2, lr=1e-3, lr_drop_epoch=100, patch=16,
                        batch_size=4, seed=7, loss=LossWeights(beta=0.0),
                        checkpoint_dir=str(tmp_path / "ckpt"))
        defaults.update(overrides)
        return TrainConfig(**defaults)

    def test_zero_epochs_writes_checkpoint_only(self, tmp_path):
        model = small_model()
        before = state_snapshot(model)
        cfg = self.small_config(tmp_path, epochs=0)
        state = fit(model, [hazy_gt_clip(0)], config=cfg)
        assert state.step == 0
        assert states_equal(before, state_snapshot(model))
        ckpt_dir = tmp_path / "ckpt"
        assert (ckpt_dir / "latest.pt").is_file()
        with open(ckpt_dir / "loss_log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows == [list(LOSS_LOG_COLUMNS)]

    def test_logs_one_row_per_step(self, tmp_path):
        model = small_model()
        cfg = self.small_config(tmp_path)
        state = fit(model, [hazy_gt_clip(0)], config=cfg)
        # 6 frames, batch 4 -> 2 batches per epoch, 2 epochs
        assert state.step == 4
        with open(tmp_path / "ckpt" / "loss_log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == list(LOSS_LOG_COLUMNS)
        assert len(rows) == 1 + 4
        steps = [int(r[0]) for r in rows[1:]]
        assert steps == [0, 1, 2, 3]
        for row in rows[1:]:
            assert math.isfinite(float(row[3]))

    def test_expand_ratios_multiply_samples(self, tmp_path):
        model = small_model()
        cfg = self.small_config(tmp_path, epochs=1, expand_ratios=(0.5,), patch=8)
        state = fit(model, [hazy_gt_clip(0)], config=cfg)
        # 6 frames x 2 scales = 12 samples, batch 4 -> 3 steps
        assert state.step == 3

    def test_resume_is_bit_exact(self, tmp_path):
        clips = [hazy_gt_clip(0)]

        straight_cfg = self.small_config(tmp_path, epochs=4,
                                         checkpoint_dir=str(tmp_path / "straight"))
        straight = small_model(seed=3)
        fit(straight, clips, config=straight_cfg)

        split_dir = tmp_path / "split"
        first_cfg = self.small_config(tmp_path, epochs=2, checkpoint_dir=str(split_dir))
        part_one = small_model(seed=3)
        fit(part_one, clips, config=first_cfg)

        second_cfg = self.small_config(tmp_path, epochs=4, checkpoint_dir=str(split_dir))
        resumed = small_model(seed=3)
        fit(resumed, clips, config=second_cfg, resume_from=split_dir / "latest.pt")

        assert states_equal(state_snapshot(straight), state_snapshot(resumed))
        with open(tmp_path / "straight" / "loss_log.csv") as fh:
            straight_log = fh.read()
        with open(split_dir / "loss_log.csv") as fh:
            split_log = fh.read()
        assert straight_log == split_log

    def test_stage2_only_fit_leaves_refiner_at_init(self, tmp_path):
        model = small_model(seed=5)
        refiner_before = {k: v.clone() for k, v in model.refiner.state_dict().items()}
        fusion_before = {k: v.clone() for k, v in model.shared_fusion.state_dict().items()}
        cfg = self.small_config(tmp_path, epochs=1, mode="stage2_only")
        fit(model, [hazy_gt_clip(0)], config=cfg)
        refiner_after = model.refiner.state_dict()
        assert all(torch.equal(refiner_before[k], refiner_after[k]) for k in refiner_before)
        fusion_after = model.shared_fusion.state_dict()
        assert any(not torch.equal(fusion_before[k], fusion_after[k]) for k in fusion_before)

    def test_eval_writes_best_checkpoint(self, tmp_path):
        model = small_model()
        clips = [hazy_gt_clip(0)]
        val = [hazy_gt_clip(1, clip_id="val")]
        cfg = self.small_config(tmp_path, epochs=1, eval_every=1)
        state = fit(model, clips, val_clips=val, config=cfg)
        best = tmp_path / "ckpt" / "best.pt"
        assert best.is_file()
        assert math.isfinite(state.best_psnr)
        _, payload = load_checkpoint(best)
        assert payload["trainer_state"]["best_psnr"] == state.best_psnr

    def test_surrogate_extractor_used_when_beta_nonzero(self, tmp_path):
        # no extractor passed; perceptual columns must still be populated
        model = small_model()
        cfg = self.small_config(tmp_path, epochs=1, loss=LossWeights(alpha=10.0, beta=1.0))
        fit(model, [hazy_gt_clip(0)], config=cfg)
        with open(tmp_path / "ckpt" / "loss_log.csv", newline="") as fh:
            rows = list(csv.reader(fh))
        perc_col = LOSS_LOG_COLUMNS.index("perc_o2")
        assert all(float(r[perc_col]) > 0 for r in rows[1:])

    def test_patch_divisibility_checked(self, tmp_path):
        model = small_model()
        cfg = self.small_config(tmp_path, patch=18)
        with pytest.raises(ValueError, match="divisible"):
            fit(model, [hazy_gt_clip(0, size=36)], config=cfg)

    def test_patch_larger_than_clip_rejected(self, tmp_path):
        model = small_model()
        cfg = self.small_config(tmp_path, patch=32)
        with pytest.raises(ValueError, match="exceeds"):
            fit(model, [hazy_gt_clip(0, size=16)], config=cfg)

    def test_no_clips_rejected(self, tmp_path):
        with pytest.raises(ValueError):
            fit(small_model(), [], config=self.small_config(tmp_path))


class TestTrainConfigValidation:
    def test_defaults(self):
        cfg = TrainConfig()
        assert cfg.epochs == 300
        assert cfg.lr == 1e-4
        assert cfg.lr_drop_epoch == 200
        assert cfg.lr_drop_factor == 0.1
        assert cfg.patch == 512
        assert cfg.batch_size == 4
        assert cfg.mode == "full"

    def test_bad_values(self):
        with pytest.raises(ValueError):
            TrainConfig(epochs=-1)
        with pytest.raises(ValueError):
            TrainConfig(batch_size=0)
        with pytest.raises(ValueError):
            TrainConfig(lr=0.0)
        with pytest.raises(ValueError):
            TrainConfig(mode="bogus")
        with pytest.raises(ValueError):
            TrainConfig(expand_ratios=(1.5,))
