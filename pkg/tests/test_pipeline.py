import numpy as np
import pytest
import torch

from videodehaze.blocks import zero_parameters_
from videodehaze.errors import CheckpointVersionError, DimensionError
from videodehaze.frames import Frame, FrameSequence, TimeUnit
from videodehaze.fusion import FusionConfig
from videodehaze.pipeline import (
    MODE_STAGE2_ONLY,
    DehazeModel,
    build_model,
    dehaze_sequence,
    load_checkpoint,
    model_forward,
    model_forward_stage2,
    save_checkpoint,
)
from videodehaze.refine import RefineConfig

from conftest import random_frame

FUSION = FusionConfig(base_channels=8, depth=2)
REFINE = RefineConfig(base_channels=8, depth=2, blocks_per_level=1)


def small_model(seed=0, haze_window=7):
    return build_model(FUSION, REFINE, haze_window=haze_window, seed=seed)


def random_unit(rng, h=16, w=16):
    return TimeUnit(tuple(random_frame(rng, h, w) for _ in range(5)), t=2)


def random_clip(rng, n=6, h=16, w=16, clip_id="clip"):
    return FrameSequence(tuple(random_frame(rng, h, w) for _ in range(n)), clip_id)


class TestStructure:
    def test_exactly_three_parameter_sets(self):
        model = small_model()
        subnets = [model.shared_fusion, model.stage2_fusion, model.refiner]
        own = sum(p.numel() for m in subnets for p in m.parameters())
        total = sum(p.numel() for p in model.parameters())
        assert own == total

    def test_stage1_parameters_are_shared(self, rng):
        # one object, so a perturbation shows up in all three triplet outputs
        model = small_model(seed=1)
        unit = random_unit(rng)
        before = model_forward(model, unit)
        with torch.no_grad():
            model.shared_fusion.out.weight.add_(0.05)
        after = model_forward(model, unit)
        for b, a in zip(before.o1, after.o1):
            assert not np.array_equal(b, a)

    def test_distinct_seeds_for_the_three_sets(self):
        model = small_model(seed=0)
        a = torch.cat([p.flatten() for p in model.shared_fusion.parameters()])
        b = torch.cat([p.flatten() for p in model.stage2_fusion.parameters()])
        assert not torch.equal(a, b)

    def test_even_haze_window_rejected(self):
        with pytest.raises(ValueError):
            small_model(haze_window=4)


class TestForward:
    def test_zero_model_is_identity(self, rng):
        model = zero_parameters_(small_model())
        unit = random_unit(rng)
        out = model_forward(model, unit)
        assert np.array_equal(out.o2, unit.reference.data)
        assert np.array_equal(out.o3, unit.reference.data)
        for o, f in zip(out.o1, unit.frames[1:4]):
            assert np.array_equal(o, f.data)

    def test_stage_outputs_shapes(self, rng):
        model = small_model()
        out = model_forward(model, random_unit(rng, 16, 24))
        assert len(out.o1) == 3
        for o in out.o1:
            assert o.shape == (16, 24, 3)
        assert out.o2.shape == (16, 24, 3)
        assert out.o3.shape == (16, 24, 3)

    def test_stage2_only_matches_full_o2(self, rng):
        model = small_model(seed=2)
        unit = random_unit(rng)
        assert np.array_equal(model_forward_stage2(model, unit), model_forward(model, unit).o2)

    def test_grouping_uses_correct_triplets(self, rng):
        # o1[0] must not depend on frames 3 and 4; o1[2] not on frames 0 and 1
        model = small_model(seed=3)
        frames = [random_frame(rng) for _ in range(5)]
        base = model_forward(model, TimeUnit(tuple(frames), t=2))
        changed = list(frames)
        changed[4] = random_frame(rng)
        out = model_forward(model, TimeUnit(tuple(changed), t=2))
        assert np.array_equal(base.o1[0], out.o1[0])
        assert np.array_equal(base.o1[1], out.o1[1])
        assert not np.array_equal(base.o1[2], out.o1[2])

        changed = list(frames)
        changed[0] = random_frame(rng)
        out = model_forward(model, TimeUnit(tuple(changed), t=2))
        assert not np.array_equal(base.o1[0], out.o1[0])
        assert np.array_equal(base.o1[1], out.o1[1])
        assert np.array_equal(base.o1[2], out.o1[2])

    def test_loss_on_o3_reaches_all_three_sets(self, rng):
        model = small_model(seed=1)
        x = torch.rand(2, 5, 3, 16, 16)
        _, _, o3 = model(x)
        o3.pow(2).mean().backward()
        for sub in (model.shared_fusion, model.stage2_fusion, model.refiner):
            assert sum(float(p.grad.abs().sum()) for p in sub.parameters() if p.grad is not None) > 0

    def test_loss_on_o2_leaves_refiner_untouched(self, rng):
        model = small_model(seed=1)
        x = torch.rand(2, 5, 3, 16, 16)
        o2 = model.forward_stage2(x)
        o2.pow(2).mean().backward()
        assert all(p.grad is None for p in model.refiner.parameters())
        for sub in (model.shared_fusion, model.stage2_fusion):
            assert sum(float(p.grad.abs().sum()) for p in sub.parameters() if p.grad is not None) > 0

    def test_bad_input_rank_rejected(self):
        model = small_model()
        with pytest.raises(DimensionError):
            model(torch.rand(2, 4, 3, 16, 16))


class TestDehazeSequence:
    def test_zero_model_returns_input_clip(self, rng):
        model = zero_parameters_(small_model())
        clip = random_clip(rng, n=5)
        out = dehaze_sequence(model, clip)
        assert len(out) == len(clip)
        for restored, original in zip(out.frames, clip.frames):
            assert np.array_equal(restored.data, original.data)

    def test_output_clamped_and_valid(self, rng):
        model = small_model(seed=5)
        out = dehaze_sequence(model, random_clip(rng, n=4))
        for f in out.frames:
            assert f.data.min() >= 0.0 and f.data.max() <= 1.0

    def test_temporal_locality(self, rng):
        # frame t only sees t-2..t+2: editing frame 5 cannot change frame 2
        model = small_model(seed=4)
        frames = [random_frame(rng) for _ in range(8)]
        edited = list(frames)
        edited[5] = random_frame(rng)
        out_a = dehaze_sequence(model, FrameSequence(tuple(frames), "a"))
        out_b = dehaze_sequence(model, FrameSequence(tuple(edited), "b"))
        assert np.array_equal(out_a[2].data, out_b[2].data)
        assert not np.array_equal(out_a[5].data, out_b[5].data)

    def test_single_frame_clip(self, rng):
        model = small_model(seed=4)
        out = dehaze_sequence(model, random_clip(rng, n=1))
        assert len(out) == 1

    def test_arbitrary_resolution_preserved(self, rng):
        # 100x75 is not divisible by 4; padding must be invisible outside
        model = small_model(seed=4)
        clip = random_clip(rng, n=3, h=75, w=100)
        out = dehaze_sequence(model, clip)
        assert (out.height, out.width) == (75, 100)

    def test_stage2_mode(self, rng):
        model = small_model(seed=4)
        clip = random_clip(rng, n=3)
        full = dehaze_sequence(model, clip)
        partial = dehaze_sequence(model, clip, mode=MODE_STAGE2_ONLY)
        assert len(partial) == len(clip)
        assert not np.array_equal(full[1].data, partial[1].data)

    def test_unknown_mode(self, rng):
        with pytest.raises(ValueError):
            dehaze_sequence(small_model(), random_clip(rng, n=3), mode="half")


class TestCheckpoints:
    def test_round_trip(self, rng, tmp_path):
        model = small_model(seed=6, haze_window=9)
        path = tmp_path / "model.pt"
        save_checkpoint(model, path)
        loaded, payload = load_checkpoint(path)
        assert loaded.haze_window == 9
        assert loaded.shared_fusion.config == model.shared_fusion.config
        assert loaded.refiner.config == model.refiner.config
        for pa, pb in zip(model.parameters(), loaded.parameters()):
            assert torch.equal(pa, pb)
        assert payload["format_version"] == 1

    def test_round_trip_preserves_outputs(self, rng, tmp_path):
        model = small_model(seed=7)
        path = tmp_path / "model.pt"
        save_checkpoint(model, path)
        loaded, _ = load_checkpoint(path)
        unit = random_unit(rng)
        a = model_forward(model, unit)
        b = model_forward(loaded, unit)
        assert np.array_equal(a.o3, b.o3)

    def test_extra_state_round_trips(self, tmp_path):
        model = small_model()
        path = tmp_path / "model.pt"
        save_checkpoint(model, path, extra={"trainer_state": {"epoch": 3, "step": 17}})
        _, payload = load_checkpoint(path)
        assert payload["trainer_state"] == {"epoch": 3, "step": 17}

    def test_extra_keys_cannot_shadow_model_fields(self, tmp_path):
        model = small_model()
        with pytest.raises(ValueError):
            save_checkpoint(model, tmp_path / "m.pt", extra={"refiner": {}})

    def test_unsupported_version_rejected(self, tmp_path):
        model = small_model()
        path = tmp_path / "model.pt"
        save_checkpoint(model, path)
        payload = torch.load(path, weights_only=True)
        payload["format_version"] = 99
        torch.save(payload, path)
        with pytest.raises(CheckpointVersionError):
            load_checkpoint(path)

    def test_missing_file(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_checkpoint(tmp_path / "nope.pt")
