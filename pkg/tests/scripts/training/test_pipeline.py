import numpy as np
import pytest
import torch

from scripts.errors import ContractError
from scripts.evaluation.evaluator import slot_label_maps
from scripts.models import (
    SlotFrame,
    SlotSequence,
    build_params,
    f_sa_with_attention,
    init_slots_gaussian,
    init_slots_gaussian_batch,
    merge_frame,
)
from scripts.training import (
    BRANCH_BYPASS,
    BRANCH_DTST,
    BRANCH_DTST_MERGER,
    BRANCH_PRETRAIN,
    clip_features,
    encode_dynamic,
    pretrain_loss,
    rollout,
    stage2_loss,
)
from scripts.training.pipeline import refine_last

# ─── TEST COMMAND ──────────────────────────────────────────────────────────
# Run this test file with: pytest tests/scripts/training/test_pipeline.py


def window(clips, cfg, dtype=torch.float64):
    return torch.stack([clip[: cfg.T] for clip in clips[:2]]).to(dtype)


def generator(seed: int = 0) -> torch.Generator:
    return torch.Generator().manual_seed(seed)


class TestLosses:
    @pytest.mark.unit
    def test_same_generator_seed_same_loss(self, tiny_cfg, tiny_store, tiny_clips):
        x = window(tiny_clips, tiny_cfg)
        cfg = tiny_cfg.with_overrides(stage="stage2")
        a = stage2_loss(x, tiny_store, cfg, generator(3))
        b = stage2_loss(x, tiny_store, cfg, generator(3))
        assert float(a.loss) == float(b.loss)
        assert a.branch == b.branch

    @pytest.mark.unit
    def test_bypass_without_next_slot_init_equals_pretraining(self, tiny_cfg, tiny_store, tiny_clips):
        x = window(tiny_clips, tiny_cfg)
        cfg = tiny_cfg.with_overrides(stage="stage2", p_b=1.0, use_xslot=False)
        pre = pretrain_loss(x, tiny_store, tiny_cfg, generator(5))
        bypass = stage2_loss(x, tiny_store, cfg, generator(5))
        assert bypass.branch == BRANCH_BYPASS
        assert pre.branch == BRANCH_PRETRAIN
        assert torch.equal(pre.loss, bypass.loss)

    @pytest.mark.unit
    @pytest.mark.parametrize(
        "changes, branch",
        [
            ({"p_b": 1.0}, BRANCH_BYPASS),
            ({"use_dtst": False, "use_xslot": False, "p_b": 0.0}, BRANCH_BYPASS),
            ({"p_b": 0.0, "p_d": 1.0}, BRANCH_DTST),
            ({"p_b": 0.0, "p_d": 0.0, "use_merger": False}, BRANCH_DTST),
            ({"p_b": 0.0, "p_d": 0.0}, BRANCH_DTST_MERGER),
        ],
    )
    def test_branch_selection(self, tiny_cfg, tiny_store, tiny_clips, changes, branch):
        cfg = tiny_cfg.with_overrides(stage="stage2", **changes)
        outcome = stage2_loss(window(tiny_clips, tiny_cfg), tiny_store, cfg, generator())
        assert outcome.branch == branch
        assert torch.isfinite(outcome.loss)
        assert 1.0 <= outcome.active_slots <= cfg.K

    @pytest.mark.unit
    def test_every_parameter_used_by_a_branch_gets_a_gradient(self, tiny_cfg, tiny_store, tiny_clips):
        cfg = tiny_cfg.with_overrides(stage="stage2", p_b=0.0, p_d=1.0)
        stage2_loss(window(tiny_clips, tiny_cfg), tiny_store, cfg, generator()).loss.backward()
        assert all(tensor.grad is not None for _, tensor in tiny_store.trainable_items())

    @pytest.mark.unit
    def test_mask_token_gets_a_gradient_only_when_tokens_are_masked(self, tiny_cfg, tiny_clips):
        x = window(tiny_clips, tiny_cfg)
        grads = {}
        for ratio in (1.0, 0.0):
            store = build_params(tiny_cfg.model_dims(), seed=0, dtype=torch.float64)
            cfg = tiny_cfg.with_overrides(stage="stage2", p_b=0.0, p_d=1.0, use_xslot=False, mask_ratio=ratio)
            stage2_loss(x, store, cfg, generator()).loss.backward()
            grads[ratio] = store["dtst.mask_token"].grad
        assert float(grads[1.0].abs().max()) > 0
        assert grads[0.0] is None or torch.all(grads[0.0] == 0)


class TestDetachedInitialisation:
    @staticmethod
    def first_frame_gradient(cfg, store, x, detach):
        x = x.clone().requires_grad_(True)
        init = init_slots_gaussian_batch(cfg.K, cfg.d_slot, [0, 1], x.dtype)
        seq = encode_dynamic(x, store, cfg, init, detach_init=detach)
        (grad,) = torch.autograd.grad(seq.slots[:, -1].sum(), x)
        return grad[:, 0]

    @pytest.mark.unit
    def test_no_gradient_reaches_earlier_frames_through_the_init(self, tiny_cfg, tiny_store, tiny_clips):
        cfg = tiny_cfg.with_overrides(use_merger=False)
        x = window(tiny_clips, tiny_cfg)
        assert torch.all(self.first_frame_gradient(cfg, tiny_store, x, detach=True) == 0)
        assert float(self.first_frame_gradient(cfg, tiny_store, x, detach=False).abs().max()) > 0


class TestRollout:
    @pytest.mark.unit
    def test_single_frame(self, tiny_cfg, tiny_store):
        result = rollout(torch.randn(1, tiny_cfg.num_patches, tiny_cfg.D_feature, dtype=torch.float64), tiny_store, tiny_cfg)
        assert tuple(result.m_s.shape) == (1, tiny_cfg.K)
        assert len(result.decoded) == 1

    @pytest.mark.unit
    def test_long_clip_keeps_a_bounded_buffer(self, tiny_cfg, tiny_store):
        length = 3 * tiny_cfg.T
        features = torch.randn(length, tiny_cfg.num_patches, tiny_cfg.D_feature, dtype=torch.float64)
        result = rollout(features, tiny_store, tiny_cfg)
        assert result.max_buffer_len == tiny_cfg.T
        assert len(result.active_slots_per_frame) == length
        assert all(1 <= n <= tiny_cfg.K for n in result.active_slots_per_frame)
        for decoded in result.decoded:
            assert torch.allclose(decoded.masks.sum(0), torch.ones(tiny_cfg.num_patches, dtype=torch.float64), atol=1e-5)

    @pytest.mark.unit
    def test_rollout_is_deterministic(self, tiny_cfg, tiny_store):
        features = torch.randn(4, tiny_cfg.num_patches, tiny_cfg.D_feature, dtype=torch.float64)
        a, b = rollout(features, tiny_store, tiny_cfg), rollout(features, tiny_store, tiny_cfg)
        assert all(torch.equal(x.masks, y.masks) for x, y in zip(a.decoded, b.decoded))

    @pytest.mark.unit
    @pytest.mark.parametrize("flags", [{"use_xslot": False}, {"use_xslot": False, "use_dtst": False, "use_merger": False}])
    def test_ablations_roll_out(self, tiny_cfg, tiny_store, flags):
        features = torch.randn(3, tiny_cfg.num_patches, tiny_cfg.D_feature, dtype=torch.float64)
        result = rollout(features, tiny_store, tiny_cfg.with_overrides(**flags))
        assert tuple(result.m_s.shape) == (3, tiny_cfg.K)

    @pytest.mark.unit
    def test_refinement_keeps_one_slot_per_merge_cluster(self, tiny_cfg, tiny_store):
        base = torch.tensor([1.0, 0.0, 0.0, 0.0], dtype=torch.float64)[: tiny_cfg.d_slot]
        slots = torch.stack([base, 1.01 * base, base.flip(0)])
        frame = SlotFrame(slots, torch.ones(3, dtype=torch.bool))
        refined = refine_last(SlotSequence.stack([frame]), tiny_store, tiny_cfg.with_overrides(K=3, use_dtst=False))
        clusters = merge_frame(frame, tiny_cfg.merger_config()).num_clusters
        assert clusters == 2
        assert int(refined.valid.sum()) == clusters
        assert refined.valid.tolist() == [True, False, True]

    @pytest.mark.unit
    def test_empty_clip(self, tiny_cfg, tiny_store):
        with pytest.raises(ContractError):
            rollout(torch.zeros(0, tiny_cfg.num_patches, tiny_cfg.D_feature, dtype=torch.float64), tiny_store, tiny_cfg)

    @pytest.mark.unit
    def test_canvas_mismatch_names_both_sizes(self, tiny_cfg):
        with pytest.raises(ContractError, match="canvas=32"):
            clip_features(torch.zeros(1, 64, 64, 3).numpy(), tiny_cfg)


# ─── TRAINED MODEL BEHAVIOUR ─────────────────────────────────────────────────────────
def patch_majority(mask: np.ndarray, patch_size: int) -> np.ndarray:
    """Flattened patches more than half covered by a pixel mask."""
    rows, cols = mask.shape[0] // patch_size, mask.shape[1] // patch_size
    coverage = mask.reshape(rows, patch_size, cols, patch_size).mean(axis=(1, 3))
    return coverage.reshape(-1) > 0.5


@pytest.mark.slow
def test_rollout_labels_hold_still_on_a_static_clip(overfit_run):
    cfg, store = overfit_run.cfg, overfit_run.store
    side = cfg.canvas // cfg.P
    for clip in overfit_run.clips:
        static = clip[:1].expand(cfg.num_frames, -1, -1)
        result = rollout(static, store, cfg)
        labels = slot_label_maps(torch.stack([d.masks for d in result.decoded]), result.m_s, (side, side), cfg.P)
        assert float((labels[1:] == labels[:-1]).mean()) >= 0.95


@pytest.mark.slow
def test_attention_argmax_separates_the_sprites(overfit_run):
    cfg, store = overfit_run.cfg, overfit_run.store
    separated, frames = 0, 0
    with torch.no_grad():
        for video, clip in zip(overfit_run.videos, overfit_run.clips):
            for t in range(cfg.num_frames):
                covered = [patch_majority(mask, cfg.P) for mask in video.gt_masks[t]]
                covered = [c for c in covered if c.any()]
                if len(covered) < 2:
                    continue
                init = init_slots_gaussian(cfg.K, cfg.d_slot, cfg.eval_seed, clip.dtype)
                _, attn = f_sa_with_attention(clip[t], init, store, cfg.n_iter)
                owners = attn.argmax(dim=-1).numpy()
                winners = {int(np.bincount(owners[c]).argmax()) for c in covered}
                separated += len(winners) == len(covered)
                frames += 1
    assert frames > 0
    assert separated >= 0.8 * frames
