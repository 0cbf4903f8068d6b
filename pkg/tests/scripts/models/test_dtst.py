import math

import pytest
import torch

from scripts.errors import ConfigError, ContractError
from scripts.models import (
    DTSTConfig,
    MaskPlan,
    MergerConfig,
    SlotSequence,
    apply_mask,
    dtst_forward,
    predict_next,
    sample_mask_plan,
    temporal_pe,
)
from scripts.models.dtst import _attention_mask, round_half_up

# ─── TEST COMMAND ──────────────────────────────────────────────────────────
# Run this test file with: pytest tests/scripts/models/test_dtst.py


@pytest.fixture()
def sequence(tiny_cfg) -> SlotSequence:
    generator = torch.Generator().manual_seed(9)
    slots = torch.randn(3, 3, tiny_cfg.d_slot, generator=generator, dtype=torch.float64)
    return SlotSequence(slots, torch.ones(3, 3, dtype=torch.bool))


def zero_residual_branches(store, cfg: DTSTConfig) -> None:
    for layer in range(cfg.layers):
        prefix = f"dtst.layer{layer}"
        for name in (f"{prefix}.W_o", f"{prefix}.b_o", f"{prefix}.ff.w2", f"{prefix}.ff.b2"):
            store.assign(name, torch.zeros_like(store[name]))


class TestTemporalEncoding:
    @pytest.mark.unit
    def test_frame_zero(self):
        pe = temporal_pe(0, 8)
        assert torch.equal(pe[0::2], torch.zeros(4))
        assert torch.equal(pe[1::2], torch.ones(4))

    @pytest.mark.unit
    def test_closed_form(self):
        pe = temporal_pe(1, 4, dtype=torch.float64)
        expected = [math.sin(1.0), math.cos(1.0), math.sin(1.0 / 100.0), math.cos(1.0 / 100.0)]
        assert pe.tolist() == pytest.approx(expected, abs=1e-6)

    @pytest.mark.unit
    def test_bounded_and_range_checked(self):
        assert all(float(temporal_pe(t, 16).abs().max()) <= 1.0 for t in range(64))
        with pytest.raises(ContractError):
            temporal_pe(64, 16, t_max=64)


class TestMasking:
    @pytest.mark.unit
    def test_round_half_up(self):
        assert [round_half_up(v) for v in (0.5, 1.5, 2.4999, 0.6)] == [1, 2, 2, 1]

    @pytest.mark.unit
    def test_half_of_eight_tokens_reproducibly(self):
        valid = torch.ones(2, 4, dtype=torch.bool)
        a = sample_mask_plan(valid, 0.5, seed=3)
        b = sample_mask_plan(valid, 0.5, seed=3)
        assert int(a.masked.sum()) == 4
        assert torch.equal(a.masked, b.masked)

    @pytest.mark.unit
    def test_only_valid_tokens_are_masked(self):
        valid = torch.tensor([[True, False, True], [False, True, True]])
        plan = sample_mask_plan(valid, 1.0, seed=0)
        assert torch.equal(plan.masked, valid)

    @pytest.mark.unit
    def test_ratio_zero_and_one(self, tiny_store, sequence):
        none = apply_mask(sequence, sample_mask_plan(sequence.valid, 0.0, seed=1), tiny_store)
        assert torch.equal(none.slots, sequence.slots)
        every = apply_mask(sequence, sample_mask_plan(sequence.valid, 1.0, seed=1), tiny_store)
        assert torch.equal(every.slots, tiny_store["dtst.mask_token"].detach().expand_as(sequence.slots))
        assert torch.equal(every.valid, sequence.valid)

    @pytest.mark.unit
    def test_masking_an_invalid_slot_is_rejected(self, tiny_store, tiny_cfg):
        slots = torch.zeros(1, 2, tiny_cfg.d_slot, dtype=torch.float64)
        seq = SlotSequence(slots, torch.tensor([[True, False]]))
        plan = MaskPlan(masked=torch.tensor([[False, True]]), ratio=0.5, seed=0)
        with pytest.raises(ContractError):
            apply_mask(seq, plan, tiny_store)


class TestTransformer:
    @pytest.mark.unit
    def test_masked_queries_see_only_their_own_track(self):
        valid = torch.tensor([[True, True, True], [True, True, False]])
        masked = torch.tensor([[False, False, False], [True, False, False]])
        allowed = _attention_mask(valid, masked, num_frames=2, num_slots=3)
        # tokens are frame-major: index = frame * 3 + slot
        assert allowed[3].tolist() == [True, False, False, True, False, False]
        assert allowed[0].tolist() == [True, True, True, True, True, False]
        assert allowed[4].tolist() == [True, True, True, True, True, False]

    @pytest.mark.unit
    def test_without_masking_every_query_sees_every_valid_token(self):
        valid = torch.tensor([[True, False], [True, True]])
        allowed = _attention_mask(valid, None, num_frames=2, num_slots=2)
        assert allowed.expand(4, 4).tolist() == [[True, False, True, True]] * 4

    @pytest.mark.unit
    def test_no_layers_is_identity(self, tiny_store, sequence):
        assert dtst_forward(sequence, tiny_store, DTSTConfig(layers=0, heads=2)) is sequence

    @pytest.mark.unit
    def test_zero_residual_branches_are_identity(self, tiny_store, tiny_cfg, sequence):
        cfg = tiny_cfg.dtst_config()
        zero_residual_branches(tiny_store, cfg)
        assert torch.equal(dtst_forward(sequence, tiny_store, cfg).slots, sequence.slots)

    @pytest.mark.unit
    def test_joint_slot_permutation_is_equivariant(self, tiny_store, tiny_cfg, sequence):
        cfg = tiny_cfg.dtst_config()
        order = [2, 0, 1]
        out = dtst_forward(sequence, tiny_store, cfg)
        permuted = SlotSequence(sequence.slots[:, order], sequence.valid[:, order])
        out_p = dtst_forward(permuted, tiny_store, cfg)
        assert torch.allclose(out_p.slots, out.slots[:, order], atol=1e-12)

    @pytest.mark.unit
    def test_invalid_tokens_are_ignored_and_zero(self, tiny_store, tiny_cfg, sequence):
        cfg = tiny_cfg.dtst_config()
        slots = sequence.slots.clone()
        slots[1, 2] = 0.0
        valid = torch.ones(3, 3, dtype=torch.bool)
        valid[1, 2] = False
        out = dtst_forward(SlotSequence(slots, valid), tiny_store, cfg)
        assert torch.all(out.slots[1, 2] == 0)
        assert torch.isfinite(out.slots).all()

    @pytest.mark.unit
    def test_width_mismatch(self, tiny_store, tiny_cfg):
        seq = SlotSequence(torch.zeros(2, 2, tiny_cfg.d_slot + 2), torch.ones(2, 2, dtype=torch.bool))
        with pytest.raises(ContractError):
            dtst_forward(seq, tiny_store, tiny_cfg.dtst_config())

    @pytest.mark.unit
    def test_config_validation(self):
        with pytest.raises(ConfigError, match="dtst_heads"):
            DTSTConfig(heads=0)


class TestPredictNext:
    @pytest.mark.unit
    def test_shape_and_valid_count(self, tiny_store, tiny_cfg, sequence):
        frame = predict_next(sequence, tiny_store, tiny_cfg.dtst_config(), MergerConfig(theta=0.9))
        assert tuple(frame.slots.shape) == (3, tiny_cfg.d_slot)
        assert 1 <= int(frame.num_valid()) <= 3

    @pytest.mark.unit
    def test_identical_buffers_identical_predictions(self, tiny_store, tiny_cfg, sequence):
        cfg = tiny_cfg.dtst_config()
        a = predict_next(sequence, tiny_store, cfg, None)
        b = predict_next(SlotSequence(sequence.slots.clone(), sequence.valid.clone()), tiny_store, cfg, None)
        assert torch.equal(a.slots, b.slots)

    @pytest.mark.unit
    def test_distinct_slot_tracks_give_distinct_predictions(self, tiny_store, tiny_cfg, sequence):
        frame = predict_next(sequence, tiny_store, tiny_cfg.dtst_config(), None)
        assert not torch.allclose(frame.slots[0], frame.slots[1])

    @pytest.mark.unit
    def test_batched_buffer(self, tiny_store, tiny_cfg, sequence):
        batch = SlotSequence(sequence.slots.expand(2, -1, -1, -1), sequence.valid.expand(2, -1, -1))
        frame = predict_next(batch, tiny_store, tiny_cfg.dtst_config(), MergerConfig(theta=0.9))
        assert tuple(frame.slots.shape) == (2, 3, tiny_cfg.d_slot)
        assert torch.equal(frame.slots[0], frame.slots[1])

    @pytest.mark.unit
    def test_empty_buffer(self, tiny_store, tiny_cfg):
        empty = SlotSequence(torch.zeros(0, 2, tiny_cfg.d_slot), torch.zeros(0, 2, dtype=torch.bool))
        with pytest.raises(ContractError):
            predict_next(empty, tiny_store, tiny_cfg.dtst_config(), None)
