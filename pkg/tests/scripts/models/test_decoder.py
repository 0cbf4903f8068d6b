import math

import pytest
import torch

from scripts.errors import ContractError
from scripts.models import SlotFrame, combine_slots, decode_frame, decode_slot, init_slots_gaussian, recon_loss

# ─── TEST COMMAND ──────────────────────────────────────────────────────────
# Run this test file with: pytest tests/scripts/models/test_decoder.py


class TestDecodeSlot:
    @pytest.mark.unit
    def test_zero_weights_give_the_output_bias_everywhere(self, tiny_store, tiny_cfg):
        tiny_store.assign("dec.mlp.w2", torch.zeros_like(tiny_store["dec.mlp.w2"]))
        bias = torch.arange(tiny_cfg.D_feature + 1, dtype=torch.float64)
        tiny_store.assign("dec.mlp.b2", bias)
        features, alpha = decode_slot(torch.ones(tiny_cfg.d_slot, dtype=torch.float64), tiny_store)
        assert torch.equal(features, bias[:-1].expand(tiny_cfg.num_patches, -1))
        assert torch.equal(alpha, torch.full((tiny_cfg.num_patches,), float(bias[-1]), dtype=torch.float64))

    @pytest.mark.unit
    def test_zero_positional_encoding_makes_tokens_identical(self, tiny_store, tiny_cfg):
        tiny_store.assign("dec.pos", torch.zeros_like(tiny_store["dec.pos"]))
        features, alpha = decode_slot(torch.randn(tiny_cfg.d_slot, dtype=torch.float64), tiny_store)
        assert torch.allclose(features, features[0].expand_as(features))
        assert torch.allclose(alpha, alpha[0].expand_as(alpha))

    @pytest.mark.unit
    def test_perturbing_one_position_changes_only_that_token(self, tiny_store, tiny_cfg):
        slot = torch.randn(tiny_cfg.d_slot, generator=torch.Generator().manual_seed(0), dtype=torch.float64)
        before, _ = decode_slot(slot, tiny_store)
        pos = tiny_store["dec.pos"].detach().clone()
        pos[1] += 0.5
        tiny_store.assign("dec.pos", pos)
        after, _ = decode_slot(slot, tiny_store)
        changed = (after - before).abs().sum(-1) > 0
        assert changed.tolist() == [n == 1 for n in range(tiny_cfg.num_patches)]


class TestCombineSlots:
    @pytest.mark.unit
    def test_two_valid_slots_closed_form(self):
        features = torch.stack([torch.zeros(1, 2), torch.ones(1, 2)]).double()
        alpha = torch.tensor([[0.0], [math.log(3.0)]], dtype=torch.float64)
        out = combine_slots(features, alpha, torch.tensor([True, True]))
        assert torch.allclose(out.masks[:, 0], torch.tensor([0.25, 0.75], dtype=torch.float64))
        assert torch.allclose(out.x_recon, torch.full((1, 2), 0.75, dtype=torch.float64))

    @pytest.mark.unit
    def test_equal_alphas_split_evenly_and_invalid_rows_are_zero(self):
        features = torch.randn(5, 3, 2, dtype=torch.float64)
        valid = torch.tensor([True, True, False, True, True])
        out = combine_slots(features, torch.zeros(5, 3, dtype=torch.float64), valid)
        assert torch.allclose(out.masks[valid], torch.full((4, 3), 0.25, dtype=torch.float64))
        assert torch.all(out.masks[2] == 0)

    @pytest.mark.unit
    def test_single_valid_slot_reconstructs_its_features(self):
        features = torch.randn(2, 4, 3, dtype=torch.float64)
        out = combine_slots(features, torch.randn(2, 4, dtype=torch.float64), torch.tensor([False, True]))
        assert torch.allclose(out.masks[1], torch.ones(4, dtype=torch.float64))
        assert torch.allclose(out.x_recon, features[1])

    @pytest.mark.unit
    def test_reconstruction_stays_inside_the_valid_slot_features(self):
        generator = torch.Generator().manual_seed(8)
        valid = torch.tensor([True, False, True, True])
        for _ in range(200):
            features = torch.randn(4, 6, 3, generator=generator, dtype=torch.float64)
            features[~valid] = 1e6
            alpha = 4.0 * torch.randn(4, 6, generator=generator, dtype=torch.float64)
            out = combine_slots(features, alpha, valid)
            assert torch.all(out.x_recon >= features[valid].min(dim=0).values - 1e-9)
            assert torch.all(out.x_recon <= features[valid].max(dim=0).values + 1e-9)

    @pytest.mark.unit
    def test_no_valid_slot(self):
        with pytest.raises(ContractError):
            combine_slots(torch.zeros(2, 4, 3), torch.zeros(2, 4), torch.tensor([False, False]))


class TestDecodeFrame:
    @pytest.mark.unit
    def test_masks_sum_to_one_over_random_frames(self, tiny_store, tiny_cfg):
        generator = torch.Generator().manual_seed(5)
        valid = torch.rand(1000, 3, generator=generator) < 0.6
        valid[:, 0] = True
        slots = torch.randn(1000, 3, tiny_cfg.d_slot, generator=generator, dtype=torch.float64)
        slots = torch.where(valid.unsqueeze(-1), slots, torch.zeros_like(slots))
        masks = decode_frame(SlotFrame(slots, valid), tiny_store).masks
        assert torch.allclose(masks.sum(-2), torch.ones(1000, tiny_cfg.num_patches, dtype=torch.float64), atol=1e-5)
        assert torch.all(masks[~valid] == 0)

    @pytest.mark.unit
    def test_loss_is_invariant_to_slot_order(self, tiny_store, tiny_cfg):
        sf = init_slots_gaussian(3, tiny_cfg.d_slot, seed=4, dtype=torch.float64)
        target = torch.randn(tiny_cfg.num_patches, tiny_cfg.D_feature, dtype=torch.float64)
        a = recon_loss(decode_frame(sf, tiny_store).x_recon, target)
        b = recon_loss(decode_frame(sf.permute([1, 2, 0]), tiny_store).x_recon, target)
        assert torch.allclose(a, b, atol=1e-12)


class TestReconLoss:
    @pytest.mark.unit
    def test_values(self):
        x = torch.randn(2, 3, 4)
        assert float(recon_loss(x, x)) == 0.0
        assert float(recon_loss(x + 2.0, x)) == pytest.approx(4.0)

    @pytest.mark.unit
    def test_shape_mismatch(self):
        with pytest.raises(ContractError):
            recon_loss(torch.zeros(2, 3), torch.zeros(3, 2))
