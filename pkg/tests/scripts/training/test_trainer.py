import json

import numpy as np
import pytest
import torch
from scipy.stats import binomtest

from scripts.checkpoint import load_checkpoint, save_checkpoint
from scripts.errors import ConfigError, ContractError
from scripts.evaluation.evaluator import Evaluator
from scripts.models import SlotFrame, SlotSequence, f_sa, init_slots_gaussian, merge_frames, predict_next
from scripts.runconfig import RunConfig
from scripts.training import Trainer, initial_store, run_gradcheck

# ─── TEST COMMAND ──────────────────────────────────────────────────────────
# Run this test file with: pytest tests/scripts/training/test_trainer.py
# Include the overfit runs with: pytest -m slow tests/scripts/training/test_trainer.py


class TestTrainer:
    @pytest.mark.unit
    def test_same_seed_same_records(self, tiny_cfg, tiny_clips):
        a = Trainer(tiny_cfg, tiny_clips).fit(steps=3)
        b = Trainer(tiny_cfg, tiny_clips).fit(steps=3)
        assert a == b
        assert [r["step"] for r in a] == [1, 2, 3]

    @pytest.mark.unit
    def test_metrics_are_logged_per_step(self, tiny_cfg, tiny_clips, tmp_path):
        path = tmp_path / "run.metrics.jsonl"
        Trainer(tiny_cfg, tiny_clips).fit(steps=2, metrics_path=path)
        lines = [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]
        assert [line["step"] for line in lines] == [1, 2]
        assert set(lines[0]) == {"step", "loss", "branch", "active_slots"}

    @pytest.mark.unit
    def test_resume_continues_bit_for_bit(self, tiny_cfg, tiny_clips, tmp_path):
        cfg = tiny_cfg.with_overrides(stage="stage2", cold_start=True)
        straight = Trainer(cfg, tiny_clips).fit(steps=5)

        first = Trainer(cfg, tiny_clips)
        first.fit(steps=3)
        save_checkpoint(first.state(), tmp_path / "ckpt.bin")
        resumed = Trainer.from_state(load_checkpoint(tmp_path / "ckpt.bin"), cfg, tiny_clips)
        assert resumed.step == 3
        assert resumed.fit(steps=2) == straight[3:]

    @pytest.mark.unit
    def test_resume_needs_the_same_stage(self, tiny_cfg, tiny_clips):
        state = Trainer(tiny_cfg, tiny_clips).state()
        with pytest.raises(ConfigError, match="stage"):
            Trainer.from_state(state, tiny_cfg.with_overrides(stage="stage2"), tiny_clips)

    @pytest.mark.unit
    def test_clips_shorter_than_the_window(self, tiny_cfg, tiny_clips):
        with pytest.raises(ContractError, match="fewer than the window"):
            Trainer(tiny_cfg, [tiny_clips[0][:1]])

    @pytest.mark.unit
    def test_no_clips(self, tiny_cfg):
        with pytest.raises(ContractError):
            Trainer(tiny_cfg, [])


class TestInitialStore:
    @pytest.mark.unit
    def test_stage2_needs_a_checkpoint_or_cold_start(self, tiny_cfg):
        with pytest.raises(ConfigError) as exc:
            initial_store(tiny_cfg.with_overrides(stage="stage2"))
        assert exc.value.key == "cold_start"
        assert initial_store(tiny_cfg.with_overrides(stage="stage2", cold_start=True)) is None

    @pytest.mark.unit
    def test_pretrained_parameters_carry_over(self, tiny_cfg, tiny_clips):
        state = Trainer(tiny_cfg, tiny_clips).state()
        assert initial_store(tiny_cfg.with_overrides(stage="stage2"), state) is state.store

    @pytest.mark.unit
    def test_incompatible_checkpoint(self, tiny_cfg, tiny_clips):
        state = Trainer(tiny_cfg, tiny_clips).state()
        with pytest.raises(ConfigError):
            initial_store(tiny_cfg.with_overrides(stage="stage2", d_slot=8), state)


class TestGradientCheck:
    @pytest.mark.unit
    def test_both_pipelines_pass_on_tiny_dims(self):
        errors = run_gradcheck(RunConfig.tiny())
        assert set(errors) == {"pretrain", "stage2"}
        assert max(errors.values()) < 1e-4


# ─── OVERFIT RUNS ────────────────────────────────────────────────────────────────────
@pytest.mark.slow
def test_pretraining_loss_decreases_on_a_fixed_batch(tiny_cfg, tiny_clips):
    cfg = tiny_cfg.with_overrides(lr=4e-4)
    trainer = Trainer(cfg, tiny_clips)
    batch = trainer.sample_batch()
    losses = [r["loss"] for r in trainer.fit(steps=50, fixed_batch=batch)]
    assert all(later < earlier for earlier, later in zip(losses, losses[1:]))


@pytest.mark.slow
def test_stage2_halves_the_loss_on_a_fixed_batch(tiny_cfg, tiny_clips):
    cfg = tiny_cfg.with_overrides(stage="stage2", cold_start=True)
    trainer = Trainer(cfg, tiny_clips)
    batch = trainer.sample_batch()
    records = trainer.fit(steps=200, fixed_batch=batch)
    assert all(np.isfinite(r["loss"]) for r in records)
    assert records[-1]["loss"] <= 0.5 * records[0]["loss"]


def set_distance(init: SlotFrame, reference: SlotFrame) -> float:
    """Mean over the valid init slots of the distance to the nearest valid reference slot."""
    gaps = torch.cdist(init.slots[init.valid], reference.slots[reference.valid])
    return float(gaps.min(dim=-1).values.mean())


@pytest.mark.slow
def test_two_stage_overfit_on_generated_clips(overfit_run):
    assert overfit_run.last_loss <= 0.2 * overfit_run.first_loss

    cfg, store = overfit_run.cfg, overfit_run.store
    report = Evaluator(cfg, store).evaluate([(f"clip_{i}", v) for i, v in enumerate(overfit_run.videos)])
    assert report.aggregate["fg_ari"] >= 0.5
    assert report.aggregate["mean_active_slots"] < cfg.K


@pytest.mark.slow
def test_predicted_init_is_closer_to_the_converged_slots_than_gaussian(overfit_run):
    cfg, store, clips = overfit_run.cfg, overfit_run.store, overfit_run.clips
    wins = 0
    with torch.no_grad():
        for seed in range(100):
            x = clips[seed % len(clips)][seed % cfg.num_frames]
            gaussian = init_slots_gaussian(cfg.K, cfg.d_slot, seed=seed)
            settled = merge_frames(f_sa(x, gaussian, store, cfg.n_iter), cfg.merger_config())
            reference = f_sa(x, settled, store, cfg.n_iter * cfg.T)

            buffer = SlotSequence.stack([settled] * cfg.T)
            predicted = predict_next(buffer, store, cfg.dtst_config(), cfg.merger_config())

            wins += set_distance(predicted, reference) < set_distance(gaussian, reference)
    assert binomtest(wins, 100, alternative="greater").pvalue < 0.01
