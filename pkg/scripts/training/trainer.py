# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import torch
from tqdm import tqdm

from scripts.checkpoint import TrainingState
from scripts.errors import ConfigError, ContractError, NonFiniteError
from scripts.models import build_params, check_compatible
from scripts.nn import ParamStore
from scripts.runconfig import RunConfig
from utils import append_jsonl, load_config, setup_logger
from .optimizer import OptimizerState, adam_update
from .pipeline import SEED_BOUND, StepOutcome, stage_loss


class Trainer:
    """
    Owns the parameters, optimizer and data RNG of one training stage.

    Every step draws, from a persistent numpy generator seeded with `run_cfg.seed`, the
    clip indices, the window starts and one step seed; the step seed feeds a fresh
    torch.Generator that drives every random decision inside the loss. Saving that numpy
    state in a checkpoint is enough to continue a run bit for bit.
    """

    def __init__(self, run_cfg: RunConfig, clips: Sequence[torch.Tensor], store: Optional[ParamStore] = None):
        """
        Args:
            run_cfg (RunConfig): Validated run settings; `stage` selects the loss.
            clips (Sequence[torch.Tensor]): Per-clip features (L, N, D_feature), L >= T.
            store (ParamStore, optional): Starting parameters; freshly initialised from
                `run_cfg.seed` when omitted.
        """
        self.config = load_config()
        self.logger = setup_logger(__name__, self.config)
        self.run_cfg = run_cfg
        self.clips = self._check_clips(clips)
        dims = run_cfg.model_dims()
        if store is None:
            store = build_params(dims, seed=run_cfg.seed)
        else:
            check_compatible(store, dims)
        self.store = store
        self.optimizer = OptimizerState(
            store, lr=run_cfg.lr, betas=(run_cfg.adam_beta1, run_cfg.adam_beta2), eps=run_cfg.adam_eps
        )
        self.data_rng = np.random.default_rng(run_cfg.seed)
        self.step = 0

    def _check_clips(self, clips: Sequence[torch.Tensor]) -> List[torch.Tensor]:
        cfg = self.run_cfg
        if not clips:
            raise ContractError("training needs at least one clip")
        checked = []
        for index, clip in enumerate(clips):
            if clip.dim() != 3 or clip.shape[1] != cfg.num_patches or clip.shape[2] != cfg.D_feature:
                raise ContractError(
                    f"clip {index} has feature shape {tuple(clip.shape)}, the run config expects "
                    f"(L, {cfg.num_patches}, {cfg.D_feature})"
                )
            if clip.shape[0] < cfg.T:
                raise ContractError(f"clip {index} has {clip.shape[0]} frames, fewer than the window T={cfg.T}")
            checked.append(clip.detach())
        return checked

    # ─── STEPS ───────────────────────────────────────────────────────────────
    def sample_batch(self) -> torch.Tensor:
        """(batch, T, N, D) windows: random clips with replacement, random window starts."""
        cfg = self.run_cfg
        indices = self.data_rng.integers(0, len(self.clips), size=cfg.batch)
        windows = []
        for index in indices:
            clip = self.clips[int(index)]
            start = int(self.data_rng.integers(0, clip.shape[0] - cfg.T + 1))
            windows.append(clip[start : start + cfg.T])
        return torch.stack(windows)

    def train_step(self, x: Optional[torch.Tensor] = None) -> StepOutcome:
        """
        One forward/backward/update. A fixed batch `x` may be passed (overfit runs); the
        step seed is drawn either way so the RNG stream does not depend on it.

        Raises:
            NonFiniteError: Loss or gradient holds NaN/Inf; parameters are left untouched.
        """
        if x is None:
            x = self.sample_batch()
        step_seed = int(self.data_rng.integers(0, SEED_BOUND))
        generator = torch.Generator().manual_seed(step_seed)

        self.store.zero_grad()
        try:
            outcome = stage_loss(x.to(self.store.dtype), self.store, self.run_cfg, generator)
            outcome.loss.backward()
            adam_update(self.store, self.optimizer)
        except NonFiniteError:
            self.logger.error("Aborting %s at step %s: non-finite values", self.run_cfg.stage, self.step)
            raise
        self.step += 1
        self.logger.debug(
            "step %s loss %.6f branch %s active %.3f",
            self.step,
            float(outcome.loss),
            outcome.branch,
            outcome.active_slots,
        )
        return outcome

    def fit(
        self,
        steps: Optional[int] = None,
        metrics_path: Optional[Path] = None,
        fixed_batch: Optional[torch.Tensor] = None,
        progress: bool = False,
    ) -> List[Dict[str, Any]]:
        """
        Run `steps` training steps (default: until `run_cfg.steps` is reached).

        Args:
            steps (int, optional): Number of steps to run from the current position.
            metrics_path (Path, optional): Line-delimited JSON log; one record per step
                with step, loss, branch and active_slots.
            fixed_batch (torch.Tensor, optional): Reuse one batch every step.
            progress (bool): Show a tqdm progress bar.

        Returns:
            List[Dict[str, Any]]: The per-step records.
        """
        if steps is None:
            steps = max(self.run_cfg.steps - self.step, 0)
        self.logger.info("Starting %s: %s steps from step %s", self.run_cfg.stage, steps, self.step)
        records = []
        bar = tqdm(total=steps, desc=self.run_cfg.stage, disable=not progress)
        for _ in range(steps):
            outcome = self.train_step(fixed_batch)
            record = {
                "step": self.step,
                "loss": float(outcome.loss),
                "branch": outcome.branch,
                "active_slots": outcome.active_slots,
            }
            records.append(record)
            if metrics_path is not None:
                append_jsonl(record, metrics_path)
            if self.step % self.run_cfg.log_every == 0:
                self.logger.info("%s step %s loss %.6f (%s)", self.run_cfg.stage, self.step, record["loss"], outcome.branch)
            bar.set_postfix(loss=f"{record['loss']:.5f}")
            bar.update(1)
        bar.close()
        if records:
            self.logger.info(
                "Finished %s at step %s: loss %.6f -> %.6f", self.run_cfg.stage, self.step, records[0]["loss"], records[-1]["loss"]
            )
        return records

    # ─── STATE ───────────────────────────────────────────────────────────────
    def state(self) -> TrainingState:
        return TrainingState(
            store=self.store,
            config=self.run_cfg.to_dict(),
            stage=self.run_cfg.stage,
            step=self.step,
            optimizer_moments=self.optimizer.moments(),
            rng_state=self.data_rng.bit_generator.state,
        )

    @classmethod
    def from_state(cls, state: TrainingState, run_cfg: RunConfig, clips: Sequence[torch.Tensor]) -> "Trainer":
        """Continue a saved run of the same stage with its optimizer moments and RNG stream."""
        if state.stage != run_cfg.stage:
            raise ConfigError("stage", f"cannot resume a '{state.stage}' checkpoint as '{run_cfg.stage}'")
        trainer = cls(run_cfg, clips, store=state.store)
        trainer.optimizer.load_moments(state.optimizer_moments)
        if state.rng_state is not None:
            trainer.data_rng.bit_generator.state = state.rng_state
        trainer.step = state.step
        trainer.logger.info("Resumed %s at step %s", run_cfg.stage, state.step)
        return trainer


def initial_store(run_cfg: RunConfig, init: Optional[TrainingState] = None) -> Optional[ParamStore]:
    """
    Starting parameters for a stage.

    Pretraining starts from fresh parameters unless `init` is given. Stage 2 needs the
    parameters of a pretraining checkpoint, or `cold_start` to start from scratch.

    Raises:
        ConfigError: Stage 2 without an init checkpoint and without cold_start.
    """
    if init is not None:
        check_compatible(init.store, run_cfg.model_dims())
        return init.store
    if run_cfg.stage == "stage2" and not run_cfg.cold_start:
        raise ConfigError("cold_start", "stage2 needs a pretraining checkpoint (--init) or cold_start=true")
    return None
