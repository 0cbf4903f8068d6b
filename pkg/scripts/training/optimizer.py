# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
from typing import Dict, Optional, Tuple

import torch

from scripts.errors import CheckpointError, NonFiniteError
from scripts.nn import ParamStore
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)


class OptimizerState:
    """
    Adaptive-moment state mirroring the trainable entries of a ParamStore.

    Wraps torch.optim.Adam (single-tensor implementation for reproducible update order) and
    exposes the per-parameter moments by name so they can be checkpointed.
    """

    def __init__(self, store: ParamStore, lr: float, betas: Tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.names = [name for name, _ in store.trainable_items()]
        self._tensors = [tensor for _, tensor in store.trainable_items()]
        self.optimizer = torch.optim.Adam(self._tensors, lr=lr, betas=betas, eps=eps, foreach=False)

    @property
    def step(self) -> int:
        """Largest per-parameter step count (parameters without gradients are not stepped)."""
        steps = [int(self.optimizer.state[t]["step"]) for t in self._tensors if t in self.optimizer.state]
        return max(steps, default=0)

    def moments(self) -> Dict[str, Dict[str, object]]:
        """{name: {"exp_avg", "exp_avg_sq", "step"}} for every parameter that has been stepped."""
        out = {}
        for name, tensor in zip(self.names, self._tensors):
            state = self.optimizer.state.get(tensor)
            if state:
                out[name] = {
                    "exp_avg": state["exp_avg"].detach().clone(),
                    "exp_avg_sq": state["exp_avg_sq"].detach().clone(),
                    "step": int(state["step"]),
                }
        return out

    def load_moments(self, moments: Dict[str, Dict[str, object]]) -> None:
        by_name = dict(zip(self.names, self._tensors))
        for name, entry in moments.items():
            if name not in by_name:
                raise CheckpointError(f"optimizer state for unknown parameter '{name}'")
            tensor = by_name[name]
            self.optimizer.state[tensor] = {
                "step": torch.tensor(float(entry["step"]), dtype=torch.float32),
                "exp_avg": entry["exp_avg"].to(tensor.dtype).reshape(tensor.shape).clone(),
                "exp_avg_sq": entry["exp_avg_sq"].to(tensor.dtype).reshape(tensor.shape).clone(),
            }


def adam_update(
    store: ParamStore, state: OptimizerState, grads: Optional[Dict[str, torch.Tensor]] = None
) -> None:
    """
    Apply one bias-corrected adaptive-moment update.

    Args:
        store (ParamStore): Parameters, updated in place.
        state (OptimizerState): Moments and step counts, updated in place.
        grads (Dict[str, torch.Tensor], optional): Gradients by name; when omitted the
            `.grad` fields left by backward() are used.

    Raises:
        NonFiniteError: If any gradient holds NaN/Inf; nothing is updated in that case.
    """
    if grads is not None:
        for name, grad in grads.items():
            store[name].grad = grad.detach().to(store[name].dtype).clone()
    for name, tensor in store.trainable_items():
        if tensor.grad is not None and not bool(torch.isfinite(tensor.grad).all()):
            logger.error("Non-finite gradient for parameter '%s'", name)
            raise NonFiniteError(f"non-finite gradient for parameter '{name}'")
    state.optimizer.step()
