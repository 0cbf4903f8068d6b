import pytest
import torch

from scripts.errors import NonFiniteError
from scripts.nn import ParamStore
from scripts.training import OptimizerState, adam_update

# ─── TEST COMMAND ──────────────────────────────────────────────────────────
# Run this test file with: pytest tests/scripts/training/test_optimizer.py


@pytest.fixture()
def store() -> ParamStore:
    store = ParamStore()
    store.add("w", torch.tensor([0.25, -1.0], dtype=torch.float64))
    store.add("frozen", torch.ones(2, dtype=torch.float64), trainable=False)
    return store


class TestAdamUpdate:
    @pytest.mark.unit
    def test_zero_gradient_leaves_parameters_unchanged(self, store):
        state = OptimizerState(store, lr=1e-3)
        adam_update(store, state, {"w": torch.zeros(2)})
        assert store["w"].tolist() == [0.25, -1.0]

    @pytest.mark.unit
    def test_first_step_moves_by_the_learning_rate(self, store):
        state = OptimizerState(store, lr=1e-3)
        adam_update(store, state, {"w": torch.tensor([0.5, -0.5])})
        delta = store["w"].detach() - torch.tensor([0.25, -1.0], dtype=torch.float64)
        assert delta.tolist() == pytest.approx([-1e-3, 1e-3], rel=0.01)
        assert state.step == 1

    @pytest.mark.unit
    def test_non_finite_gradient_updates_nothing(self, store):
        state = OptimizerState(store, lr=1e-3)
        with pytest.raises(NonFiniteError, match="'w'"):
            adam_update(store, state, {"w": torch.tensor([float("nan"), 0.0])})
        assert store["w"].tolist() == [0.25, -1.0]
        assert state.step == 0

    @pytest.mark.unit
    def test_frozen_parameters_are_not_optimised(self, store):
        assert OptimizerState(store, lr=1e-3).names == ["w"]

    @pytest.mark.unit
    def test_moments_round_trip(self, store):
        state = OptimizerState(store, lr=1e-3)
        adam_update(store, state, {"w": torch.tensor([0.5, -0.5])})
        moments = state.moments()
        assert moments["w"]["step"] == 1

        other = ParamStore()
        other.add("w", store["w"].detach())
        restored = OptimizerState(other, lr=1e-3)
        restored.load_moments(moments)
        adam_update(store, state, {"w": torch.tensor([0.1, 0.2])})
        adam_update(other, restored, {"w": torch.tensor([0.1, 0.2])})
        assert torch.equal(store["w"], other["w"])
