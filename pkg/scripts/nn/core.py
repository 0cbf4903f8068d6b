# ─── IMPORTS AND CONFIGURATION ──────────────────────────────────────────────────────────
import math
from typing import Callable, Dict, Iterator, List, Optional, Tuple

import torch
import torch.nn.functional as F

from scripts.errors import ContractError, NonFiniteError
from utils import load_config, setup_logger

# ─── LOGGER & CONFIG ────────────────────────────────────────────────────────────────
config = load_config()
logger = setup_logger(__name__, config)

GRU_PARAM_NAMES = ("W_z", "U_z", "b_z", "W_r", "U_r", "b_r", "W_h", "U_h", "b_h")


# ─── PARAMETER STORE ─────────────────────────────────────────────────────────────────
class ParamStore:
    """
    Named, shaped tensors used by every learned module.

    Entries map a dotted name (e.g. "sa.W_q") to a tensor and a trainable flag. Iteration is
    always in sorted name order so optimizer construction, checkpoints and gradient checks
    see parameters in the same sequence on every run. Shapes never change after `add`.
    """

    def __init__(self):
        self._entries: Dict[str, Tuple[torch.Tensor, bool]] = {}

    def add(self, name: str, tensor: torch.Tensor, trainable: bool = True) -> torch.Tensor:
        if name in self._entries:
            raise ContractError(f"parameter '{name}' already exists")
        value = tensor.detach().clone().contiguous()
        value.requires_grad_(trainable)
        self._entries[name] = (value, trainable)
        return value

    def __getitem__(self, name: str) -> torch.Tensor:
        try:
            return self._entries[name][0]
        except KeyError:
            raise ContractError(f"missing parameter '{name}'") from None

    def __contains__(self, name: str) -> bool:
        return name in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def __iter__(self) -> Iterator[str]:
        return iter(self.names())

    def names(self) -> List[str]:
        return sorted(self._entries)

    def items(self) -> List[Tuple[str, torch.Tensor]]:
        return [(name, self._entries[name][0]) for name in self.names()]

    def trainable_items(self) -> List[Tuple[str, torch.Tensor]]:
        return [(name, t) for name, t in self.items() if self._entries[name][1]]

    def is_trainable(self, name: str) -> bool:
        if name not in self._entries:
            raise ContractError(f"missing parameter '{name}'")
        return self._entries[name][1]

    @property
    def dtype(self) -> torch.dtype:
        if not self._entries:
            return torch.get_default_dtype()
        return next(iter(self._entries.values()))[0].dtype

    def shapes(self) -> Dict[str, Tuple[int, ...]]:
        return {name: tuple(t.shape) for name, t in self.items()}

    def zero_grad(self) -> None:
        for _, tensor in self.trainable_items():
            tensor.grad = None

    def assign(self, name: str, values: torch.Tensor) -> None:
        """Overwrite an entry's values in place; the shape must match exactly."""
        target = self[name]
        if tuple(values.shape) != tuple(target.shape):
            raise ContractError(
                f"shape mismatch for '{name}': stored {tuple(target.shape)}, got {tuple(values.shape)}"
            )
        with torch.no_grad():
            target.copy_(values.to(target.dtype))

    def to(self, dtype: torch.dtype) -> "ParamStore":
        """Copy of the store with every entry cast to `dtype` (64-bit mode for gradient checks)."""
        converted = ParamStore()
        for name, (tensor, trainable) in sorted(self._entries.items()):
            converted.add(name, tensor.detach().to(dtype), trainable=trainable)
        return converted

    def clone(self) -> "ParamStore":
        return self.to(self.dtype)


# ─── PARAMETER INITIALISATION ────────────────────────────────────────────────────────
def init_linear(
    store: ParamStore, name: str, fan_in: int, fan_out: int, generator: torch.Generator, dtype=torch.float32
) -> None:
    """Uniform +-sqrt(6/(fan_in+fan_out)) weight of shape (fan_in, fan_out)."""
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    weight = torch.empty(fan_in, fan_out, dtype=torch.float64).uniform_(-bound, bound, generator=generator)
    store.add(name, weight.to(dtype))


def init_normal(
    store: ParamStore, name: str, shape: Tuple[int, ...], std: float, generator: torch.Generator, dtype=torch.float32
) -> None:
    values = torch.randn(*shape, generator=generator, dtype=torch.float64) * std
    store.add(name, values.to(dtype))


def init_layer_norm(store: ParamStore, prefix: str, dim: int, dtype=torch.float32) -> None:
    store.add(f"{prefix}.gain", torch.ones(dim, dtype=dtype))
    store.add(f"{prefix}.bias", torch.zeros(dim, dtype=dtype))


def init_mlp(
    store: ParamStore, prefix: str, d_in: int, hidden: int, d_out: int, generator: torch.Generator, dtype=torch.float32
) -> None:
    init_linear(store, f"{prefix}.w1", d_in, hidden, generator, dtype)
    store.add(f"{prefix}.b1", torch.zeros(hidden, dtype=dtype))
    init_linear(store, f"{prefix}.w2", hidden, d_out, generator, dtype)
    store.add(f"{prefix}.b2", torch.zeros(d_out, dtype=dtype))


def init_gru(store: ParamStore, prefix: str, dim: int, generator: torch.Generator, dtype=torch.float32) -> None:
    for gate in ("z", "r", "h"):
        init_linear(store, f"{prefix}.W_{gate}", dim, dim, generator, dtype)
        init_linear(store, f"{prefix}.U_{gate}", dim, dim, generator, dtype)
        store.add(f"{prefix}.b_{gate}", torch.zeros(dim, dtype=dtype))


# ─── KERNELS ─────────────────────────────────────────────────────────────────────────
def check_finite(tensor: torch.Tensor, where: str) -> torch.Tensor:
    if not bool(torch.isfinite(tensor).all()):
        logger.error("Non-finite values produced by %s", where)
        raise NonFiniteError(f"non-finite values in {where}")
    return tensor


def _check_axis(v: torch.Tensor, axis: int) -> None:
    if not -v.dim() <= axis < v.dim():
        raise ContractError(f"invalid axis {axis} for tensor of rank {v.dim()}")


def softmax(v: torch.Tensor, axis: int) -> torch.Tensor:
    """Numerically stable softmax along `axis` (torch subtracts the max internally)."""
    _check_axis(v, axis)
    check_finite(v, "softmax input")
    return torch.softmax(v, dim=axis)


def masked_softmax(v: torch.Tensor, valid: torch.Tensor, axis: int) -> torch.Tensor:
    """
    Softmax along `axis` over the entries where `valid` is True only.

    Invalid entries are removed from the normalisation set: they get exactly zero mass and
    exactly zero gradient, and the valid entries sum to one.

    Args:
        v (torch.Tensor): Logits.
        valid (torch.Tensor): Boolean mask broadcastable to `v`.
        axis (int): Normalisation axis.

    Raises:
        ContractError: If the axis is invalid or some slice has no valid entry.
    """
    _check_axis(v, axis)
    valid = valid.to(torch.bool).expand_as(v)
    if not bool(valid.any(dim=axis).all()):
        raise ContractError("masked_softmax: a slice along the normalisation axis has no valid entry")
    check_finite(v.masked_fill(~valid, 0.0), "masked_softmax input")
    excluded = v.masked_fill(~valid, float("-inf"))
    return torch.softmax(excluded, dim=axis).masked_fill(~valid, 0.0)


def layer_norm(v: torch.Tensor, gain: torch.Tensor, bias: torch.Tensor, eps: float = 1e-5) -> torch.Tensor:
    """Normalise each last-axis vector to mean 0 / population variance 1, then gain*n + bias."""
    dim = v.shape[-1]
    if tuple(gain.shape) != (dim,) or tuple(bias.shape) != (dim,):
        raise ContractError(
            f"layer_norm: gain {tuple(gain.shape)} / bias {tuple(bias.shape)} do not match last axis {dim}"
        )
    return F.layer_norm(v, (dim,), gain, bias, eps)


def gru_cell(state: torch.Tensor, inputs: torch.Tensor, params: ParamStore, prefix: str = "gru") -> torch.Tensor:
    """
    Gated recurrent update with the gating variant pinned for reproducibility:

        z  = sigmoid(W_z u + U_z s + b_z)
        r  = sigmoid(W_r u + U_r s + b_r)
        h~ = tanh(W_h u + U_h (r * s) + b_h)
        s' = (1 - z) * s + z * h~

    Works on any leading batch shape; the last axis is the state width d.
    """
    dim = state.shape[-1]
    if inputs.shape[-1] != dim:
        raise ContractError(f"gru_cell: input width {inputs.shape[-1]} != state width {dim}")
    p = {name: params[f"{prefix}.{name}"] for name in GRU_PARAM_NAMES}
    for name, tensor in p.items():
        expected = (dim,) if name.startswith("b_") else (dim, dim)
        if tuple(tensor.shape) != expected:
            raise ContractError(f"gru_cell: '{prefix}.{name}' has shape {tuple(tensor.shape)}, expected {expected}")

    # weights act as W @ u, i.e. u @ W^T on row vectors
    z = torch.sigmoid(inputs @ p["W_z"].T + state @ p["U_z"].T + p["b_z"])
    r = torch.sigmoid(inputs @ p["W_r"].T + state @ p["U_r"].T + p["b_r"])
    candidate = torch.tanh(inputs @ p["W_h"].T + (r * state) @ p["U_h"].T + p["b_h"])
    return (1.0 - z) * state + z * candidate


def mlp_forward(v: torch.Tensor, params: ParamStore, prefix: str, hidden: Optional[int] = None) -> torch.Tensor:
    """Two affine layers with a rectifier in between: relu(v @ w1 + b1) @ w2 + b2."""
    w1, b1 = params[f"{prefix}.w1"], params[f"{prefix}.b1"]
    w2, b2 = params[f"{prefix}.w2"], params[f"{prefix}.b2"]
    if v.shape[-1] != w1.shape[0]:
        raise ContractError(f"mlp '{prefix}': input width {v.shape[-1]} != {w1.shape[0]}")
    if hidden is not None and w1.shape[1] != hidden:
        raise ContractError(f"mlp '{prefix}': hidden width {w1.shape[1]} != {hidden}")
    if w2.shape[0] != w1.shape[1] or b1.shape[0] != w1.shape[1] or b2.shape[0] != w2.shape[1]:
        raise ContractError(f"mlp '{prefix}': inconsistent layer shapes")
    return torch.relu(v @ w1 + b1) @ w2 + b2


# ─── GRADIENT VERIFICATION ───────────────────────────────────────────────────────────
def gradient_check(
    loss_fn: Callable[[ParamStore], torch.Tensor],
    params: ParamStore,
    eps: float = 1e-5,
    floor: float = 1e-8,
) -> float:
    """
    Compare reverse-mode gradients against central finite differences.

    For every entry of every trainable tensor, the numeric derivative
    (L(theta + eps) - L(theta - eps)) / (2 eps) is compared with the analytic one using
    |a - n| / max(|a|, |n|, floor). `loss_fn` must be a pure function of the store
    (re-seed any generator it uses on each call).

    Args:
        loss_fn (Callable[[ParamStore], torch.Tensor]): Returns a scalar loss.
        params (ParamStore): Store in 64-bit mode.
        eps (float): Finite-difference step.
        floor (float): Denominator floor of the relative error.

    Returns:
        float: Maximum relative error over all trainable entries.

    Raises:
        ContractError: If a trainable tensor is not float64 or the loss is not a scalar.
        NonFiniteError: If the loss is non-finite; the message names the perturbed parameter.
    """
    trainable = params.trainable_items()
    for name, tensor in trainable:
        if tensor.dtype != torch.float64:
            raise ContractError(f"gradient_check requires 64-bit parameters; '{name}' is {tensor.dtype}")

    params.zero_grad()
    loss = loss_fn(params)
    if loss.numel() != 1:
        raise ContractError(f"gradient_check: loss must be a scalar, got shape {tuple(loss.shape)}")
    if not bool(torch.isfinite(loss)):
        raise NonFiniteError("gradient_check: non-finite loss at the unperturbed parameters")
    loss.backward()

    worst, worst_name = 0.0, None
    with torch.no_grad():
        for name, tensor in trainable:
            analytic = tensor.grad.detach().reshape(-1).clone() if tensor.grad is not None else torch.zeros(tensor.numel(), dtype=tensor.dtype)
            flat = tensor.view(-1)
            numeric = torch.empty_like(analytic)
            for i in range(flat.numel()):
                original = flat[i].item()
                flat[i] = original + eps
                loss_plus = loss_fn(params)
                flat[i] = original - eps
                loss_minus = loss_fn(params)
                flat[i] = original
                if not (bool(torch.isfinite(loss_plus)) and bool(torch.isfinite(loss_minus))):
                    raise NonFiniteError(f"gradient_check: non-finite loss while perturbing '{name}'[{i}]")
                numeric[i] = (loss_plus - loss_minus) / (2.0 * eps)

            denominator = torch.clamp(torch.maximum(analytic.abs(), numeric.abs()), min=floor)
            rel = float(((analytic - numeric).abs() / denominator).max()) if analytic.numel() else 0.0
            logger.debug("gradient_check '%s': max relative error %.3e", name, rel)
            if rel > worst:
                worst, worst_name = rel, name

    params.zero_grad()
    logger.info("gradient_check: max relative error %.3e (worst parameter: %s)", worst, worst_name)
    return worst
