"""Named parameter storage and the decoupled-weight-decay Adam optimizer."""

from __future__ import annotations

import math

import numpy as np

from .tensor import Tensor


class ParamStore:
    """Ordered map name -> parameter tensor, plus per-parameter Adam state."""

    def __init__(self):
        self._params: dict[str, Tensor] = {}
        self._m: dict[str, np.ndarray] = {}
        self._v: dict[str, np.ndarray] = {}
        self._step: dict[str, int] = {}

    def register(self, name: str, tensor: Tensor) -> Tensor:
        if name in self._params:
            raise ValueError(f"duplicate parameter name: {name}")
        tensor.requires_grad = True
        self._params[name] = tensor
        return tensor

    def __getitem__(self, name: str) -> Tensor:
        return self._params[name]

    def __contains__(self, name: str) -> bool:
        return name in self._params

    def __len__(self) -> int:
        return len(self._params)

    def names(self) -> list[str]:
        return list(self._params)

    def items(self):
        return self._params.items()

    def tensors(self) -> list[Tensor]:
        return list(self._params.values())

    def zero_grad(self) -> None:
        for p in self._params.values():
            p.grad = None

    def num_values(self) -> int:
        return sum(p.data.size for p in self._params.values())

    def state_dict(self) -> dict[str, np.ndarray]:
        return {name: p.data.copy() for name, p in self._params.items()}

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        """Copy values in; raises naming the first mismatched parameter."""
        missing = set(self._params) - set(state)
        extra = set(state) - set(self._params)
        if missing:
            raise ValueError(f"checkpoint missing parameter: {sorted(missing)[0]}")
        if extra:
            raise ValueError(f"checkpoint has unknown parameter: {sorted(extra)[0]}")
        for name, p in self._params.items():
            src = state[name]
            if src.shape != p.data.shape:
                raise ValueError(
                    f"parameter {name}: checkpoint shape {src.shape} != model shape {p.data.shape}"
                )
        for name, p in self._params.items():
            p.data = np.array(state[name], dtype=np.float64)
        self._m.clear()
        self._v.clear()
        self._step.clear()


def global_grad_norm(store: ParamStore) -> float:
    total = 0.0
    for p in store.tensors():
        if p.grad is not None:
            total += float((p.grad * p.grad).sum())
    return math.sqrt(total)


def clip_grad_norm(store: ParamStore, max_norm: float) -> float:
    """Scale all gradients so the global L2 norm is at most max_norm."""
    norm = global_grad_norm(store)
    if norm > max_norm and norm > 0.0:
        scale = max_norm / norm
        for p in store.tensors():
            if p.grad is not None:
                p.grad *= scale
    return norm


def adamw_step(
    store: ParamStore,
    lr: float,
    weight_decay: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
) -> None:
    """One optimizer step over every registered parameter.

    Weight decay is decoupled: parameters shrink by lr * wd before the
    bias-corrected moment update. Missing gradients count as zero.
    """
    for name, p in store.items():
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        if g.shape != p.data.shape:
            raise ValueError(f"parameter {name}: grad shape {g.shape} != {p.data.shape}")
        if name not in store._m:
            store._m[name] = np.zeros_like(p.data)
            store._v[name] = np.zeros_like(p.data)
            store._step[name] = 0
        m = store._m[name]
        v = store._v[name]
        store._step[name] += 1
        t = store._step[name]
        if weight_decay != 0.0:
            p.data *= 1.0 - lr * weight_decay
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        upd = np.sqrt(v / (1.0 - beta2**t))
        upd += eps
        np.divide(m, upd, out=upd)
        upd *= lr / (1.0 - beta1**t)
        p.data -= upd
