"""Adam with LoRA+ per-factor learning rates."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .lora import LoraAdapter

BETA1 = 0.9
BETA2 = 0.999
EPS = 1e-8


@dataclass
class OptimizerState:
    lr_a: float = 1e-3
    ratio: float = 16.0
    beta1: float = BETA1
    beta2: float = BETA2
    eps: float = EPS
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def lr_b(self) -> float:
        return self.ratio * self.lr_a


def clip_grad_norm(grads: dict[str, tuple[np.ndarray, ...]], max_norm: float = 1.0) -> float:
    """Scale ``grads`` in place so their global L2 norm is at most ``max_norm``.

    Returns the norm before clipping.
    """
    total = math.sqrt(sum(float((g * g).sum()) for pair in grads.values() for g in pair))
    if max_norm > 0 and total > max_norm:
        factor = max_norm / (total + 1e-12)
        for pair in grads.values():
            for g in pair:
                g *= factor
    return total


def _update(state: OptimizerState, key: str, param: np.ndarray, grad: np.ndarray, lr: float) -> None:
    m = state.m.get(key)
    if m is None:
        m = state.m[key] = np.zeros_like(param)
        state.v[key] = np.zeros_like(param)
    v = state.v[key]
    m *= state.beta1
    m += (1.0 - state.beta1) * grad
    v *= state.beta2
    v += (1.0 - state.beta2) * grad * grad
    m_hat = m / (1.0 - state.beta1 ** state.step)
    v_hat = v / (1.0 - state.beta2 ** state.step)
    param -= lr * m_hat / (np.sqrt(v_hat) + state.eps)


def adam_step(state: OptimizerState, adapters: dict[str, LoraAdapter],
              grads: dict[str, tuple[np.ndarray, np.ndarray]],
              norms: dict[str, tuple[np.ndarray, np.ndarray]] | None = None,
              norm_grads: dict[str, tuple[np.ndarray, np.ndarray]] | None = None) -> OptimizerState:
    """One in-place Adam update: ``A`` at ``lr_a``, ``B`` at ``ratio * lr_a``.

    Layer-norm parameters are updated at ``lr_a`` only when both ``norms``
    and ``norm_grads`` are passed.
    """
    state.step += 1
    for name, (gA, gB) in grads.items():
        ad = adapters[name]
        _update(state, f"{name}.A", ad.A, gA, state.lr_a)
        _update(state, f"{name}.B", ad.B, gB, state.lr_b)
    if norms is not None and norm_grads:
        for name, (gg, gb) in norm_grads.items():
            g, b = norms[name]
            _update(state, f"{name}.gain", g, gg, state.lr_a)
            _update(state, f"{name}.bias", b, gb, state.lr_a)
    return state
