"""Adagrad, as used for all training runs (learning rate 0.15)."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from .autodiff import DimensionError, NumericError


@dataclass
class AdagradState:
    accumulators: Dict[str, np.ndarray] = field(default_factory=dict)
    epsilon: float = 1e-10


def adagrad_step(
    params: Dict[str, np.ndarray],
    grads: Dict[str, np.ndarray],
    state: AdagradState,
    lr: float = 0.15,
) -> Dict[str, np.ndarray]:
    """Update ``params`` in place and return them.

    ``acc += g**2; p -= lr * g / (sqrt(acc) + eps)``.  Parameters without a
    gradient entry are left alone.
    """
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    for name in sorted(grads):
        g = grads[name]
        p = params[name]
        if g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {name!r}")
        acc = state.accumulators.get(name)
        if acc is None:
            acc = state.accumulators[name] = np.zeros_like(p)
        acc += g * g
        p -= lr * g / (np.sqrt(acc) + state.epsilon)
    return params
