"""Parameter containers and seeded initialisation for recurrent layers."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import autodiff as ad

INIT_RANGE = 0.1


def uniform_init(rng: np.random.Generator, shape, scale: float = INIT_RANGE) -> np.ndarray:
    return rng.uniform(-scale, scale, size=shape)


@dataclass
class LstmCellParams:
    """Weights of one LSTM cell, gates stacked as input/forget/output/candidate."""

    W_ih: np.ndarray
    W_hh: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        H = self.W_hh.shape[1]
        if self.W_hh.shape != (4 * H, H) or self.W_ih.shape[0] != 4 * H or self.b.shape != (4 * H,):
            raise ad.DimensionError(
                f"gate rows must be 4 x hidden ({4 * H}); got W_ih {self.W_ih.shape}, "
                f"W_hh {self.W_hh.shape}, b {self.b.shape}"
            )

    @property
    def hidden_size(self) -> int:
        return self.W_hh.shape[1]

    @property
    def input_size(self) -> int:
        return self.W_ih.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, input_size: int, hidden_size: int) -> "LstmCellParams":
        return cls(
            W_ih=uniform_init(rng, (4 * hidden_size, input_size)),
            W_hh=uniform_init(rng, (4 * hidden_size, hidden_size)),
            b=uniform_init(rng, (4 * hidden_size,)),
        )

    @classmethod
    def zeros(cls, input_size: int, hidden_size: int) -> "LstmCellParams":
        return cls(np.zeros((4 * hidden_size, input_size)),
                   np.zeros((4 * hidden_size, hidden_size)),
                   np.zeros(4 * hidden_size))

    def as_dict(self, prefix: str) -> Dict[str, np.ndarray]:
        return {f"{prefix}.W_ih": self.W_ih, f"{prefix}.W_hh": self.W_hh, f"{prefix}.b": self.b}


def lstm_cell(x, h_prev, c_prev, params: LstmCellParams, prefix: str = "lstm"):
    """Convenience wrapper running :func:`autodiff.lstm_cell` on a params record."""
    return ad.lstm_cell(
        x, h_prev, c_prev,
        ad.parameter(params.W_ih, f"{prefix}.W_ih"),
        ad.parameter(params.W_hh, f"{prefix}.W_hh"),
        ad.parameter(params.b, f"{prefix}.b"),
    )
