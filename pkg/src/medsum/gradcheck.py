"""Finite-difference check of the full training loss on a toy model."""

from __future__ import annotations

from typing import Dict, Optional

import numpy as np

from . import autodiff as ad
from .corpus import NO, RESERVED, ConceptLexicon, IndexedExample, Vocabulary, index_example
from .losses import LossWeights, example_loss
from .model import ModelConfig, count_params, init_params, wrap_params

MAX_CLI_PARAMS = 1000
_KEY_WORDS = ("no", "fever", "has")


def toy_vocabulary(size: int) -> Vocabulary:
    if size < len(RESERVED) + len(_KEY_WORDS):
        raise ValueError(f"toy vocabulary needs at least {len(RESERVED) + len(_KEY_WORDS)} entries")
    fillers = [f"w{i}" for i in range(size - len(RESERVED) - len(_KEY_WORDS))]
    return Vocabulary(list(RESERVED) + list(_KEY_WORDS) + fillers)


def toy_example(vocab: Vocabulary, source_len: int = 6, seed: int = 0) -> IndexedExample:
    """A snippet that switches every loss term on.

    The source holds a negation word, a concept that the reference repeats,
    and one out-of-vocabulary token that the reference copies.
    """
    if source_len < 3:
        raise ValueError("toy source needs at least 3 tokens")
    rng = np.random.default_rng(seed)
    pool = [t for t in vocab.itos[len(RESERVED):] if t not in _KEY_WORDS] or ["has"]
    source = ["fever", "no", "zzz"] + [pool[int(i)] for i in rng.integers(len(pool), size=source_len - 3)]
    source = [source[int(i)] for i in rng.permutation(source_len)]
    reference = [NO, "no", "fever", ".", "has", "zzz"]
    return index_example(source, reference, vocab, ConceptLexicon({"fever": "C0015967"}))


def loss_gradient_error(config: ModelConfig, weights: LossWeights, example: IndexedExample,
                        params: Optional[Dict[str, np.ndarray]] = None, constant: bool = False,
                        corrupt: bool = False, eps: float = 1e-3) -> float:
    """Max relative error between backprop and central differences.

    ``constant`` swaps the loss for a parameter-free objective (error 0).
    ``corrupt`` perturbs one analytic entry, a negative control that must fail.
    Many toy gradients are near 1e-9, so a smaller ``eps`` is swamped by
    round-off in the loss; 1e-3 keeps both error sources well under 1e-4.
    """
    params = init_params(config) if params is None else params

    def objective(p):
        if constant:
            return ad.constant(np.array(1.5))
        return example_loss(example, wrap_params(p), config, weights)[0]

    analytic = None
    if corrupt:
        analytic = ad.backward(objective(params)) if not constant else {}
        name = sorted(params)[0]
        bad = np.array(analytic.get(name, np.zeros_like(params[name])), dtype=np.float64)
        bad.reshape(-1)[0] += 1.0
        analytic[name] = bad
    return ad.finite_diff_check(objective, params, eps=eps, analytic=analytic)


def cli_size_ok(config: ModelConfig) -> bool:
    return count_params(init_params(config)) <= MAX_CLI_PARAMS
