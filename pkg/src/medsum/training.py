"""Training loop: Adagrad over teacher-forced losses, per-epoch logging and
early stopping on validation loss."""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence

import numpy as np

from . import autodiff as ad
from .corpus import IndexedExample, Vocabulary
from .losses import LossBreakdown, LossWeights, example_loss
from .model import ModelConfig, decode_beam, init_params, wrap_params
from .optim import AdagradState, adagrad_step

log = logging.getLogger(__name__)


class TrainingDiverged(ad.NumericError):
    def __init__(self, epoch: int, message: str = "loss is not finite"):
        super().__init__(f"epoch {epoch}: {message}")
        self.epoch = epoch


@dataclass
class TrainConfig:
    lr: float = 0.15
    epochs: int = 50
    batch_size: int = 1
    patience: Optional[int] = 5
    max_grad_norm: Optional[float] = 2.0    # global-norm clipping; None turns it off
    seed: int = 0


@dataclass
class TrainResult:
    params: Dict[str, np.ndarray]
    best_epoch: int
    log: List[dict] = field(default_factory=list)


def evaluate_loss(examples: Sequence[IndexedExample], params, config: ModelConfig,
                  weights: LossWeights) -> LossBreakdown:
    """Mean loss breakdown with inference-time inputs (no concept mask)."""
    P = wrap_params(params, trainable=False)
    return LossBreakdown.mean([example_loss(ex, P, config, weights, training=False)[1]
                               for ex in examples])


def _clip(grads: Dict[str, np.ndarray], max_norm: Optional[float]):
    if max_norm is None:
        return grads
    norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
    if norm > max_norm:
        grads = {k: g * (max_norm / norm) for k, g in grads.items()}
    return grads


def train(
    train_examples: Sequence[IndexedExample],
    config: ModelConfig,
    weights: LossWeights,
    train_cfg: TrainConfig,
    val_examples: Optional[Sequence[IndexedExample]] = None,
    params: Optional[Dict[str, np.ndarray]] = None,
    on_epoch: Optional[Callable[[int, Dict[str, np.ndarray], dict], bool]] = None,
) -> TrainResult:
    """Train ``config``'s variant and return the best-validation parameters.

    Without validation examples the final parameters are returned.
    ``on_epoch(epoch, params, record)`` may return True to stop early.
    """
    params = init_params(config) if params is None else params
    state = AdagradState()
    rng = np.random.default_rng(train_cfg.seed)
    best = (np.inf, 0, {k: v.copy() for k, v in params.items()})
    history: List[dict] = []
    stale = 0
    for epoch in range(1, train_cfg.epochs + 1):
        order = rng.permutation(len(train_examples))
        parts: List[LossBreakdown] = []
        for start in range(0, len(order), train_cfg.batch_size):
            batch = [train_examples[i] for i in order[start:start + train_cfg.batch_size]]
            acc: Dict[str, np.ndarray] = {}
            for ex in batch:
                total, breakdown = example_loss(ex, wrap_params(params), config, weights)
                if not np.isfinite(breakdown.total):
                    raise TrainingDiverged(epoch)
                parts.append(breakdown)
                for k, g in ad.backward(total).items():
                    acc[k] = acc[k] + g if k in acc else g.copy()
            grads = _clip({k: g / len(batch) for k, g in acc.items()}, train_cfg.max_grad_norm)
            try:
                adagrad_step(params, grads, state, train_cfg.lr)
            except ad.NumericError as exc:
                raise TrainingDiverged(epoch, str(exc)) from exc
        record = {
            "epoch": epoch,
            "seed": train_cfg.seed,
            "variant": config.variant,
            "weights": weights.to_dict(),
            "train": LossBreakdown.mean(parts).to_dict(),
        }
        if val_examples:
            val = evaluate_loss(val_examples, params, config, weights)
            if not np.isfinite(val.total):
                raise TrainingDiverged(epoch, "validation loss is not finite")
            record["val"] = val.to_dict()
            if val.total < best[0]:
                best = (val.total, epoch, {k: v.copy() for k, v in params.items()})
                stale = 0
            else:
                stale += 1
        history.append(record)
        log.info("epoch %d train %.4f%s", epoch, record["train"]["total"],
                 f" val {record['val']['total']:.4f}" if "val" in record else "")
        if on_epoch is not None and on_epoch(epoch, params, record):
            break
        if val_examples and train_cfg.patience is not None and stale >= train_cfg.patience:
            break
    if val_examples:
        return TrainResult(best[2], best[1], history)
    return TrainResult(params, len(history), history)


def decode_all(examples: Sequence[IndexedExample], params, config: ModelConfig, vocab: Vocabulary,
               beam: int = 1, mixture_override=None):
    return [decode_beam(ex, params, config, vocab, beam=beam, mixture_override=mixture_override)
            for ex in examples]


def format_log(history: Sequence[dict]) -> str:
    return "".join(json.dumps(rec, sort_keys=True) + "\n" for rec in history)
