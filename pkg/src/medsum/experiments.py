"""Small end-to-end runs on synthetic corpora: train a variant, decode the
held-out split and score it.  Used by the ablation walkthroughs and the
acceptance suite."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Dict, List, Optional

from . import corpus as C
from .losses import LossWeights
from .metrics import score_corpus
from .model import ModelConfig, corpus_mixture
from .training import TrainConfig, decode_all, train


@dataclass
class Dataset:
    vocab: C.Vocabulary
    concepts: C.ConceptLexicon
    negations: frozenset
    train: List[C.IndexedExample]
    val: List[C.IndexedExample]
    test: List[C.IndexedExample]


def synthetic_dataset(seed: int, n_examples: int, max_vocab: int = 2000,
                      concepts: Optional[C.ConceptLexicon] = None,
                      negations=C.DEFAULT_NEGATIONS, fractions=(0.8, 0.1, 0.1),
                      negated_fraction: float = C.NEGATED_FRACTION) -> Dataset:
    """Generate, split by conversation and index a synthetic corpus.

    The vocabulary comes from the training split only.
    """
    concepts = C.default_concepts() if concepts is None else concepts
    records = C.generate_synthetic_corpus(seed, n_examples, concepts, negations, negated_fraction)
    split = C.split_corpus(records, seed, fractions)
    train_pairs = [p for r in split.train for p in r.pairs()]
    vocab = C.build_vocabulary([s for s, _ in train_pairs] + [r for _, r in train_pairs], max_vocab)

    def index(recs):
        return C.corpus_examples(recs, vocab, concepts, negations)

    return Dataset(vocab, concepts, frozenset(negations),
                   index(split.train), index(split.val), index(split.test))


@dataclass
class RunResult:
    variant: str
    seed: int
    metrics: Dict[str, float]
    mean_p_gen: float
    mean_p_copy: float
    mean_p_neg: float
    best_epoch: int
    log: List[dict] = field(default_factory=list)


def run_variant(data: Dataset, variant: str, seed: int, weights: Optional[LossWeights] = None,
                emb_dim: int = 32, hidden_dim: int = 64, epochs: int = 15, patience: Optional[int] = 5,
                beam: int = 1, max_decode_len: int = 20,
                max_grad_norm: Optional[float] = 2.0) -> RunResult:
    """Train on ``data.train`` (early stopping on ``data.val``) and score ``data.test``.

    The mixture means pool every decode step of the test split, the statistic
    the decode command reports.
    """
    config = ModelConfig.for_variant(variant, vocab_size=len(data.vocab), emb_dim=emb_dim,
                                     hidden_dim=hidden_dim, seed=seed, max_decode_len=max_decode_len)
    weights = LossWeights() if weights is None else weights
    train_cfg = TrainConfig(epochs=epochs, patience=patience, seed=seed, max_grad_norm=max_grad_norm)
    result = train(data.train, config, weights, train_cfg, val_examples=data.val)
    decoded = decode_all(data.test, result.params, config, data.vocab, beam=beam)
    scores = score_corpus([d.tokens for d in decoded], [ex.reference_tokens for ex in data.test],
                          data.concepts, data.negations)
    mix, _ = corpus_mixture(decoded)
    return RunResult(variant, seed, scores, mix.p_gen, mix.p_copy, mix.p_neg, result.best_epoch, result.log)
