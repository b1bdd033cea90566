"""Training objective: NLL plus coverage, concept-attention,
negation-attention, generator-penalty and p_neg supervision terms.

Each term function works per decoding step and returns a scalar node, so the
same code serves for training (gradients) and for checks on plain arrays.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Dict, List, Mapping, Sequence

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Node
from .model import forward

TERMS = ("nll", "coverage", "concept_attn", "negation_attn", "pgen_penalty", "pneg_l1")


@dataclass
class LossWeights:
    coverage: float = 1.0       # lambda
    concept: float = 1.0        # lambda_m
    negation: float = 0.1       # lambda_n
    pgen: float = 1.0           # delta
    pneg: float = 2.0           # gamma

    def __post_init__(self):
        for name, value in asdict(self).items():
            if value < 0:
                raise ValueError(f"loss weight {name} must be non-negative, got {value}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class LossBreakdown:
    nll: float = 0.0
    coverage: float = 0.0
    concept_attn: float = 0.0
    negation_attn: float = 0.0
    pgen_penalty: float = 0.0
    pneg_l1: float = 0.0
    total: float = 0.0

    def to_dict(self) -> Dict[str, float]:
        return asdict(self)

    @classmethod
    def mean(cls, items: Sequence["LossBreakdown"]) -> "LossBreakdown":
        if not items:
            return cls()
        keys = list(asdict(items[0]))
        return cls(**{k: float(np.mean([getattr(b, k) for b in items])) for k in keys})


def _vec(x) -> Node:
    return x if isinstance(x, Node) else ad.constant(np.asarray(x, dtype=np.float64))


def nll_term(dist, target: int) -> Node:
    """``-log max(P(target), 1e-12)``."""
    dist = _vec(dist)
    if not 0 <= target < dist.shape[0]:
        raise ContractError(f"target id {target} outside extended range 0..{dist.shape[0] - 1}")
    return ad.scale(ad.log(ad.pick(dist, target)), -1.0)


def coverage_term(attn, coverage) -> Node:
    """``sum_i min(a_i, c_i)``."""
    attn, coverage = _vec(attn), _vec(coverage)
    if attn.shape != coverage.shape:
        raise DimensionError(f"attention {attn.shape} and coverage {coverage.shape} differ")
    return ad.total(ad.minimum(attn, coverage))


def _indicator_term(indicator, attn) -> Node:
    ind = np.asarray(indicator.value if isinstance(indicator, Node) else indicator, dtype=np.float64)
    attn = _vec(attn)
    if ind.shape != attn.shape:
        raise DimensionError(f"indicator {ind.shape} and attention {attn.shape} differ")
    if not ind.any():
        return ad.constant(np.array(0.0))
    return ad.sub(np.array(1.0), ad.dot(ind, attn))


def concept_attention_term(concept_mask, attn) -> Node:
    """``1 - m . a``; zero when the snippet has no marked concept."""
    return _indicator_term(concept_mask, attn)


def negation_attention_term(negation_mask, attn) -> Node:
    """``1 - n . a``; zero when the snippet has no negation word."""
    return _indicator_term(negation_mask, attn)


def pgen_penalty_term(mixture) -> Node:
    """The step's p_gen (weighted by delta when aggregated)."""
    return ad.pick(_vec(mixture), 0)


def pneg_l1_term(mixture, label: float) -> Node:
    """``|p_neg - z|`` with ``z`` the 0/1 [NO] label for the step."""
    if label not in (0, 1):
        raise ContractError(f"negation label must be 0 or 1, got {label}")
    return ad.absolute(ad.sub(ad.pick(_vec(mixture), 2), np.array(float(label))))


def sequence_loss(steps, targets: Sequence[int], weights: LossWeights, flags: Mapping[str, bool],
                  concept_mask=None, negation_mask=None, negation_labels=None):
    """Average every active term over the decoding steps and weight them.

    ``steps`` are :class:`model.StepOutput` records aligned with ``targets``.
    ``negation_labels`` may be one shorter than ``targets`` (no label for the
    STOP step); missing labels are 0.  Returns ``(total_node, breakdown)``.
    """
    T = len(targets)
    if len(steps) != T:
        raise DimensionError(f"{len(steps)} decoder steps for {T} targets")
    z = np.zeros(T)
    if negation_labels is not None:
        labels = np.asarray(negation_labels, dtype=np.float64)
        if labels.size > T:
            raise DimensionError(f"{labels.size} negation labels for {T} targets")
        z[:labels.size] = labels

    per_term: Dict[str, List[Node]] = {k: [] for k in TERMS}
    for t, (step, target) in enumerate(zip(steps, targets)):
        per_term["nll"].append(nll_term(step.distribution, int(target)))
        per_term["coverage"].append(coverage_term(step.attention, step.coverage))
        if flags.get("use_concept_attention") and concept_mask is not None:
            per_term["concept_attn"].append(concept_attention_term(concept_mask, step.attention))
        if flags.get("use_negation_attention") and negation_mask is not None:
            per_term["negation_attn"].append(negation_attention_term(negation_mask, step.attention))
        if flags.get("use_pgen_penalty"):
            per_term["pgen_penalty"].append(pgen_penalty_term(step.mixture))
        if flags.get("use_three_mixture"):
            per_term["pneg_l1"].append(pneg_l1_term(step.mixture, int(z[t])))

    factor = {"nll": 1.0, "coverage": weights.coverage, "concept_attn": weights.concept,
              "negation_attn": weights.negation, "pgen_penalty": weights.pgen,
              "pneg_l1": weights.pneg}
    means: Dict[str, Node] = {}
    total = None
    for name in TERMS:
        nodes = per_term[name]
        if not nodes:
            continue
        mean = ad.scale(ad.total(ad.stack(nodes)), 1.0 / T)
        means[name] = mean
        weighted = ad.scale(mean, factor[name])
        total = weighted if total is None else ad.add(total, weighted)
    breakdown = LossBreakdown(**{k: float(v.value) for k, v in means.items()})
    breakdown.total = float(total.value)
    return total, breakdown


def example_loss(example, P, config, weights: LossWeights, training: bool = True):
    """Teacher-forced loss of one indexed example under ``config``'s variant."""
    steps = forward(example, P, config, training=training)
    return sequence_loss(
        steps, example.targets, weights, config.flags,
        concept_mask=example.concept_mask if training else np.zeros_like(example.concept_mask),
        negation_mask=example.negation_mask,
        negation_labels=example.negation_labels,
    )
