"""Automated summary metrics: ROUGE-L F1, medical concept P/R/F1 and
negation P/R/F1 from a simplified NegEx detector."""

from __future__ import annotations

import statistics
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Mapping, Sequence, Set, Tuple

from .corpus import DEFAULT_NEGATIONS, NO, ConceptLexicon

NEGEX_WINDOW = 5
SENTENCE_END = "."
NEGATED, AFFIRMED = "negated", "affirmed"

METRIC_FIELDS = ("rouge_l_f1", "concept_precision", "concept_recall", "concept_f1",
                 "negation_precision", "negation_recall", "negation_f1")


def f1_score(precision: float, recall: float) -> float:
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def _ratio(num: float, den: float) -> float:
    return num / den if den else 0.0


def lcs_length(a: Sequence, b: Sequence) -> int:
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0]
        for j, y in enumerate(b, 1):
            cur.append(prev[j - 1] + 1 if x == y else max(prev[j], cur[j - 1]))
        prev = cur
    return prev[-1]


def rouge_l_f1(candidate: Sequence[str], reference: Sequence[str]) -> float:
    """Summary-level ROUGE-L F1 (balanced harmonic mean of LCS precision/recall)."""
    if not candidate or not reference:
        return 0.0
    lcs = lcs_length(candidate, reference)
    return f1_score(lcs / len(candidate), lcs / len(reference))


def extract_concepts(tokens: Sequence[str], lexicon: ConceptLexicon) -> Set[str]:
    return lexicon.concepts(tokens)


def detect_negations(tokens: Sequence[str], lexicon: ConceptLexicon,
                     negations: Iterable[str] = DEFAULT_NEGATIONS) -> Dict[str, str]:
    """Simplified NegEx: a mention is negated when a trigger (a negation word
    or [NO]) occurs within the five preceding tokens of the same sentence.

    A concept mentioned several times is negated if any mention is.
    """
    triggers = set(negations) | {NO}
    result: Dict[str, str] = {}
    for start, _, cid in lexicon.match(tokens):
        negated = False
        for j in range(start - 1, max(-1, start - 1 - NEGEX_WINDOW), -1):
            if tokens[j] == SENTENCE_END:
                break
            if tokens[j] in triggers:
                negated = True
                break
        if negated or cid not in result:
            result[cid] = NEGATED if negated else result.get(cid, AFFIRMED)
    return result


def concept_counts(decoded: Sequence[Set[str]], references: Sequence[Set[str]]) -> Tuple[int, int, int]:
    """(overlap, |decoded|, |reference|) summed over examples."""
    if len(decoded) != len(references):
        raise ValueError(f"{len(decoded)} decoded sets but {len(references)} reference sets")
    hit = sum(len(d & r) for d, r in zip(decoded, references))
    return hit, sum(len(d) for d in decoded), sum(len(r) for r in references)


def concept_prf(decoded: Sequence[Set[str]], references: Sequence[Set[str]]) -> Tuple[float, float, float]:
    """Micro-averaged concept precision, recall and F1."""
    hit, n_dec, n_ref = concept_counts(decoded, references)
    p, r = _ratio(hit, n_dec), _ratio(hit, n_ref)
    return p, r, f1_score(p, r)


def negation_counts(decoded: Sequence[Mapping[str, str]],
                    references: Sequence[Mapping[str, str]]) -> Tuple[int, int, int]:
    """(tp, fp, fn) with "negated" as the positive class, over shared concepts."""
    if len(decoded) != len(references):
        raise ValueError(f"{len(decoded)} decoded assignments but {len(references)} references")
    tp = fp = fn = 0
    for dec, ref in zip(decoded, references):
        for cid in dec.keys() & ref.keys():
            d, r = dec[cid] == NEGATED, ref[cid] == NEGATED
            tp += d and r
            fp += d and not r
            fn += r and not d
    return tp, fp, fn


def negation_prf(decoded, references) -> Tuple[float, float, float]:
    tp, fp, fn = negation_counts(decoded, references)
    p, r = _ratio(tp, tp + fp), _ratio(tp, tp + fn)
    return p, r, f1_score(p, r)


def strip_negation_marker(tokens: Sequence[str]) -> List[str]:
    return [t for t in tokens if t != NO]


def score_corpus(decoded: Sequence[Sequence[str]], references: Sequence[Sequence[str]],
                 lexicon: ConceptLexicon, negations: Iterable[str] = DEFAULT_NEGATIONS) -> Dict[str, float]:
    """All metrics for one decoded corpus; ROUGE-L is the mean over examples."""
    if len(decoded) != len(references):
        raise ValueError(f"{len(decoded)} decoded summaries but {len(references)} references")
    negations = frozenset(negations)
    rouge = [rouge_l_f1(strip_negation_marker(d), strip_negation_marker(r))
             for d, r in zip(decoded, references)]
    cp, cr, cf = concept_prf([extract_concepts(d, lexicon) for d in decoded],
                             [extract_concepts(r, lexicon) for r in references])
    np_, nr, nf = negation_prf([detect_negations(d, lexicon, negations) for d in decoded],
                               [detect_negations(r, lexicon, negations) for r in references])
    return {
        "rouge_l_f1": sum(rouge) / len(rouge) if rouge else 0.0,
        "concept_precision": cp, "concept_recall": cr, "concept_f1": cf,
        "negation_precision": np_, "negation_recall": nr, "negation_f1": nf,
    }


@dataclass
class MetricsReport:
    """Per-seed scores with their mean and sample standard deviation."""

    n_examples: int
    per_seed: Dict[str, Dict[str, float]] = field(default_factory=dict)
    mean: Dict[str, float] = field(default_factory=dict)
    std: Dict[str, float] = field(default_factory=dict)
    std_kind: str = "sample standard deviation across seeds"

    def __getattr__(self, name):
        if name in METRIC_FIELDS:
            return self.mean[name]
        raise AttributeError(name)

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate_corpus(decoded_by_seed: Mapping[str, Sequence[Sequence[str]]],
                    references: Sequence[Sequence[str]], lexicon: ConceptLexicon,
                    negations: Iterable[str] = DEFAULT_NEGATIONS) -> MetricsReport:
    """Score every seed's decodes and aggregate mean and std per metric."""
    if not decoded_by_seed:
        raise ValueError("no decoded summaries given")
    per_seed = {str(seed): score_corpus(dec, references, lexicon, negations)
                for seed, dec in decoded_by_seed.items()}
    mean, std = {}, {}
    for name in METRIC_FIELDS:
        values = [scores[name] for scores in per_seed.values()]
        mean[name] = statistics.fmean(values)
        std[name] = statistics.stdev(values) if len(values) > 1 else 0.0
    return MetricsReport(len(references), per_seed, mean, std)
