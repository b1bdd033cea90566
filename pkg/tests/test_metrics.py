import itertools
import json
import statistics
from fractions import Fraction
from pathlib import Path

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medsum import metrics as Me
from medsum.corpus import NO, ConceptLexicon

FIXTURES = Path(__file__).parent / "fixtures"


def brute_lcs(a, b):
    """Longest common subsequence by trying subsets of the shorter sequence."""
    if len(a) > len(b):
        a, b = b, a
    for k in range(len(a), 0, -1):
        for idx in itertools.combinations(range(len(a)), k):
            sub = [a[i] for i in idx]
            it = iter(b)
            if all(tok in it for tok in sub):
                return k
    return 0


def load_fixture():
    doc = json.loads((FIXTURES / "metrics_cases.json").read_text(encoding="utf-8"))
    lex = ConceptLexicon(doc["lexicon"])
    decoded = [c["decoded"] for c in doc["cases"]]
    refs = [c["reference"] for c in doc["cases"]]
    return lex, frozenset(doc["negations"]), decoded, refs


def test_rouge_hand_case():
    assert Me.rouge_l_f1(["has", "a", "fever"], ["has", "fever"]) == pytest.approx(0.8)
    assert Me.rouge_l_f1([], ["x"]) == 0.0
    assert Me.rouge_l_f1(["x", "y"], ["x", "y"]) == 1.0


@settings(max_examples=300, deadline=None)
@given(st.lists(st.sampled_from("abcd"), max_size=9), st.lists(st.sampled_from("abcd"), max_size=9))
def test_lcs_matches_brute_force(a, b):
    assert Me.lcs_length(a, b) == brute_lcs(a, b)


def test_negex_window_and_sentence_scope():
    lex = ConceptLexicon({"fever": "C1", "cough": "C2"})
    assert Me.detect_negations([NO, "no", "fever"], lex) == {"C1": "negated"}
    assert Me.detect_negations("no idea . has fever".split(), lex) == {"C1": "affirmed"}
    five_back = "not a b c d fever".split()
    six_back = "not a b c d e fever".split()
    assert Me.detect_negations(five_back, lex) == {"C1": "negated"}
    assert Me.detect_negations(six_back, lex) == {"C1": "affirmed"}


def test_negex_any_mention_negates():
    lex = ConceptLexicon({"fever": "C1"})
    assert Me.detect_negations("has fever . no fever".split(), lex) == {"C1": "negated"}
    assert Me.detect_negations("no fever . has fever".split(), lex) == {"C1": "negated"}


def test_marker_alone_is_a_trigger():
    lex = ConceptLexicon({"fever": "C1"})
    assert Me.detect_negations([NO, "fever"], lex, negations=()) == {"C1": "negated"}


def test_fixture_concept_counts():
    lex, _, decoded, refs = load_fixture()
    dec_sets = [Me.extract_concepts(d, lex) for d in decoded]
    ref_sets = [Me.extract_concepts(r, lex) for r in refs]
    # hits per case: 1 1 1 1 1 2 1 1 1 0; decoded sizes sum 11; reference sizes sum 13
    assert Me.concept_counts(dec_sets, ref_sets) == (10, 11, 13)
    p, r, f = Me.concept_prf(dec_sets, ref_sets)
    assert (p, r) == (10 / 11, 10 / 13)
    assert f == pytest.approx(float(Fraction(20, 24)), abs=1e-15)


def test_fixture_negation_counts():
    lex, neg, decoded, refs = load_fixture()
    dec = [Me.detect_negations(d, lex, neg) for d in decoded]
    ref = [Me.detect_negations(r, lex, neg) for r in refs]
    # tp: cases 2 and 6; fp: case 4; fn: cases 3 and 7
    assert Me.negation_counts(dec, ref) == (2, 1, 2)
    p, r, f = Me.negation_prf(dec, ref)
    assert (p, r) == (2 / 3, 0.5)
    assert f == pytest.approx(4 / 7, abs=1e-15)


def test_identical_corpora_score_one():
    lex, neg, _, refs = load_fixture()
    refs = [r for r in refs if r]
    scores = Me.score_corpus(refs, refs, lex, neg)
    assert scores["rouge_l_f1"] == scores["concept_f1"] == scores["negation_f1"] == 1.0


def test_rouge_ignores_marker():
    lex = ConceptLexicon({"fever": "C1"})
    s = Me.score_corpus([["no", "fever"]], [[NO, "no", "fever"]], lex)
    assert s["rouge_l_f1"] == 1.0


def test_misaligned_inputs():
    with pytest.raises(ValueError):
        Me.score_corpus([["a"]], [], ConceptLexicon())


def test_empty_counts_give_zero_not_nan():
    assert Me.concept_prf([set()], [set()]) == (0.0, 0.0, 0.0)
    assert Me.negation_prf([{}], [{}]) == (0.0, 0.0, 0.0)


def test_multi_seed_report():
    lex, neg, decoded, refs = load_fixture()
    report = Me.evaluate_corpus({"0": decoded, "1": refs, "2": decoded}, refs, lex, neg)
    values = [report.per_seed[k]["concept_f1"] for k in ("0", "1", "2")]
    assert report.mean["concept_f1"] == pytest.approx(statistics.fmean(values))
    assert report.std["concept_f1"] == pytest.approx(statistics.stdev(values))
    assert "sample" in report.std_kind
    single = Me.evaluate_corpus({"0": decoded}, refs, lex, neg)
    assert single.std["rouge_l_f1"] == 0.0
    assert single.negation_f1 == pytest.approx(4 / 7)
