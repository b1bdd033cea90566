"""Dialogue corpora: snippet splitting, tokenisation, lexicons, vocabulary,
indexing into model-ready examples, a synthetic generator and JSONL I/O.
"""

from __future__ import annotations

import json
import re
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Sequence, Tuple

import numpy as np

DOCTOR = "DR"
PATIENT = "PT"
_SPEAKER_ALIASES = {"dr": DOCTOR, "doctor": DOCTOR, "pt": PATIENT, "patient": PATIENT}

PAD, UNK, START, STOP, NO = "[PAD]", "[UNK]", "[START]", "[STOP]", "[NO]"
RESERVED = (PAD, UNK, START, STOP, NO)

MIN_SNIPPET_TURNS = 2
MAX_SNIPPET_TURNS = 10

DEFAULT_NEGATIONS = frozenset({"no", "nope", "doesn't", "not"})

# auxiliaries and wh-words that open a question even without a "?"
_INTERROGATIVE_OPENERS = frozenset({
    "do", "does", "did", "have", "has", "had", "are", "is", "was", "were", "can",
    "could", "will", "would", "should", "any", "how", "what", "when", "where",
    "which", "who", "why",
})


class CorpusError(ValueError):
    pass


class ParseError(CorpusError):
    def __init__(self, message: str, line: int):
        super().__init__(f"line {line}: {message}")
        self.line = line


class SummaryFormatError(CorpusError):
    """A reference summary violates the [NO] placement rules."""


class ConfigurationError(CorpusError):
    pass


# ---------------------------------------------------------------------------
# tokenisation

_LABEL_RE = re.compile(r"(?i)\b(?:dr|doctor|pt|patient)\s*:")
_TOKEN_RE = re.compile(r"[a-z0-9]+(?:[-'/][a-z0-9]+)*|[^\sa-z0-9]")
_NO_SPLIT_RE = re.compile(r"(\[NO\])")


def tokenize(text: str) -> List[str]:
    """Lowercase, split punctuation off, keep ``[NO]`` and hyphenated words whole."""
    text = text.replace("’", "'").replace("‘", "'")
    tokens: List[str] = []
    for piece in _NO_SPLIT_RE.split(text):
        if piece == NO:
            tokens.append(NO)
        elif piece:
            tokens.extend(_TOKEN_RE.findall(piece.lower()))
    return tokens


def strip_speaker_labels(text: str) -> str:
    return _LABEL_RE.sub(" ", text)


# ---------------------------------------------------------------------------
# dialogue structure


@dataclass(frozen=True)
class Turn:
    speaker: str
    text: str

    def __post_init__(self):
        speaker = _SPEAKER_ALIASES.get(str(self.speaker).lower())
        if speaker is None:
            raise CorpusError(f"unknown speaker {self.speaker!r}")
        object.__setattr__(self, "speaker", speaker)


@dataclass(frozen=True)
class Snippet:
    turns: Tuple[Turn, ...]

    @property
    def tokens(self) -> List[str]:
        return preprocess(self)


def is_question(turn: Turn) -> bool:
    """A doctor turn that asks something.

    Any "?" counts; so does a sentence that opens with an auxiliary or
    wh-word ("do you have any medical conditions").
    """
    if turn.speaker != DOCTOR:
        return False
    if "?" in turn.text:
        return True
    for sentence in re.split(r"[.!]", turn.text):
        words = tokenize(strip_speaker_labels(sentence))
        if words and words[0] in _INTERROGATIVE_OPENERS:
            return True
    return False


def split_into_snippets(turns: Sequence[Turn]) -> List[Snippet]:
    """Cut a dialogue at each doctor question.

    A snippet runs from one question up to, but excluding, the next one.
    Turns before the first question are dropped, as are snippets outside the
    2..10 turn range.
    """
    if not turns:
        raise CorpusError("dialogue has no turns")
    starts = [i for i, t in enumerate(turns) if is_question(t)]
    snippets = []
    for k, start in enumerate(starts):
        stop = starts[k + 1] if k + 1 < len(starts) else len(turns)
        if MIN_SNIPPET_TURNS <= stop - start <= MAX_SNIPPET_TURNS:
            snippets.append(Snippet(tuple(turns[start:stop])))
    return snippets


def preprocess(snippet: Snippet | Sequence[Turn] | str) -> List[str]:
    """Drop speaker labels, concatenate turns and tokenize."""
    if isinstance(snippet, str):
        return tokenize(strip_speaker_labels(snippet))
    turns = snippet.turns if isinstance(snippet, Snippet) else snippet
    tokens: List[str] = []
    for turn in turns:
        tokens.extend(tokenize(strip_speaker_labels(turn.text)))
    return tokens


def summary_tokens(sentences: Sequence[str]) -> List[str]:
    """Tokenize summary sentences, joining them with "." boundaries."""
    tokens: List[str] = []
    for k, sentence in enumerate(sentences):
        toks = tokenize(sentence)
        if not toks:
            continue
        if tokens and tokens[-1] != ".":
            tokens.append(".")
        tokens.extend(toks)
    return tokens


def validate_reference(tokens: Sequence[str]) -> None:
    """[NO] may only open a sentence and must be followed by a word in it."""
    for i, tok in enumerate(tokens):
        if tok != NO:
            continue
        if i > 0 and tokens[i - 1] != ".":
            raise SummaryFormatError(f"[NO] at position {i} is not sentence-initial")
        if i + 1 >= len(tokens) or tokens[i + 1] in (".", NO):
            raise SummaryFormatError(f"[NO] at position {i} is not followed by any token")


# ---------------------------------------------------------------------------
# lexicons


class ConceptLexicon:
    """Surface terms (1..4 words) mapped to concept identifiers."""

    max_len = 4

    def __init__(self, terms: Mapping[str, str] | None = None):
        self.terms: Dict[Tuple[str, ...], str] = {}
        for term, cid in (terms or {}).items():
            key = tuple(tokenize(term))
            if not key:
                raise ConfigurationError(f"empty lexicon term {term!r}")
            if len(key) > self.max_len:
                raise ConfigurationError(f"term {term!r} is longer than {self.max_len} tokens")
            self.terms[key] = cid

    def __len__(self):
        return len(self.terms)

    def __bool__(self):
        return bool(self.terms)

    def surface_forms(self) -> List[str]:
        return sorted(" ".join(k) for k in self.terms)

    def match(self, tokens: Sequence[str]) -> List[Tuple[int, int, str]]:
        """Longest-match, non-overlapping, left-to-right; ``(start, stop, id)``."""
        found = []
        i = 0
        n = len(tokens)
        while i < n:
            for width in range(min(self.max_len, n - i), 0, -1):
                cid = self.terms.get(tuple(tokens[i:i + width]))
                if cid is not None:
                    found.append((i, i + width, cid))
                    i += width
                    break
            else:
                i += 1
        return found

    def concepts(self, tokens: Sequence[str]) -> set:
        return {cid for _, _, cid in self.match(tokens)}

    @classmethod
    def load(cls, path) -> "ConceptLexicon":
        terms = {}
        text = Path(path).read_text(encoding="utf-8")
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split("\t")
            if len(parts) != 2 or not parts[0].strip() or not parts[1].strip():
                raise ParseError("expected 'term<TAB>concept_id'", lineno)
            terms[parts[0].strip()] = parts[1].strip()
        return cls(terms)

    def save(self, path) -> None:
        lines = [f"{' '.join(k)}\t{v}" for k, v in sorted(self.terms.items())]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_negations(path) -> frozenset:
    words = [w.strip().lower() for w in Path(path).read_text(encoding="utf-8").splitlines()]
    words = [w for w in words if w]
    if not words:
        raise ConfigurationError(f"negation lexicon {path} is empty")
    return frozenset(words)


def save_negations(words: Iterable[str], path) -> None:
    Path(path).write_text("\n".join(sorted(words)) + "\n", encoding="utf-8")


DEFAULT_CONCEPT_TERMS = {
    "fever": "C0015967",
    "cough": "C0010200",
    "chest pain": "C0008031",
    "shortness of breath": "C0013404",
    "headache": "C0018681",
    "nausea": "C0027497",
    "vomiting": "C0042963",
    "diarrhea": "C0011991",
    "back pain": "C0004604",
    "sore throat": "C0242429",
    "rash": "C0015230",
    "dizziness": "C0012833",
    "fatigue": "C0015672",
    "chills": "C0085593",
    "runny nose": "C1260880",
    "abdominal pain": "C0000737",
    "joint pain": "C0003862",
    "palpitations": "C0030252",
    "blurred vision": "C0344232",
    "night sweats": "C0028081",
    "loss of appetite": "C1971624",
    "muscle aches": "C0231528",
    "ear pain": "C0013456",
    "constipation": "C0009806",
    "wheezing": "C0043144",
    "pain": "C0030193",
}


def default_concepts() -> ConceptLexicon:
    return ConceptLexicon(DEFAULT_CONCEPT_TERMS)


# ---------------------------------------------------------------------------
# vocabulary


class Vocabulary:
    """Reserved tokens first, then training tokens by descending frequency."""

    def __init__(self, itos: Sequence[str]):
        if tuple(itos[:len(RESERVED)]) != RESERVED:
            raise ConfigurationError("vocabulary must start with the reserved tokens")
        self.itos = list(itos)
        self.stoi = {t: i for i, t in enumerate(self.itos)}
        if len(self.stoi) != len(self.itos):
            raise ConfigurationError("duplicate tokens in vocabulary")

    pad_id, unk_id, start_id, stop_id, no_id = range(len(RESERVED))

    def __len__(self):
        return len(self.itos)

    def __contains__(self, token):
        return token in self.stoi

    def id(self, token: str) -> int:
        return self.stoi.get(token, self.unk_id)

    def token(self, idx: int) -> str:
        return self.itos[idx]


def build_vocabulary(token_streams: Iterable[Sequence[str]], max_size: int = 50000) -> Vocabulary:
    if max_size <= len(RESERVED):
        raise ConfigurationError(f"max_size must exceed {len(RESERVED)} reserved tokens")
    counts = Counter()
    for stream in token_streams:
        counts.update(t for t in stream if t not in RESERVED)
    ranked = sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))
    words = [w for w, _ in ranked[: max_size - len(RESERVED)]]
    return Vocabulary(list(RESERVED) + words)


# ---------------------------------------------------------------------------
# indexing


@dataclass
class IndexedExample:
    source_tokens: List[str]
    reference_tokens: List[str]
    source_ids: np.ndarray
    source_ext_ids: np.ndarray
    oovs: List[str]
    reference_ids: np.ndarray
    concept_mask: np.ndarray
    negation_mask: np.ndarray
    negation_labels: np.ndarray
    vocab_size: int
    conversation_id: str = ""
    snippet_index: int = 0

    @property
    def oov_map(self) -> Dict[str, int]:
        return {tok: self.vocab_size + k for k, tok in enumerate(self.oovs)}

    @property
    def extended_size(self) -> int:
        return self.vocab_size + len(self.oovs)

    @property
    def decoder_inputs(self) -> np.ndarray:
        """START followed by the reference, with copied OOVs mapped back to UNK."""
        ref = np.where(self.reference_ids >= self.vocab_size, Vocabulary.unk_id, self.reference_ids)
        return np.concatenate([[Vocabulary.start_id], ref]).astype(np.int64)

    @property
    def targets(self) -> np.ndarray:
        return np.concatenate([self.reference_ids, [Vocabulary.stop_id]])


def index_example(
    source: Sequence[str],
    reference: Sequence[str],
    vocab: Vocabulary,
    concepts: ConceptLexicon | None = None,
    negations: Iterable[str] = DEFAULT_NEGATIONS,
    conversation_id: str = "",
    snippet_index: int = 0,
) -> IndexedExample:
    validate_reference(reference)
    negations = frozenset(negations)
    source = list(source)
    reference = list(reference)
    V = len(vocab)

    oovs: List[str] = []
    ext_ids = []
    for tok in source:
        if tok in vocab and tok not in RESERVED:
            ext_ids.append(vocab.id(tok))
            continue
        if tok not in oovs:
            oovs.append(tok)
        ext_ids.append(V + oovs.index(tok))
    src_ids = [vocab.id(t) if t not in RESERVED else vocab.unk_id for t in source]

    ref_ids = []
    for tok in reference:
        if tok == NO:
            ref_ids.append(vocab.no_id)
        elif tok in vocab and tok not in RESERVED:
            ref_ids.append(vocab.id(tok))
        elif tok in oovs:
            ref_ids.append(V + oovs.index(tok))
        else:
            ref_ids.append(vocab.unk_id)

    m = np.zeros(len(source))
    if concepts:
        in_reference = concepts.concepts(reference)
        for start, stop, cid in concepts.match(source):
            if cid in in_reference:
                m[start:stop] = 1.0
    n = np.array([1.0 if t in negations else 0.0 for t in source])
    z = np.array([1.0 if t == NO else 0.0 for t in reference])

    return IndexedExample(
        source_tokens=source,
        reference_tokens=reference,
        source_ids=np.array(src_ids, dtype=np.int64),
        source_ext_ids=np.array(ext_ids, dtype=np.int64),
        oovs=oovs,
        reference_ids=np.array(ref_ids, dtype=np.int64),
        concept_mask=m,
        negation_mask=n,
        negation_labels=z,
        vocab_size=V,
        conversation_id=conversation_id,
        snippet_index=snippet_index,
    )


# ---------------------------------------------------------------------------
# corpus records and I/O


@dataclass
class Record:
    """One corpus line: a dialogue (or snippet) and its summary sentences."""

    conversation_id: str
    turns: List[Turn]
    summary: List[str] = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "conversation_id": self.conversation_id,
            "turns": [{"speaker": t.speaker, "text": t.text} for t in self.turns],
            "summary": list(self.summary),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "Record":
        return cls(
            conversation_id=str(obj["conversation_id"]),
            turns=[Turn(t["speaker"], t["text"]) for t in obj["turns"]],
            summary=[str(s) for s in obj["summary"]],
        )

    def pairs(self) -> List[Tuple[List[str], List[str]]]:
        """(source, reference) token pairs, one per snippet.

        Summary sentences are matched to snippets one to one; a record that
        yields a single snippet takes the whole summary.
        """
        snippets = split_into_snippets(self.turns)
        if len(snippets) == len(self.summary):
            return [(preprocess(s), summary_tokens([sent])) for s, sent in zip(snippets, self.summary)]
        if len(snippets) == 1:
            return [(preprocess(snippets[0]), summary_tokens(self.summary))]
        raise CorpusError(
            f"{self.conversation_id}: {len(snippets)} snippets but {len(self.summary)} summary sentences"
        )


def save_corpus(records: Iterable[Record], path) -> None:
    lines = [json.dumps(r.to_json(), ensure_ascii=False, sort_keys=True) for r in records]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def load_corpus(path) -> List[Record]:
    records = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
                records.append(Record.from_json(obj))
            except (json.JSONDecodeError, KeyError, TypeError, CorpusError) as exc:
                raise ParseError(str(exc), lineno) from exc
    return records


def corpus_examples(
    records: Sequence[Record],
    vocab: Vocabulary,
    concepts: ConceptLexicon | None = None,
    negations: Iterable[str] = DEFAULT_NEGATIONS,
) -> List[IndexedExample]:
    """Index every snippet of every record, numbering snippets per conversation."""
    return [index_example(src, ref, vocab, concepts, negations, cid, idx)
            for cid, idx, src, ref in numbered_pairs(records)]


def numbered_pairs(records: Sequence[Record]) -> List[Tuple[str, int, List[str], List[str]]]:
    """``(conversation_id, snippet_index, source, reference)`` for every snippet."""
    seen: Counter = Counter()
    out = []
    for rec in records:
        for src, ref in rec.pairs():
            out.append((rec.conversation_id, seen[rec.conversation_id], src, ref))
            seen[rec.conversation_id] += 1
    return out


@dataclass
class CorpusSplit:
    train: List[Record]
    val: List[Record]
    test: List[Record]

    def manifest(self) -> Dict[str, List[str]]:
        ids = lambda recs: sorted({r.conversation_id for r in recs})  # noqa: E731
        return {"train": ids(self.train), "val": ids(self.val), "test": ids(self.test)}


def split_corpus(records: Sequence[Record], seed: int = 0,
                 fractions: Tuple[float, float, float] = (0.8, 0.1, 0.1)) -> CorpusSplit:
    """Partition by conversation id so no conversation straddles two splits."""
    conv_ids = sorted({r.conversation_id for r in records})
    order = np.random.default_rng(seed).permutation(len(conv_ids))
    shuffled = [conv_ids[i] for i in order]
    n = len(shuffled)
    n_train = int(round(fractions[0] * n))
    n_val = int(round(fractions[1] * n))
    if n >= 3:
        n_train = min(max(n_train, 1), n - 2)
        n_val = min(max(n_val, 1), n - n_train - 1)
    groups = {cid: "train" for cid in shuffled[:n_train]}
    groups.update({cid: "val" for cid in shuffled[n_train:n_train + n_val]})
    groups.update({cid: "test" for cid in shuffled[n_train + n_val:]})
    split = CorpusSplit([], [], [])
    for rec in records:
        getattr(split, groups[rec.conversation_id]).append(rec)
    return split


def apply_manifest(records: Sequence[Record], manifest: Mapping[str, Sequence[str]]) -> CorpusSplit:
    where = {}
    for part in ("train", "val", "test"):
        for cid in manifest.get(part, []):
            if cid in where:
                raise CorpusError(f"conversation {cid} listed in both {where[cid]} and {part}")
            where[cid] = part
    split = CorpusSplit([], [], [])
    for rec in records:
        if rec.conversation_id in where:
            getattr(split, where[rec.conversation_id]).append(rec)
    return split


# ---------------------------------------------------------------------------
# synthetic data

_QUESTIONS = (
    "do you have {c} ?",
    "any {c} ?",
    "have you had any {c} lately ?",
    "are you experiencing {c} ?",
    "did you notice any {c} ?",
)
_PAIR_QUESTIONS = (
    "do you have {c} or {c2} ?",
    "any {c} or {c2} ?",
    "have you noticed {c} or {c2} ?",
)
_DURATIONS = ("two days", "a week", "last night", "3 days", "a month", "this morning")

# (patient answer, summary sentence)
_AFFIRMATIVE = (
    ("yes", "has {c}"),
    ("yes , i have {c}", "has {c}"),
    ("yes , since {d}", "has {c} since {d}"),
    ("yeah for {d} now", "has {c} for {d}"),
    ("yes , not sure why", "has {c}"),
    ("i do , no idea why", "has {c}"),
    ("yes , the {c} started {d}", "has {c} . started {d}"),
)
_NEGATIVE = (
    ("no", "[NO] no {c}"),
    ("nope", "[NO] no {c}"),
    ("no , not at all", "[NO] no {c}"),
    ("not really", "[NO] no {c}"),
    ("nope , i feel fine", "[NO] no {c}"),
    ("no , it doesn't", "[NO] no {c}"),
    ("no {c} , no", "[NO] no {c}"),
)
# two-concept answers keyed by which concepts are negated
_PAIR_ANSWERS = {
    (False, False): (("yes , both", "has {c} . has {c2}"),
                     ("both , for {d}", "has {c} . has {c2} for {d}"),),
    (True, False): (("no {c} , but i have {c2}", "[NO] no {c} . has {c2}"),
                    ("just the {c2} , since {d}", "[NO] no {c} . has {c2} since {d}")),
    (False, True): (("{c} yes , but no {c2}", "has {c} . [NO] no {c2}"),
                    ("only {c} , not {c2}", "has {c} . [NO] no {c2}")),
    (True, True): (("no , neither", "[NO] no {c} . [NO] no {c2}"),
                   ("nope , none of that", "[NO] no {c} . [NO] no {c2}")),
}
_PREAMBLES = ("i see .", "thanks for the details .", "i appreciate your concern .",
              "that is helpful to know .", "understood , a few more questions .",
              "okay , let me check something .")
# patient small talk; some lines carry negation words that negate nothing
_ELABORATIONS = ("it has been a rough week .", "i have been drinking lots of fluids .",
                 "my sister had something similar .", "i am worried about work .",
                 "i did not sleep well .", "i can't focus at work .",
                 "i took some rest today .", "nothing helps much .",
                 "i don't know if it matters .")
_FOLLOW_UPS = ("okay .", "thanks for letting me know .", "alright , noted .")

NEGATED_FRACTION = 0.3
PAIR_FRACTION = 0.3
SNIPPETS_PER_CONVERSATION = (1, 4)


def _pick(rng, options):
    return options[int(rng.integers(len(options)))]


def generate_synthetic_corpus(
    seed: int,
    n_examples: int,
    concepts: ConceptLexicon | None = None,
    negations: Iterable[str] = DEFAULT_NEGATIONS,
    negated_fraction: float = NEGATED_FRACTION,
) -> List[Record]:
    """Templated question/answer snippets over the concept lexicon.

    Each record is one snippet; consecutive records share a conversation id
    in groups of 1 to 4.  About ``negated_fraction`` of snippets deny at
    least one concept, and each denied concept gets a [NO] sentence.  Some
    questions ask about two concepts with mixed answers, and patient small
    talk sometimes holds negation words that negate nothing.
    """
    if n_examples < 1:
        raise ConfigurationError("n_examples must be at least 1")
    concepts = default_concepts() if concepts is None else concepts
    if not concepts:
        raise ConfigurationError("concept lexicon is empty")
    if not frozenset(negations):
        raise ConfigurationError("negation lexicon is empty")
    rng = np.random.default_rng(seed)
    terms = concepts.surface_forms()
    records: List[Record] = []
    conv = 0
    left_in_conv = 0
    for _ in range(n_examples):
        if left_in_conv == 0:
            conv += 1
            lo, hi = SNIPPETS_PER_CONVERSATION
            left_in_conv = int(rng.integers(lo, hi + 1))
        left_in_conv -= 1
        term = _pick(rng, terms)
        dur = _pick(rng, _DURATIONS)
        negated = rng.random() < negated_fraction
        if len(terms) > 1 and rng.random() < PAIR_FRACTION:
            other = _pick(rng, [t for t in terms if t != term])
            if negated:
                polarity = _pick(rng, [(True, False), (False, True), (True, True)])
            else:
                polarity = (False, False)
            question = _pick(rng, _PAIR_QUESTIONS)
            answer, summary = _pick(rng, _PAIR_ANSWERS[polarity])
        else:
            other = term
            question = _pick(rng, _QUESTIONS)
            answer, summary = _pick(rng, _NEGATIVE if negated else _AFFIRMATIVE)
        fill = dict(c=term, c2=other, d=dur)
        question = question.format(**fill)
        if rng.random() < 0.4:
            question = f"{_pick(rng, _PREAMBLES)} {question}"
        answer = answer.format(**fill)
        if rng.random() < 0.5:
            answer = f"{answer} . {_pick(rng, _ELABORATIONS)}"
        turns = [Turn(DOCTOR, question), Turn(PATIENT, answer)]
        if rng.random() < 0.25:
            turns.append(Turn(DOCTOR, _pick(rng, _FOLLOW_UPS)))
        records.append(Record(f"conv{seed}-{conv:05d}", turns, [summary.format(**fill)]))
    return records
