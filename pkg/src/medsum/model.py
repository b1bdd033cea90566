"""Pointer-generator summariser with coverage, concept/negation attention
features and a two- or three-way output mixture.

Parameters live in a flat ``dict`` of named float64 arrays.  Every forward
function takes that dict wrapped by :func:`wrap_params`: as named parameter
nodes when gradients are needed, as constants for inference.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from . import autodiff as ad
from .autodiff import ContractError, DimensionError, Node
from .corpus import IndexedExample, Vocabulary
from .layers import uniform_init

VARIANTS: Dict[str, Dict[str, bool]] = {
    "2M-BASE": dict(use_pgen_penalty=False, use_concept_attention=False,
                    use_negation_attention=False, use_three_mixture=False),
    "2M-PGEN": dict(use_pgen_penalty=True, use_concept_attention=False,
                    use_negation_attention=False, use_three_mixture=False),
    "2M-PGEN-NEG": dict(use_pgen_penalty=True, use_concept_attention=False,
                        use_negation_attention=True, use_three_mixture=False),
    "3M": dict(use_pgen_penalty=False, use_concept_attention=False,
               use_negation_attention=False, use_three_mixture=True),
    "3M-NEG": dict(use_pgen_penalty=False, use_concept_attention=False,
                   use_negation_attention=True, use_three_mixture=True),
    "3M-PGEN-NEG-CONCEPT": dict(use_pgen_penalty=True, use_concept_attention=True,
                                use_negation_attention=True, use_three_mixture=True),
}

_MASKED_LOGIT = -1e30


class VariantError(ValueError):
    pass


@dataclass
class ModelConfig:
    vocab_size: int = 50000
    emb_dim: int = 128
    hidden_dim: int = 256
    use_pgen_penalty: bool = False
    use_concept_attention: bool = False
    use_negation_attention: bool = False
    use_three_mixture: bool = False
    beam_size: int = 4
    max_decode_len: int = 30
    seed: int = 0

    def __post_init__(self):
        if min(self.vocab_size, self.emb_dim, self.hidden_dim) <= 0:
            raise ValueError("model dimensions must be positive")
        if self.vocab_size <= Vocabulary.no_id:
            raise ValueError("vocabulary must hold at least the reserved tokens")

    @classmethod
    def for_variant(cls, name: str, **kwargs) -> "ModelConfig":
        if name not in VARIANTS:
            raise VariantError(f"unknown variant {name!r}; expected one of {', '.join(VARIANTS)}")
        return cls(**{**kwargs, **VARIANTS[name]})

    @property
    def flags(self) -> Dict[str, bool]:
        return {k: getattr(self, k) for k in VARIANTS["2M-BASE"]}

    @property
    def variant(self) -> str:
        for name, flags in VARIANTS.items():
            if flags == self.flags:
                return name
        raise VariantError(f"flag combination {self.flags} is not one of the named variants")

    @property
    def attention_dim(self) -> int:
        return 2 * self.hidden_dim

    @property
    def n_mixture(self) -> int:
        return 3 if self.use_three_mixture else 1

    def to_dict(self) -> dict:
        return asdict(self)


# ---------------------------------------------------------------------------
# parameters


def init_params(config: ModelConfig, seed: Optional[int] = None) -> Dict[str, np.ndarray]:
    """Seeded uniform(-0.1, 0.1) initialisation of every array the variant uses."""
    rng = np.random.default_rng(config.seed if seed is None else seed)
    V, E, H, A, k = (config.vocab_size, config.emb_dim, config.hidden_dim,
                     config.attention_dim, config.n_mixture)
    shapes = {
        "embedding": (V, E),
        "enc_fwd.W_ih": (4 * H, E), "enc_fwd.W_hh": (4 * H, H), "enc_fwd.b": (4 * H,),
        "enc_bwd.W_ih": (4 * H, E), "enc_bwd.W_hh": (4 * H, H), "enc_bwd.b": (4 * H,),
        "reduce_h.W": (H, 2 * H), "reduce_h.b": (H,),
        "reduce_c.W": (H, 2 * H), "reduce_c.b": (H,),
        "dec.W_ih": (4 * H, E + 2 * H), "dec.W_hh": (4 * H, H), "dec.b": (4 * H,),
        "attn.W_h": (A, 2 * H), "attn.W_s": (A, H), "attn.b": (A,),
        "attn.v": (A,), "attn.w_c": (A,),
        "out.W": (V, 3 * H), "out.b": (V,),
        "switch.W_ctx": (k, 2 * H), "switch.W_s": (k, H), "switch.W_x": (k, E), "switch.b": (k,),
    }
    if config.use_concept_attention:
        shapes["attn.w_m"] = (A,)
    if config.use_negation_attention:
        shapes["attn.w_n"] = (A,)
    # fixed draw order keeps initialisation independent of dict ordering
    return {name: uniform_init(rng, shapes[name]) for name in sorted(shapes)}


def count_params(params: Dict[str, np.ndarray]) -> int:
    return int(sum(v.size for v in params.values()))


def wrap_params(params: Dict[str, np.ndarray], trainable: bool = True) -> Dict[str, Node]:
    if trainable:
        return {name: ad.parameter(arr, name) for name, arr in params.items()}
    return {name: ad.constant(arr) for name, arr in params.items()}


# ---------------------------------------------------------------------------
# encoder


@dataclass
class EncoderStates:
    states: Node          # (L, 2H): forward and backward hidden states side by side
    features: Node        # (L, A): W_h applied to every state, reused at each step
    final_h: Node
    final_c: Node

    def __len__(self):
        return self.states.shape[0]


def _run_lstm(rows: Sequence[Node], P: Dict[str, Node], prefix: str, H: int):
    h = ad.constant(np.zeros(H))
    c = ad.constant(np.zeros(H))
    hs = []
    for x in rows:
        h, c = ad.lstm_cell(x, h, c, P[f"{prefix}.W_ih"], P[f"{prefix}.W_hh"], P[f"{prefix}.b"])
        hs.append(h)
    return hs, h, c


def encode(source_ids: Sequence[int], P: Dict[str, Node], config: ModelConfig) -> EncoderStates:
    """Bidirectional LSTM over the embedded source."""
    if len(source_ids) == 0:
        raise ContractError("cannot encode an empty source")
    H = config.hidden_dim
    X = ad.embed(P["embedding"], source_ids)
    rows = [ad.row(X, i) for i in range(len(source_ids))]
    fwd, hf, cf = _run_lstm(rows, P, "enc_fwd", H)
    bwd, hb, cb = _run_lstm(rows[::-1], P, "enc_bwd", H)
    states = ad.hconcat(ad.stack(fwd), ad.stack(bwd[::-1]))
    features = ad.matmul_t(states, P["attn.W_h"])
    s0 = ad.tanh(ad.affine(ad.concat([hf, hb]), P["reduce_h.W"], P["reduce_h.b"]))
    c0 = ad.tanh(ad.affine(ad.concat([cf, cb]), P["reduce_c.W"], P["reduce_c.b"]))
    return EncoderStates(states, features, s0, c0)


# ---------------------------------------------------------------------------
# attention and decoder


def attention(enc: EncoderStates, s_t: Node, coverage, concept_mask, negation_mask,
              P: Dict[str, Node]) -> Tuple[Node, Node]:
    """Scores ``v . tanh(W_h h_i + W_s s_t + w_c c_i + w_m m_i + w_n n_i + b)``
    and their softmax.  A feature whose weight is absent from ``P`` is skipped.
    """
    L = len(enc)
    for what, vec in (("coverage", coverage), ("concept mask", concept_mask),
                      ("negation mask", negation_mask)):
        size = vec.shape[0] if vec is not None else L
        if size != L:
            raise DimensionError(f"{what} has length {size}, source has {L}")
    feat = ad.add(enc.features, ad.affine(s_t, P["attn.W_s"], P["attn.b"]))
    feat = ad.add(feat, ad.outer(coverage, P["attn.w_c"]))
    if "attn.w_m" in P and concept_mask is not None:
        feat = ad.add(feat, ad.outer(concept_mask, P["attn.w_m"]))
    if "attn.w_n" in P and negation_mask is not None:
        feat = ad.add(feat, ad.outer(negation_mask, P["attn.w_n"]))
    scores = ad.matvec(ad.tanh(feat), P["attn.v"])
    return scores, ad.softmax(scores)


@dataclass
class DecoderStep:
    state: Node           # s_t
    cell: Node
    context: Node         # h*_t
    coverage: Node        # c^t, the sum of all earlier attention distributions
    attention: Optional[Node] = None
    input: Optional[Node] = None


@dataclass
class MixtureWeights:
    p_gen: float
    p_copy: float
    p_neg: float

    @classmethod
    def from_node(cls, mix: Node) -> "MixtureWeights":
        g, c, n = (float(v) for v in mix.value)
        return cls(g, c, n)


def initial_step(enc: EncoderStates, config: ModelConfig) -> DecoderStep:
    return DecoderStep(
        state=enc.final_h,
        cell=enc.final_c,
        context=ad.constant(np.zeros(2 * config.hidden_dim)),
        coverage=ad.constant(np.zeros(len(enc))),
    )


def mixture_from_logits(logits: Node, three_way: bool) -> Node:
    """``[p_gen, p_copy, p_neg]`` from the switch logits."""
    if three_way:
        return ad.softmax(logits)
    p_gen = ad.sigmoid(logits)
    return ad.concat([p_gen, ad.sub(np.ones(1), p_gen), ad.constant(np.zeros(1))])


def decoder_step(prev_token: int, prev: DecoderStep, enc: EncoderStates,
                 concept_mask, negation_mask, P: Dict[str, Node], config: ModelConfig,
                 mixture_override: Optional[Sequence[float]] = None):
    """One decoding step; returns ``(step, p_vocab, mixture)``.

    ``step.coverage`` is the coverage *used* at this step; the caller adds
    ``step.attention`` to obtain the next one (see :func:`advance_coverage`).
    """
    if prev_token >= config.vocab_size:
        prev_token = Vocabulary.unk_id
    x = ad.row(P["embedding"], prev_token)
    s, cell = ad.lstm_cell(ad.concat([x, prev.context]), prev.state, prev.cell,
                           P["dec.W_ih"], P["dec.W_hh"], P["dec.b"])
    _, a = attention(enc, s, prev.coverage, concept_mask, negation_mask, P)
    context = ad.vecmat(a, enc.states)
    logits = ad.affine(ad.concat([s, context]), P["out.W"], P["out.b"])
    if config.use_three_mixture:
        # [NO] is reachable only through the negation switch
        mask = np.zeros(config.vocab_size)
        mask[Vocabulary.no_id] = _MASKED_LOGIT
        logits = ad.add(logits, mask)
    p_vocab = ad.softmax(logits)
    if mixture_override is not None:
        mix = ad.constant(np.asarray(mixture_override, dtype=np.float64))
    else:
        switch = ad.add(ad.add(ad.matvec(P["switch.W_ctx"], context), ad.matvec(P["switch.W_s"], s)),
                        ad.add(ad.matvec(P["switch.W_x"], x), P["switch.b"]))
        mix = mixture_from_logits(switch, config.use_three_mixture)
    step = DecoderStep(state=s, cell=cell, context=context, coverage=prev.coverage,
                       attention=a, input=x)
    return step, p_vocab, mix


def advance_coverage(step: DecoderStep) -> DecoderStep:
    """Carry the step forward with ``c^{t+1} = c^t + a^t``."""
    return DecoderStep(step.state, step.cell, step.context,
                       ad.add(step.coverage, step.attention))


def extended_distribution(p_vocab, attn, mixture, source_ext_ids: Sequence[int],
                          extended_size: int, no_id: int = Vocabulary.no_id) -> Node:
    """``p_gen * P_vocab + p_copy * sum_{i: w_i = w} a_i + p_neg * [w == [NO]]``.

    ``p_vocab`` covers the fixed vocabulary; copy mass for source position
    ``i`` lands on ``source_ext_ids[i]``, which may point past the fixed
    vocabulary at an out-of-vocabulary source word.
    """
    p_vocab, attn, mixture = ad._as_node(p_vocab), ad._as_node(attn), ad._as_node(mixture)
    ids = np.asarray(source_ext_ids, dtype=np.int64)
    V = p_vocab.shape[0]
    if ids.shape != attn.shape:
        raise DimensionError(f"attention {attn.shape} does not match source ids {ids.shape}")
    if extended_size < V or (ids.size and (ids.min() < 0 or ids.max() >= extended_size)):
        raise ContractError(f"source ids must lie in 0..{extended_size - 1}")
    if not 0 <= no_id < V:
        raise ContractError(f"[NO] id {no_id} is outside the fixed vocabulary")
    g, c, n = mixture.value
    dist = np.zeros(extended_size)
    dist[:V] = g * p_vocab.value
    np.add.at(dist, ids, c * attn.value)
    dist[no_id] += n

    def bw(grad):
        gv = grad[:V]
        gi = grad[ids]
        return g * gv, c * gi, np.array([gv @ p_vocab.value, gi @ attn.value, grad[no_id]])

    return ad._make(dist, (p_vocab, attn, mixture), bw)


# ---------------------------------------------------------------------------
# teacher-forced forward pass


@dataclass
class StepOutput:
    distribution: Node
    attention: Node
    coverage: Node
    mixture: Node


def _masks(example: IndexedExample, config: ModelConfig, training: bool):
    m = n = None
    if config.use_concept_attention:
        # concept presence comes from the reference, so it is unavailable at test time
        m = example.concept_mask if training else np.zeros_like(example.concept_mask)
    if config.use_negation_attention:
        n = example.negation_mask
    return m, n


def forward(example: IndexedExample, P: Dict[str, Node], config: ModelConfig,
            training: bool = True) -> List[StepOutput]:
    """Teacher-forced pass over ``[START] + reference``, one output per target."""
    enc = encode(example.source_ids, P, config)
    m, n = _masks(example, config, training)
    step = initial_step(enc, config)
    outputs = []
    for prev in example.decoder_inputs:
        step, p_vocab, mix = decoder_step(int(prev), step, enc, m, n, P, config)
        dist = extended_distribution(p_vocab, step.attention, mix, example.source_ext_ids,
                                     example.extended_size)
        outputs.append(StepOutput(dist, step.attention, step.coverage, mix))
        step = advance_coverage(step)
    return outputs


# ---------------------------------------------------------------------------
# decoding


@dataclass
class Hypothesis:
    ids: Tuple[int, ...]
    log_prob: float
    step: DecoderStep
    mixtures: Tuple[MixtureWeights, ...] = ()
    finished: bool = False

    @property
    def length(self) -> int:
        return len(self.ids)

    @property
    def score(self) -> float:
        return self.log_prob / max(1, self.length)


@dataclass
class DecodeResult:
    ids: List[int]
    tokens: List[str]
    log_prob: float
    mixtures: List[MixtureWeights] = field(default_factory=list)
    stopped: bool = False

    @property
    def score(self) -> float:
        """Length-normalised log-probability (STOP counts towards length)."""
        n = len(self.ids) + (1 if self.stopped else 0)
        return self.log_prob / max(1, n)

    def mean_mixture(self) -> MixtureWeights:
        if not self.mixtures:
            return MixtureWeights(0.0, 0.0, 0.0)
        arr = np.array([[w.p_gen, w.p_copy, w.p_neg] for w in self.mixtures])
        return MixtureWeights(*(float(v) for v in arr.mean(axis=0)))


def corpus_mixture(results: Sequence[DecodeResult]) -> Tuple[MixtureWeights, int]:
    """Mixture weights averaged over every decode step of every result,
    so long summaries weigh more than short ones.  Also returns the step count."""
    steps = [[w.p_gen, w.p_copy, w.p_neg] for r in results for w in r.mixtures]
    if not steps:
        return MixtureWeights(0.0, 0.0, 0.0), 0
    return MixtureWeights(*(float(v) for v in np.mean(steps, axis=0))), len(steps)


def ids_to_tokens(ids: Sequence[int], vocab: Vocabulary, oovs: Sequence[str]) -> List[str]:
    V = len(vocab)
    return [vocab.token(i) if i < V else oovs[i - V] for i in ids]


def _expand(hyp: Hypothesis, enc, n_mask, example, P, config, mixture_override):
    step, p_vocab, mix = decoder_step(hyp.ids[-1] if hyp.ids else Vocabulary.start_id,
                                      hyp.step, enc, None, n_mask, P, config, mixture_override)
    dist = extended_distribution(p_vocab, step.attention, mix, example.source_ext_ids,
                                 example.extended_size).value
    return advance_coverage(step), dist, MixtureWeights.from_node(mix)


def _decode_setup(example, params, config):
    P = wrap_params(params, trainable=False)
    enc = encode(example.source_ids, P, config)
    _, n_mask = _masks(example, config, training=False)
    return P, enc, n_mask


def decode_greedy(example: IndexedExample, params: Dict[str, np.ndarray], config: ModelConfig,
                  vocab: Vocabulary, max_len: Optional[int] = None,
                  mixture_override: Optional[Sequence[float]] = None) -> DecodeResult:
    """Argmax decoding (ties to the smallest id) until STOP or ``max_len`` tokens."""
    max_len = config.max_decode_len if max_len is None else max_len
    P, enc, n_mask = _decode_setup(example, params, config)
    hyp = Hypothesis((), 0.0, initial_step(enc, config))
    ids, mixtures, logp, stopped = [], [], 0.0, False
    for _ in range(max_len):
        nxt, dist, mw = _expand(hyp, enc, n_mask, example, P, config, mixture_override)
        best = int(np.argmax(dist))
        logp += math.log(max(dist[best], ad.LOG_FLOOR))
        mixtures.append(mw)
        if best == Vocabulary.stop_id:
            stopped = True
            break
        ids.append(best)
        hyp = Hypothesis(tuple(ids), logp, nxt)
    return DecodeResult(ids, ids_to_tokens(ids, vocab, example.oovs), logp, mixtures, stopped)


def decode_beam(example: IndexedExample, params: Dict[str, np.ndarray], config: ModelConfig,
                vocab: Vocabulary, beam: Optional[int] = None, max_len: Optional[int] = None,
                mixture_override: Optional[Sequence[float]] = None) -> DecodeResult:
    """Beam search returning the best hypothesis by length-normalised log-prob.

    Candidates are ranked by (score, id sequence) so equal scores resolve to
    the lexicographically smaller sequence.  STOP counts towards the length
    of a finished hypothesis.
    """
    beam = config.beam_size if beam is None else beam
    if beam < 1:
        raise ContractError("beam size must be at least 1")
    if beam == 1:
        return decode_greedy(example, params, config, vocab, max_len, mixture_override)
    max_len = config.max_decode_len if max_len is None else max_len
    P, enc, n_mask = _decode_setup(example, params, config)
    live = [Hypothesis((), 0.0, initial_step(enc, config))]
    done: List[Hypothesis] = []
    for _ in range(max_len):
        candidates = []
        for hyp in live:
            nxt, dist, mw = _expand(hyp, enc, n_mask, example, P, config, mixture_override)
            logd = np.log(np.maximum(dist, ad.LOG_FLOOR))
            order = np.lexsort((np.arange(dist.size), -logd))[: beam + 1]
            for tok in order:
                tok = int(tok)
                lp = hyp.log_prob + float(logd[tok])
                mixes = hyp.mixtures + (mw,)
                if tok == Vocabulary.stop_id:
                    candidates.append(Hypothesis(hyp.ids + (tok,), lp, nxt, mixes, True))
                else:
                    candidates.append(Hypothesis(hyp.ids + (tok,), lp, nxt, mixes))
        candidates.sort(key=lambda h: (-h.log_prob, h.ids))
        live = []
        for h in candidates:
            if h.finished:
                done.append(h)
            elif len(live) < beam:
                live.append(h)
            if len(live) == beam:
                break
        if len(done) >= beam or not live:
            break
    pool = done + live
    best = min(pool, key=lambda h: (-h.score, h.ids))
    ids = [i for i in best.ids if i != Vocabulary.stop_id] if best.finished else list(best.ids)
    result = DecodeResult(ids, ids_to_tokens(ids, vocab, example.oovs), best.log_prob,
                          list(best.mixtures), best.finished)
    # pruning can lose the greedy path; never return anything that scores worse
    greedy = decode_greedy(example, params, config, vocab, max_len, mixture_override)
    if (-greedy.score, _full_ids(greedy)) < (-result.score, _full_ids(result)):
        return greedy
    return result


def _full_ids(result: DecodeResult) -> Tuple[int, ...]:
    return tuple(result.ids) + ((Vocabulary.stop_id,) if result.stopped else ())
