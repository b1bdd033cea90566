import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from medsum import autodiff as ad
from medsum import corpus as C
from medsum import model as M

NO_ID = C.Vocabulary.no_id


def tiny(variant="3M-PGEN-NEG-CONCEPT", V=12, E=4, H=5, seed=0, **kw):
    return M.ModelConfig.for_variant(variant, vocab_size=V, emb_dim=E, hidden_dim=H, seed=seed, **kw)


def tiny_vocab(V=12):
    return C.Vocabulary(list(C.RESERVED) + ["no", "fever", "has", "cough", "."]
                        + [f"w{i}" for i in range(V - 10)])


def tiny_example(vocab, source="has no fever zz".split(), reference="[NO] no fever".split()):
    lex = C.ConceptLexicon({"fever": "C1"})
    return C.index_example(source, reference, vocab, lex)


def zero_params(config):
    return {k: np.zeros_like(v) for k, v in M.init_params(config).items()}


# -- config and parameters ------------------------------------------------------

def test_variant_names_round_trip():
    for name, flags in M.VARIANTS.items():
        cfg = tiny(name)
        assert cfg.variant == name and cfg.flags == flags


def test_unknown_variant():
    with pytest.raises(M.VariantError):
        M.ModelConfig.for_variant("4M")


def test_feature_weights_follow_flags():
    base = M.init_params(tiny("2M-BASE"))
    full = M.init_params(tiny("3M-PGEN-NEG-CONCEPT"))
    assert "attn.w_m" not in base and "attn.w_n" not in base
    assert full["attn.w_m"].shape == full["attn.w_n"].shape == (10,)
    assert base["switch.b"].shape == (1,) and full["switch.b"].shape == (3,)


def test_full_scale_attention_dimension():
    cfg = M.ModelConfig.for_variant("3M-PGEN-NEG-CONCEPT", vocab_size=50)
    assert (cfg.emb_dim, cfg.hidden_dim, cfg.attention_dim) == (128, 256, 512)


def test_init_is_seeded_and_bounded():
    a, b = M.init_params(tiny(seed=3)), M.init_params(tiny(seed=3))
    assert all(a[k].tobytes() == b[k].tobytes() for k in a)
    assert max(np.abs(v).max() for v in a.values()) <= 0.1


# -- encoder and attention --------------------------------------------------------

def test_length_one_source_shape():
    cfg = tiny()
    enc = M.encode([5], M.wrap_params(M.init_params(cfg)), cfg)
    assert enc.states.shape == (1, 2 * cfg.hidden_dim)


def test_zero_params_give_identical_states():
    cfg = tiny()
    enc = M.encode([5, 6, 7, 8], M.wrap_params(zero_params(cfg)), cfg)
    np.testing.assert_array_equal(enc.states.value, np.zeros_like(enc.states.value))


def test_empty_source_is_a_contract_error():
    cfg = tiny()
    with pytest.raises(ad.ContractError):
        M.encode([], M.wrap_params(M.init_params(cfg)), cfg)


def test_zero_params_give_uniform_attention():
    cfg = tiny()
    P = M.wrap_params(zero_params(cfg))
    enc = M.encode([5, 6, 7], P, cfg)
    _, a = M.attention(enc, ad.constant(np.zeros(cfg.hidden_dim)), np.zeros(3), None, None, P)
    np.testing.assert_allclose(a.value, np.full(3, 1 / 3), rtol=0, atol=1e-15)


def test_concept_indicator_raises_attention():
    cfg = tiny()
    params = zero_params(cfg)
    params["attn.w_m"][:] = 1.0
    params["attn.v"][:] = 1.0
    P = M.wrap_params(params)
    enc = M.encode([5, 5], P, cfg)
    _, a = M.attention(enc, ad.constant(np.zeros(cfg.hidden_dim)), np.zeros(2), np.array([0.0, 1.0]), None, P)
    assert a.value[1] > a.value[0]


def test_zero_coverage_matches_coverage_free_scores():
    cfg = tiny()
    params = M.init_params(cfg)
    enc = M.encode([5, 6, 7], M.wrap_params(params), cfg)
    s = ad.constant(np.random.default_rng(0).normal(size=cfg.hidden_dim))
    scores, _ = M.attention(enc, s, np.zeros(3), None, None, M.wrap_params(params))
    no_cov = dict(params, **{"attn.w_c": np.zeros_like(params["attn.w_c"])})
    scores2, _ = M.attention(enc, s, np.zeros(3), None, None, M.wrap_params(no_cov))
    np.testing.assert_array_equal(scores.value, scores2.value)


def test_attention_length_mismatch():
    cfg = tiny()
    P = M.wrap_params(M.init_params(cfg))
    enc = M.encode([5, 6, 7], P, cfg)
    with pytest.raises(ad.DimensionError):
        M.attention(enc, ad.constant(np.zeros(cfg.hidden_dim)), np.zeros(2), None, None, P)


# -- mixture and coverage ------------------------------------------------------------

def test_mixture_heads():
    np.testing.assert_array_equal(M.mixture_from_logits(ad.constant(np.zeros(1)), False).value, [0.5, 0.5, 0.0])
    np.testing.assert_allclose(M.mixture_from_logits(ad.constant(np.zeros(3)), True).value,
                               np.full(3, 1 / 3), rtol=0, atol=1e-15)


def test_coverage_running_sum():
    step = M.DecoderStep(None, None, None, ad.constant(np.zeros(2)), ad.constant(np.array([0.7, 0.3])))
    step = M.advance_coverage(step)
    step.attention = ad.constant(np.array([0.2, 0.8]))
    np.testing.assert_allclose(M.advance_coverage(step).coverage.value, [0.9, 1.1], rtol=0, atol=1e-15)


def test_forward_coverage_is_sum_of_previous_attention():
    cfg = tiny()
    vocab = tiny_vocab()
    ex = tiny_example(vocab, reference="has fever . [NO] no cough".split())
    steps = M.forward(ex, M.wrap_params(M.init_params(cfg)), cfg)
    running = np.zeros(len(ex.source_tokens))
    for out in steps:
        np.testing.assert_allclose(out.coverage.value, running, rtol=0, atol=1e-14)
        running = running + out.attention.value
    assert len(steps) == len(ex.targets)


# -- extended distribution -----------------------------------------------------------

def test_two_mixture_hand_case():
    # fixed vocab (has, no, .); source (no, fever) with fever out of vocabulary
    dist = M.extended_distribution(np.array([0.5, 0.3, 0.2]), np.array([0.7, 0.3]),
                                   np.array([0.4, 0.6, 0.0]), [1, 3], 4, no_id=0).value
    np.testing.assert_allclose(dist, [0.20, 0.54, 0.08, 0.18], rtol=0, atol=1e-12)


def test_three_mixture_hand_case():
    # fixed vocab (has, no, ., [NO]); the [NO] entry of P_vocab is masked to zero
    dist = M.extended_distribution(np.array([0.5, 0.3, 0.2, 0.0]), np.array([0.7, 0.3]),
                                   np.array([0.2, 0.5, 0.3]), [1, 4], 5, no_id=3).value
    np.testing.assert_allclose(dist, [0.10, 0.41, 0.04, 0.30, 0.15], rtol=0, atol=1e-12)
    assert dist.sum() == pytest.approx(1.0, abs=1e-12)


def test_pure_generation_pads_oovs_with_zeros():
    pv = np.array([0.1, 0.2, 0.3, 0.4, 0.0])
    dist = M.extended_distribution(pv, np.array([0.5, 0.5]), np.array([1.0, 0.0, 0.0]), [2, 6], 7).value
    np.testing.assert_array_equal(dist, np.concatenate([pv, [0.0, 0.0]]))


def test_source_id_outside_extended_range():
    with pytest.raises(ad.ContractError):
        M.extended_distribution(np.full(5, 0.2), np.array([1.0]), np.array([0.5, 0.5, 0.0]), [9], 7)


def test_three_mixture_never_generates_marker():
    cfg = tiny("3M")
    vocab = tiny_vocab()
    ex = tiny_example(vocab)
    P = M.wrap_params(M.init_params(cfg))
    enc = M.encode(ex.source_ids, P, cfg)
    _, p_vocab, _ = M.decoder_step(C.Vocabulary.start_id, M.initial_step(enc, cfg), enc, None, None, P, cfg)
    assert p_vocab.value[NO_ID] == 0.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.booleans())
def test_extended_distribution_gradients(seed, three):
    rng = np.random.default_rng(seed)
    V, L = 6, 4
    ids = rng.integers(0, V + 2, size=L)
    ids[0] = V + 1
    w = rng.normal(size=V + 2)

    def f(p):
        pv = ad.softmax(ad.parameter(p["lv"], "lv"))
        a = ad.softmax(ad.parameter(p["la"], "la"))
        mix = M.mixture_from_logits(ad.parameter(p["lm"], "lm"), three)
        return ad.dot(M.extended_distribution(pv, a, mix, ids, V + 2), w)

    params = {"lv": rng.normal(size=V), "la": rng.normal(size=L), "lm": rng.normal(size=3 if three else 1)}
    # exactly-zero gradients leave ~1e-13 of round-off against the 1e-8 floor
    assert ad.finite_diff_check(f, params) < 1e-4


# -- decoding ------------------------------------------------------------------------

def test_copy_only_decoding_stays_in_source():
    cfg = tiny("3M")
    vocab = tiny_vocab()
    params = M.init_params(cfg)
    ex = tiny_example(vocab, source="w0 zz fever w1".split())
    out = M.decode_greedy(ex, params, cfg, vocab, max_len=8, mixture_override=(0.0, 1.0, 0.0))
    assert out.tokens and set(out.tokens) <= set(ex.source_tokens)


def test_max_len_one():
    cfg = tiny()
    vocab = tiny_vocab()
    out = M.decode_greedy(tiny_example(vocab), M.init_params(cfg), cfg, vocab, max_len=1)
    assert len(out.ids) + out.stopped == 1


def test_beam_one_is_greedy():
    cfg = tiny()
    vocab = tiny_vocab()
    ex = tiny_example(vocab)
    params = M.init_params(cfg)
    g = M.decode_greedy(ex, params, cfg, vocab, max_len=6)
    b = M.decode_beam(ex, params, cfg, vocab, beam=1, max_len=6)
    assert (g.ids, g.log_prob, g.stopped) == (b.ids, b.log_prob, b.stopped)


def test_beam_must_be_positive():
    cfg = tiny()
    vocab = tiny_vocab()
    with pytest.raises(ad.ContractError):
        M.decode_beam(tiny_example(vocab), M.init_params(cfg), cfg, vocab, beam=0)


def test_equal_scores_resolve_to_smallest_ids():
    cfg = tiny("2M-BASE")
    vocab = tiny_vocab()
    # zero weights and pure generation: every sequence of a given length ties
    out = M.decode_beam(tiny_example(vocab), zero_params(cfg), cfg, vocab, beam=2, max_len=3,
                        mixture_override=(1.0, 0.0, 0.0))
    assert out.ids == [0, 0, 0]


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 10_000), st.sampled_from(sorted(M.VARIANTS)), st.integers(2, 4))
def test_beam_scores_at_least_greedy(seed, variant, beam):
    cfg = tiny(variant, seed=seed)
    vocab = tiny_vocab()
    rng = np.random.default_rng(seed)
    params = {k: v * 30 for k, v in M.init_params(cfg).items()}  # peaky distributions
    src = [vocab.itos[int(i)] for i in rng.integers(5, 12, size=4)] + ["zz"]
    ex = C.index_example(src, ["has"], vocab)
    g = M.decode_greedy(ex, params, cfg, vocab, max_len=5)
    b = M.decode_beam(ex, params, cfg, vocab, beam=beam, max_len=5)
    assert b.score >= g.score - 1e-12


def test_decoding_is_deterministic():
    cfg = tiny()
    vocab = tiny_vocab()
    ex = tiny_example(vocab)
    params = M.init_params(cfg)
    a = M.decode_beam(ex, params, cfg, vocab, beam=3, max_len=6)
    b = M.decode_beam(ex, params, cfg, vocab, beam=3, max_len=6)
    assert (a.ids, a.log_prob) == (b.ids, b.log_prob)


def test_mean_mixture_is_a_distribution():
    cfg = tiny()
    vocab = tiny_vocab()
    out = M.decode_greedy(tiny_example(vocab), M.init_params(cfg), cfg, vocab, max_len=4)
    mix = out.mean_mixture()
    assert mix.p_gen + mix.p_copy + mix.p_neg == pytest.approx(1.0)


def test_corpus_mixture_pools_steps():
    short = M.DecodeResult([1], ["a"], 0.0, [M.MixtureWeights(1.0, 0.0, 0.0)], False)
    long = M.DecodeResult([1, 1, 1], ["a"] * 3, 0.0, [M.MixtureWeights(0.0, 1.0, 0.0)] * 3, False)
    mix, steps = M.corpus_mixture([short, long])
    assert steps == 4 and mix.p_gen == pytest.approx(0.25) and mix.p_copy == pytest.approx(0.75)
    assert M.corpus_mixture([]) == (M.MixtureWeights(0.0, 0.0, 0.0), 0)
