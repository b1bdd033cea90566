# Force the copy distribution and watch the decoder stay inside the source,
# including for a word the vocabulary has never seen.
from medsum import corpus as C
from medsum import model as M

vocab = C.Vocabulary(list(C.RESERVED) + "has no fever cough .".split())
ex = C.index_example("i have had a zorbitic rash since monday".split(), ["has", "zorbitic", "rash"],
                     vocab, C.default_concepts())
config = M.ModelConfig.for_variant("3M-PGEN-NEG-CONCEPT", vocab_size=len(vocab), emb_dim=8, hidden_dim=8)
params = M.init_params(config)
for mix in [None, (0.0, 1.0, 0.0)]:
    out = M.decode_greedy(ex, params, config, vocab, max_len=6, mixture_override=mix)
    print("override" if mix else "untrained", out.tokens)
