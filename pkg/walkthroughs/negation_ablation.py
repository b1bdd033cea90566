"""Negation F1 of the 3-mixture variants against the 2-mixture baseline.

Roughly three minutes per seed.
"""

import statistics
import sys

from medsum import experiments as X
from medsum.corpus import NO

VARIANTS = ("2M-BASE", "3M", "3M-NEG", "3M-PGEN-NEG-CONCEPT")

seeds = [int(s) for s in sys.argv[1:]] or [0, 1, 2]
scores = {v: [] for v in VARIANTS}
for seed in seeds:
    data = X.synthetic_dataset(seed, 800, fractions=(0.5, 0.1, 0.4), negated_fraction=0.35)
    share = sum(NO in ex.reference_tokens for ex in data.test) / len(data.test)
    print(f"seed {seed}: {len(data.test)} test snippets, {share:.0%} negated")
    for v in VARIANTS:
        run = X.run_variant(data, v, seed, epochs=8, patience=None)
        scores[v].append(run.metrics["negation_f1"])
        print(f"  {v:22s} negation F1 {run.metrics['negation_f1']:.3f}"
              f"  mean p_neg {run.mean_p_neg:.3f}")
for v in VARIANTS:
    print(f"{v:22s} median {statistics.median(scores[v]):.3f}")
