"""Command line: gendata | train | decode | eval | gradcheck.

Exit codes: 0 success, 1 check failure, 2 usage or configuration error,
3 numeric failure.  Every command is a pure function of its flags, config,
input files and seed.
"""

from __future__ import annotations

import argparse
import configparser
import json
import logging
import os
import sys
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence

from . import autodiff as ad
from . import checkpoint
from . import corpus as C
from .gradcheck import MAX_CLI_PARAMS, loss_gradient_error, toy_example, toy_vocabulary
from .losses import LossWeights
from .metrics import evaluate_corpus
from .model import VARIANTS, ModelConfig, VariantError, corpus_mixture, count_params, init_params
from .training import TrainConfig, TrainingDiverged, decode_all, format_log, train

EXIT_OK, EXIT_CHECK, EXIT_USAGE, EXIT_NUMERIC = 0, 1, 2, 3
SEED_ENV = "MEDSUM_SEED"

log = logging.getLogger("medsum")


class UsageError(Exception):
    """Bad flags, config or inputs; maps to exit code 2."""


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, ensure_ascii=False) + "\n", encoding="utf-8")


def _write_jsonl(path: Path, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    text = "".join(json.dumps(r, sort_keys=True, ensure_ascii=False) + "\n" for r in rows)
    path.write_text(text, encoding="utf-8")


def _env_seed() -> Optional[int]:
    raw = os.environ.get(SEED_ENV)
    if raw is None or raw == "":
        return None
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _lexicons(concepts: Optional[str], negations: Optional[str]):
    for label, path in (("concept", concepts), ("negation", negations)):
        if path is not None and not Path(path).is_file():
            raise UsageError(f"{label} lexicon not found: {path}")
    lex = C.ConceptLexicon.load(concepts) if concepts else C.default_concepts()
    neg = C.load_negations(negations) if negations else C.DEFAULT_NEGATIONS
    return lex, neg


# ---------------------------------------------------------------------------
# run configuration


def _optional_norm(raw: str) -> Optional[float]:
    if raw.strip().lower() in ("none", "off", "0", "0.0"):
        return None
    value = float(raw)
    if value <= 0:
        raise ValueError(raw)
    return value


@dataclass
class RunConfig:
    """Everything a training run needs, read from an INI file.

    Sections: [run] variant, seeds, out_dir; [model] vocab_size, emb_dim,
    hidden_dim, beam_size, max_decode_len; [loss] coverage, concept,
    negation, pgen, pneg; [train] lr, epochs, batch_size, patience,
    max_grad_norm; [data] train, val, concepts, negations.  Relative paths
    resolve against the config file's directory.
    """

    variant: str = "2M-BASE"
    model: Dict[str, int] = field(default_factory=lambda: dict(
        vocab_size=2000, emb_dim=32, hidden_dim=64, beam_size=4, max_decode_len=30))
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 0.15
    epochs: int = 50
    batch_size: int = 1
    patience: Optional[int] = 5
    max_grad_norm: Optional[float] = 2.0
    seeds: List[int] = field(default_factory=lambda: [0])
    train_path: Optional[Path] = None
    val_path: Optional[Path] = None
    concepts_path: Optional[Path] = None
    negations_path: Optional[Path] = None
    out_dir: Path = Path("run")

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise UsageError(f"unknown variant {self.variant!r}; expected one of {', '.join(VARIANTS)}")
        if not self.seeds:
            raise UsageError("seeds must not be empty")
        if self.lr <= 0 or self.epochs < 1 or self.batch_size < 1:
            raise UsageError("lr must be positive, epochs and batch_size at least 1")

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise UsageError(f"config file not found: {path}")
        cp = configparser.ConfigParser()
        try:
            cp.read(path, encoding="utf-8")
        except configparser.Error as exc:
            raise UsageError(f"cannot parse {path}: {exc}") from exc
        base = path.parent

        def get(section, key, conv=str, default=None):
            if not cp.has_option(section, key):
                return default
            raw = cp.get(section, key).strip()
            if raw.lower() in ("", "none"):
                return None
            try:
                return conv(raw)
            except ValueError:
                raise UsageError(f"[{section}] {key}: cannot read {raw!r}") from None

        def opt_path(section, key):
            raw = get(section, key)
            return None if raw is None else (base / raw)

        cfg = cls()
        model = dict(cfg.model)
        for key in model:
            value = get("model", key, int)
            if value is not None:
                model[key] = value
        try:
            weights = LossWeights(**{k: get("loss", k, float, v)
                                     for k, v in LossWeights().to_dict().items()})
        except ValueError as exc:
            raise UsageError(str(exc)) from exc
        seeds = get("run", "seeds", lambda s: [int(x) for x in s.replace(",", " ").split()], cfg.seeds)
        return cls(
            variant=get("run", "variant", str, cfg.variant),
            model=model,
            weights=weights,
            lr=get("train", "lr", float, cfg.lr),
            epochs=get("train", "epochs", int, cfg.epochs),
            batch_size=get("train", "batch_size", int, cfg.batch_size),
            patience=get("train", "patience", int, None) if cp.has_option("train", "patience") else cfg.patience,
            max_grad_norm=get("train", "max_grad_norm", _optional_norm, cfg.max_grad_norm),
            seeds=seeds,
            train_path=opt_path("data", "train"),
            val_path=opt_path("data", "val"),
            concepts_path=opt_path("data", "concepts"),
            negations_path=opt_path("data", "negations"),
            out_dir=opt_path("run", "out_dir") or base / "run",
        )


# ---------------------------------------------------------------------------
# commands


def cmd_gendata(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be at least 1")
    seed = args.seed if args.seed is not None else (_env_seed() or 0)
    lex, neg = _lexicons(args.concepts, args.negations)
    records = C.generate_synthetic_corpus(seed, args.n, lex, neg)
    split = C.split_corpus(records, seed)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    C.save_corpus(records, out / "corpus.jsonl")
    for part in ("train", "val", "test"):
        C.save_corpus(getattr(split, part), out / f"{part}.jsonl")
    _write_json(out / "splits.json", split.manifest())
    lex.save(out / "concepts.tsv")
    C.save_negations(neg, out / "negations.txt")
    print(f"wrote {len(records)} records to {out}")
    return EXIT_OK


def _load_records(path: Optional[Path], what: str) -> List[C.Record]:
    if path is None:
        raise UsageError(f"config has no [data] {what} path")
    if not Path(path).is_file():
        raise UsageError(f"{what} corpus not found: {path}")
    return C.load_corpus(path)


def cmd_train(args) -> int:
    cfg = RunConfig.from_file(args.config)
    if args.variant:
        if args.variant not in VARIANTS:
            raise UsageError(f"unknown variant {args.variant!r}; expected one of {', '.join(VARIANTS)}")
        cfg.variant = args.variant
    if args.epochs is not None:
        cfg.epochs = args.epochs
    env_seed = _env_seed()
    if args.seed is not None:
        cfg.seeds = [args.seed]
    elif env_seed is not None:
        cfg.seeds = [env_seed]
    out = Path(args.out) if args.out else cfg.out_dir

    lex, neg = _lexicons(cfg.concepts_path, cfg.negations_path)
    train_recs = _load_records(cfg.train_path, "train")
    val_recs = _load_records(cfg.val_path, "val") if cfg.val_path else []
    pairs = [p for r in train_recs for p in r.pairs()]
    vocab = C.build_vocabulary([s for s, _ in pairs] + [r for _, r in pairs], cfg.model["vocab_size"])
    train_ex = C.corpus_examples(train_recs, vocab, lex, neg)
    val_ex = C.corpus_examples(val_recs, vocab, lex, neg)

    for seed in cfg.seeds:
        model_cfg = ModelConfig.for_variant(cfg.variant, **{**cfg.model, "vocab_size": len(vocab)}, seed=seed)
        train_cfg = TrainConfig(lr=cfg.lr, epochs=cfg.epochs, batch_size=cfg.batch_size,
                                patience=cfg.patience, max_grad_norm=cfg.max_grad_norm, seed=seed)
        try:
            result = train(train_ex, model_cfg, cfg.weights, train_cfg, val_examples=val_ex or None)
        except TrainingDiverged as exc:
            print(f"error: training diverged at epoch {exc.epoch}: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        run_dir = out / f"seed{seed}"
        header = {
            "variant": cfg.variant,
            "model": model_cfg.to_dict(),
            "weights": cfg.weights.to_dict(),
            "vocab": vocab.itos,
            "concepts": {" ".join(k): v for k, v in sorted(lex.terms.items())},
            "negations": sorted(neg),
            "seed": seed,
            "best_epoch": result.best_epoch,
        }
        run_dir.mkdir(parents=True, exist_ok=True)
        checkpoint.save(run_dir / "checkpoint.json", result.params, header)
        (run_dir / "log.jsonl").write_text(format_log(result.log), encoding="utf-8")
        print(f"seed {seed}: best epoch {result.best_epoch}, checkpoint {run_dir / 'checkpoint.json'}")
    return EXIT_OK


def _load_checkpoint(path):
    if not Path(path).is_file():
        raise UsageError(f"checkpoint not found: {path}")
    try:
        params, header = checkpoint.load(path)
    except checkpoint.CheckpointError as exc:
        raise UsageError(str(exc)) from exc
    try:
        config = ModelConfig(**header["model"])
        variant = config.variant
    except (KeyError, TypeError, VariantError) as exc:
        raise UsageError(f"checkpoint header is not usable: {exc}") from exc
    if header.get("variant") != variant:
        raise UsageError(f"checkpoint says variant {header.get('variant')!r} but its flags mean {variant}")
    expected = init_params(config, seed=0)
    if set(expected) != set(params) or any(expected[k].shape != params[k].shape for k in params):
        raise UsageError(f"checkpoint parameters do not fit variant {variant}")
    return params, header, config


def cmd_decode(args) -> int:
    params, header, config = _load_checkpoint(args.checkpoint)
    if args.variant and args.variant != config.variant:
        raise UsageError(f"checkpoint holds {config.variant}, not {args.variant}")
    beam = config.beam_size if args.beam is None else args.beam
    if beam < 1:
        raise UsageError("--beam must be at least 1")
    vocab = C.Vocabulary(header["vocab"])
    lex = C.ConceptLexicon(header.get("concepts", {}))
    neg = frozenset(header.get("negations", C.DEFAULT_NEGATIONS))
    records = C.load_corpus(args.corpus) if Path(args.corpus).is_file() else None
    if records is None:
        raise UsageError(f"corpus not found: {args.corpus}")
    examples = C.corpus_examples(records, vocab, lex, neg)
    decoded = decode_all(examples, params, config, vocab, beam=beam)
    rows = []
    for ex, d in zip(examples, decoded):
        mix = d.mean_mixture()
        rows.append({"conversation_id": ex.conversation_id, "snippet_index": ex.snippet_index,
                     "tokens": d.tokens, "mean_p_gen": mix.p_gen, "mean_p_copy": mix.p_copy,
                     "mean_p_neg": mix.p_neg})
    out = Path(args.out)
    _write_jsonl(out, rows)
    corpus, n_steps = corpus_mixture(decoded)
    stats = {"variant": config.variant, "beam": beam, "n_examples": len(rows), "n_steps": n_steps,
             "corpus_mean_p_gen": corpus.p_gen, "corpus_mean_p_copy": corpus.p_copy,
             "corpus_mean_p_neg": corpus.p_neg}
    _write_json(out.with_name(out.name + ".stats.json"), stats)
    print(f"decoded {len(rows)} snippets, corpus mean p_gen {corpus.p_gen:.4f}")
    return EXIT_OK


def _read_decoded(path) -> List[dict]:
    if not Path(path).is_file():
        raise UsageError(f"decoded file not found: {path}")
    rows = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if line.strip():
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError as exc:
                raise UsageError(f"{path}:{lineno}: {exc}") from exc
    return rows


def _align(rows: Sequence[dict], refs: Sequence[tuple], path) -> None:
    for k in range(max(len(rows), len(refs))):
        got = (rows[k].get("conversation_id"), rows[k].get("snippet_index")) if k < len(rows) else None
        want = refs[k][0] if k < len(refs) else None
        if got != want:
            raise UsageError(f"{path}: line {k + 1} is {got}, references expect {want}")


def cmd_eval(args) -> int:
    concepts, negations = args.concepts, args.negations
    if args.lexicons:
        lexdir = Path(args.lexicons)
        concepts = concepts or str(lexdir / "concepts.tsv")
        negations = negations or str(lexdir / "negations.txt")
    lex, neg = _lexicons(concepts, negations)
    if not Path(args.references).is_file():
        raise UsageError(f"references not found: {args.references}")
    refs = [((cid, idx), ref) for cid, idx, _, ref in C.numbered_pairs(C.load_corpus(args.references))]
    by_seed = {}
    for k, path in enumerate(args.decoded):
        rows = _read_decoded(path)
        _align(rows, refs, path)
        by_seed[Path(path).stem if len(args.decoded) > 1 else str(k)] = [r["tokens"] for r in rows]
    report = evaluate_corpus(by_seed, [r for _, r in refs], lex, neg)
    doc = report.to_dict()
    if args.out:
        _write_json(Path(args.out), doc)
    print(json.dumps(doc["mean"], sort_keys=True))
    return EXIT_OK


def _gradcheck_settings(path) -> dict:
    cp = configparser.ConfigParser()
    if path is not None:
        if not Path(path).is_file():
            raise UsageError(f"config file not found: {path}")
        cp.read(path, encoding="utf-8")
    sec = cp["gradcheck"] if cp.has_section("gradcheck") else {}
    model = cp["model"] if cp.has_section("model") else {}
    run = cp["run"] if cp.has_section("run") else {}
    try:
        return dict(
            variant=run.get("variant", "3M-PGEN-NEG-CONCEPT"),
            vocab_size=int(model.get("vocab_size", 10)),
            emb_dim=int(model.get("emb_dim", 4)),
            hidden_dim=int(model.get("hidden_dim", 3)),
            source_len=int(sec.get("source_len", 6)),
            seed=int(sec.get("seed", 0)),
            objective=sec.get("objective", "full"),
        )
    except ValueError as exc:
        raise UsageError(f"bad gradcheck config: {exc}") from exc


def cmd_gradcheck(args) -> int:
    s = _gradcheck_settings(args.config)
    env_seed = _env_seed()
    seed = env_seed if env_seed is not None else s["seed"]
    if s["objective"] not in ("full", "constant"):
        raise UsageError(f"objective must be 'full' or 'constant', got {s['objective']!r}")
    try:
        config = ModelConfig.for_variant(s["variant"], vocab_size=s["vocab_size"], emb_dim=s["emb_dim"],
                                         hidden_dim=s["hidden_dim"], seed=seed)
        vocab = toy_vocabulary(s["vocab_size"])
        example = toy_example(vocab, s["source_len"], seed)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    params = init_params(config)
    n = count_params(params)
    if n > MAX_CLI_PARAMS:
        raise UsageError(f"config has {n} parameters; gradcheck allows at most {MAX_CLI_PARAMS}")
    weights = LossWeights(coverage=1.0, concept=1.0, negation=0.1, pgen=1.0, pneg=2.0)
    err = loss_gradient_error(config, weights, example, params,
                              constant=s["objective"] == "constant", corrupt=args.corrupt_gradient)
    print(f"variant {config.variant}, {n} parameters, max relative error {err:.3e}")
    return EXIT_OK if err < 1e-3 else EXIT_CHECK


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="medsum", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true", help="log per-epoch progress")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gendata", help="write a synthetic corpus and split manifest")
    p.add_argument("--seed", type=int)
    p.add_argument("--n", type=int, required=True, help="number of snippets")
    p.add_argument("--concepts", help="concept lexicon TSV (term<TAB>id)")
    p.add_argument("--negations", help="negation words, one per line")
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_gendata)

    p = sub.add_parser("train", help="train a variant from an INI config")
    p.add_argument("--config", required=True)
    p.add_argument("--variant", help="override [run] variant")
    p.add_argument("--seed", type=int, help="train this seed only")
    p.add_argument("--epochs", type=int)
    p.add_argument("--out", help="override [run] out_dir")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decode", help="decode a corpus with a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--beam", type=int)
    p.add_argument("--variant", help="fail unless the checkpoint holds this variant")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_decode)

    p = sub.add_parser("eval", help="score decoded summaries against references")
    p.add_argument("--decoded", nargs="+", required=True, help="one file per seed")
    p.add_argument("--references", required=True, help="corpus JSONL the decodes came from")
    p.add_argument("--lexicons", help="directory holding concepts.tsv and negations.txt")
    p.add_argument("--concepts")
    p.add_argument("--negations")
    p.add_argument("--out")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full loss")
    p.add_argument("--config")
    p.add_argument("--corrupt-gradient", action="store_true", help=argparse.SUPPRESS)
    p.set_defaults(func=cmd_gradcheck)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, C.CorpusError, VariantError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ad.NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":
    sys.exit(main())
