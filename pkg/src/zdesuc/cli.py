"""Command-line entry point: ``zdesuc <command> ...``.

Every command that writes a file also writes ``<file>.manifest.json`` with the
resolved arguments and the sha256 of each input file.  Exit codes: 0 success,
1 usage error, 2 data error, 3 non-finite loss.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from .data import (
    DataError,
    SyntheticSpec,
    filter_unknown_queries,
    generate_synthetic,
    index_urls,
    load_qcl,
    load_suc,
    restrict_top_urls,
    save_synthetic,
)
from .evaluation import (
    EvalReport,
    auc_table_row,
    curve_csv,
    error_rate,
    export_embedding,
    learning_curve,
    nearest_neighbors,
    per_class_auc,
    points_csv,
    semantic_features,
    train_linear_classifier,
    zsl_pipeline_posteriors,
)
from .net import load_model, save_model
from .text import INPUT_NORMS, EmptyVocabularyError, Vocabulary, bow_matrix, build_vocabulary, load_stop_words
from .training import NumericError, TrainConfig, train
from .zsl import METRICS, KnowledgeBase, build_class_set, class_bags, load_class_names, zsl_posteriors

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("zdesuc")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def sha256_file(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out, command: str, config: dict, inputs: dict) -> Path:
    """Sidecar JSON for ``out``: command, resolved config and input hashes."""
    manifest = {
        "command": command,
        "config": config,
        "inputs": {k: {"path": str(p), "sha256": sha256_file(p)} for k, p in sorted(inputs.items()) if p},
    }
    path = Path(str(out) + ".manifest.json")
    path.write_bytes((json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return path


def _widths(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        widths = tuple(int(w) for w in text.split(","))
    except ValueError:
        raise argparse.ArgumentTypeError(f"--layers expects comma-separated integers, got {text!r}") from None
    if any(w < 1 for w in widths):
        raise argparse.ArgumentTypeError("--layers widths must be positive")
    return widths


def _sizes(text: str) -> list[int]:
    try:
        return [int(s) for s in text.split(",")]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _read_lines(path) -> list[str]:
    src = sys.stdin.read() if path in (None, "-") else Path(path).read_text(encoding="utf-8")
    return [l for l in src.split("\n") if l.strip()]


def _first_fields(path) -> list[str]:
    """Text of each non-blank line, dropping anything after the first TAB."""
    return [l.split("\t", 1)[0] for l in _read_lines(path)]


def _stop_words(path) -> frozenset[str]:
    return load_stop_words(path) if path else frozenset()


def _load_kb(args) -> tuple[KnowledgeBase, dict]:
    params, header = load_model(args.model)
    vocab = Vocabulary.load(args.vocab, _stop_words(getattr(args, "stopwords", None)))
    if header.get("vocab_sha256") != vocab.digest():
        raise DataError(f"vocabulary hash mismatch: model expects {header.get('vocab_sha256')}, {args.vocab} is {vocab.digest()}")
    cfg = header.get("config", {})
    if params.n_hidden < 1:
        raise DataError("no embedding layer: model has no hidden layer")
    kb = KnowledgeBase(params, vocab, bool(cfg.get("binary_bow", False)), cfg.get("input_norm", "none"))
    return kb, header


def _metric(args, header: dict) -> str:
    return args.metric or header.get("config", {}).get("metric", "euclidean")


# -- commands ------------------------------------------------------------------------

def cmd_build_vocab(args) -> int:
    corpus = _first_fields(args.corpus)
    vocab = build_vocabulary(corpus, _stop_words(args.stopwords), args.max_size)
    vocab.save(args.out)
    write_manifest(args.out, "build-vocab", {"max_size": args.max_size},
                   {"corpus": args.corpus, "stopwords": args.stopwords})
    print(f"V={vocab.size} -> {args.out}")
    return EXIT_OK


def train_config_from_args(args) -> TrainConfig:
    return TrainConfig(
        learning_rate=args.lr,
        batch_size=args.batch_size,
        epochs=args.epochs,
        dropout_rate=args.dropout,
        seed=args.seed,
        lam=args.lam,
        binary_bow=args.binary,
        input_norm=args.input_norm,
        hidden=args.layers,
        metric=args.metric or "euclidean",
    )


def cmd_train(args) -> int:
    if args.lam > 0 and not args.classes:
        raise UsageError("--lambda > 0 requires --classes")
    try:
        config = train_config_from_args(args)
    except ValueError as e:
        raise UsageError(str(e)) from None
    vocab = Vocabulary.load(args.vocab, _stop_words(args.stopwords))
    records, _ = load_qcl(args.qcl)
    if args.top_urls:
        records = restrict_top_urls(records, args.top_urls)
    records = filter_unknown_queries(records, vocab)
    if not records:
        raise DataError("no click-log records left after filtering unknown queries")
    url_index = index_urls(records)
    X = bow_matrix([r.query for r in records], vocab, config.binary_bow, config.input_norm)
    y = np.array([url_index[r.url] for r in records])
    bags = None
    if args.classes:
        bags = class_bags(load_class_names(args.classes), vocab, config.binary_bow, config.input_norm)
    result = train(X, y, len(url_index), config, bags)
    save_model(args.out, result.params, config.to_dict(), vocab.digest(), {"urls": list(url_index)})

    cols = ["epoch", "nll"] + (["entropy"] if config.lam > 0 else [])
    lines = [",".join(cols)] + [",".join(format(row[c], ".17g") for c in cols) for row in result.log]
    log_path = Path(str(args.out) + ".log.csv")
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    write_manifest(args.out, "train", {**config.to_dict(), "top_urls": args.top_urls},
                   {"qcl": args.qcl, "vocab": args.vocab, "classes": args.classes, "stopwords": args.stopwords})
    last = result.log[-1]
    print(f"trained {result.params.layer_sizes} on {len(records)} records; final " +
          " ".join(f"{k}={last[k]:.6g}" for k in cols[1:]))
    return EXIT_OK


def cmd_classify(args) -> int:
    kb, header = _load_kb(args)
    names = load_class_names(args.classes)
    classes = build_class_set(kb, names)
    texts = _first_fields(args.input)
    if not texts:
        return EXIT_OK
    P = zsl_posteriors(kb, texts, classes, _metric(args, header))
    out = []
    for row in P:
        k = int(np.argmax(row))
        out.append("\t".join([names[k]] + [f"{p:.9f}" for p in row]))
    print("\n".join(out))
    return EXIT_OK


def cmd_eval(args) -> int:
    kb, header = _load_kb(args)
    names = load_class_names(args.classes)
    classes = build_class_set(kb, names)
    test = load_suc(args.suc)
    unknown = sorted({u.class_name for u in test} - set(names))
    if unknown:
        raise DataError(f"{args.suc}: class names not in the class set: {unknown[:5]}")
    metric = _metric(args, header)
    truth = np.array([names.index(u.class_name) for u in test])
    texts = [u.utterance for u in test]
    meta = {
        "mode": args.mode,
        "feature": args.feature,
        "metric": metric,
        "model_config": header.get("config", {}),
        "vocab_sha256": kb.vocab.digest(),
    }
    inputs = {"model": args.model, "vocab": args.vocab, "classes": args.classes, "suc": args.suc,
              "train_suc": args.train_suc, "stopwords": args.stopwords}

    if args.mode == "auc":
        if args.feature == "augmented":
            raise UsageError("--feature augmented is a supervised feature; use --mode error")
        P = zsl_pipeline_posteriors(args.feature, kb.params, kb.vocab, texts, names, metric,
                                    binary_bow=kb.binary_bow, input_norm=kb.input_norm)
        aucs = per_class_auc(P, truth, names)
        report = EvalReport(per_class_auc=aucs, metadata=meta)
        print(" | ".join(["features"] + names))
        print(auc_table_row(args.feature, aucs))
    else:
        if not args.train_suc:
            raise UsageError(f"--mode {args.mode} requires --train-suc")
        train_set = load_suc(args.train_suc)
        unknown = sorted({u.class_name for u in train_set} - set(names))
        if unknown:
            raise DataError(f"{args.train_suc}: class names not in the class set: {unknown[:5]}")
        cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size, seed=args.seed)
        if args.mode == "error":
            ytr = np.array([names.index(u.class_name) for u in train_set])
            Ftr = semantic_features(args.feature, kb.params, kb.bags([u.utterance for u in train_set]))
            Fte = semantic_features(args.feature, kb.params, kb.bags(texts))
            model = train_linear_classifier(Ftr, ytr, len(names), cfg)
            err = error_rate(model.predict(Fte), truth)
            report = EvalReport(error_rate=err, metadata=meta)
            print(f"{args.feature} | {100 * err:.2f}%")
        else:
            sizes = args.sizes or [n for n in (10, 30, 100, 300, 1000, 3000, 10000) if n <= len(train_set)]
            curve = learning_curve(train_set, test, kb, classes, sizes, args.seed, cfg, args.target, metric)
            report = EvalReport(metadata={**meta, "target": args.target}, series=curve)
            plot = Path(str(args.out) + ".csv")
            plot.write_text(curve_csv(curve), encoding="utf-8")
            print(curve_csv(curve), end="")
    report.save(args.out)
    write_manifest(args.out, "eval", {**meta, "seed": args.seed, "sizes": args.sizes}, inputs)
    return EXIT_OK


def cmd_nn(args) -> int:
    kb, header = _load_kb(args)
    probes = list(args.probe or []) + (_first_fields(args.probes) if args.probes else [])
    if not probes:
        raise UsageError("give at least one --probe or --probes file")
    candidates = _first_fields(args.candidates) if args.candidates else kb.vocab.words()
    metric = _metric(args, header)
    lines = []
    for p in probes:
        for rank, (word, d) in enumerate(nearest_neighbors(kb, p, candidates, args.k, metric), start=1):
            lines.append(f"{p}\t{rank}\t{word}\t{d:.6f}")
    print("\n".join(lines))
    return EXIT_OK


def cmd_export(args) -> int:
    kb, _ = _load_kb(args)
    rows = _read_lines(args.input)
    texts = [r.split("\t", 1)[0] for r in rows]
    labels = [r.split("\t", 1)[1] if "\t" in r else "" for r in rows]
    names = load_class_names(args.classes) if args.classes else []
    points = export_embedding(kb, texts, labels, names)
    Path(args.out).write_text(points_csv(points), encoding="utf-8")
    write_manifest(args.out, "export", {"n_points": len(points)},
                   {"model": args.model, "vocab": args.vocab, "input": args.input if args.input != "-" else None,
                    "classes": args.classes})
    print(f"{len(points)} points x {kb.embed_dim} dims -> {args.out}")
    return EXIT_OK


def cmd_synth(args) -> int:
    try:
        spec = SyntheticSpec(
            num_classes=args.num_classes,
            queries_per_class=args.queries_per_class,
            utterances_per_class=args.utterances_per_class,
            noise_rate=args.noise_rate,
            class_name_tokens=args.class_name_tokens,
            seed=args.seed,
        )
        spec.validate()
    except ValueError as e:
        raise UsageError(str(e)) from None
    paths = save_synthetic(generate_synthetic(spec), args.out)
    write_manifest(Path(args.out) / "corpus", "synth", spec.__dict__, {})
    for k, p in paths.items():
        print(f"{k}: {p}")
    return EXIT_OK


# -- parser --------------------------------------------------------------------------

def _model_args(p, classes_required: bool = False):
    p.add_argument("--model", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--stopwords")
    p.add_argument("--classes", required=classes_required)
    p.add_argument("--metric", choices=METRICS)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="zdesuc", description="Zero-shot semantic utterance classification from click logs.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("build-vocab", help="build a vocabulary file from a corpus")
    p.add_argument("corpus", help="text lines; anything after a TAB is ignored")
    p.add_argument("--stopwords")
    p.add_argument("--max-size", type=int, default=10000)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_build_vocab)

    p = sub.add_parser("train", help="train a click-log network (ZDE when --lambda > 0)")
    p.add_argument("--qcl", required=True)
    p.add_argument("--vocab", required=True)
    p.add_argument("--stopwords")
    p.add_argument("--classes", help="class names, one per line (needed for --lambda > 0)")
    p.add_argument("--top-urls", type=int, default=0, help="keep only the k most clicked URLs")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch-size", type=int, default=32)
    p.add_argument("--dropout", type=float, default=0.0)
    p.add_argument("--lambda", dest="lam", type=float, default=0.0)
    p.add_argument("--layers", type=_widths, default=(100,), help="hidden widths, e.g. 300,300")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--metric", choices=METRICS)
    p.add_argument("--binary", action="store_true", help="binary bag-of-words instead of counts")
    p.add_argument("--input-norm", choices=INPUT_NORMS, default="none")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("classify", help="zero-shot classify utterances (one per line)")
    _model_args(p, classes_required=True)
    p.add_argument("input", nargs="?", default="-")
    p.set_defaults(func=cmd_classify)

    p = sub.add_parser("eval", help="AUC table, error rate or learning curve")
    _model_args(p, classes_required=True)
    p.add_argument("--suc", required=True, help="labeled test utterances")
    p.add_argument("--train-suc", help="labeled training utterances (error and curve modes)")
    p.add_argument("--mode", choices=("auc", "error", "curve"), default="auc")
    p.add_argument("--feature", choices=("bow", "posterior", "embedding", "augmented"), default="embedding")
    p.add_argument("--sizes", type=_sizes)
    p.add_argument("--target", help="one-vs-rest class for curve mode")
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=50)
    p.add_argument("--batch-size", type=int, default=16)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("nn", help="nearest neighbours of probe words or phrases")
    _model_args(p)
    p.add_argument("--probe", action="append")
    p.add_argument("--probes", help="file of probes, one per line")
    p.add_argument("--candidates", help="file of candidates (default: the vocabulary)")
    p.add_argument("-k", type=int, default=5)
    p.set_defaults(func=cmd_nn)

    p = sub.add_parser("export", help="write embedding coordinates as CSV")
    _model_args(p)
    p.add_argument("input", help="text lines, optionally 'text<TAB>label'")
    p.add_argument("-o", "--out", required=True)
    p.set_defaults(func=cmd_export)

    p = sub.add_parser("synth", help="generate a synthetic click-log and utterance corpus")
    p.add_argument("--num-classes", type=int, default=5)
    p.add_argument("--queries-per-class", type=int, default=2000)
    p.add_argument("--utterances-per-class", type=int, default=400)
    p.add_argument("--noise-rate", type=float, default=0.2)
    p.add_argument("--class-name-tokens", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("-o", "--out", required=True, help="output directory")
    p.set_defaults(func=cmd_synth)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except UsageError as e:
        print(f"zdesuc: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except NumericError as e:
        print(f"zdesuc: numeric failure: {e}", file=sys.stderr)
        return EXIT_NUMERIC
    except EmptyVocabularyError as e:
        print(f"zdesuc: {e}", file=sys.stderr)
        return EXIT_DATA
    except (DataError, ValueError, OSError) as e:
        print(f"zdesuc: {e}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
