"""Command-line entry point: ``argpersuasion <subcommand> ...``.

Exit status is 0 on success, 1 on usage errors and 2 on data errors. Outputs
of ``featurize``, ``train``, ``evaluate``, ``ablate`` and ``analyze`` go to a
run directory ``<runs-dir>/<timestamp>_seed<seed>`` (or ``--run-dir``); the
timestamp appears only in the directory name and in the ``run.log`` sidecar,
so every other artifact is reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
import time
from dataclasses import asdict, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .argfeatures import DEFAULT_VOCAB, assemble_features, build_vocabulary, features_csv
from .corpus import FILTER_RULES, filter_with_stats, parse_corpus, write_corpus
from .evaluation import (
    ABLATIONS,
    SequenceCache,
    _split_validation,
    ablation_sweep,
    annotation_consistency,
    contrast_table,
    feature_contrast,
    kfold_evaluate,
    krippendorff_alpha,
    majority_rate,
    paired_t_test,
    read_annotations,
)
from .io import atomic_write_json, atomic_write_text, provenance
from .model import TrainConfig, evaluate_model, train
from .synthgen import PlantConfig, generate_corpus, manifest

logger = logging.getLogger("argpersuasion")

EXIT_OK, EXIT_USAGE, EXIT_DATA = 0, 1, 2
# below this many training debates the small-corpus optimizer setting is used
AUTO_OPTIM_THRESHOLD = 1000


class UsageError(Exception):
    pass


class DataError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


# ---------------------------------------------------------------------------
# argument parsing


def _add_input(p):
    p.add_argument("--in", dest="input", required=True, help="corpus JSONL")


def _add_run_dir(p):
    p.add_argument("--runs-dir", default="runs", help="parent of timestamped run directories")
    p.add_argument("--run-dir", help="exact output directory (overrides --runs-dir)")


def _add_train_flags(p):
    g = p.add_argument_group("training")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--optim", choices=("auto", "paper", "small"), default="auto",
                   help="optimizer preset: paper (lr 0.005, L2 0.01), small (lr 0.05, no L2), "
                        f"or auto (small below {AUTO_OPTIM_THRESHOLD} training debates)")
    g.add_argument("--lr", type=float, help="overrides the preset")
    g.add_argument("--weight-decay", type=float, help="overrides the preset")
    g.add_argument("--dropout", type=float, default=0.5)
    g.add_argument("--max-epochs", type=int, default=50)
    g.add_argument("--patience", type=int, default=5)
    g.add_argument("--embed-dim", type=int, default=768)
    g.add_argument("--build-vocab", action="store_true",
                   help="rebuild the n-gram vocabulary from each training split (3%% threshold)")
    g.add_argument("--no-text", action="store_true")
    g.add_argument("--no-prop-ngrams", action="store_true")
    g.add_argument("--no-link-ngrams", action="store_true")
    g.add_argument("--no-graph", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="argpersuasion", description="Debate persuasiveness from argument structure.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    ap.add_argument("--config", help="key = value file providing defaults for the subcommand's flags")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("preprocess", help="parse, validate and filter a corpus")
    _add_input(p)
    p.add_argument("--out", required=True)
    p.add_argument("--min-margin", type=int, default=2)
    p.add_argument("--max-sentences", type=int, default=40)
    p.add_argument("--keep-forfeits", action="store_true")

    p = sub.add_parser("featurize", help="per-utterance argument-structure features")
    _add_input(p)
    _add_run_dir(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--build-vocab", action="store_true")
    p.add_argument("--format", choices=("csv", "jsonl"), default="csv")

    p = sub.add_parser("train", help="single train/validation/test run")
    _add_input(p)
    _add_run_dir(p)
    _add_train_flags(p)
    p.add_argument("--test-frac", type=float, default=0.1)

    p = sub.add_parser("evaluate", help="k-fold cross-validation")
    _add_input(p)
    _add_run_dir(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--emit-csv", action="store_true", help="also write per-fold and per-feature CSVs")

    p = sub.add_parser("ablate", help="cross-validate ablation variants over several seeds")
    _add_input(p)
    _add_run_dir(p)
    _add_train_flags(p)
    p.add_argument("--folds", type=int, default=5)
    p.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2, 3, 4])
    p.add_argument("--variants", nargs="+", choices=tuple(ABLATIONS), default=list(ABLATIONS))

    p = sub.add_parser("analyze", help="winner vs loser feature contrast and annotation metrics")
    _add_input(p)
    _add_run_dir(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--annotations", help="JSONL of {id, labels, system}")
    p.add_argument("--one-sided", action="store_true", help="one-sided Wilcoxon (winner greater)")

    p = sub.add_parser("synth", help="generate a synthetic corpus with planted signals")
    p.add_argument("--n", type=int, default=500)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--signal-strength", type=float, default=1.0)
    p.add_argument("--out", required=True)
    return ap


def _coerce(action: argparse.Action, key: str, value: str):
    if isinstance(action, argparse._StoreTrueAction):
        low = value.lower()
        if low not in ("true", "false", "1", "0", "yes", "no"):
            raise UsageError(f"config key {key!r} expects a boolean, got {value!r}")
        return low in ("true", "1", "yes")
    convert = action.type or str
    try:
        if action.nargs in ("+", "*"):
            return [convert(v) for v in value.replace(",", " ").split()]
        return convert(value)
    except ValueError as exc:
        raise UsageError(f"config key {key!r}: {exc}") from exc


def read_config_file(path, subparser: argparse.ArgumentParser) -> dict:
    """Parse ``key = value`` lines (``#`` comments) into subparser defaults."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot read config file {path}: {exc.strerror or exc}") from exc
    actions = {a.dest: a for a in subparser._actions}
    values = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        dest = key.replace("-", "_")
        if dest == "in":
            dest = "input"
        if dest not in actions or dest == "help":
            raise UsageError(f"{path}:{lineno}: unknown key {key!r} for this subcommand")
        values[dest] = _coerce(actions[dest], key, value)
    return values


def parse_args(argv: Sequence[str]) -> argparse.Namespace:
    parser = build_parser()
    # read --config before the full parse so its values can satisfy required flags
    pre = _Parser(add_help=False)
    pre.add_argument("--config")
    pre.add_argument("-v", "--verbose", action="store_true")
    known, rest = pre.parse_known_args(argv)
    commands = parser._subparsers._group_actions[0].choices
    if known.config and rest and rest[0] in commands:
        sub = commands[rest[0]]
        defaults = read_config_file(known.config, sub)
        # flags given on the command line win over the file
        sub.set_defaults(**defaults)
        for action in sub._actions:
            if action.dest in defaults:
                action.required = False
    return parser.parse_args(argv)


# ---------------------------------------------------------------------------
# helpers


def _load(path) -> list:
    try:
        parsed = parse_corpus(path)
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except UnicodeDecodeError as exc:
        raise DataError(f"{path} is not valid UTF-8") from exc
    if parsed.errors:
        logger.warning("%s: skipped %d records", path, len(parsed.errors))
    return parsed.debates


def _labeled(debates: list) -> list:
    kept = [d for d in debates if d.label() is not None]
    if len(kept) < len(debates):
        logger.warning("ignoring %d debates without a clear winner", len(debates) - len(kept))
    return kept


def _make_run_dir(args) -> Path:
    if args.run_dir:
        run = Path(args.run_dir)
    else:
        stamp = time.strftime("%Y%m%d-%H%M%S")
        run = Path(args.runs_dir) / f"{stamp}_seed{args.seed}"
        n = 1
        while run.exists():
            run = Path(args.runs_dir) / f"{stamp}_seed{args.seed}-{n}"
            n += 1
    run.mkdir(parents=True, exist_ok=True)
    return run


def _log_run(run: Path, argv: Sequence[str]) -> None:
    atomic_write_text(run / "run.log", f"started {time.strftime('%Y-%m-%dT%H:%M:%S%z')}\n"
                                      f"argv {json.dumps(list(argv))}\nversion {__version__}\n")


def _train_config(args, n_train: int) -> TrainConfig:
    preset = args.optim
    if preset == "auto":
        preset = "small" if n_train < AUTO_OPTIM_THRESHOLD else "paper"
    base = TrainConfig.small_corpus() if preset == "small" else TrainConfig()
    fields = dict(
        seed=args.seed, dropout=args.dropout, max_epochs=args.max_epochs, patience=args.patience,
        embed_dim=args.embed_dim, use_text=not args.no_text, use_prop_ngrams=not args.no_prop_ngrams,
        use_link_ngrams=not args.no_link_ngrams, use_graph=not args.no_graph,
    )
    if args.lr is not None:
        fields["lr"] = args.lr
    if args.weight_decay is not None:
        fields["weight_decay"] = args.weight_decay
    try:
        return replace(base, **fields)
    except ValueError as exc:
        raise UsageError(f"refused: {exc}") from exc


def _check_flags(args) -> None:
    # fail on impossible configurations before touching any data
    if args.no_text and args.no_prop_ngrams and args.no_link_ngrams and args.no_graph:
        raise UsageError("refused: at least one stream (text or an argument-feature group) must be enabled")
    if args.patience < 1:
        raise UsageError("--patience must be >= 1")
    if not 0.0 <= args.dropout < 1.0:
        raise UsageError("--dropout must lie in [0, 1)")


def _stamp(obj: dict, seed: int, config: dict) -> dict:
    return {**obj, "provenance": provenance(seed, config)}


# ---------------------------------------------------------------------------
# subcommands


def cmd_preprocess(args, argv) -> int:
    debates = _load(args.input)
    kept, dropped = filter_with_stats(debates, min_margin=args.min_margin,
                                      max_sentences=args.max_sentences,
                                      drop_forfeits=not args.keep_forfeits)
    config = {"input": args.input, "min_margin": args.min_margin,
              "max_sentences": args.max_sentences, "drop_forfeits": not args.keep_forfeits}
    stats = {"read": len(debates), "kept": len(kept), "dropped": {r: dropped[r] for r in FILTER_RULES}}
    write_corpus(kept, args.out)
    atomic_write_json(f"{args.out}.manifest.json", _stamp({"stats": stats}, None, config))
    print(json.dumps(stats, indent=2))
    return EXIT_OK


def cmd_synth(args, argv) -> int:
    try:
        cfg = PlantConfig(n_debates=args.n, seed=args.seed, signal_strength=args.signal_strength)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc
    write_corpus(generate_corpus(cfg), args.out)
    atomic_write_json(f"{args.out}.manifest.json", manifest(cfg))
    print(f"wrote {cfg.n_debates} debates to {args.out}")
    return EXIT_OK


def cmd_featurize(args, argv) -> int:
    debates = _load(args.input)
    if not debates:
        raise DataError(f"{args.input}: no usable debates")
    vocab = build_vocabulary(debates) if args.build_vocab else DEFAULT_VOCAB
    run = _make_run_dir(args)
    _log_run(run, argv)
    if args.format == "csv":
        atomic_write_text(run / "features.csv", features_csv(debates, vocab))
    else:
        names = vocab.slot_names()
        lines = []
        for d in debates:
            for r, rnd in enumerate(d.rounds):
                for side in ("pro", "con"):
                    vec = assemble_features(getattr(rnd, side), vocab)
                    lines.append(json.dumps({"debate_id": d.id, "round": r, "side": side,
                                             "features": dict(zip(names, map(float, vec)))}))
        atomic_write_text(run / "features.jsonl", "".join(line + "\n" for line in lines))
    config = {"input": args.input, "build_vocab": args.build_vocab, "format": args.format}
    atomic_write_json(run / "vocabulary.json", _stamp({"vocabulary": vocab.to_json()}, args.seed, config))
    print(run)
    return EXIT_OK


def cmd_train(args, argv) -> int:
    _check_flags(args)
    if not 0.0 < args.test_frac < 1.0:
        raise UsageError("--test-frac must lie in (0, 1)")
    debates = _labeled(_load(args.input))
    if len(debates) < 10:
        raise DataError(f"{args.input}: need at least 10 labelled debates, found {len(debates)}")
    order = np.random.default_rng(args.seed).permutation(len(debates))
    n_test = max(1, int(round(args.test_frac * len(debates))))
    test_idx, rest = order[:n_test], np.sort(order[n_test:])
    tr_idx, val_idx = _split_validation(rest, args.seed)
    tr, val, test = ([debates[i] for i in idx] for idx in (tr_idx, val_idx, test_idx))
    config = _train_config(args, len(tr))
    vocab = build_vocabulary(tr) if args.build_vocab else DEFAULT_VOCAB
    run = _make_run_dir(args)
    _log_run(run, argv)
    cache = SequenceCache(config.embed_dim)
    prepared = cache.prepared(tr + val + test, vocab, config)
    result = train(tr, val, config, vocab, prepared=prepared)
    test_loss, test_acc = evaluate_model(result.model, [(prepared[d.id], d.label()) for d in test])
    cfg = {"train": asdict(config), "input": args.input, "test_frac": args.test_frac,
           "build_vocab": args.build_vocab}
    atomic_write_json(run / "checkpoint.json", _stamp(result.model.to_checkpoint(vocab, config), args.seed, cfg))
    atomic_write_text(run / "history.jsonl", result.history_jsonl())
    report = {"n_train": len(tr), "n_val": len(val), "n_test": len(test), "best_epoch": result.best_epoch,
              "test_loss": test_loss, "test_accuracy": test_acc, "alpha": result.model.alpha,
              "n_params": result.model.n_params}
    atomic_write_json(run / "report.json", _stamp(report, args.seed, cfg))
    print(f"test accuracy {test_acc:.4f} (best epoch {result.best_epoch}); outputs in {run}")
    return EXIT_OK


def cmd_evaluate(args, argv) -> int:
    _check_flags(args)
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    debates = _labeled(_load(args.input))
    if len(debates) < args.folds:
        raise DataError(f"{args.input}: {len(debates)} labelled debates cannot fill {args.folds} folds")
    n_train = int(len(debates) * (args.folds - 1) / args.folds * 0.9)
    config = _train_config(args, n_train)
    run = _make_run_dir(args)
    _log_run(run, argv)
    report = kfold_evaluate(debates, args.folds, config, build_vocab=args.build_vocab)
    cfg = {"train": asdict(config), "input": args.input, "folds": args.folds, "build_vocab": args.build_vocab}
    atomic_write_json(run / "report.json", _stamp(report.to_json(), args.seed, cfg))
    atomic_write_text(run / "report.txt", report.table() + "\n")
    if args.emit_csv:
        atomic_write_text(run / "folds.csv", report.folds_csv())
        atomic_write_text(run / "features.csv", _contrast_csv(feature_contrast(debates)))
    print(report.table())
    return EXIT_OK


def cmd_ablate(args, argv) -> int:
    _check_flags(args)
    if args.folds < 2:
        raise UsageError("--folds must be at least 2")
    debates = _labeled(_load(args.input))
    if len(debates) < args.folds:
        raise DataError(f"{args.input}: {len(debates)} labelled debates cannot fill {args.folds} folds")
    n_train = int(len(debates) * (args.folds - 1) / args.folds * 0.9)
    config = _train_config(args, n_train)
    for v in args.variants:
        try:
            replace(config, **ABLATIONS[v])
        except ValueError as exc:  # the variant plus the --no-* flags leaves no stream
            raise UsageError(f"refused: variant {v}: {exc}") from exc
    run = _make_run_dir(args)
    _log_run(run, argv)
    sweep = ablation_sweep(debates, args.seeds, args.folds, config, variants=args.variants,
                           build_vocab=args.build_vocab)
    significance = []
    if "full" in sweep.per_seed and "no_arg_struct" in sweep.per_seed and len(args.seeds) >= 2:
        try:
            t = paired_t_test(sweep.per_seed["full"], sweep.per_seed["no_arg_struct"])
            significance.append({**asdict(t), "label": "full vs no_arg_struct over seeds"})
        except ValueError as exc:
            significance.append({"test": "paired t", "label": "full vs no_arg_struct over seeds",
                                 "error": str(exc)})
    out = {"seeds": args.seeds, "folds": args.folds, "majority_baseline": majority_rate(debates),
           "variants": sweep.summary(), "significance": significance,
           "fold_accuracies": {v: [r.fold_accuracies for r in reps] for v, reps in sweep.reports.items()}}
    cfg = {"train": asdict(config), "input": args.input, "build_vocab": args.build_vocab}
    atomic_write_json(run / "ablation.json", _stamp(out, args.seed, cfg))
    lines = [f"{'variant':<16}{'mean acc':>10}  per seed"]
    for v in args.variants:
        lines.append(f"{v:<16}{sweep.mean(v):>10.4f}  " + " ".join(f"{a:.4f}" for a in sweep.per_seed[v]))
    for s in significance:
        if "error" in s:
            lines.append(f"{s['label']}: {s['error']}")
        else:
            lines.append(f"{s['label']}: t = {s['statistic']:.4f}, p = {s['p_value']:.4g}")
    atomic_write_text(run / "ablation.txt", "\n".join(lines) + "\n")
    print("\n".join(lines))
    return EXIT_OK


def _contrast_csv(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["feature", "winner_mean", "loser_mean", "direction", "p_value", "statistic", "n", "status"])
    for r in rows:
        w.writerow([r.feature, repr(r.winner_mean), repr(r.loser_mean), r.direction,
                    "" if r.p_value is None else repr(r.p_value),
                    "" if r.statistic is None else repr(r.statistic), r.n, r.status])
    return buf.getvalue()


def cmd_analyze(args, argv) -> int:
    debates = _labeled(_load(args.input))
    if not debates:
        raise DataError(f"{args.input}: no labelled debates")
    annotations = None
    if args.annotations:
        try:
            annotations, system = read_annotations(args.annotations)
        except OSError as exc:
            raise DataError(f"cannot read {args.annotations}: {exc.strerror or exc}") from exc
        except (ValueError, KeyError, TypeError) as exc:
            raise DataError(f"{args.annotations}: malformed annotation record ({exc})") from exc
    run = _make_run_dir(args)
    _log_run(run, argv)
    alternative = "greater" if args.one_sided else "two-sided"
    rows = feature_contrast(debates, alternative=alternative)
    out = {"alternative": alternative, "n_debates": len(debates), "contrast": [asdict(r) for r in rows]}
    text = contrast_table(rows)
    if annotations is not None:
        try:
            alpha = krippendorff_alpha(annotations)
            out["krippendorff_alpha"] = alpha
            text += f"\n\nKrippendorff's alpha (nominal): {alpha:.4f}"
            if system:
                cons = annotation_consistency(system, annotations)
                out["consistency"] = asdict(cons)
                text += f"\nsystem/annotator consistency: {cons.overall:.4f} over {cons.n_items} items"
        except ValueError as exc:
            raise DataError(f"{args.annotations}: {exc}") from exc
    cfg = {"input": args.input, "annotations": args.annotations, "alternative": alternative}
    atomic_write_json(run / "analysis.json", _stamp(out, args.seed, cfg))
    atomic_write_text(run / "contrast.csv", _contrast_csv(rows))
    atomic_write_text(run / "analysis.txt", text + "\n")
    print(text)
    return EXIT_OK


COMMANDS = {
    "preprocess": cmd_preprocess,
    "featurize": cmd_featurize,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "analyze": cmd_analyze,
    "synth": cmd_synth,
}


def run(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parse_args(argv)
        logging.basicConfig(level=logging.DEBUG if args.verbose else logging.INFO,
                            format="%(levelname)s %(message)s")
        return COMMANDS[args.command](args, argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except KeyboardInterrupt:
        print("interrupted", file=sys.stderr)
        return 130


def main() -> None:
    sys.exit(run())
