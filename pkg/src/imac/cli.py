"""Command-line surface for the assessment pipeline.

    imac ingest            validate a raw JSONL article file
    imac label             attach impact scores and class labels
    imac split             stratified train/validation/test split
    imac train             optimize the network, save a checkpoint
    imac evaluate          metrics JSON for a checkpoint on a split
    imac baselines         fit and score knn / svm / lr / zeror
    imac predict           class + probabilities for one article
    imac export-embeddings 2-D projection of fused features to CSV
    imac analyze           correlation or citation-stability analysis
    imac synth             generate the synthetic demo corpus

Each command is a thin adapter over one library operation, reads an optional
JSON config (flags override it), never mutates its inputs, and is idempotent
for a fixed seed.  The IMAC_CHECKPOINT_ROOT environment variable anchors
relative checkpoint paths.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

from . import bibliometrics, corpus, synthetic, training
from .baselines import BASELINE_KINDS, BaselineConfig, make_baseline
from .corpus import SplitSpec, build_vocab, featurize_baseline, fit_normalizer, ingest
from .errors import ImacError, ValidationError
from .training import (
    METRIC_KEYS,
    EvalReport,
    encode_records,
    evaluate,
    export_embeddings,
    label_index_of,
    load_checkpoint,
    prepare_splits,
    run_repeated,
    save_checkpoint,
    train,
    train_config_from_dict,
)

SPLIT_NAMES = ("train", "validation", "test")


def _fail(message: str) -> int:
    print(f"error: {message}", file=sys.stderr)
    return 2


def _require_file(path: str | Path, producer: str) -> Path:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"{path} not found; produce it with `imac {producer}`")
    return path


def checkpoint_root() -> Path:
    return Path(os.environ.get("IMAC_CHECKPOINT_ROOT", "."))


def resolve_checkpoint(path: str) -> Path:
    p = Path(path)
    return p if p.is_absolute() else checkpoint_root() / p


def _write_json(path: str | Path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def _deep_update(base: dict, override: dict) -> dict:
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(base.get(key), dict):
            _deep_update(base[key], value)
        else:
            base[key] = value
    return base


def _load_config_file(path: str | None) -> dict:
    if path is None:
        return {}
    data = json.loads(_require_file(path, "train --help (write a config JSON)").read_text())
    if not isinstance(data, dict):
        raise ValidationError("config file must hold a JSON object")
    return data


def _ingest_records(path: str | Path, producer: str) -> list[corpus.ArticleRecord]:
    result = ingest(_require_file(path, producer))
    if result.rejections:
        for rej in result.rejections[:5]:
            print(f"  rejected line {rej.line_no}: {rej.reason}", file=sys.stderr)
        if len(result.rejections) > 5:
            print(f"  ... {len(result.rejections) - 5} more rejections", file=sys.stderr)
    if not result.records:
        raise ValidationError(f"no valid records in {path}")
    return result.records


def _read_split_records(splits_dir: str | Path) -> dict[str, list[corpus.ArticleRecord]]:
    splits_dir = Path(splits_dir)
    _require_file(splits_dir / "train.jsonl", "split")
    out = {}
    for name in SPLIT_NAMES:
        path = splits_dir / f"{name}.jsonl"
        if path.exists():
            out[name] = _ingest_records(path, "split")
    return out


def _class_balance(records, attr: str) -> dict[str, int]:
    counts: dict[str, int] = {}
    for r in records:
        key = getattr(r, attr) or "unlabeled"
        counts[key] = counts.get(key, 0) + 1
    return counts


# ---------------------------------------------------------------- commands


def cmd_ingest(args) -> int:
    result = ingest(_require_file(args.input, "synth"), year_range=(args.year_min, args.year_max))
    corpus.write_jsonl(result.records, args.output)
    print(f"ingested {len(result.records)} records -> {args.output}")
    if result.rejections:
        rejections = [
            {"line": r.line_no, "reason": r.reason} for r in result.rejections
        ]
        _write_json(str(args.output) + ".rejections.json", rejections)
        print(f"rejected {len(result.rejections)} lines "
              f"(details in {args.output}.rejections.json)")
    return 0


def cmd_label(args) -> int:
    records = _ingest_records(args.corpus, "ingest")
    journals = bibliometrics.load_journals(_require_file(args.journals, "synth"))
    result = bibliometrics.label_corpus(records, journals, d=args.d, cits_m=args.cits_m)
    if result.rejections:
        for rid, reason in result.rejections[:5]:
            print(f"  rejected {rid}: {reason}", file=sys.stderr)
        if len(result.rejections) > 5:
            print(f"  ... {len(result.rejections) - 5} more rejections", file=sys.stderr)
    if not result.records:
        raise ValidationError("labeling rejected every record; check the journal table")
    corpus.write_jsonl(result.records, args.output)
    print(f"labeled {len(result.records)} records -> {args.output} "
          f"(rejected {len(result.rejections)}, corpus median citations {result.cits_m:g})")
    print(f"journal_impact balance: {_class_balance(result.records, 'journal_label')}")
    print(f"article_impact balance: {_class_balance(result.records, 'article_label')}")
    return 0


def cmd_split(args) -> int:
    records = _ingest_records(args.corpus, "label")
    labels = [label_index_of(r, args.task) for r in records]
    spec = SplitSpec(args.train, args.val, args.test, seed=args.seed)
    parts = corpus.split(records, spec, labels=labels)
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"seed": args.seed, "task": args.task}
    for name, part in zip(SPLIT_NAMES, parts):
        corpus.write_jsonl(part, out_dir / f"{name}.jsonl")
        manifest[name] = [r.id for r in part]
        print(f"{name}: {len(part)} records")
    _write_json(out_dir / "manifest.json", manifest)
    return 0


def _build_train_config(args) -> tuple[training.TrainConfig, int]:
    base = training.config_to_dict(training.TrainConfig())
    _deep_update(base, _load_config_file(args.config))
    flag_map = {
        "lr": "learning_rate",
        "batch_size": "batch_size",
        "epochs": "epochs",
        "seed": "seed",
        "task": "task",
        "num_runs": "num_runs",
    }
    for flag, key in flag_map.items():
        value = getattr(args, flag)
        if value is not None:
            base[key] = value
    if args.alpha is not None:
        base["loss"]["alpha"] = args.alpha
    if args.tau is not None:
        base["loss"]["tau"] = args.tau
    if args.d is not None:
        base["model"]["encoder"]["d"] = args.d
    if args.encoder_kind is not None:
        base["model"]["encoder"]["encoder_kind"] = args.encoder_kind
    if args.encoder_checkpoint is not None:
        base["model"]["encoder"]["checkpoint_path"] = args.encoder_checkpoint
    if args.freeze_encoder:
        base["model"]["encoder"]["freeze"] = True
    if args.no_fusion:
        base["model"]["no_fusion"] = True
    if args.pooled_attention:
        base["model"]["pooled_attention"] = True
    vocab_size = args.vocab_size or base.pop("vocab_size", 4096)
    base.pop("vocab_size", None)
    return train_config_from_dict(base), vocab_size


def cmd_train(args) -> int:
    cfg, vocab_size = _build_train_config(args)
    split_records = _read_split_records(args.splits_dir)
    encoded, tokenizer, normalizer = prepare_splits(split_records, cfg, vocab_size)
    model, manifest = train(encoded, cfg)
    ckpt_dir = resolve_checkpoint(args.checkpoint_dir)
    save_checkpoint(ckpt_dir, model, manifest, tokenizer, normalizer)
    eval_split = "test" if "test" in encoded else ("validation" if "validation" in encoded else "train")
    _write_json(ckpt_dir / "metrics.json",
                {k: manifest.reports[eval_split][k] for k in METRIC_KEYS})
    print(f"checkpoint -> {ckpt_dir} (best epoch {manifest.best_epoch}, "
          f"{manifest.wall_time_seconds:.1f}s)")
    for name, report in manifest.reports.items():
        print(f"{name}: " + " ".join(f"{k}={report[k]}" for k in METRIC_KEYS))
    if cfg.num_runs > 1:
        summary = run_repeated(encoded, cfg)
        _write_json(ckpt_dir / "repeated_metrics.json", summary)
        print(f"{cfg.num_runs} runs on {summary['eval_split']}: "
              + " ".join(f"{k}={summary['mean'][k]}" for k in METRIC_KEYS))
    return 0


def _encode_for_checkpoint(ckpt_dir: Path, split_path: str | Path):
    model, manifest, tokenizer, normalizer = load_checkpoint(ckpt_dir)
    cfg = train_config_from_dict(manifest["config"])
    records = _ingest_records(split_path, "split")
    encoded = encode_records(
        records, tokenizer, normalizer, cfg.task, cfg.title_max_len, cfg.abstract_max_len
    )
    return model, cfg, encoded


def cmd_evaluate(args) -> int:
    ckpt_dir = resolve_checkpoint(args.checkpoint)
    _require_file(ckpt_dir / training.MANIFEST_FILE, "train")
    model, cfg, encoded = _encode_for_checkpoint(ckpt_dir, args.split)
    report = evaluate(model, encoded)
    _write_json(args.output, report.metrics())
    print(f"{args.split}: " + " ".join(f"{k}={v}" for k, v in report.metrics().items()))
    return 0


def cmd_baselines(args) -> int:
    split_records = _read_split_records(args.splits_dir)
    if "test" in split_records:
        eval_name = "test"
    elif "validation" in split_records:
        eval_name = "validation"
    else:
        raise ValidationError(
            "baselines need a validation or test split; produce one with `imac split`"
        )
    train_records = split_records["train"]
    eval_records = split_records[eval_name]
    vocab = build_vocab(train_records, k=args.vocab_k)
    normalizer = fit_normalizer(train_records)
    train_x = [featurize_baseline(r, vocab, normalizer) for r in train_records]
    train_y = [label_index_of(r, args.task) for r in train_records]
    eval_x = [featurize_baseline(r, vocab, normalizer) for r in eval_records]
    eval_y = [label_index_of(r, args.task) for r in eval_records]
    out_dir = Path(args.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    for kind in BASELINE_KINDS:
        model = make_baseline(BaselineConfig(kind=kind, k=args.k))
        model.fit(train_x, train_y, ids=[r.id for r in train_records])
        report = EvalReport.from_predictions(eval_y, model.predict(eval_x))
        _write_json(out_dir / f"{kind}_metrics.json", report.metrics())
        print(f"{kind}: " + " ".join(f"{k}={v}" for k, v in report.metrics().items()))
    return 0


def cmd_predict(args) -> int:
    ckpt_dir = resolve_checkpoint(args.checkpoint)
    _require_file(ckpt_dir / training.MANIFEST_FILE, "train")
    model, manifest, tokenizer, normalizer = load_checkpoint(ckpt_dir)
    cfg = train_config_from_dict(manifest["config"])
    article = json.loads(_require_file(args.article, "synth").read_text())
    record = corpus.validate_record(article, require_outcome=False)
    bundle = corpus.bundle_record(
        record, tokenizer, normalizer, cfg.title_max_len, cfg.abstract_max_len
    )
    trace = model.forward_bundle(bundle)
    p = [float(x) for x in trace.p.detach()]
    result = {
        "id": record.id,
        "task": cfg.task,
        "label": training.INDEX_TO_LABEL[int(trace.p.argmax())],
        "p": p,
    }
    print(json.dumps(result, sort_keys=True))
    if args.output:
        _write_json(args.output, result)
    return 0


def cmd_export_embeddings(args) -> int:
    ckpt_dir = resolve_checkpoint(args.checkpoint)
    _require_file(ckpt_dir / training.MANIFEST_FILE, "train")
    model, cfg, encoded = _encode_for_checkpoint(ckpt_dir, args.split)
    rows = export_embeddings(model, encoded, args.n_per_class, seed=args.seed, path=args.output)
    print(f"wrote {len(rows)} rows -> {args.output}")
    return 0


def cmd_analyze(args) -> int:
    if args.what == "correlations":
        records = _ingest_records(args.corpus, "label")
        matrix = bibliometrics.correlation_matrix(records, method=args.method)
        _write_json(args.output, matrix)
        for indicator, row in matrix.items():
            print(f"{indicator}: " + " ".join(
                f"{feat}={val if val is None else round(val, 4)}"
                for feat, val in row.items()
            ))
        return 0
    histories = bibliometrics.read_citation_histories(_require_file(args.histories, "synth"))
    params = bibliometrics.AifParams(d=args.d, cits_m=args.cits_m)
    report = bibliometrics.stability_report(histories, threshold=args.threshold)
    gaps = [
        bibliometrics.sensitivity_gap(h, params, args.jif)
        for h in histories[: args.gap_sample]
    ]
    payload = json.loads(report.to_json())
    payload["max_sensitivity_gap"] = max((g[0] for g in gaps), default=0.0)
    payload["max_raw_gap"] = max((g[1] for g in gaps), default=0.0)
    _write_json(args.output, payload)
    print(f"flips: {report.flip_count}/{report.total} "
          f"(fraction {report.flip_fraction:.6f})")
    return 0


def cmd_synth(args) -> int:
    cfg = synthetic.SyntheticConfig(
        n_records=args.n, seed=args.seed, positive_fraction=args.positive_fraction
    )
    articles_path, journals_path = synthetic.write_corpus(args.output_dir, cfg)
    print(f"wrote {args.n} articles -> {articles_path}")
    print(f"wrote journal table -> {journals_path}")
    if args.histories > 0:
        rows = synthetic.generate_citation_histories(args.histories, seed=args.seed)
        hist_path = Path(args.output_dir) / "histories.csv"
        with hist_path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=["article_id", "cits_4y", "cits_8y"])
            writer.writeheader()
            writer.writerows(rows)
        print(f"wrote {args.histories} citation histories -> {hist_path}")
    return 0


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="imac", description="Impact-based manuscript assessment pipeline"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("ingest", help="validate a raw JSONL article file")
    p.add_argument("--input", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--year-min", type=int, default=1900)
    p.add_argument("--year-max", type=int, default=2100)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("label", help="attach impact scores and labels")
    p.add_argument("--corpus", required=True)
    p.add_argument("--journals", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--d", type=float, default=0.4, help="citation/venue balance in (0, 0.5)")
    p.add_argument("--cits-m", type=float, default=None,
                   help="median citation count override (default: corpus median)")
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("split", help="stratified train/validation/test split")
    p.add_argument("--corpus", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--train", type=float, default=0.8)
    p.add_argument("--val", type=float, default=0.1)
    p.add_argument("--test", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--task", choices=training.TASKS, default="journal_impact")
    p.set_defaults(func=cmd_split)

    p = sub.add_parser("train", help="train the network and save a checkpoint")
    p.add_argument("--splits-dir", required=True)
    p.add_argument("--checkpoint-dir", required=True)
    p.add_argument("--config", default=None, help="JSON config; flags override it")
    p.add_argument("--task", choices=training.TASKS, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--num-runs", type=int, default=None)
    p.add_argument("--alpha", type=float, default=None)
    p.add_argument("--tau", type=float, default=None)
    p.add_argument("--d", type=int, default=None, help="embedding dimension")
    p.add_argument("--encoder-kind", choices=("small_trainable", "pretrained_checkpoint"),
                   default=None)
    p.add_argument("--encoder-checkpoint", default=None)
    p.add_argument("--freeze-encoder", action="store_true")
    p.add_argument("--no-fusion", action="store_true",
                   help="ablation: bypass attention and gating (text = residual sum)")
    p.add_argument("--pooled-attention", action="store_true",
                   help="ablation: degenerate attention over pooled vectors")
    p.add_argument("--vocab-size", type=int, default=None)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("evaluate", help="metrics JSON for a checkpoint on a split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("baselines", help="fit and score knn/svm/lr/zeror")
    p.add_argument("--splits-dir", required=True)
    p.add_argument("--output-dir", required=True)
    p.add_argument("--task", choices=training.TASKS, default="journal_impact")
    p.add_argument("--k", type=int, default=5)
    p.add_argument("--vocab-k", type=int, default=50)
    p.set_defaults(func=cmd_baselines)

    p = sub.add_parser("predict", help="classify one article JSON")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--article", required=True)
    p.add_argument("--output", default=None)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("export-embeddings", help="2-D fused-feature CSV")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--split", required=True)
    p.add_argument("--output", required=True)
    p.add_argument("--n-per-class", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_export_embeddings)

    p = sub.add_parser("analyze", help="correlation or stability analysis")
    p.add_argument("--what", choices=("correlations", "stability"), required=True)
    p.add_argument("--corpus", help="labeled corpus (correlations)")
    p.add_argument("--method", choices=("pearson", "spearman"), default="pearson")
    p.add_argument("--histories", help="citation-history CSV (stability)")
    p.add_argument("--threshold", type=int, default=20)
    p.add_argument("--d", type=float, default=0.4)
    p.add_argument("--cits-m", type=float, default=29.0)
    p.add_argument("--jif", type=float, default=6.0,
                   help="venue jif used for the sensitivity-gap summary")
    p.add_argument("--gap-sample", type=int, default=1000)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("synth", help="generate the synthetic demo corpus")
    p.add_argument("--output-dir", required=True)
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--positive-fraction", type=float, default=0.5)
    p.add_argument("--histories", type=int, default=0,
                   help="also write this many synthetic citation histories")
    p.set_defaults(func=cmd_synth)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.command == "analyze":
            if args.what == "correlations" and not args.corpus:
                return _fail("analyze --what correlations requires --corpus")
            if args.what == "stability" and not args.histories:
                return _fail("analyze --what stability requires --histories")
        return args.func(args)
    except ImacError as exc:
        return _fail(str(exc))
    except FileNotFoundError as exc:
        return _fail(f"missing artifact: {exc}")


if __name__ == "__main__":
    sys.exit(main())
