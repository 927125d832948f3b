"""Operator CLI: ingest -> stats -> label -> train -> eval -> matrix -> sweep -> report.

Every command validates inputs before writing anything, controls all
randomness through --seed, embeds its resolved configuration in each output
file, and never mutates its inputs. Reruns with identical inputs overwrite
outputs byte-identically (reports carry no wall-clock state).
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from . import evaluation, labeling, strategies, synth
from .nnet import (
    CheckpointError,
    ModelConfig,
    load_checkpoint,
    load_external_features,
    read_checkpoint_header,
)
from .nnet.features import FeatureError

_WIDTH = 96


class CliError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # single-line machine-parsable error, nonzero exit
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(2)


def _formatter(prog):
    return argparse.ArgumentDefaultsHelpFormatter(prog, width=_WIDTH)


def _names(value: str) -> list[str]:
    return [v for v in (x.strip() for x in value.split(",")) if v]


def _add_shared(p, seed_required=False, workers=False):
    p.add_argument("--corpus", required=True, help="corpus file (JSON records, one per line)")
    p.add_argument("--out", required=True, help="output directory (created if missing)")
    if seed_required:
        p.add_argument("--seed", type=int, required=True, help="random seed (required)")
    if workers:
        p.add_argument("--workers", type=int, default=1, help="evaluation worker processes")


def _add_partition(p):
    p.add_argument("--source", type=_names, default=None, help="comma-separated source domains")
    p.add_argument("--heldout", type=_names, default=None, help="comma-separated held-out domains")


def _add_train_flags(p):
    # unset flags fall back to --config values, then to the TrainConfig default
    d = strategies.TrainConfig()
    p.add_argument("--config", default=None, help="training config file (key = value lines)")
    p.add_argument("--strategy", choices=strategies.STRATEGIES, default=None,
                   help=f"learning strategy (config default {d.strategy})")
    p.add_argument("--gamma", type=float, default=None,
                   help=f"meta mixing weight in [0,1] (config default {d.gamma})")
    p.add_argument("--inner-step", type=float, default=None,
                   help="meta inner step size (config default: the learning rate)")
    p.add_argument("--second-order", action="store_true",
                   help="exact meta gradient (toy scale)")
    p.add_argument("--relabel-prob", type=float, default=None,
                   help=f"unknown-tag relabel probability (config default {d.relabel_prob})")
    p.add_argument("--epochs", type=int, default=None,
                   help=f"training epochs (config default {d.epochs})")
    p.add_argument("--batch-size", type=int, default=None,
                   help=f"documents per step (config default {d.batch_size})")
    p.add_argument("--learning-rate", type=float, default=None,
                   help=f"outer step size (config default {d.learning_rate})")
    p.add_argument("--optimizer", choices=("sgd", "adam"), default=None,
                   help=f"parameter update rule (config default {d.optimizer})")
    p.add_argument("--schedule", choices=strategies.SCHEDULES, default=None,
                   help=f"per-step domain scheduling (config default {d.domain_schedule})")
    p.add_argument("--patience", type=int, default=None,
                   help=f"early-stopping patience in epochs (config default {d.patience})")
    p.add_argument("--eval-k", type=int, default=None,
                   help=f"validation selection size (config default {d.eval_k})")
    p.add_argument("--features", default=None, help="external feature .npz (pretrained strategy)")
    p.add_argument("--model-config", default=None, help="model config JSON file")


def build_parser() -> _Parser:
    parser = _Parser(prog="domainsum", formatter_class=_formatter,
                     description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", metavar="COMMAND")

    p = sub.add_parser("synth", formatter_class=_formatter,
                       help="generate a synthetic multi-domain corpus")
    p.add_argument("--spec", required=True,
                   help="preset name (demo, accept3) or a spec JSON file")
    p.add_argument("--out", required=True)
    p.add_argument("--seed", type=int, required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("ingest", formatter_class=_formatter,
                       help="validate a corpus and write the normalized copy")
    _add_shared(p)
    _add_partition(p)
    p.set_defaults(func=cmd_ingest)

    p = sub.add_parser("stats", formatter_class=_formatter,
                       help="per-domain counts, measures and baselines (test split)")
    _add_shared(p)
    _add_partition(p)
    p.add_argument("--k", type=int, default=2, help="lead baseline size")
    p.add_argument("--max-select", type=int, default=3, help="oracle sentence budget")
    p.set_defaults(func=cmd_stats)

    p = sub.add_parser("label", formatter_class=_formatter,
                       help="add greedy-oracle labels to every record")
    _add_shared(p)
    p.add_argument("--max-select", type=int, default=3, help="oracle sentence budget")
    p.add_argument("--gain-metric", choices=labeling.GAIN_METRICS,
                   default=labeling.DEFAULT_GAIN_METRIC)
    p.set_defaults(func=cmd_label)

    p = sub.add_parser("train", formatter_class=_formatter,
                       help="train one model on the source domains")
    _add_shared(p, seed_required=True)
    _add_partition(p)
    _add_train_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", formatter_class=_formatter,
                       help="score a checkpoint under the evaluation settings")
    _add_shared(p, workers=True)
    _add_partition(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--k", type=int, default=2, help="sentences selected per document")
    p.add_argument("--tag-policy", choices=evaluation.TAG_POLICIES, default="true_tag")
    p.add_argument("--bins", type=int, default=20, help="position histogram bins")
    p.add_argument("--cross-corpus", default=None, help="cross-dataset corpus file")
    p.add_argument("--features", default=None, help="external feature .npz")
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("matrix", formatter_class=_formatter,
                       help="train one model per domain and emit the R/V matrix")
    _add_shared(p, seed_required=True, workers=True)
    p.add_argument("--domains", type=_names, default=None,
                   help="domains to include (default: all)")
    p.add_argument("--k", type=int, default=2)
    _add_train_flags(p)
    p.set_defaults(func=cmd_matrix)

    p = sub.add_parser("sweep-gamma", formatter_class=_formatter,
                       help="train meta models across gamma values and tabulate")
    _add_shared(p, seed_required=True, workers=True)
    _add_partition(p)
    p.add_argument("--gammas", default="0.25,0.5,0.75,1.0",
                   help="comma-separated gamma values")
    p.add_argument("--cross-corpus", default=None)
    _add_train_flags(p)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", formatter_class=_formatter,
                       help="bundle artifacts in a directory into one report")
    p.add_argument("--out", required=True, help="directory holding prior command outputs")
    p.set_defaults(func=cmd_report)

    return parser


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _load_corpus(args):
    path = Path(args.corpus)
    if not path.exists():
        raise CliError(f"corpus file not found: {path}")
    return corpus_mod.ingest(
        path, source=getattr(args, "source", None), heldout=getattr(args, "heldout", None)
    )


def _load_plain_corpus(path):
    path = Path(path)
    if not path.exists():
        raise CliError(f"corpus file not found: {path}")
    return corpus_mod.ingest(path)


def _config_note(args, extra: dict | None = None) -> str:
    skip = {"func", "command", "out", "corpus"}
    blob = {
        k: v for k, v in sorted(vars(args).items())
        if k not in skip and not callable(v)
    }
    if getattr(args, "corpus", None):
        blob["corpus_hash"] = evaluation.git_blob_sha1(args.corpus)
    if extra:
        blob.update(extra)
    return json.dumps(blob, sort_keys=True, default=str)


def _model_config(args) -> ModelConfig:
    if getattr(args, "model_config", None):
        with open(args.model_config, encoding="utf-8") as fh:
            return ModelConfig.from_dict(json.load(fh))
    return ModelConfig()


def _train_config(args) -> strategies.TrainConfig:
    overrides = {}
    for flag, key in (
        ("strategy", "strategy"), ("gamma", "gamma"), ("inner_step", "inner_step_size"),
        ("relabel_prob", "relabel_prob"), ("epochs", "epochs"), ("batch_size", "batch_size"),
        ("learning_rate", "learning_rate"), ("optimizer", "optimizer"),
        ("schedule", "domain_schedule"), ("patience", "patience"), ("eval_k", "eval_k"),
    ):
        value = getattr(args, flag, None)
        if value is not None:
            overrides[key] = value
    if getattr(args, "second_order", False):
        overrides["meta_second_order"] = True
    overrides["seed"] = args.seed
    if getattr(args, "config", None):
        text = Path(args.config).read_text(encoding="utf-8")
        return strategies.parse_train_config(text, **overrides)
    return strategies.TrainConfig(**overrides)


def cmd_synth(args) -> int:
    spec_arg = args.spec
    if Path(spec_arg).exists():
        spec = synth.load_spec_file(spec_arg)
    else:
        spec = synth.preset_spec(spec_arg)
    out = _outdir(args)
    synth.make_synthetic_corpus(spec, args.seed, out / "corpus.jsonl")
    print(f"wrote {out / 'corpus.jsonl'}")
    return 0


def cmd_ingest(args) -> int:
    corpus = _load_corpus(args)
    out = _outdir(args)
    meta = json.loads(_config_note(args))
    corpus_mod.write_corpus(corpus, out / "corpus.jsonl", meta=meta)
    for dom in corpus.registry.real_domains:
        group = "source" if dom.id in corpus.source_domains else "heldout"
        counts = "/".join(
            str(len(corpus.docs(domain=dom, split=s))) for s in corpus_mod.SPLITS
        )
        print(f"{dom.name}: {group} train/valid/test = {counts}")
    print(f"wrote {out / 'corpus.jsonl'}")
    return 0


def cmd_stats(args) -> int:
    corpus = _load_corpus(args)
    rows = corpus_mod.stats(corpus, lead_k=args.k, oracle_max_select=args.max_select)
    csv_text = corpus_mod.format_stats_csv(rows, config_note=_config_note(args))
    out = _outdir(args)
    (out / "stats.csv").write_text(csv_text, encoding="utf-8")
    sys.stdout.write(csv_text)
    return 0


def cmd_label(args) -> int:
    corpus = _load_corpus(args)
    labeled = labeling.label_corpus_documents(
        corpus.documents, max_select=args.max_select, metric=args.gain_metric
    )
    corpus = corpus_mod.Corpus(
        registry=corpus.registry,
        documents=labeled,
        source_domains=corpus.source_domains,
        heldout_domains=corpus.heldout_domains,
    )
    out = _outdir(args)
    meta = json.loads(_config_note(args))
    corpus_mod.write_corpus(corpus, out / "labeled.jsonl", meta=meta)
    print(f"wrote {out / 'labeled.jsonl'}")
    return 0


def cmd_train(args) -> int:
    corpus = _load_corpus(args)
    train_cfg = _train_config(args)
    model_cfg = _model_config(args)
    features = load_external_features(args.features) if args.features else None
    out = _outdir(args)
    ckpt = out / "checkpoint.ckpt"
    report, _, _ = strategies.train(
        corpus, model_cfg, train_cfg, checkpoint_path=ckpt, external_features=features
    )
    report_dict = report.to_dict()
    report_dict["checkpoint_path"] = ckpt.name
    report_dict["config"] = json.loads(
        _config_note(args, extra={"resolved_train_config": train_cfg.to_dict(),
                                  "model_config": model_cfg.to_dict()})
    )
    evaluation.write_json(report_dict, out / "train_report.json")
    print(f"trained {train_cfg.strategy} model: best epoch {report.best_epoch}, "
          f"valid ROUGE-1 {report.best_valid_rouge1:.2f} "
          f"({report.wall_time_s:.1f}s)", file=sys.stderr)
    print(f"wrote {ckpt}")
    return 0


def cmd_eval(args) -> int:
    corpus = _load_corpus(args)
    cross = _load_plain_corpus(args.cross_corpus) if args.cross_corpus else None
    features = load_external_features(args.features) if args.features else None
    out = _outdir(args)
    report = evaluation.evaluate_settings(
        args.checkpoint, corpus, k=args.k, tag_policy=args.tag_policy,
        cross_corpus=cross, features=features, workers=args.workers,
    )
    note = _config_note(args, extra={"checkpoint_header": read_checkpoint_header(args.checkpoint)["config"]})
    report_dict = report.to_dict()
    report_dict["config"] = json.loads(note)
    evaluation.write_json(report_dict, out / "eval_report.json")

    lines = [f"# config: {note}", "setting,domain,r1,r2,rl,rmean"]
    for setting, table in (("in_domain", report.in_domain), ("out_of_domain", report.out_domain)):
        for name, scores in table.items():
            lines.append(f"{setting},{name},{scores['r1']:.2f},{scores['r2']:.2f},"
                         f"{scores['rl']:.2f},{scores['rmean']:.2f}")
    if report.cross_dataset:
        c = report.cross_dataset
        lines.append(f"cross_dataset,all,{c['r1']:.2f},{c['r2']:.2f},{c['rl']:.2f},{c['rmean']:.2f}")
    (out / "eval_scores.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")

    _write_histograms(args, corpus, features, out, note)
    print(f"wrote {out / 'eval_report.json'}")
    return 0


def _write_histograms(args, corpus, features, out: Path, note: str) -> None:
    labeled_domains = [
        d for d in corpus.registry.real_domains
        if any(doc.labels is not None for doc in corpus.docs(domain=d, split="test"))
    ]
    if not labeled_domains:
        print("no labels in corpus; skipping position histograms", file=sys.stderr)
        return
    params = load_checkpoint(args.checkpoint)
    from .nnet import load_checkpoint_vocabulary

    vocab = load_checkpoint_vocabulary(args.checkpoint)
    for dom in labeled_domains:
        docs = [d for d in corpus.docs(domain=dom, split="test") if d.labels is not None]
        tag_id = evaluation._resolve_tag(
            corpus, dom.id, args.tag_policy, params.config.use_domain_tag
        )
        selections = [
            evaluation.predict_selection(params, vocab, doc, args.k, tag_id, features)
            for doc in docs
        ]
        hist = evaluation.position_histogram(docs, selections, bins=args.bins)
        (out / f"histogram_{dom.name}.csv").write_text(
            hist.to_csv(config_note=note), encoding="utf-8"
        )


def cmd_matrix(args) -> int:
    base = _load_plain_corpus(args.corpus)
    names = args.domains or [d.name for d in base.registry.real_domains]
    if len(names) < 2:
        raise CliError("matrix needs at least two domains")
    out = _outdir(args)
    train_cfg = _train_config(args)
    if train_cfg.strategy != "joint":
        train_cfg = replace(train_cfg, strategy="joint")
    model_cfg = _model_config(args)
    checkpoints: dict[str, Path] = {}
    for name in names:
        single = base.with_partition(source=[name], heldout=[n for n in base_names(base) if n != name])
        ckpt = out / f"model_{name}.ckpt"
        strategies.train(single, model_cfg, train_cfg, checkpoint_path=ckpt)
        checkpoints[name] = ckpt
        print(f"trained {name}", file=sys.stderr)
    matrix = evaluation.cross_domain_matrix(
        {n: p for n, p in checkpoints.items()}, base, k=args.k,
        tag_policy="unknown_tag", workers=args.workers,
    )
    note = _config_note(args, extra={"resolved_train_config": train_cfg.to_dict()})
    (out / "matrix.csv").write_text(matrix.to_csv(config_note=note), encoding="utf-8")
    report = evaluation.matrix_report(
        matrix,
        corpus_hash=evaluation.git_blob_sha1(args.corpus),
        seeds=[args.seed],
        train_config=train_cfg.to_dict(),
        model_config=model_cfg.to_dict(),
    )
    evaluation.write_json(report, out / "matrix_report.json")
    sys.stdout.write(matrix.to_csv())
    return 0


def base_names(corpus) -> list[str]:
    return [d.name for d in corpus.registry.real_domains]


def cmd_sweep(args) -> int:
    corpus = _load_corpus(args)
    cross = _load_plain_corpus(args.cross_corpus) if args.cross_corpus else None
    gammas = [float(x) for x in _names(args.gammas)]
    train_cfg = _train_config(args)
    model_cfg = _model_config(args)
    out = _outdir(args)
    rows = evaluation.gamma_sweep(
        corpus, model_cfg, train_cfg, gammas, cross_corpus=cross,
        checkpoint_dir=out, workers=args.workers,
    )
    note = _config_note(args, extra={"resolved_train_config": train_cfg.to_dict()})
    csv_text = evaluation.gamma_sweep_csv(rows, config_note=note)
    (out / "gamma_sweep.csv").write_text(csv_text, encoding="utf-8")
    evaluation.write_json(
        {"rows": rows, "config": json.loads(note)}, out / "gamma_report.json"
    )
    sys.stdout.write(csv_text)
    return 0


def cmd_report(args) -> int:
    out = Path(args.out)
    if not out.is_dir():
        raise CliError(f"not a directory: {out}")
    summary: dict = {"artifacts": {}}
    for name in sorted(p.name for p in out.iterdir()):
        path = out / name
        if name.endswith(".json"):
            summary["artifacts"][name] = json.loads(path.read_text(encoding="utf-8"))
        elif name.endswith((".csv", ".jsonl", ".ckpt", ".npz")):
            summary["artifacts"][name] = {
                "bytes": path.stat().st_size,
                "sha1": evaluation.git_blob_sha1(path),
            }
    evaluation.write_json(summary, out / "report.json")
    print(f"wrote {out / 'report.json'} ({len(summary['artifacts'])} artifacts)")
    return 0


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not getattr(args, "command", None):
        parser.print_help()
        return 2
    try:
        return args.func(args)
    except (CliError, corpus_mod.CorpusError, strategies.TrainingError,
            evaluation.EvaluationError, CheckpointError, FeatureError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
