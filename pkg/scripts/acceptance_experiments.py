"""Desk-scale experiment driver used to pin the acceptance recipe.

Not part of the package; run from the repo root:
    python scripts/acceptance_experiments.py --quick
"""

import argparse
import statistics
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1] / "src"))

from domainsum.corpus import Corpus, ingest, write_corpus
from domainsum.evaluation import cross_domain_matrix, evaluate_settings
from domainsum.labeling import label_corpus_documents
from domainsum.nnet import ModelConfig
from domainsum.strategies import TrainConfig, train
from domainsum.synth import SynthDomainSpec, SynthSpec, make_synthetic_corpus

SEEDS = [11, 22, 33, 44, 55]


def build_corpus(workdir: Path, n_docs: int, marker_rate: float, cue_rate: float,
                 hilite_rate: float, trap: bool):
    middle_marker = ("zzfirst", "zzlast") if trap else None
    spec = SynthSpec(
        domains=(
            SynthDomainSpec("first", "first", n_docs, marker_rate=marker_rate),
            SynthDomainSpec("middle", "middle", n_docs, marker=middle_marker,
                            marker_rate=marker_rate),
            SynthDomainSpec("last", "last", n_docs, marker_rate=marker_rate),
        ),
        cue_rate=cue_rate,
        hilite_rate=hilite_rate,
    )
    corpus_path = workdir / "corpus.jsonl"
    labeled_path = workdir / "labeled.jsonl"
    t0 = time.perf_counter()
    make_synthetic_corpus(spec, seed=1234, path=corpus_path)
    corpus = ingest(corpus_path)
    labeled = Corpus(
        registry=corpus.registry,
        documents=label_corpus_documents(corpus.documents, max_select=2),
        source_domains=corpus.source_domains,
        heldout_domains=corpus.heldout_domains,
    )
    write_corpus(labeled, labeled_path)
    print(f"[corpus] {3*n_docs} docs generated+labeled in {time.perf_counter()-t0:.1f}s")
    return labeled_path


def model_config(args) -> ModelConfig:
    return ModelConfig(
        embed_dim=args.embed,
        conv_filter_widths=tuple(args.widths),
        conv_filters_per_width=args.filters,
        model_dim=args.model_dim,
        attention_heads=2,
        ffn_dim=args.ffn,
        tag_embed_dim=8,
        dropout_rate=0.0,
    )


def train_config(args, strategy, seed, **kw) -> TrainConfig:
    return TrainConfig(
        strategy=strategy,
        epochs=args.epochs,
        batch_size=args.batch,
        learning_rate=args.lr,
        optimizer=args.optimizer,
        relabel_prob=args.relabel,
        gamma=kw.pop("gamma", 0.5),
        seed=seed,
        patience=args.epochs,
        eval_k=2,
        **kw,
    )


def run_matrix(args, labeled_path):
    base = ingest(labeled_path)
    names = [d.name for d in base.registry.real_domains]
    per_seed = []
    for seed in SEEDS[: args.n_seeds]:
        t0 = time.perf_counter()
        stores = {}
        vocabs = {}
        for name in names:
            single = base.with_partition([name], [n for n in names if n != name])
            _, params, vocab = train(single, model_config(args), train_config(args, "joint", seed))
            stores[name] = (params, vocab)
        r = np.zeros((len(names), len(names)))
        from domainsum.evaluation import evaluate_model

        for i, tr in enumerate(names):
            params, vocab = stores[tr]
            scores = evaluate_model(params, base, k=2, tag_policy="unknown_tag",
                                    domains=names, vocab=vocab)
            for j, te in enumerate(names):
                r[i, j] = scores[te]["r1"]
        from domainsum.evaluation import derive_v

        v = derive_v(r)
        per_seed.append(v)
        print(f"[matrix seed {seed}] {time.perf_counter()-t0:.1f}s  diag={np.diag(r).round(1)}")
        print(np.round(v, 1))
    med = np.median(np.stack(per_seed), axis=0)
    off = med[~np.eye(len(names), dtype=bool)]
    print(f"[matrix] median V:\n{np.round(med, 2)}")
    print(f"[matrix] all off-diagonal < 0: {bool(np.all(off < 0))}  max={off.max():.2f}")


def run_strategies(args, labeled_path):
    rows = {s: [] for s in ("joint", "tag", "meta")}
    for seed in SEEDS[: args.n_seeds]:
        corpus = ingest(labeled_path, source=["first", "last"], heldout=["middle"])
        for strategy in rows:
            t0 = time.perf_counter()
            cfg = train_config(args, strategy, seed)
            _, params, vocab = train(corpus, model_config(args), cfg)
            rep = evaluate_settings(params, corpus, k=2, vocab=vocab)
            in_r1 = rep.average("in", "r1")
            out_r1 = rep.average("out", "r1")
            rows[strategy].append((in_r1, out_r1, rep.delta_r("r1")))
            print(f"[{strategy} seed {seed}] in={in_r1:.2f} out={out_r1:.2f} "
                  f"dR={rep.delta_r('r1'):.2f} ({time.perf_counter()-t0:.1f}s)")
    med = {s: tuple(statistics.median(x[i] for x in rows[s]) for i in range(3)) for s in rows}
    for s, (i, o, d) in med.items():
        print(f"[median {s}] in={i:.2f} out={o:.2f} dR={d:.2f}")
    print(f"[C6a] tag_in >= joint_in: {med['tag'][0] >= med['joint'][0]}")
    print(f"[C6b] meta_dR <= tag_dR <= joint_dR: "
          f"{med['meta'][2] <= med['tag'][2] <= med['joint'][2]}")
    return rows


def run_gamma(args, labeled_path):
    rows = {g: [] for g in (0.25, 1.0)}
    for seed in SEEDS[: args.n_seeds]:
        corpus = ingest(labeled_path, source=["first", "last"], heldout=["middle"])
        for gamma in rows:
            cfg = train_config(args, "meta", seed, gamma=gamma)
            _, params, vocab = train(corpus, model_config(args), cfg)
            rep = evaluate_settings(params, corpus, k=2, vocab=vocab)
            in_m = rep.average("in", "rmean")
            out_m = rep.average("out", "rmean")
            rows[gamma].append((in_m, out_m, abs(in_m - out_m)))
            print(f"[gamma {gamma} seed {seed}] in={in_m:.2f} out={out_m:.2f} dR={abs(in_m-out_m):.2f}")
    med = {g: tuple(statistics.median(x[i] for x in rows[g]) for i in range(3)) for g in rows}
    for g, (i, o, d) in med.items():
        print(f"[median gamma {g}] in={i:.2f} out={o:.2f} dR={d:.2f}")
    print(f"[C7a] in(1.0) >= in(0.25): {med[1.0][0] >= med[0.25][0]}")
    print(f"[C7b] dR(0.25) <= dR(1.0): {med[0.25][2] <= med[1.0][2]}")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--n-docs", type=int, default=2000)
    ap.add_argument("--n-seeds", type=int, default=5)
    ap.add_argument("--marker-rate", type=float, default=1.0)
    ap.add_argument("--cue-rate", type=float, default=1.0)
    ap.add_argument("--hilite-rate", type=float, default=1.0)
    ap.add_argument("--trap", action="store_true",
                    help="heldout domain reuses the first domain's marker token")
    ap.add_argument("--embed", type=int, default=16)
    ap.add_argument("--widths", type=int, nargs="+", default=[1, 2])
    ap.add_argument("--filters", type=int, default=4)
    ap.add_argument("--model-dim", type=int, default=32)
    ap.add_argument("--ffn", type=int, default=48)
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--lr", type=float, default=0.01)
    ap.add_argument("--optimizer", default="adam")
    ap.add_argument("--relabel", type=float, default=0.15)
    ap.add_argument("--workdir", default="/tmp/acc_exp")
    ap.add_argument("--quick", action="store_true", help="200 docs, 2 seeds")
    ap.add_argument("--only", choices=("matrix", "strategies", "gamma"), default=None)
    args = ap.parse_args()
    if args.quick:
        args.n_docs, args.n_seeds = 200, 2
    workdir = Path(args.workdir)
    workdir.mkdir(parents=True, exist_ok=True)
    labeled = workdir / "labeled.jsonl"
    if not labeled.exists():
        labeled = build_corpus(workdir, args.n_docs, args.marker_rate, args.cue_rate,
                               args.hilite_rate, args.trap)
    if args.only in (None, "matrix"):
        run_matrix(args, labeled)
    if args.only in (None, "strategies"):
        run_strategies(args, labeled)
    if args.only in (None, "gamma"):
        run_gamma(args, labeled)


if __name__ == "__main__":
    main()
