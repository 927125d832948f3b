"""Acceptance suite: one test per criterion, one printed verdict line each.

Criteria 5-7 are seed-median directional experiments on the shipped
3-domain synthetic corpus; they carry the `slow` marker. Criterion 9 needs a
user-supplied real corpus (DOMAINSUM_MULTISUM_PATH) and is skipped without
one.
"""

import itertools
import json
import os
import statistics
import sys
import time
from collections import Counter
from pathlib import Path

import numpy as np
import pytest

from domainsum.corpus import Corpus, ingest, write_corpus
from domainsum.evaluation import (
    derive_v,
    domain_classifier,
    evaluate_model,
    evaluate_settings,
)
from domainsum.labeling import greedy_oracle, label_corpus_documents
from domainsum.metrics import extractive_fragments, lcs_length
from domainsum.nnet import ModelConfig, bce_loss, score_sentences
from domainsum.strategies import TrainConfig, meta_step, train
from domainsum.synth import SynthDomainSpec, SynthSpec, make_synthetic_corpus

from conftest import (
    GRADCHECK_SEED,
    TINY_CONFIG,
    finite_difference_worst,
    make_document,
)

SEEDS = [11, 22, 33, 44, 55]

# Desk-scale experiment model: width-1/2 convolutions resolve the content
# tokens, capacity is loose enough that every strategy converges reliably on
# every acceptance seed (tighter models leave joint in a hedging local
# optimum on some seeds).
ACCEPT_MODEL = ModelConfig(
    embed_dim=24,
    conv_filter_widths=(1, 2),
    conv_filters_per_width=8,
    model_dim=48,
    attention_heads=2,
    ffn_dim=64,
    tag_embed_dim=8,
    dropout_rate=0.0,
)


def verdict(criterion: str, ok: bool, detail: str = ""):
    line = f"[{'PASS' if ok else 'FAIL'}] {criterion}"
    if detail:
        line += f" -- {detail}"
    print(line, file=sys.stderr)
    assert ok, line


# --------------------------------------------------------------------------
# criterion 1: metric oracle equivalence
# --------------------------------------------------------------------------


def _lcs_exhaustive(a, b):
    short, long_ = (a, b) if len(a) <= len(b) else (b, a)

    def is_subseq(sub, seq):
        it = iter(seq)
        return all(tok in it for tok in sub)

    for r in range(len(short), 0, -1):
        for combo in itertools.combinations(short, r):
            if is_subseq(combo, long_):
                return r
    return 0


def _fragments_bruteforce(doc, summary):
    fragments = []
    i = 0
    while i < len(summary):
        best_len, best_start = 0, -1
        for j in range(len(doc)):
            length = 0
            while (
                i + length < len(summary)
                and j + length < len(doc)
                and summary[i + length] == doc[j + length]
            ):
                length += 1
            if length > best_len:
                best_len, best_start = length, j
        if best_len:
            fragments.append((best_start, best_len))
            i += best_len
        else:
            i += 1
    total = sum(l for _, l in fragments)
    sq = sum(l * l for _, l in fragments)
    return fragments, total / len(summary), sq / len(summary), len(doc) / len(summary)


def test_criterion_01_metric_oracle_equivalence():
    started = time.perf_counter()
    rng = np.random.default_rng(101)
    alphabet = list("abcde")
    for _ in range(1000):
        a = [alphabet[i] for i in rng.integers(0, 5, size=rng.integers(0, 9))]
        b = [alphabet[i] for i in rng.integers(0, 5, size=rng.integers(0, 9))]
        assert lcs_length(a, b) == _lcs_exhaustive(a, b)
    for _ in range(1000):
        doc = [alphabet[i] for i in rng.integers(0, 3, size=rng.integers(1, 31))]
        summary = [alphabet[i] for i in rng.integers(0, 3, size=rng.integers(1, 11))]
        stats = extractive_fragments(doc, summary)
        frags, cov, den, comp = _fragments_bruteforce(doc, summary)
        assert list(stats.fragments) == frags
        assert stats.coverage == pytest.approx(cov)
        assert stats.density == pytest.approx(den)
        assert stats.compression == pytest.approx(comp)
    elapsed = time.perf_counter() - started
    verdict(
        "criterion 1: metric oracles (LCS exhaustive, fragments brute force)",
        elapsed < 60.0,
        f"2000 cases in {elapsed:.1f}s",
    )


# --------------------------------------------------------------------------
# criterion 2: oracle labeling
# --------------------------------------------------------------------------


def _f1(cand, ref, n):
    cc = Counter(tuple(cand[i : i + n]) for i in range(len(cand) - n + 1))
    rc = Counter(tuple(ref[i : i + n]) for i in range(len(ref) - n + 1))
    overlap = sum((cc & rc).values())
    p = overlap / max(sum(cc.values()), 1)
    r = overlap / max(sum(rc.values()), 1)
    return 0.0 if p + r == 0 else 2 * p * r / (p + r)


def _gain(cand, ref):
    return (_f1(cand, ref, 1) + _f1(cand, ref, 2)) / 2


def test_criterion_02_oracle_labeling():
    started = time.perf_counter()
    rng = np.random.default_rng(202)
    vocab = [f"w{i}" for i in range(8)]
    checked = 0
    for _ in range(200):
        n = int(rng.integers(2, 9))
        sents = [
            " ".join(rng.choice(vocab, size=rng.integers(2, 6))) for _ in range(n)
        ]
        ref = " ".join(rng.choice(vocab, size=rng.integers(2, 7)))
        doc = make_document(sents, [ref])
        sent_tokens = [list(s.tokens) for s in doc.sentences]
        ref_tokens = doc.reference_tokens()
        picks = greedy_oracle(doc, max_select=3)

        # independent greedy re-implementation
        selected, best = [], 0.0
        while len(selected) < 3:
            choice = -1
            for i in range(n):
                if i in selected:
                    continue
                cand = [t for j in sorted(selected + [i]) for t in sent_tokens[j]]
                s = _gain(cand, ref_tokens)
                if s > best:
                    best, choice = s, i
            if choice < 0:
                break
            selected.append(choice)
        assert sorted(picks.selection_order) == sorted(selected)

        # exhaustive subset upper bound
        exhaustive = 0.0
        for r in range(1, 4):
            for combo in itertools.combinations(range(n), r):
                cand = [t for j in combo for t in sent_tokens[j]]
                exhaustive = max(exhaustive, _gain(cand, ref_tokens))
        achieved = (
            _gain(
                [t for j in sorted(picks.selection_order) for t in sent_tokens[j]],
                ref_tokens,
            )
            if picks.selection_order
            else 0.0
        )
        assert achieved <= exhaustive + 1e-12
        checked += 1

    # constructed verbatim cases match exactly
    doc = make_document(
        ["noise one", "the exact answer here", "more noise"],
        ["the exact answer here"],
    )
    assert greedy_oracle(doc, max_select=3).labels == (0, 1, 0)
    doc2 = make_document(["alpha beta", "gamma delta"], ["alpha beta gamma delta"])
    assert greedy_oracle(doc2, max_select=2).labels == (1, 1)
    elapsed = time.perf_counter() - started
    verdict(
        "criterion 2: greedy oracle (independent greedy + exhaustive bound)",
        elapsed < 60.0,
        f"{checked} random docs in {elapsed:.1f}s",
    )


# --------------------------------------------------------------------------
# criterion 3: gradient fidelity
# --------------------------------------------------------------------------


def test_criterion_03_gradient_fidelity(gradcheck_store):
    sents = [[2, 3, 4, 5], [6, 7], [8, 9, 10, 2, 3]]
    labels = np.array([1.0, 0.0, 1.0])
    worsts = {}

    # joint path: unknown tag id (3)
    worsts["joint"], _ = finite_difference_worst(
        gradcheck_store,
        lambda s: bce_loss(score_sentences(s, sents, tag_id=3), labels),
    )
    # tag path: true tag id
    worsts["tag"], _ = finite_difference_worst(
        gradcheck_store,
        lambda s: bce_loss(score_sentences(s, sents, tag_id=1), labels),
    )
    # pretrained path: frozen features through the learned projection
    from domainsum.nnet import init_params

    feat_config = ModelConfig(**{**TINY_CONFIG.to_dict(), "external_feature_dim": 5})
    feat_store = init_params(feat_config, vocab_size=12, n_domains=3, seed=GRADCHECK_SEED).astype(
        np.float64
    )
    rng = np.random.default_rng(1000 + GRADCHECK_SEED)
    for name in ("readout_w", "readout_b"):
        t = feat_store.tensors[name]
        t.data = np.asarray(t.data + rng.uniform(-0.1, 0.1, t.data.shape))
    feats = [rng.normal(size=5) for _ in sents]
    worsts["pretrained"], _ = finite_difference_worst(
        feat_store,
        lambda s: bce_loss(
            score_sentences(s, sents, tag_id=3, external_features=feats), labels
        ),
    )
    grad_ok = all(w <= 1e-4 for w in worsts.values())

    # quadratic meta toy: first-order hand value and exact second order
    from domainsum.nnet import ParameterStore, Tensor

    store = ParameterStore(TINY_CONFIG, vocab_size=0, n_domains=0, rng_seed=0)
    store.tensors["theta"] = Tensor(
        np.array([0.0], dtype=np.float64), requires_grad=True, name="theta"
    )

    def step(params, center):
        theta = float(params["theta"].data[0])
        return (theta - center) ** 2, {
            "theta": np.array([2.0 * (theta - center)], dtype=np.float64)
        }

    def dispatch(params, batch):
        return step(params, {"k": 1.0, "j": -1.0}[batch])

    _, first_order = meta_step(
        store, dispatch, "k", ["j"], gamma=0.5, inner_step_size=0.1
    )
    _, second_order = meta_step(
        store, dispatch, "k", ["j"], gamma=0.5, inner_step_size=0.1, second_order=True
    )
    fo_ok = abs(first_order["theta"][0] - 0.2) <= 1e-9
    so_ok = abs(second_order["theta"][0] - (-0.04)) <= 1e-6
    verdict(
        "criterion 3: gradient fidelity (FD <= 1e-4; meta toy 0.2 / -0.04)",
        grad_ok and fo_ok and so_ok,
        f"FD worst: " + ", ".join(f"{k}={v:.1e}" for k, v in worsts.items())
        + f"; first-order={first_order['theta'][0]:.12f}, "
        f"second-order={second_order['theta'][0]:.8f}",
    )


# --------------------------------------------------------------------------
# criterion 4: Eq.-4 identities
# --------------------------------------------------------------------------


def test_criterion_04_meta_identities(tiny_store):
    from domainsum.strategies import Batch, EncodedExample, run_step

    ex_k = EncodedExample("k0", 0, [[2, 3, 4], [5, 6]], np.array([1.0, 0.0], np.float32))
    ex_j = EncodedExample("j0", 1, [[7, 8], [9, 10, 11]], np.array([0.0, 1.0], np.float32))
    batch_k = Batch([ex_k], [0])
    batch_j = Batch([ex_j], [1])

    def step_fn(params, batch):
        return run_step(params, batch)

    # gamma = 1: bit-identical to the base step
    base_loss, base_grads = step_fn(tiny_store, batch_k)
    loss1, grads1 = meta_step(
        tiny_store, step_fn, batch_k, [batch_j], gamma=1.0, inner_step_size=0.05
    )
    gamma1_ok = loss1 == base_loss and all(
        grads1[n].tobytes() == base_grads[n].tobytes() for n in base_grads
    )

    # alpha = 0: gamma-mixture of plain gradients
    gamma = 0.3
    _, mix = meta_step(
        tiny_store, step_fn, batch_k, [batch_j], gamma=gamma, inner_step_size=0.0
    )
    _, g_k = step_fn(tiny_store, batch_k)
    _, g_j = step_fn(tiny_store, batch_j)
    worst = 0.0
    for name in mix:
        expected = gamma * g_k.get(name, 0.0) + (1 - gamma) * g_j.get(name, 0.0)
        worst = max(worst, float(np.max(np.abs(mix[name] - expected))))
    alpha0_ok = worst <= 1e-9
    verdict(
        "criterion 4: Eq.-4 identities (gamma=1 bitwise; alpha=0 mixture)",
        gamma1_ok and alpha0_ok,
        f"alpha=0 max deviation {worst:.2e}",
    )


# --------------------------------------------------------------------------
# shared corpus for criteria 5-7
# --------------------------------------------------------------------------


TRAIN_RECIPE = dict(batch_size=16, learning_rate=0.01, optimizer="adam")


@pytest.fixture(scope="session")
def accept_corpus(tmp_path_factory):
    tmp = tmp_path_factory.mktemp("accept")
    path = tmp / "corpus.jsonl"
    from domainsum.synth import preset_spec

    make_synthetic_corpus(preset_spec("accept3"), seed=1234, path=path)
    corpus = ingest(path)
    labeled = Corpus(
        registry=corpus.registry,
        documents=label_corpus_documents(corpus.documents, max_select=2),
        source_domains=corpus.source_domains,
        heldout_domains=corpus.heldout_domains,
    )
    labeled_path = tmp / "labeled.jsonl"
    write_corpus(labeled, labeled_path)
    return labeled_path


# --------------------------------------------------------------------------
# criterion 5: domain-shift matrix sign pattern
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_05_domain_shift_matrix(accept_corpus):
    started = time.perf_counter()
    base = ingest(accept_corpus)
    names = [d.name for d in base.registry.real_domains]
    per_seed = []
    for seed in SEEDS:
        cfg = TrainConfig(strategy="joint", epochs=2, seed=seed, patience=2, **TRAIN_RECIPE)
        r = np.zeros((len(names), len(names)))
        for i, name in enumerate(names):
            single = base.with_partition([name], [n for n in names if n != name])
            _, params, vocab = train(single, ACCEPT_MODEL, cfg)
            scores = evaluate_model(
                params, base, k=2, tag_policy="unknown_tag", domains=names, vocab=vocab
            )
            for j, test_dom in enumerate(names):
                r[i, j] = scores[test_dom]["r1"]
        per_seed.append(derive_v(r))
    median_v = np.median(np.stack(per_seed), axis=0)
    off_diag = median_v[~np.eye(len(names), dtype=bool)]
    elapsed = time.perf_counter() - started
    verdict(
        "criterion 5: cross-domain matrix, median off-diagonal V < 0",
        bool(np.all(off_diag < 0)) and elapsed < 900.0,
        f"max off-diagonal {off_diag.max():.2f}, {elapsed:.0f}s",
    )


# --------------------------------------------------------------------------
# criteria 6-7: strategy and gamma orderings
# --------------------------------------------------------------------------


def _train_eval(labeled_path, strategy, seed, gamma=0.5, epochs=3):
    corpus = ingest(labeled_path, source=["first", "last"], heldout=["middle"])
    cfg = TrainConfig(
        strategy=strategy, gamma=gamma, epochs=epochs, seed=seed,
        relabel_prob=0.05, patience=max(epochs, 1), **TRAIN_RECIPE,
    )
    _, params, vocab = train(corpus, ACCEPT_MODEL, cfg)
    report = evaluate_settings(params, corpus, k=2, vocab=vocab)
    return report


@pytest.fixture(scope="session")
def strategy_medians(accept_corpus):
    rows = {s: [] for s in ("joint", "tag", "meta")}
    for seed in SEEDS:
        for strategy in rows:
            rep = _train_eval(accept_corpus, strategy, seed)
            rows[strategy].append(
                (rep.average("in", "r1"), rep.average("out", "r1"), rep.delta_r("r1"))
            )
    return {
        s: tuple(statistics.median(r[i] for r in rows[s]) for i in range(3))
        for s in rows
    }


@pytest.mark.slow
def test_criterion_06a_tag_beats_joint_in_domain(strategy_medians):
    med = strategy_medians
    verdict(
        "criterion 6a: tag in-domain >= joint in-domain (median of 5 seeds)",
        med["tag"][0] >= med["joint"][0],
        f"tag={med['tag'][0]:.2f}, joint={med['joint'][0]:.2f}",
    )


@pytest.mark.slow
def test_criterion_06b_delta_r_ordering(strategy_medians):
    med = strategy_medians
    verdict(
        "criterion 6b: meta dR <= tag dR <= joint dR (median of 5 seeds)",
        med["meta"][2] <= med["tag"][2] <= med["joint"][2],
        f"meta={med['meta'][2]:.2f}, tag={med['tag'][2]:.2f}, joint={med['joint'][2]:.2f}",
    )


@pytest.mark.slow
def test_criterion_07_gamma_sweep_pattern(accept_corpus):
    stats = {}
    for gamma in (0.25, 1.0):
        rows = []
        for seed in SEEDS:
            rep = _train_eval(accept_corpus, "meta", seed, gamma=gamma)
            in_m = rep.average("in", "rmean")
            out_m = rep.average("out", "rmean")
            rows.append((in_m, out_m, abs(in_m - out_m)))
        stats[gamma] = tuple(statistics.median(r[i] for r in rows) for i in range(3))
    in_ok = stats[1.0][0] >= stats[0.25][0]
    dr_ok = stats[0.25][2] <= stats[1.0][2]
    verdict(
        "criterion 7: gamma sweep (in: 1.0 >= 0.25; dR: 0.25 <= 1.0; medians)",
        in_ok and dr_ok,
        f"in(1.0)={stats[1.0][0]:.2f} in(0.25)={stats[0.25][0]:.2f} "
        f"dR(0.25)={stats[0.25][2]:.2f} dR(1.0)={stats[1.0][2]:.2f}",
    )


# --------------------------------------------------------------------------
# criterion 8: domain classifier
# --------------------------------------------------------------------------


def test_criterion_08_domain_classifier(tmp_path):
    spec = SynthSpec(
        domains=tuple(SynthDomainSpec(f"pub{i}", "uniform", 150) for i in range(5)),
        cue_rate=0.0,
        hilite_rate=0.0,
        min_sentences=4,
        max_sentences=7,
    )
    marker_path = tmp_path / "markers.jsonl"
    make_synthetic_corpus(spec, seed=88, path=marker_path)
    marked = domain_classifier(ingest(marker_path), seed=0)
    chance_ok = marked.chance == pytest.approx(0.2)
    acc_ok = marked.accuracy >= 0.99

    blank_spec = SynthSpec(
        domains=tuple(SynthDomainSpec(f"pub{i}", "uniform", 150) for i in range(5)),
        cue_rate=0.0,
        hilite_rate=0.0,
        use_markers=False,
        min_sentences=4,
        max_sentences=7,
    )
    blank_path = tmp_path / "blank.jsonl"
    make_synthetic_corpus(blank_spec, seed=88, path=blank_path)
    control = domain_classifier(ingest(blank_path), seed=0, permute_labels=True)
    control_ok = abs(control.accuracy - control.chance) <= 0.05
    verdict(
        "criterion 8: domain classifier (markers >= 99%; permuted ~ chance; 1/K)",
        chance_ok and acc_ok and control_ok,
        f"markers={marked.accuracy:.3f}, permuted={control.accuracy:.3f}, chance={marked.chance:.2f}",
    )


# --------------------------------------------------------------------------
# criterion 9: conditional real-data reproduction
# --------------------------------------------------------------------------


REAL_CORPUS_ENV = "DOMAINSUM_MULTISUM_PATH"

# Reference row for the FN publication: coverage/density/compression and the
# Lead / Ext-Oracle ROUGE baselines, with the stated tolerances.
FN_EXPECTED = {
    "coverage": (0.90, 0.02),
    "density": (16.18, 0.5),
    "compression": (35.58, 1.0),
    "lead_r1": (40.30, 1.0),
    "lead_r2": (33.90, 1.0),
    "lead_rl": (38.74, 1.0),
    "oracle_r1": (73.61, 1.0),
    "oracle_r2": (65.53, 1.0),
    "oracle_rl": (71.50, 1.0),
}


@pytest.mark.skipif(
    REAL_CORPUS_ENV not in os.environ,
    reason=f"set {REAL_CORPUS_ENV} to a MULTI-SUM-format corpus to run",
)
def test_criterion_09_real_corpus_statistics():
    from domainsum.corpus import stats

    corpus = ingest(os.environ[REAL_CORPUS_ENV])
    rows = {r["domain"]: r for r in stats(corpus, lead_k=2, oracle_max_select=3)}
    assert "FN" in rows, "expected an FN domain in the supplied corpus"
    row = rows["FN"]
    failures = []
    for key, (expected, tol) in FN_EXPECTED.items():
        if abs(row[key] - expected) > tol:
            failures.append(f"{key}={row[key]:.2f} (want {expected}±{tol})")
    verdict(
        "criterion 9: real-corpus statistics within stated tolerances",
        not failures,
        "; ".join(failures) or "all within tolerance",
    )


# --------------------------------------------------------------------------
# criterion 10: determinism of every command
# --------------------------------------------------------------------------


@pytest.mark.slow
def test_criterion_10_command_determinism(tmp_path):
    import hashlib

    from domainsum.cli import main as cli_main

    def run(argv):
        assert cli_main([str(a) for a in argv]) == 0

    def tree_hash(root: Path) -> dict:
        return {
            p.relative_to(root).as_posix(): hashlib.sha256(p.read_bytes()).hexdigest()
            for p in sorted(root.rglob("*"))
            if p.is_file()
        }

    spec = {
        "domains": [
            {"name": "first", "position_bias": "first", "n_docs": 40},
            {"name": "middle", "position_bias": "middle", "n_docs": 40},
            {"name": "last", "position_bias": "last", "n_docs": 40},
        ],
        "min_sentences": 4,
        "max_sentences": 6,
    }
    spec_path = tmp_path / "spec.json"
    spec_path.write_text(json.dumps(spec), encoding="utf-8")
    model_path = tmp_path / "model.json"
    model_path.write_text(json.dumps(ACCEPT_MODEL.to_dict()), encoding="utf-8")

    def pipeline(root: Path):
        run(["synth", "--spec", spec_path, "--seed", 9, "--out", root])
        run(["ingest", "--corpus", root / "corpus.jsonl",
             "--source", "first,last", "--heldout", "middle", "--out", root / "ing"])
        run(["stats", "--corpus", root / "corpus.jsonl", "--out", root / "st"])
        run(["label", "--corpus", root / "corpus.jsonl", "--out", root,
             "--max-select", 2])
        run(["train", "--corpus", root / "labeled.jsonl",
             "--source", "first,last", "--heldout", "middle",
             "--strategy", "tag", "--seed", 9, "--epochs", 1,
             "--model-config", model_path, "--out", root / "tr"])
        run(["eval", "--corpus", root / "labeled.jsonl",
             "--source", "first,last", "--heldout", "middle",
             "--checkpoint", root / "tr" / "checkpoint.ckpt", "--out", root / "ev"])
        run(["matrix", "--corpus", root / "labeled.jsonl", "--seed", 9,
             "--epochs", 1, "--model-config", model_path, "--out", root / "mx"])
        run(["sweep-gamma", "--corpus", root / "labeled.jsonl",
             "--source", "first,last", "--heldout", "middle", "--seed", 9,
             "--gammas", "0.5,1.0", "--epochs", 1,
             "--model-config", model_path, "--out", root / "sw"])
        run(["report", "--out", root / "tr"])

    # same directory rerun: overwrite must reproduce every byte
    root = tmp_path / "run"
    pipeline(root)
    first = tree_hash(root)
    pipeline(root)
    second = tree_hash(root)
    differing = [k for k in first if first[k] != second.get(k)]
    verdict(
        "criterion 10: rerun determinism (byte-identical artifacts)",
        first == second,
        f"{len(first)} artifacts" + (f"; differing: {differing[:3]}" if differing else ""),
    )
