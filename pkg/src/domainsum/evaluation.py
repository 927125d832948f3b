"""Measurement harness: cross-domain matrices, the three evaluation settings
with their ROUGE gap, selection-position histograms, the gamma sweep and the
domain-bias probe."""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from .corpus import Corpus, Document, Vocabulary, build_vocabulary
from .labeling import score_selection
from .nnet import (
    CheckpointError,
    ExternalFeatures,
    ParameterStore,
    load_checkpoint,
    load_checkpoint_vocabulary,
    score_sentences,
)

TAG_POLICIES = ("true_tag", "unknown_tag")


class EvaluationError(Exception):
    pass


def select_top_k(probabilities, k: int) -> list[int]:
    """Indices of the k highest probabilities, ties to the smaller index,
    returned in document order."""
    if k < 1:
        raise ValueError("k must be >= 1")
    p = np.asarray(probabilities, dtype=np.float64)
    order = np.argsort(-p, kind="stable")
    return sorted(int(i) for i in order[:k])


def predict_selection(
    params: ParameterStore,
    vocab: Vocabulary,
    doc: Document,
    k: int,
    tag_id: int | None,
    features: ExternalFeatures | None = None,
) -> list[int]:
    from .strategies import encode_training_document

    ex = encode_training_document(vocab, doc, features)
    probs = score_sentences(
        params,
        ex.sentence_ids,
        tag_id=tag_id if params.config.use_domain_tag else None,
        external_features=ex.features,
    )
    return select_top_k(probs.data, k)


def _doc_scores(args) -> tuple[float, float, float]:
    params, vocab, doc, k, tag_id, features = args
    selection = predict_selection(params, vocab, doc, k, tag_id, features)
    r1, r2, rl = score_selection(doc, selection)
    return r1.f1, r2.f1, rl.f1


def _map_docs(work: list, workers: int) -> list[tuple[float, float, float]]:
    if workers <= 1 or len(work) < 2 * workers:
        return [_doc_scores(item) for item in work]
    import multiprocessing as mp
    from concurrent.futures import ProcessPoolExecutor

    try:
        ctx = mp.get_context("fork")
    except ValueError:
        return [_doc_scores(item) for item in work]
    chunk = max(1, len(work) // (workers * 4))
    with ProcessPoolExecutor(max_workers=workers, mp_context=ctx) as pool:
        return list(pool.map(_doc_scores, work, chunksize=chunk))


def score_documents(
    params: ParameterStore,
    vocab: Vocabulary,
    docs: list[Document],
    k: int,
    tag_id: int | None,
    features: ExternalFeatures | None = None,
    workers: int = 1,
) -> dict[str, float]:
    """Mean ROUGE F1 (x100) of top-k selections over the documents."""
    if not docs:
        raise EvaluationError("no documents to score")
    work = [(params, vocab, doc, k, tag_id, features) for doc in docs]
    triples = _map_docs(work, workers)
    arr = np.asarray(triples, dtype=np.float64)
    means = arr.mean(axis=0) * 100.0
    return {
        "r1": float(means[0]),
        "r2": float(means[1]),
        "rl": float(means[2]),
        "rmean": float(means.mean()),
    }


def _resolve_tag(
    corpus: Corpus, domain_id: int, tag_policy: str, use_tags: bool
) -> int | None:
    if not use_tags:
        return None
    unknown = corpus.registry.unknown.id
    if tag_policy == "unknown_tag":
        return unknown
    if domain_id in corpus.heldout_domains:
        # Real tags are never available for unseen domains.
        return unknown
    return domain_id


def evaluate_model(
    checkpoint: str | Path | ParameterStore,
    corpus: Corpus,
    k: int = 2,
    tag_policy: str = "true_tag",
    split: str = "test",
    domains: list[str] | None = None,
    vocab: Vocabulary | None = None,
    features: ExternalFeatures | None = None,
    workers: int = 1,
) -> dict[str, dict[str, float]]:
    """Per-domain ROUGE triples of a checkpointed model on a corpus slice.

    Heldout domains are always scored with the unknown tag regardless of
    tag_policy. The vocabulary embedded in the checkpoint is used; passing an
    explicit vocab that disagrees with it is an error.
    """
    if tag_policy not in TAG_POLICIES:
        raise ValueError(f"tag_policy must be one of {TAG_POLICIES}")
    if isinstance(checkpoint, ParameterStore):
        params = checkpoint
        if vocab is None:
            raise EvaluationError("in-memory evaluation requires an explicit vocab")
    else:
        params = load_checkpoint(checkpoint)
        stored_vocab = load_checkpoint_vocabulary(checkpoint)
        if vocab is not None and stored_vocab is not None:
            if vocab.content_hash() != stored_vocab.content_hash():
                raise CheckpointError(
                    "vocab mismatch: supplied vocabulary differs from the one "
                    "the checkpoint was trained with"
                )
        vocab = stored_vocab if stored_vocab is not None else vocab
        if vocab is None:
            raise EvaluationError("checkpoint has no embedded vocabulary; pass vocab=")
    if params["embed"].data.shape[0] != len(vocab):
        raise CheckpointError(
            f"vocab mismatch: embedding table has {params['embed'].data.shape[0]} rows "
            f"but vocabulary has {len(vocab)} entries"
        )
    wanted = domains or [d.name for d in corpus.registry.real_domains]
    out: dict[str, dict[str, float]] = {}
    for name in wanted:
        dom = corpus.registry.by_name(name)
        docs = corpus.docs(domain=dom, split=split)
        if not docs:
            continue
        tag_id = _resolve_tag(corpus, dom.id, tag_policy, params.config.use_domain_tag)
        out[name] = score_documents(params, vocab, docs, k, tag_id, features, workers)
    return out


def delta_r(in_avg: float, out_avg: float) -> float:
    """Absolute in/out average gap, computed from unrounded averages."""
    return abs(in_avg - out_avg)


@dataclass
class EvalReport:
    """Per-domain scores under the in-domain and out-of-domain settings."""

    in_domain: dict[str, dict[str, float]]
    out_domain: dict[str, dict[str, float]]
    cross_dataset: dict[str, float] | None = None

    def average(self, which: str, metric: str = "r1") -> float:
        table = self.in_domain if which == "in" else self.out_domain
        if not table:
            return float("nan")
        return float(np.mean([v[metric] for v in table.values()]))

    def delta_r(self, metric: str = "r1") -> float:
        return delta_r(self.average("in", metric), self.average("out", metric))

    def to_dict(self) -> dict:
        d = {
            "in_domain": self.in_domain,
            "out_of_domain": self.out_domain,
            "avg_in_r1": self.average("in"),
            "avg_out_r1": self.average("out"),
            "delta_r_r1": self.delta_r("r1"),
        }
        if self.out_domain:
            d["delta_r_rmean"] = self.delta_r("rmean")
        if self.cross_dataset is not None:
            d["cross_dataset"] = self.cross_dataset
        return d


def evaluate_settings(
    checkpoint: str | Path | ParameterStore,
    corpus: Corpus,
    k: int = 2,
    tag_policy: str = "true_tag",
    cross_corpus: Corpus | None = None,
    vocab: Vocabulary | None = None,
    features: ExternalFeatures | None = None,
    workers: int = 1,
) -> EvalReport:
    source_names = [d.name for d in corpus.source()]
    heldout_names = [d.name for d in corpus.heldout()]
    in_scores = evaluate_model(
        checkpoint, corpus, k, tag_policy, domains=source_names,
        vocab=vocab, features=features, workers=workers,
    )
    out_scores = {}
    if heldout_names:
        out_scores = evaluate_model(
            checkpoint, corpus, k, "unknown_tag", domains=heldout_names,
            vocab=vocab, features=features, workers=workers,
        )
    cross = None
    if cross_corpus is not None:
        per_domain = evaluate_model(
            checkpoint, cross_corpus, k, "unknown_tag",
            vocab=vocab, features=features, workers=workers,
        )
        cross = {
            metric: float(np.mean([v[metric] for v in per_domain.values()]))
            for metric in ("r1", "r2", "rl", "rmean")
        }
    return EvalReport(in_domain=in_scores, out_domain=out_scores, cross_dataset=cross)


# ---------------------------------------------------------------------------
# cross-domain matrix
# ---------------------------------------------------------------------------


@dataclass
class EvalMatrix:
    domain_order: list[str]
    r: np.ndarray  # r[i, j] = ROUGE-1 of model trained on i, tested on j
    v: np.ndarray

    def to_csv(self, config_note: str | None = None) -> str:
        lines = []
        if config_note:
            lines.append(f"# config: {config_note}")
        for block, grid in (("R", self.r), ("V", self.v)):
            lines.append(",".join([block] + self.domain_order))
            for name, row in zip(self.domain_order, grid):
                lines.append(",".join([name] + [f"{x:.2f}" for x in row]))
        return "\n".join(lines) + "\n"


def derive_v(r: np.ndarray) -> np.ndarray:
    """V_ii = R_ii; V_ij = R_ij - R_jj off the diagonal."""
    r = np.asarray(r, dtype=np.float64)
    v = r - np.diag(r)[None, :]
    np.fill_diagonal(v, np.diag(r))
    return v


def cross_domain_matrix(
    checkpoints: dict[str, str | Path | ParameterStore],
    corpus: Corpus,
    k: int = 2,
    tag_policy: str = "unknown_tag",
    vocab: Vocabulary | None = None,
    workers: int = 1,
) -> EvalMatrix:
    """Evaluate one checkpoint per domain on every domain's test split."""
    order = [d.name for d in corpus.registry.real_domains if d.name in checkpoints]
    missing = sorted(set(checkpoints) - set(order))
    if missing:
        raise EvaluationError(f"checkpoints for unknown domains: {missing}")
    if len(order) < 2:
        raise EvaluationError("a cross-domain matrix needs checkpoints for >= 2 domains")
    r = np.zeros((len(order), len(order)), dtype=np.float64)
    for i, train_dom in enumerate(order):
        scores = evaluate_model(
            checkpoints[train_dom], corpus, k, tag_policy, domains=order,
            vocab=vocab, workers=workers,
        )
        for j, test_dom in enumerate(order):
            if test_dom not in scores:
                raise EvaluationError(f"domain {test_dom!r} has no test documents")
            r[i, j] = scores[test_dom]["r1"]
    return EvalMatrix(domain_order=order, r=r, v=derive_v(r))


# ---------------------------------------------------------------------------
# position histograms
# ---------------------------------------------------------------------------


@dataclass
class PositionHistogram:
    bin_edges: np.ndarray  # length bins + 1
    truth_mass: np.ndarray
    model_mass: np.ndarray

    def to_csv(self, config_note: str | None = None) -> str:
        lines = []
        if config_note:
            lines.append(f"# config: {config_note}")
        lines.append("bin_lo,bin_hi,truth_mass,model_mass")
        for i in range(len(self.truth_mass)):
            lines.append(
                f"{self.bin_edges[i]:.4f},{self.bin_edges[i + 1]:.4f},"
                f"{self.truth_mass[i]:.6f},{self.model_mass[i]:.6f}"
            )
        return "\n".join(lines) + "\n"


def _positions_to_mass(positions: list[float], bins: int) -> np.ndarray:
    mass = np.zeros(bins, dtype=np.float64)
    for pos in positions:
        idx = min(int(pos * bins), bins - 1)
        mass[idx] += 1.0
    if positions:
        mass /= mass.sum()
    return mass


def relative_position(index: int, n_sentences: int) -> float:
    """index / (n - 1); single-sentence documents map to 0."""
    if n_sentences <= 1:
        return 0.0
    return index / (n_sentences - 1)


def position_histogram(
    documents: list[Document],
    model_selections: list[list[int]] | None = None,
    bins: int = 20,
) -> PositionHistogram:
    """Histogram of relative selected-sentence positions for ground-truth
    labels and (optionally) model selections."""
    if bins < 2:
        raise ValueError("bins must be >= 2")
    truth_positions: list[float] = []
    for doc in documents:
        if doc.labels is None:
            continue
        n = len(doc.sentences)
        truth_positions.extend(
            relative_position(i, n) for i, y in enumerate(doc.labels) if y == 1
        )
    model_positions: list[float] = []
    if model_selections is not None:
        if len(model_selections) != len(documents):
            raise ValueError("one selection list per document required")
        for doc, sel in zip(documents, model_selections):
            n = len(doc.sentences)
            model_positions.extend(relative_position(i, n) for i in sel)
    edges = np.linspace(0.0, 1.0, bins + 1)
    return PositionHistogram(
        bin_edges=edges,
        truth_mass=_positions_to_mass(truth_positions, bins),
        model_mass=_positions_to_mass(model_positions, bins),
    )


# ---------------------------------------------------------------------------
# gamma sweep
# ---------------------------------------------------------------------------


def gamma_sweep(
    corpus: Corpus,
    model_config,
    base_config,
    gammas: list[float],
    cross_corpus: Corpus | None = None,
    checkpoint_dir: str | Path | None = None,
    workers: int = 1,
) -> list[dict]:
    """Train one meta model per gamma (shared seed) and score all settings.

    Returns one row per gamma with the mean ROUGE (mean of R-1/R-2/R-L, x100)
    under in-domain, out-of-domain and cross-dataset; the cross column is None
    without a cross corpus.
    """
    from .strategies import train

    if len(gammas) < 2:
        raise EvaluationError("gamma_sweep needs at least two gamma values")
    rows = []
    for gamma in gammas:
        cfg = replace(base_config, strategy="meta", gamma=float(gamma))
        ckpt_path = None
        if checkpoint_dir is not None:
            ckpt_path = Path(checkpoint_dir) / f"meta_gamma_{gamma:g}.ckpt"
        _, params, vocab = train(corpus, model_config, cfg, checkpoint_path=ckpt_path)
        report = evaluate_settings(
            params, corpus, k=cfg.eval_k, tag_policy="true_tag",
            cross_corpus=cross_corpus, vocab=vocab, workers=workers,
        )
        rows.append(
            {
                "gamma": float(gamma),
                "in_mean": report.average("in", "rmean"),
                "out_mean": report.average("out", "rmean") if report.out_domain else None,
                "cross_mean": report.cross_dataset["rmean"] if report.cross_dataset else None,
                "delta_r_rmean": report.delta_r("rmean") if report.out_domain else None,
            }
        )
    return rows


def gamma_sweep_csv(rows: list[dict], config_note: str | None = None) -> str:
    lines = []
    if config_note:
        lines.append(f"# config: {config_note}")
    lines.append("gamma,in_mean,out_mean,cross_mean")
    for row in rows:
        cells = [f"{row['gamma']:g}"]
        for key in ("in_mean", "out_mean", "cross_mean"):
            cells.append("" if row[key] is None else f"{row[key]:.2f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# domain-bias probe
# ---------------------------------------------------------------------------


@dataclass
class ClassifierResult:
    accuracy: float
    chance: float
    n_domains: int
    n_train: int
    n_test: int


def domain_classifier(
    corpus: Corpus,
    seed: int,
    embed_dim: int = 64,
    epochs: int = 200,
    learning_rate: float = 0.5,
    permute_labels: bool = False,
) -> ClassifierResult:
    """Linear softmax probe over mean word embeddings for source domains.

    Fixed random embeddings, multinomial logistic regression trained by
    full-batch gradient descent on source train splits, accuracy reported on
    source test splits; chance is 1/K. permute_labels shuffles the training
    labels (seeded) as a control.
    """
    source = corpus.source()
    if len(source) < 2:
        raise EvaluationError("the domain classifier needs >= 2 source domains")
    vocab = build_vocabulary(corpus, min_frequency=1, max_size=100000)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 11]))
    embeddings = rng.normal(0.0, 1.0, size=(len(vocab), embed_dim)) / np.sqrt(embed_dim)

    def featurize(docs: list[Document]) -> np.ndarray:
        rows = np.zeros((len(docs), embed_dim), dtype=np.float64)
        for i, doc in enumerate(docs):
            ids = vocab.encode(doc.text_tokens())
            rows[i] = embeddings[ids].mean(axis=0)
        return rows

    index_of = {d.id: i for i, d in enumerate(source)}
    train_docs, test_docs = [], []
    for dom in source:
        train_docs.extend(corpus.docs(domain=dom, split="train"))
        test_docs.extend(corpus.docs(domain=dom, split="test"))
    if not train_docs or not test_docs:
        raise EvaluationError("classifier needs non-empty train and test splits")
    x_train = featurize(train_docs)
    y_train = np.array([index_of[d.domain.id] for d in train_docs])
    x_test = featurize(test_docs)
    y_test = np.array([index_of[d.domain.id] for d in test_docs])
    if permute_labels:
        y_train = rng.permutation(y_train)

    k = len(source)
    w = np.zeros((embed_dim, k))
    b = np.zeros(k)
    onehot = np.eye(k)[y_train]
    for _ in range(epochs):
        logits = x_train @ w + b
        logits -= logits.max(axis=1, keepdims=True)
        probs = np.exp(logits)
        probs /= probs.sum(axis=1, keepdims=True)
        err = (probs - onehot) / len(y_train)
        w -= learning_rate * (x_train.T @ err)
        b -= learning_rate * err.sum(axis=0)
    pred = (x_test @ w + b).argmax(axis=1)
    return ClassifierResult(
        accuracy=float((pred == y_test).mean()),
        chance=1.0 / k,
        n_domains=k,
        n_train=len(y_train),
        n_test=len(y_test),
    )


def git_blob_sha1(path: str | Path) -> str:
    """Content hash of a file, computed the way git hashes blobs."""
    data = Path(path).read_bytes()
    h = hashlib.sha1()
    h.update(f"blob {len(data)}\0".encode("ascii"))
    h.update(data)
    return h.hexdigest()


def matrix_report(
    matrix: EvalMatrix,
    corpus_hash: str,
    seeds: list[int],
    train_config: dict,
    model_config: dict,
) -> dict:
    return {
        "domain_order": matrix.domain_order,
        "r": [[round(x, 6) for x in row] for row in matrix.r.tolist()],
        "v": [[round(x, 6) for x in row] for row in matrix.v.tolist()],
        "corpus_hash": corpus_hash,
        "seeds": seeds,
        "train_config": train_config,
        "model_config": model_config,
    }


def write_json(obj: dict, path: str | Path) -> None:
    Path(path).write_text(
        json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
