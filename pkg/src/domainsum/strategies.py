"""The four multi-domain learning strategies.

joint       — one shared parameter set, no domain information.
pretrained  — sentence vectors come from a frozen external feature provider.
tag         — domain tag embeddings, with random unknown-tag relabeling.
meta        — inner gradient step on the main domain, auxiliary-domain losses
              at the updated parameters, mixed by gamma (first-order by
              default; exact second-order as a verification mode).

Step functions operate on prepared batches and return (loss value, gradient
dict); train() owns scheduling, early stopping and checkpointing.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, fields as dataclass_fields
from pathlib import Path
from typing import Callable

import numpy as np

from .corpus import Corpus, Document, Vocabulary, build_vocabulary, encode_document_ids
from .nnet import (
    ExternalFeatures,
    ModelConfig,
    NumericsError,
    ParameterStore,
    OptimizerState,
    apply_update,
    backward,
    bce_loss,
    init_params,
    save_checkpoint,
    score_sentences,
)
from .nnet.autodiff import stack

STRATEGIES = ("joint", "pretrained", "tag", "meta")
SCHEDULES = ("round_robin", "proportional")


class TrainingError(Exception):
    pass


@dataclass(frozen=True)
class TrainConfig:
    strategy: str = "joint"
    gamma: float = 0.5
    inner_step_size: float | None = None  # None -> learning_rate
    relabel_prob: float = 0.1
    meta_second_order: bool = False
    epochs: int = 5
    batch_size: int = 8
    learning_rate: float = 0.01
    seed: int = 0
    domain_schedule: str = "round_robin"
    optimizer: str = "adam"
    patience: int = 3
    eval_k: int = 2
    normalize_aux: bool = False

    def __post_init__(self):
        if self.strategy not in STRATEGIES:
            raise ValueError(f"unknown strategy {self.strategy!r} (expected one of {STRATEGIES})")
        if self.domain_schedule not in SCHEDULES:
            raise ValueError(f"unknown domain_schedule {self.domain_schedule!r}")
        if not 0.0 <= self.gamma <= 1.0:
            raise ValueError("gamma must be in [0, 1]")
        if not 0.0 <= self.relabel_prob <= 1.0:
            raise ValueError("relabel_prob must be in [0, 1]")
        if self.inner_step_size is not None and self.inner_step_size < 0:
            raise ValueError("inner_step_size must be >= 0")
        for name in ("epochs", "batch_size", "patience", "eval_k"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be > 0")
        if self.optimizer not in ("sgd", "adam"):
            raise ValueError(f"unknown optimizer {self.optimizer!r}")

    @property
    def resolved_inner_step(self) -> float:
        return self.learning_rate if self.inner_step_size is None else self.inner_step_size

    def to_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in dataclass_fields(self)}


def parse_train_config(text: str, **overrides) -> TrainConfig:
    """Parse the flat `key = value` training config format; unknown keys error."""
    field_types = {f.name: f for f in dataclass_fields(TrainConfig)}
    values: dict = {}
    for line_no, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise TrainingError(f"config line {line_no}: expected 'key = value'")
        key, _, raw = line.partition("=")
        key, raw = key.strip(), raw.strip()
        if key not in field_types:
            raise TrainingError(f"config line {line_no}: unknown key {key!r}")
        values[key] = _coerce_config_value(key, raw, line_no)
    values.update(overrides)
    return TrainConfig(**values)


def _coerce_config_value(key: str, raw: str, line_no: int):
    if key in ("strategy", "domain_schedule", "optimizer"):
        return raw
    if key in ("meta_second_order", "normalize_aux"):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise TrainingError(f"config line {line_no}: {key} wants true/false, got {raw!r}")
    if key in ("epochs", "batch_size", "seed", "patience", "eval_k"):
        return int(raw)
    if key == "inner_step_size" and raw.lower() == "none":
        return None
    return float(raw)


@dataclass
class EncodedExample:
    doc_id: str
    domain_id: int
    sentence_ids: list[list[int]]
    labels: np.ndarray
    features: list[np.ndarray] | None = None


@dataclass
class Batch:
    examples: list[EncodedExample]
    tag_ids: list[int]

    def __post_init__(self):
        if len(self.examples) != len(self.tag_ids):
            raise ValueError("one tag id per example required")

    def __len__(self):
        return len(self.examples)


StepFn = Callable[[ParameterStore, Batch], tuple[float, dict[str, np.ndarray]]]


def _batch_loss(
    params: ParameterStore, batch: Batch, rng: np.random.Generator | None
):
    per_doc = []
    for example, tag_id in zip(batch.examples, batch.tag_ids):
        probs = score_sentences(
            params,
            example.sentence_ids,
            tag_id=tag_id if params.config.use_domain_tag else None,
            external_features=example.features,
            rng=rng,
        )
        per_doc.append(bce_loss(probs, example.labels))
    return per_doc[0] if len(per_doc) == 1 else stack(per_doc).mean()


def run_step(
    params: ParameterStore, batch: Batch, rng: np.random.Generator | None = None
) -> tuple[float, dict[str, np.ndarray]]:
    """Forward + backward on one batch; loss is the mean over the batch's docs."""
    if not batch.examples:
        raise ValueError("empty batch")
    loss = _batch_loss(params, batch, rng)
    backward(loss, store=params)
    return float(loss.data), params.gradients()


def joint_step(
    params: ParameterStore,
    batch: list[EncodedExample],
    unknown_tag_id: int,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Shared-parameter step: every example carries the unknown tag."""
    return run_step(params, Batch(batch, [unknown_tag_id] * len(batch)), rng)


def tag_relabel(
    domain_ids: list[int],
    relabel_prob: float,
    rng: np.random.Generator,
    unknown_tag_id: int,
) -> list[int]:
    """Independently replace each id by the unknown tag with the given probability."""
    if any(d == unknown_tag_id for d in domain_ids):
        raise ValueError("input domain ids must exclude the unknown tag")
    if relabel_prob == 0.0:
        return list(domain_ids)
    draws = rng.random(len(domain_ids))
    return [
        unknown_tag_id if draw < relabel_prob else d
        for d, draw in zip(domain_ids, draws)
    ]


def tag_step(
    params: ParameterStore,
    batch: list[EncodedExample],
    tag_ids: list[int],
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Domain-tag step: sentence encoding consumes the (possibly relabeled) tags."""
    return run_step(params, Batch(batch, tag_ids), rng)


def pretrained_step(
    params: ParameterStore,
    batch: list[EncodedExample],
    unknown_tag_id: int,
    rng: np.random.Generator | None = None,
) -> tuple[float, dict[str, np.ndarray]]:
    """Frozen-feature step; the provider's vectors never receive gradients."""
    for example in batch:
        if example.features is None:
            raise TrainingError(f"no external features attached for doc {example.doc_id!r}")
    return run_step(params, Batch(batch, [unknown_tag_id] * len(batch)), rng)


def _grad_linf(grads: dict[str, np.ndarray]) -> float:
    return max((float(np.abs(g).max()) for g in grads.values()), default=0.0)


def _inner_update(params: ParameterStore, grads: dict[str, np.ndarray], step: float) -> ParameterStore:
    updated = params.copy()
    for name, grad in grads.items():
        t = updated.tensors[name]
        t.data = np.asarray(t.data - step * grad.astype(t.data.dtype))
        if not np.all(np.isfinite(t.data)):
            raise NumericsError(f"inner step produced non-finite parameter {name!r}")
    return updated


def _hessian_vector(
    step_fn: StepFn,
    params: ParameterStore,
    main_batch: Batch,
    vector: dict[str, np.ndarray],
    epsilon: float,
) -> dict[str, np.ndarray]:
    """Finite-difference Hessian-vector product of the main loss at params."""
    scale = epsilon / max(1.0, _grad_linf(vector))
    plus = params.copy()
    minus = params.copy()
    for name, v in vector.items():
        plus.tensors[name].data = np.asarray(
            plus.tensors[name].data + scale * v.astype(plus.tensors[name].data.dtype)
        )
        minus.tensors[name].data = np.asarray(
            minus.tensors[name].data - scale * v.astype(minus.tensors[name].data.dtype)
        )
    _, g_plus = step_fn(plus, main_batch)
    _, g_minus = step_fn(minus, main_batch)
    out = {}
    for name in set(g_plus) | set(g_minus):
        gp = g_plus.get(name)
        gm = g_minus.get(name)
        if gp is None:
            gp = np.zeros_like(gm)
        if gm is None:
            gm = np.zeros_like(gp)
        out[name] = (gp - gm) / (2.0 * scale)
    return out


def meta_step(
    params: ParameterStore,
    step_fn: StepFn,
    main_batch: Batch,
    aux_batches: list[Batch],
    gamma: float,
    inner_step_size: float,
    second_order: bool = False,
    normalize_aux: bool = False,
    hvp_epsilon: float = 1e-3,
) -> tuple[float, dict[str, np.ndarray]]:
    """One meta update for main domain k with auxiliary batches {B_j, j != k}.

    Computes g_k at the current parameters, takes the inner step
    theta' = theta - inner_step_size * g_k, evaluates each auxiliary loss at
    theta', and mixes: total = gamma * L_k + (1 - gamma) * sum_j L_j(theta')
    (unnormalized sum unless normalize_aux). The auxiliary gradient uses the
    first-order approximation unless second_order requests the exact product
    via a finite-difference Hessian-vector computation (toy scale only).

    gamma == 1.0 short-circuits to the plain base step, so its gradients are
    bit-identical to the base strategy's.
    """
    if not 0.0 <= gamma <= 1.0:
        raise ValueError("gamma must be in [0, 1]")
    loss_k, g_k = step_fn(params, main_batch)
    if gamma == 1.0:
        return loss_k, g_k
    if not aux_batches:
        raise ValueError("meta_step requires at least one auxiliary batch")

    inner = _inner_update(params, g_k, inner_step_size)
    scale = (1.0 - gamma) / (len(aux_batches) if normalize_aux else 1.0)
    total = {name: gamma * g for name, g in g_k.items()}
    total_loss = gamma * loss_k
    for aux_batch in aux_batches:
        loss_j, g_j = step_fn(inner, aux_batch)
        total_loss += scale * loss_j
        if second_order:
            hv = _hessian_vector(step_fn, params, main_batch, g_j, hvp_epsilon)
            g_j = {
                name: g_j.get(name, 0.0) - inner_step_size * hv[name] for name in hv
            }
        for name, g in g_j.items():
            if name in total:
                total[name] = total[name] + scale * g
            else:
                total[name] = scale * g
    return total_loss, total


# ---------------------------------------------------------------------------
# training orchestration
# ---------------------------------------------------------------------------


@dataclass
class EpochRecord:
    epoch: int
    train_loss: dict[str, float]
    valid_loss: dict[str, float]
    valid_rouge1: float


@dataclass
class TrainReport:
    strategy: str
    seed: int
    epochs_run: int
    best_epoch: int
    best_valid_rouge1: float
    epoch_records: list[EpochRecord] = field(default_factory=list)
    wall_time_s: float = 0.0
    checkpoint_path: str | None = None

    def to_dict(self, include_wall_time: bool = False) -> dict:
        # Wall time is excluded by default so report artifacts stay
        # byte-identical across reruns.
        d = {
            "strategy": self.strategy,
            "seed": self.seed,
            "epochs_run": self.epochs_run,
            "best_epoch": self.best_epoch,
            "best_valid_rouge1": self.best_valid_rouge1,
            "epochs": [
                {
                    "epoch": r.epoch,
                    "train_loss": r.train_loss,
                    "valid_loss": r.valid_loss,
                    "valid_rouge1": r.valid_rouge1,
                }
                for r in self.epoch_records
            ],
            "checkpoint_path": self.checkpoint_path,
        }
        if include_wall_time:
            d["wall_time_s"] = self.wall_time_s
        return d


def encode_training_document(
    vocab: Vocabulary,
    doc: Document,
    features: ExternalFeatures | None = None,
    max_sentences: int = 50,
    max_tokens: int = 100,
) -> EncodedExample:
    sent_ids = encode_document_ids(vocab, doc, max_sentences, max_tokens)
    labels = None
    if doc.labels is not None:
        labels = np.asarray(doc.labels[: len(sent_ids)], dtype=np.float32)
    feats = None
    if features is not None:
        feats = features.document(doc.doc_id, len(sent_ids))
    return EncodedExample(
        doc_id=doc.doc_id,
        domain_id=doc.domain.id,
        sentence_ids=sent_ids,
        labels=labels,
        features=feats,
    )


class _BatchIterator:
    """Cycles one domain's docs in reshuffled passes, constant batch size."""

    def __init__(self, examples: list[EncodedExample], batch_size: int, rng: np.random.Generator):
        self.examples = examples
        self.batch_size = min(batch_size, len(examples))
        self.rng = rng
        self.order: list[int] = []
        self.pos = 0

    def _refill(self):
        self.order = list(self.rng.permutation(len(self.examples)))
        self.pos = 0

    def next_batch(self) -> list[EncodedExample]:
        out = []
        while len(out) < self.batch_size:
            if self.pos >= len(self.order):
                self._refill()
            out.append(self.examples[self.order[self.pos]])
            self.pos += 1
        return out


def _child_rng(seed: int, stream: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, stream]))


def train(
    corpus: Corpus,
    model_config: ModelConfig,
    train_config: TrainConfig,
    checkpoint_path: str | Path | None = None,
    external_features: ExternalFeatures | None = None,
    vocab: Vocabulary | None = None,
    vocab_min_frequency: int = 2,
    vocab_max_size: int = 30000,
) -> tuple[TrainReport, ParameterStore, Vocabulary]:
    """Train one model on the corpus's source domains.

    Requires oracle labels on every source train document. Runs per-step
    domain scheduling (meta always cycles the main domain round-robin), early
    stopping on source-domain validation mean ROUGE-1, and keeps the best
    validation model as the result/checkpoint.
    """
    from .evaluation import score_documents  # deferred: evaluation imports us back

    cfg = train_config
    started = time.perf_counter()
    source_domains = sorted(corpus.source(), key=lambda d: d.id)
    if not source_domains:
        raise TrainingError("corpus has no source domains")
    if cfg.strategy == "meta" and len(source_domains) < 2:
        raise TrainingError("meta strategy needs at least two source domains")
    unknown_id = corpus.registry.unknown.id
    if cfg.strategy == "pretrained":
        if external_features is None:
            raise TrainingError("pretrained strategy requires an external feature file")
        if model_config.external_feature_dim != external_features.feature_dim:
            model_config = ModelConfig(
                **{**model_config.to_dict(), "external_feature_dim": external_features.feature_dim}
            )
    feats = external_features if cfg.strategy == "pretrained" else None

    if vocab is None:
        vocab = build_vocabulary(corpus, vocab_min_frequency, vocab_max_size)

    train_sets: dict[int, list[EncodedExample]] = {}
    valid_sets: dict[int, list[Document]] = {}
    for dom in source_domains:
        docs = corpus.docs(domain=dom, split="train")
        if not docs:
            raise TrainingError(f"source domain {dom.name!r} has no train documents")
        unlabeled = [d.doc_id for d in docs if d.labels is None]
        if unlabeled:
            raise TrainingError(
                f"corpus is unlabeled (e.g. doc {unlabeled[0]!r}); "
                "run the `label` command to add oracle labels first"
            )
        train_sets[dom.id] = [encode_training_document(vocab, d, feats) for d in docs]
        valid_sets[dom.id] = corpus.docs(domain=dom, split="valid")

    params = init_params(model_config, len(vocab), corpus.n_real_domains, cfg.seed)
    opt_state = OptimizerState(kind=cfg.optimizer)
    dropout_rng = _child_rng(cfg.seed, 3002)
    relabel_main = _child_rng(cfg.seed, 3000)
    relabel_aux = _child_rng(cfg.seed, 3001)
    schedule_rng = _child_rng(cfg.seed, 3003)
    main_iters = {
        d.id: _BatchIterator(train_sets[d.id], cfg.batch_size, _child_rng(cfg.seed, 1000 + d.id))
        for d in source_domains
    }
    aux_iters = {
        d.id: _BatchIterator(train_sets[d.id], cfg.batch_size, _child_rng(cfg.seed, 2000 + d.id))
        for d in source_domains
    }

    total_train = sum(len(v) for v in train_sets.values())
    steps_per_epoch = max(1, -(-total_train // cfg.batch_size))
    domain_order = [d.id for d in source_domains]
    domain_sizes = np.array([len(train_sets[i]) for i in domain_order], dtype=np.float64)
    domain_probs = domain_sizes / domain_sizes.sum()

    def make_main_batch(domain_id: int) -> Batch:
        examples = main_iters[domain_id].next_batch()
        if cfg.strategy in ("tag", "meta"):
            tags = tag_relabel(
                [domain_id] * len(examples), cfg.relabel_prob, relabel_main, unknown_id
            )
        else:
            tags = [unknown_id] * len(examples)
        return Batch(examples, tags)

    def make_aux_batch(domain_id: int) -> Batch:
        examples = aux_iters[domain_id].next_batch()
        tags = tag_relabel(
            [domain_id] * len(examples), cfg.relabel_prob, relabel_aux, unknown_id
        )
        return Batch(examples, tags)

    def step_fn(p: ParameterStore, batch: Batch) -> tuple[float, dict[str, np.ndarray]]:
        rng = dropout_rng if model_config.dropout_rate > 0 else None
        return run_step(p, batch, rng)

    def eval_tag_for(dom_id: int) -> int | None:
        if not model_config.use_domain_tag:
            return None
        if cfg.strategy in ("tag", "meta"):
            return dom_id
        return unknown_id

    records: list[EpochRecord] = []
    best_rouge = -1.0
    best_epoch = -1
    best_arrays: dict[str, np.ndarray] | None = None
    epochs_without_improvement = 0
    step_index = 0

    for epoch in range(1, cfg.epochs + 1):
        loss_sums: dict[int, float] = {i: 0.0 for i in domain_order}
        loss_counts: dict[int, int] = {i: 0 for i in domain_order}
        for _ in range(steps_per_epoch):
            if cfg.strategy == "meta":
                domain_id = domain_order[step_index % len(domain_order)]
            elif cfg.domain_schedule == "round_robin":
                domain_id = domain_order[step_index % len(domain_order)]
            else:
                domain_id = domain_order[schedule_rng.choice(len(domain_order), p=domain_probs)]
            step_index += 1
            main_batch = make_main_batch(domain_id)
            if cfg.strategy == "meta" and cfg.gamma < 1.0:
                aux = [make_aux_batch(j) for j in domain_order if j != domain_id]
                loss, grads = meta_step(
                    params,
                    step_fn,
                    main_batch,
                    aux,
                    gamma=cfg.gamma,
                    inner_step_size=cfg.resolved_inner_step,
                    second_order=cfg.meta_second_order,
                    normalize_aux=cfg.normalize_aux,
                )
            else:
                loss, grads = step_fn(params, main_batch)
            apply_update(params, grads, opt_state, cfg.learning_rate)
            loss_sums[domain_id] += loss
            loss_counts[domain_id] += 1

        train_loss = {
            corpus.registry.domains[i].name: (loss_sums[i] / loss_counts[i] if loss_counts[i] else float("nan"))
            for i in domain_order
        }
        valid_loss: dict[str, float] = {}
        rouge_per_domain = []
        for dom in source_domains:
            docs = valid_sets[dom.id]
            if not docs:
                continue
            tag_id = eval_tag_for(dom.id)
            vloss = []
            for doc in docs:
                ex = encode_training_document(vocab, doc, feats)
                probs = score_sentences(
                    params, ex.sentence_ids, tag_id=tag_id, external_features=ex.features
                )
                if ex.labels is not None:
                    vloss.append(float(bce_loss(probs, ex.labels).data))
            if vloss:
                valid_loss[dom.name] = float(np.mean(vloss))
            scores = score_documents(
                params, vocab, docs, k=cfg.eval_k, tag_id=tag_id, features=feats
            )
            rouge_per_domain.append(scores["r1"])
        valid_rouge1 = float(np.mean(rouge_per_domain)) if rouge_per_domain else 0.0

        records.append(EpochRecord(epoch, train_loss, valid_loss, valid_rouge1))
        improved = valid_rouge1 > best_rouge
        if valid_rouge1 >= best_rouge:
            # on exact validation ties keep the later model: it has seen more
            # updates and its rankings are sharper at identical selection quality
            best_rouge = valid_rouge1
            best_epoch = epoch
            best_arrays = params.arrays()
        if improved:
            epochs_without_improvement = 0
        else:
            epochs_without_improvement += 1
            if epochs_without_improvement >= cfg.patience:
                break

    if best_arrays is not None:
        params.assign(best_arrays)
    report = TrainReport(
        strategy=cfg.strategy,
        seed=cfg.seed,
        epochs_run=len(records),
        best_epoch=best_epoch,
        best_valid_rouge1=best_rouge,
        epoch_records=records,
        wall_time_s=time.perf_counter() - started,
    )
    if checkpoint_path is not None:
        save_checkpoint(params, checkpoint_path, vocab=vocab)
        report.checkpoint_path = str(checkpoint_path)
    return report, params, vocab
