"""Scikit-learn style estimator facade over the training strategies.

ExtractiveSummarizer follows the estimator contract (constructor stores
hyperparameters verbatim, fitted state lives in trailing-underscore
attributes, get_params/set_params/clone work), so it drops into sklearn
pipelines and model-selection utilities that accept list-like X.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .corpus import Corpus, Document, DomainRegistry
from .evaluation import select_top_k
from .labeling import label_corpus_documents, score_selection
from .nnet import ExternalFeatures, ModelConfig, score_sentences
from .strategies import TrainConfig, encode_training_document, train


def _as_corpus(documents) -> Corpus:
    if isinstance(documents, Corpus):
        return documents
    docs = list(documents)
    if not docs or not all(isinstance(d, Document) for d in docs):
        raise TypeError("X must be a Corpus or a non-empty sequence of Document")
    names: list[str] = []
    for doc in docs:
        if doc.domain.name not in names:
            names.append(doc.domain.name)
    registry = DomainRegistry.from_names(names)
    rebound = [
        Document(
            doc_id=d.doc_id,
            domain=registry.by_name(d.domain.name),
            sentences=d.sentences,
            reference=d.reference,
            split=d.split,
            labels=d.labels,
        )
        for d in docs
    ]
    return Corpus(
        registry=registry,
        documents=rebound,
        source_domains=frozenset(d.id for d in registry.real_domains),
        heldout_domains=frozenset(),
    )


class ExtractiveSummarizer(BaseEstimator):
    """Trainable sentence selector with the four multi-domain strategies.

    Parameters
    ----------
    strategy : one of "joint", "pretrained", "tag", "meta".
    k : sentences selected per document at predict time.
    auto_label : compute greedy-oracle labels for unlabeled training
        documents instead of erroring.
    model_config : optional ModelConfig; None uses the desk-scale default.
    external_features : frozen feature provider (pretrained strategy).
    Remaining parameters mirror the training configuration.
    """

    def __init__(
        self,
        strategy: str = "tag",
        k: int = 2,
        epochs: int = 5,
        batch_size: int = 8,
        learning_rate: float = 0.01,
        gamma: float = 0.5,
        inner_step_size: float | None = None,
        relabel_prob: float = 0.1,
        optimizer: str = "adam",
        domain_schedule: str = "round_robin",
        patience: int = 3,
        seed: int = 0,
        auto_label: bool = True,
        oracle_max_select: int = 3,
        model_config: ModelConfig | None = None,
        external_features: ExternalFeatures | None = None,
    ):
        self.strategy = strategy
        self.k = k
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.gamma = gamma
        self.inner_step_size = inner_step_size
        self.relabel_prob = relabel_prob
        self.optimizer = optimizer
        self.domain_schedule = domain_schedule
        self.patience = patience
        self.seed = seed
        self.auto_label = auto_label
        self.oracle_max_select = oracle_max_select
        self.model_config = model_config
        self.external_features = external_features

    def _train_config(self) -> TrainConfig:
        return TrainConfig(
            strategy=self.strategy,
            gamma=self.gamma,
            inner_step_size=self.inner_step_size,
            relabel_prob=self.relabel_prob,
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            seed=self.seed,
            domain_schedule=self.domain_schedule,
            optimizer=self.optimizer,
            patience=self.patience,
            eval_k=self.k,
        )

    def fit(self, X, y=None):
        """Train on a labeled Corpus or sequence of Documents.

        y is ignored; extractive labels travel on the documents themselves
        (auto_label fills them in with the greedy oracle when missing).
        """
        corpus = _as_corpus(X)
        if self.auto_label:
            needs = [d for d in corpus.documents if d.labels is None and d.split == "train"]
            if needs:
                labeled = {
                    d.doc_id: d
                    for d in label_corpus_documents(needs, max_select=self.oracle_max_select)
                }
                corpus = Corpus(
                    registry=corpus.registry,
                    documents=[labeled.get(d.doc_id, d) for d in corpus.documents],
                    source_domains=corpus.source_domains,
                    heldout_domains=corpus.heldout_domains,
                )
        config = self.model_config or ModelConfig()
        report, params, vocab = train(
            corpus,
            config,
            self._train_config(),
            external_features=self.external_features,
        )
        self.params_ = params
        self.vocab_ = vocab
        self.registry_ = corpus.registry
        self.config_ = params.config
        self.report_ = report
        self.n_domains_ = corpus.n_real_domains
        return self

    def _tag_for(self, doc: Document) -> int | None:
        if not self.config_.use_domain_tag:
            return None
        unknown = self.registry_.unknown.id
        if self.strategy in ("tag", "meta"):
            try:
                dom = self.registry_.by_name(doc.domain.name)
            except KeyError:
                return unknown
            return dom.id if not dom.is_unknown_tag else unknown
        return unknown

    def predict_proba(self, X) -> list[np.ndarray]:
        """Per-sentence selection probabilities for each document."""
        check_is_fitted(self, "params_")
        out = []
        for doc in self._documents(X):
            ex = encode_training_document(
                self.vocab_,
                doc,
                self.external_features if self.strategy == "pretrained" else None,
            )
            probs = score_sentences(
                self.params_,
                ex.sentence_ids,
                tag_id=self._tag_for(doc),
                external_features=ex.features,
            )
            out.append(np.asarray(probs.data, dtype=np.float64))
        return out

    def predict(self, X) -> list[list[int]]:
        """Selected sentence indices (document order) for each document."""
        return [select_top_k(p, self.k) for p in self.predict_proba(X)]

    def score(self, X, y=None) -> float:
        """Mean ROUGE-1 F1 of the selections against the references."""
        docs = self._documents(X)
        selections = self.predict(docs)
        scores = [
            score_selection(doc, sel)[0].f1 for doc, sel in zip(docs, selections)
        ]
        return float(np.mean(scores))

    @staticmethod
    def _documents(X) -> list[Document]:
        if isinstance(X, Corpus):
            return list(X.documents)
        return list(X)
