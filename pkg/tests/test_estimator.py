"""sklearn estimator contract and behavior of the facade."""

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from domainsum.corpus import ingest
from domainsum.estimator import ExtractiveSummarizer
from domainsum.nnet import ModelConfig
from domainsum.synth import SynthDomainSpec, SynthSpec, make_synthetic_corpus

SMALL = ModelConfig(
    embed_dim=8, conv_filter_widths=(2, 3), conv_filters_per_width=4,
    model_dim=16, attention_heads=2, ffn_dim=24, tag_embed_dim=4, dropout_rate=0.0,
)


@pytest.fixture(scope="module")
def corpus(tmp_path_factory):
    path = tmp_path_factory.mktemp("est") / "c.jsonl"
    spec = SynthSpec(
        domains=(
            SynthDomainSpec("alpha", "first", 40),
            SynthDomainSpec("beta", "last", 40),
        ),
        min_sentences=5,
        max_sentences=7,
        cue_rate=0.0,
    )
    make_synthetic_corpus(spec, seed=6, path=path)
    return ingest(path)


def test_get_set_params_round_trip():
    est = ExtractiveSummarizer(strategy="meta", gamma=0.25, epochs=2)
    params = est.get_params()
    assert params["strategy"] == "meta"
    assert params["gamma"] == 0.25
    est.set_params(gamma=0.75)
    assert est.gamma == 0.75


def test_clone_preserves_params():
    est = ExtractiveSummarizer(strategy="joint", k=3, seed=11)
    twin = clone(est)
    assert twin.get_params() == est.get_params()


def test_predict_before_fit_raises(corpus):
    est = ExtractiveSummarizer()
    with pytest.raises(NotFittedError):
        est.predict(corpus)


def test_fit_predict_score(corpus):
    est = ExtractiveSummarizer(
        strategy="tag", epochs=2, batch_size=8, seed=1, model_config=SMALL
    )
    est.fit(corpus)
    test_docs = [d for d in corpus.documents if d.split == "test"]
    probs = est.predict_proba(test_docs)
    assert len(probs) == len(test_docs)
    for doc, p in zip(test_docs, probs):
        assert p.shape == (len(doc.sentences),)
        assert np.all((p > 0) & (p < 1))
    selections = est.predict(test_docs)
    assert all(len(sel) == 2 for sel in selections)
    assert 0.0 <= est.score(test_docs) <= 1.0


def test_fit_accepts_document_sequence_and_autolabels(corpus):
    docs = list(corpus.documents)
    assert all(d.labels is None for d in docs)
    est = ExtractiveSummarizer(strategy="joint", epochs=1, seed=0, model_config=SMALL)
    est.fit(docs)
    assert hasattr(est, "params_")
    assert est.n_domains_ == 2


def test_fit_without_autolabel_requires_labels(corpus):
    est = ExtractiveSummarizer(auto_label=False, epochs=1, model_config=SMALL)
    from domainsum.strategies import TrainingError

    with pytest.raises(TrainingError, match="label"):
        est.fit(corpus)


def test_unseen_domain_predicts_with_unknown_tag(corpus):
    est = ExtractiveSummarizer(strategy="tag", epochs=1, seed=3, model_config=SMALL)
    est.fit(corpus)
    from conftest import make_document

    foreign = make_document(["novel words here", "other content", "third one"], ["ref"])
    (sel,) = est.predict([foreign])
    assert len(sel) == 2
