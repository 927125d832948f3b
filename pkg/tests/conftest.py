import numpy as np
import pytest

from domainsum.corpus import Document, DomainRegistry, Sentence
from domainsum.nnet import ModelConfig, init_params

TINY_CONFIG = ModelConfig(
    embed_dim=6,
    conv_filter_widths=(2, 3),
    conv_filters_per_width=3,
    model_dim=10,
    attention_heads=2,
    ffn_dim=16,
    tag_embed_dim=3,
    dropout_rate=0.0,
)

# Seed chosen so every ReLU/pooling site sits comfortably away from its kink:
# the finite-difference checks stay orders of magnitude under tolerance.
GRADCHECK_SEED = 15


def make_registry(names=("a", "b")):
    return DomainRegistry.from_names(list(names))


def make_document(text_sents, ref_sents, doc_id="d0", split="test", domain=None, labels=None):
    if domain is None:
        domain = make_registry().by_name("a")
    doc = Document(
        doc_id=doc_id,
        domain=domain,
        sentences=tuple(Sentence.from_raw(s) for s in text_sents),
        reference=tuple(Sentence.from_raw(s) for s in ref_sents),
        split=split,
    )
    if labels is not None:
        doc = doc.with_labels(labels)
    return doc


@pytest.fixture
def tiny_store():
    return init_params(TINY_CONFIG, vocab_size=12, n_domains=3, seed=7)


@pytest.fixture
def gradcheck_store():
    """Float64 shadow store with the readout nudged off zero."""
    store = init_params(TINY_CONFIG, vocab_size=12, n_domains=3, seed=GRADCHECK_SEED).astype(
        np.float64
    )
    rng = np.random.default_rng(1000 + GRADCHECK_SEED)
    for name in ("readout_w", "readout_b"):
        t = store.tensors[name]
        t.data = np.asarray(t.data + rng.uniform(-0.1, 0.1, t.data.shape))
    return store


def finite_difference_worst(store, loss_fn, h=1e-3):
    """Max relative error of analytic grads vs central differences."""
    from domainsum.nnet import backward

    loss = loss_fn(store)
    backward(loss, store=store)
    grads = {
        n: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
        for n, t in store.items()
    }
    worst = 0.0
    worst_at = None
    for name, t in store.items():
        flat = t.data.reshape(-1)
        gflat = grads[name].reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            lp = float(loss_fn(store).data)
            flat[i] = orig - h
            lm = float(loss_fn(store).data)
            flat[i] = orig
            fd = (lp - lm) / (2.0 * h)
            rel = abs(fd - gflat[i]) / max(1.0, abs(fd), abs(gflat[i]))
            if rel > worst:
                worst, worst_at = rel, (name, i)
    return worst, worst_at
