"""Extractive ground-truth labels and the Lead / Ext-Oracle baselines."""

from __future__ import annotations

from dataclasses import dataclass

from .corpus import Document
from .metrics import RougeScore, rouge_l, rouge_n

GAIN_METRICS = ("r1", "r2", "rl", "r1r2")
DEFAULT_GAIN_METRIC = "r1r2"
DEFAULT_MAX_SELECT = 3


@dataclass(frozen=True)
class LabelVector:
    """Binary per-sentence labels plus the greedy pick order that produced them."""

    labels: tuple[int, ...]
    selection_order: tuple[int, ...]

    def __post_init__(self):
        if sorted(set(self.selection_order)) != sorted(self.selection_order):
            raise ValueError("selection_order has duplicates")
        expected = set(self.selection_order)
        got = {i for i, y in enumerate(self.labels) if y == 1}
        if expected != got:
            raise ValueError("labels inconsistent with selection_order")


def _gain_score(candidate: list[str], reference: list[str], metric: str) -> float:
    if metric == "r1":
        return rouge_n(candidate, reference, 1).f1
    if metric == "r2":
        return rouge_n(candidate, reference, 2).f1
    if metric == "rl":
        return rouge_l(candidate, reference).f1
    if metric == "r1r2":
        return (rouge_n(candidate, reference, 1).f1 + rouge_n(candidate, reference, 2).f1) / 2.0
    raise ValueError(f"unknown gain metric {metric!r} (expected one of {GAIN_METRICS})")


def _flatten_selection(doc: Document, selected: list[int]) -> list[str]:
    return [t for i in sorted(selected) for t in doc.sentences[i].tokens]


def greedy_oracle(
    document: Document,
    max_select: int = DEFAULT_MAX_SELECT,
    metric: str = DEFAULT_GAIN_METRIC,
) -> LabelVector:
    """Iteratively add the sentence with the largest strictly positive gain.

    The gain is measured on the selection flattened in document order against
    the reference; ties go to the smaller sentence index. Stops when no
    candidate improves the score or max_select is reached.
    """
    if max_select < 1:
        raise ValueError("max_select must be >= 1")
    reference = document.reference_tokens()
    n = len(document.sentences)
    selected: list[int] = []
    best_score = 0.0
    while len(selected) < max_select:
        best_idx = -1
        for i in range(n):
            if i in selected:
                continue
            score = _gain_score(_flatten_selection(document, selected + [i]), reference, metric)
            if score > best_score:
                best_score = score
                best_idx = i
        if best_idx < 0:
            break
        selected.append(best_idx)
    labels = tuple(1 if i in selected else 0 for i in range(n))
    return LabelVector(labels=labels, selection_order=tuple(selected))


def lead_k(document: Document, k: int) -> LabelVector:
    if k < 1:
        raise ValueError("k must be >= 1")
    n = len(document.sentences)
    take = min(k, n)
    return LabelVector(
        labels=tuple(1 if i < take else 0 for i in range(n)),
        selection_order=tuple(range(take)),
    )


def score_selection(
    document: Document, selected: tuple[int, ...] | list[int]
) -> tuple[RougeScore, RougeScore, RougeScore]:
    """ROUGE-1/2/L of the selected sentences (document order) vs the reference."""
    candidate = _flatten_selection(document, list(selected))
    reference = document.reference_tokens()
    return (
        rouge_n(candidate, reference, 1),
        rouge_n(candidate, reference, 2),
        rouge_l(candidate, reference),
    )


def ext_oracle_eval(
    document: Document,
    max_select: int = DEFAULT_MAX_SELECT,
    metric: str = DEFAULT_GAIN_METRIC,
) -> tuple[RougeScore, RougeScore, RougeScore]:
    """Greedy-oracle selection scored with all three ROUGE variants."""
    picks = greedy_oracle(document, max_select=max_select, metric=metric)
    return score_selection(document, picks.selection_order)


def label_corpus_documents(
    documents: list[Document],
    max_select: int = DEFAULT_MAX_SELECT,
    metric: str = DEFAULT_GAIN_METRIC,
) -> list[Document]:
    return [
        doc.with_labels(greedy_oracle(doc, max_select=max_select, metric=metric).labels)
        for doc in documents
    ]
