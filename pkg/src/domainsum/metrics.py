"""Exact ROUGE-1/2/L and extractive-fragment measures (coverage, density, compression).

All functions operate on pre-tokenized text (lists of token strings) and are
pure: no stemming, no stopword removal, no resampling. Multi-sentence texts
must be flattened to a single token sequence by the caller. F1 is the reported
score; scores are kept in [0, 1] here and scaled x100 only at the output layer.
"""

from __future__ import annotations

from collections import Counter
from dataclasses import dataclass


@dataclass(frozen=True)
class RougeScore:
    precision: float
    recall: float
    f1: float


@dataclass(frozen=True)
class FragmentStats:
    """Greedy extractive fragments of a summary against its source document.

    fragments: (doc_start_index, length) pairs in summary-scan order.
    coverage:    (sum of fragment lengths) / |summary tokens|
    density:     (sum of squared fragment lengths) / |summary tokens|
    compression: |doc tokens| / |summary tokens|
    """

    fragments: tuple[tuple[int, int], ...]
    coverage: float
    density: float
    compression: float


def _f1(precision: float, recall: float) -> float:
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def _ngram_counts(tokens: list[str], n: int) -> Counter:
    return Counter(tuple(tokens[i : i + n]) for i in range(len(tokens) - n + 1))


def rouge_n(candidate: list[str], reference: list[str], n: int = 1) -> RougeScore:
    """Clipped n-gram overlap (multiset intersection) between two token lists."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    cand_counts = _ngram_counts(candidate, n)
    ref_counts = _ngram_counts(reference, n)
    overlap = sum((cand_counts & ref_counts).values())
    n_cand = max(len(candidate) - n + 1, 0)
    n_ref = max(len(reference) - n + 1, 0)
    precision = overlap / n_cand if n_cand else 0.0
    recall = overlap / n_ref if n_ref else 0.0
    return RougeScore(precision, recall, _f1(precision, recall))


def lcs_length(a: list[str], b: list[str]) -> int:
    """Longest common subsequence length via the standard DP recurrence."""
    if not a or not b:
        return 0
    prev = [0] * (len(b) + 1)
    for x in a:
        cur = [0] * (len(b) + 1)
        for j, y in enumerate(b):
            if x == y:
                cur[j + 1] = prev[j] + 1
            else:
                cur[j + 1] = max(prev[j + 1], cur[j])
        prev = cur
    return prev[-1]


def rouge_l(candidate: list[str], reference: list[str]) -> RougeScore:
    lcs = lcs_length(candidate, reference)
    precision = lcs / len(candidate) if candidate else 0.0
    recall = lcs / len(reference) if reference else 0.0
    return RougeScore(precision, recall, _f1(precision, recall))


def rouge_mean(candidate: list[str], reference: list[str]) -> float:
    """Arithmetic mean of ROUGE-1, ROUGE-2 and ROUGE-L F1."""
    scores = (
        rouge_n(candidate, reference, 1).f1,
        rouge_n(candidate, reference, 2).f1,
        rouge_l(candidate, reference).f1,
    )
    return sum(scores) / 3.0


def _longest_match_at(summary: list[str], doc: list[str], i: int) -> tuple[int, int]:
    """Longest contiguous match of summary[i:] anywhere in doc.

    Returns (doc_start, length); earliest doc start wins ties. length 0 means
    summary[i] does not occur in doc (doc_start is then -1).
    """
    best_start, best_len = -1, 0
    for j in range(len(doc)):
        if doc[j] != summary[i]:
            continue
        k = 0
        while i + k < len(summary) and j + k < len(doc) and summary[i + k] == doc[j + k]:
            k += 1
        if k > best_len:
            best_start, best_len = j, k
    return best_start, best_len


def extractive_fragments(doc: list[str], summary: list[str]) -> FragmentStats:
    """Greedy left-to-right fragment decomposition of summary against doc.

    At each summary position the longest contiguous doc match is consumed as
    one fragment; an unmatched token advances the scan by one and contributes
    length zero.
    """
    if not summary:
        raise ValueError("summary must be non-empty (compression undefined)")
    if not doc:
        raise ValueError("doc must be non-empty")
    fragments: list[tuple[int, int]] = []
    i = 0
    while i < len(summary):
        start, length = _longest_match_at(summary, doc, i)
        if length > 0:
            fragments.append((start, length))
            i += length
        else:
            i += 1
    total = sum(length for _, length in fragments)
    squared = sum(length * length for _, length in fragments)
    n_sum = len(summary)
    return FragmentStats(
        fragments=tuple(fragments),
        coverage=total / n_sum,
        density=squared / n_sum,
        compression=len(doc) / n_sum,
    )
