"""Frozen external sentence features (the generic pre-trained provider).

Features live in an .npz file with one array per sentence under the key
"<doc_id>::<sentence_index>"; all vectors must share one dimension. The
provider is read-only: its vectors enter the model through a learned
projection and never receive gradients.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np


class FeatureError(Exception):
    pass


class ExternalFeatures:
    def __init__(self, vectors: dict[tuple[str, int], np.ndarray]):
        if not vectors:
            raise FeatureError("empty feature set")
        dims = {v.shape for v in vectors.values()}
        if len(dims) != 1 or len(next(iter(dims))) != 1:
            raise FeatureError(f"inconsistent feature shapes: {sorted(dims)}")
        self._vectors = {k: np.asarray(v, dtype=np.float32) for k, v in vectors.items()}
        self.feature_dim = next(iter(self._vectors.values())).shape[0]

    def get(self, doc_id: str, sentence_index: int) -> np.ndarray:
        key = (doc_id, sentence_index)
        if key not in self._vectors:
            raise FeatureError(
                f"missing external feature for (doc_id={doc_id!r}, sentence_index={sentence_index})"
            )
        return self._vectors[key]

    def document(self, doc_id: str, n_sentences: int) -> list[np.ndarray]:
        return [self.get(doc_id, i) for i in range(n_sentences)]

    def __len__(self) -> int:
        return len(self._vectors)


def load_external_features(path: str | Path) -> ExternalFeatures:
    with np.load(path) as data:
        vectors = {}
        for key in data.files:
            doc_id, _, idx = key.rpartition("::")
            if not doc_id or not idx.isdigit():
                raise FeatureError(f"bad feature key {key!r} (want '<doc_id>::<index>')")
            vectors[(doc_id, int(idx))] = data[key]
    return ExternalFeatures(vectors)


def save_external_features(
    vectors: dict[tuple[str, int], np.ndarray], path: str | Path
) -> None:
    np.savez(path, **{f"{doc}::{idx}": v for (doc, idx), v in vectors.items()})
