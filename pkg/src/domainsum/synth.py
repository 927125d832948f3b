"""Synthetic multi-domain corpora with controllable position bias.

Each domain draws reference summaries from a domain-specific sentence
position (first/middle/last/uniform). Three optional content signals shape
what is learnable:

  markers  per-domain tokens injected into sentences; they make domains
           linearly separable and offer a domain-specific shortcut.
  cue      a shared token marking one extra reference sentence at a random
           position; a selection rule that transfers to any domain.
  hilite   a shared token injected into the position-biased reference
           sentences themselves; the fully domain-general route to them.
           Models that fit a domain via position/marker shortcuts under-learn
           it and degrade on unseen domains, which is the behavior the
           multi-domain experiments measure.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

POSITION_BIASES = ("first", "middle", "last", "uniform")


@dataclass(frozen=True)
class SynthDomainSpec:
    name: str
    position_bias: str
    n_docs: int
    marker: str | tuple[str, ...] | None = None
    marker_rate: float = 1.0

    def __post_init__(self):
        if self.position_bias not in POSITION_BIASES:
            raise ValueError(
                f"unknown position_bias {self.position_bias!r} (expected one of {POSITION_BIASES})"
            )
        if self.n_docs < 1:
            raise ValueError("n_docs must be >= 1")
        if not 0.0 <= self.marker_rate <= 1.0:
            raise ValueError("marker_rate must be in [0, 1]")
        if isinstance(self.marker, (list, tuple)):
            object.__setattr__(self, "marker", tuple(self.marker))

    @property
    def marker_tokens(self) -> tuple[str, ...]:
        if self.marker is None:
            return (f"zz{self.name.lower()}",)
        if isinstance(self.marker, str):
            return (self.marker,)
        return self.marker


@dataclass(frozen=True)
class SynthSpec:
    domains: tuple[SynthDomainSpec, ...]
    summary_size: int = 2
    cue_rate: float = 1.0
    cue_token: str = "keyfact"
    hilite_rate: float = 1.0
    hilite_token: str = "hilite"
    min_sentences: int = 7
    max_sentences: int = 10
    min_tokens: int = 5
    max_tokens: int = 9
    filler_vocab: int = 30
    use_markers: bool = True
    split_fractions: tuple[float, float, float] = (0.8, 0.1, 0.1)

    def __post_init__(self):
        if len(self.domains) < 2:
            raise ValueError("a synthetic spec needs at least two domains")
        if self.summary_size < 1:
            raise ValueError("summary_size must be >= 1")
        if not 0.0 <= self.cue_rate <= 1.0:
            raise ValueError("cue_rate must be in [0, 1]")
        if not 0.0 <= self.hilite_rate <= 1.0:
            raise ValueError("hilite_rate must be in [0, 1]")
        if self.min_sentences < self.summary_size + 1:
            raise ValueError("min_sentences must exceed summary_size")
        if self.max_sentences < self.min_sentences or self.max_tokens < self.min_tokens:
            raise ValueError("invalid sentence/token ranges")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValueError("split_fractions must sum to 1")
        object.__setattr__(self, "domains", tuple(self.domains))

    def to_dict(self) -> dict:
        return {
            "domains": [
                {
                    "name": d.name,
                    "position_bias": d.position_bias,
                    "n_docs": d.n_docs,
                    "marker": list(d.marker_tokens) if self.use_markers else None,
                    "marker_rate": d.marker_rate,
                }
                for d in self.domains
            ],
            "summary_size": self.summary_size,
            "cue_rate": self.cue_rate,
            "cue_token": self.cue_token,
            "hilite_rate": self.hilite_rate,
            "hilite_token": self.hilite_token,
            "min_sentences": self.min_sentences,
            "max_sentences": self.max_sentences,
            "min_tokens": self.min_tokens,
            "max_tokens": self.max_tokens,
            "filler_vocab": self.filler_vocab,
            "use_markers": self.use_markers,
            "split_fractions": list(self.split_fractions),
        }


def _bias_block(bias: str, n: int, size: int, rng: np.random.Generator) -> list[int]:
    size = min(size, n)
    if bias == "first":
        start = 0
    elif bias == "last":
        start = n - size
    elif bias == "middle":
        start = max(0, min((n - 1) // 2 - (size - 1) // 2, n - size))
    else:
        start = int(rng.integers(0, n - size + 1))
    return list(range(start, start + size))


def make_synthetic_corpus(spec: SynthSpec, seed: int, path: str | Path) -> None:
    """Write a corpus file for the spec; byte-identical for identical seeds."""
    rng = np.random.default_rng(np.random.SeedSequence([seed, 77]))
    fillers = [f"w{i:02d}" for i in range(spec.filler_vocab)]
    with open(path, "w", encoding="utf-8") as fh:
        meta = {"generator": "synthetic-corpus", "seed": seed, "spec": spec.to_dict()}
        fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for dom in spec.domains:
            boundaries = (
                int(dom.n_docs * spec.split_fractions[0]),
                int(dom.n_docs * (spec.split_fractions[0] + spec.split_fractions[1])),
            )
            for idx in range(dom.n_docs):
                record = _make_document(spec, dom, idx, boundaries, fillers, rng)
                fh.write(json.dumps(record, sort_keys=True) + "\n")


def _make_document(
    spec: SynthSpec,
    dom: SynthDomainSpec,
    idx: int,
    boundaries: tuple[int, int],
    fillers: list[str],
    rng: np.random.Generator,
) -> dict:
    n = int(rng.integers(spec.min_sentences, spec.max_sentences + 1))
    sentences = []
    for _ in range(n):
        length = int(rng.integers(spec.min_tokens, spec.max_tokens + 1))
        sentences.append([fillers[j] for j in rng.integers(0, len(fillers), size=length)])

    if spec.use_markers and dom.marker_rate > 0:
        count = max(1, int(round(dom.marker_rate * n)))
        for s_idx in rng.choice(n, size=min(count, n), replace=False):
            for token in dom.marker_tokens:
                pos = int(rng.integers(0, len(sentences[s_idx]) + 1))
                sentences[s_idx].insert(pos, token)

    has_cue = spec.cue_rate > 0 and rng.random() < spec.cue_rate
    block_size = spec.summary_size - (1 if has_cue else 0)
    picks = _bias_block(dom.position_bias, n, block_size, rng) if block_size else []
    if spec.hilite_rate > 0:
        for i in picks:
            if rng.random() < spec.hilite_rate:
                pos = int(rng.integers(0, len(sentences[i]) + 1))
                sentences[i].insert(pos, spec.hilite_token)
    if has_cue:
        candidates = [i for i in range(n) if i not in picks]
        if candidates:
            cue_idx = int(rng.choice(candidates))
            pos = int(rng.integers(0, len(sentences[cue_idx]) + 1))
            sentences[cue_idx].insert(pos, spec.cue_token)
            picks = sorted(picks + [cue_idx])

    if idx < boundaries[0]:
        split = "train"
    elif idx < boundaries[1]:
        split = "valid"
    else:
        split = "test"
    text = [" ".join(s) for s in sentences]
    return {
        "doc_id": f"{dom.name}-{idx:05d}",
        "domain": dom.name,
        "split": split,
        "text": text,
        "summary": [text[i] for i in picks],
    }


def preset_spec(name: str) -> SynthSpec:
    """Built-in generator presets for the demo and acceptance workflows."""
    if name == "demo":
        return SynthSpec(
            domains=(
                SynthDomainSpec("first", "first", 120),
                SynthDomainSpec("middle", "middle", 120),
                SynthDomainSpec("last", "last", 120),
            ),
        )
    if name == "accept3":
        # hilite on half the position sentences keeps a domain-general route
        # to them while leaving the other half resolvable only through
        # domain-specific signals (markers / tags / position)
        return SynthSpec(
            domains=(
                SynthDomainSpec("first", "first", 2000),
                SynthDomainSpec("middle", "middle", 2000),
                SynthDomainSpec("last", "last", 2000),
            ),
            hilite_rate=0.5,
        )
    raise ValueError(f"unknown synthetic preset {name!r} (have: demo, accept3)")


def load_spec_file(path: str | Path) -> SynthSpec:
    with open(path, encoding="utf-8") as fh:
        raw = json.load(fh)
    domains = tuple(
        SynthDomainSpec(
            name=d["name"],
            position_bias=d["position_bias"],
            n_docs=d["n_docs"],
            marker=tuple(d["marker"]) if isinstance(d.get("marker"), list) else d.get("marker"),
            marker_rate=d.get("marker_rate", 1.0),
        )
        for d in raw.pop("domains")
    )
    raw.pop("split_fractions", None)
    return SynthSpec(domains=domains, **raw)
