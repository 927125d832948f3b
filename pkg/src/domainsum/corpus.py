"""Multi-domain corpus ingestion, tokenization, vocabularies and partitions.

Corpus files are UTF-8, one JSON record per line with fields doc_id, domain,
split, text (list of sentence strings), summary (list of sentence strings)
and optionally labels (list of 0/1 ints, one per text sentence). A record
whose only key is "_meta" carries tool configuration and is skipped on read.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Iterator

PAD_ID = 0
UNK_ID = 1
PAD_TOKEN = "<pad>"
UNK_TOKEN = "<unk>"
UNKNOWN_DOMAIN_NAME = "<unknown>"

SPLITS = ("train", "valid", "test")

DEFAULT_MAX_SENTENCES = 50
DEFAULT_MAX_TOKENS = 100


class CorpusError(Exception):
    """Malformed corpus file or inconsistent domain configuration."""


def tokenize(raw: str) -> list[str]:
    """Lowercase, split on whitespace, split off edge punctuation.

    Rule (locked by regression tests): for each whitespace-separated piece,
    leading non-alphanumeric characters are emitted as single-character
    tokens, then trailing non-alphanumeric characters likewise, except that
    one trailing "." is kept attached when the remainder contains an interior
    "." (so abbreviations like "u.s." survive). Interior punctuation is never
    touched; digits are preserved.
    """
    out: list[str] = []
    for piece in raw.lower().split():
        chars = list(piece)
        lead: list[str] = []
        while chars and not chars[0].isalnum():
            lead.append(chars.pop(0))
        trail: list[str] = []
        while chars and not chars[-1].isalnum():
            if chars[-1] == "." and _has_interior_dot(chars):
                break
            trail.append(chars.pop())
        out.extend(lead)
        if chars:
            out.append("".join(chars))
        out.extend(reversed(trail))
    return out


def _has_interior_dot(chars: list[str]) -> bool:
    # Interior = strictly between the first and last alphanumeric character.
    first = next((i for i, c in enumerate(chars) if c.isalnum()), None)
    if first is None:
        return False
    last = max(i for i, c in enumerate(chars) if c.isalnum())
    return "." in chars[first + 1 : last]


@dataclass(frozen=True)
class DomainId:
    id: int
    name: str
    is_unknown_tag: bool = False


@dataclass(frozen=True)
class Sentence:
    raw: str
    tokens: tuple[str, ...]

    @classmethod
    def from_raw(cls, raw: str) -> "Sentence":
        return cls(raw=raw, tokens=tuple(tokenize(raw)))


@dataclass(frozen=True)
class Document:
    doc_id: str
    domain: DomainId
    sentences: tuple[Sentence, ...]
    reference: tuple[Sentence, ...]
    split: str
    labels: tuple[int, ...] | None = None

    def text_tokens(self) -> list[str]:
        return [t for s in self.sentences for t in s.tokens]

    def reference_tokens(self) -> list[str]:
        return [t for s in self.reference for t in s.tokens]

    def with_labels(self, labels: Iterable[int]) -> "Document":
        labels = tuple(int(x) for x in labels)
        if len(labels) != len(self.sentences):
            raise ValueError(
                f"{self.doc_id}: {len(labels)} labels for {len(self.sentences)} sentences"
            )
        return replace(self, labels=labels)


@dataclass
class DomainRegistry:
    """Dense domain ids in first-seen order, plus one reserved unknown tag."""

    domains: list[DomainId] = field(default_factory=list)

    @property
    def unknown(self) -> DomainId:
        return self.domains[-1]

    @property
    def real_domains(self) -> list[DomainId]:
        return self.domains[:-1]

    def by_name(self, name: str) -> DomainId:
        for d in self.domains:
            if d.name == name:
                return d
        raise KeyError(f"unknown domain name: {name!r}")

    @classmethod
    def from_names(cls, names: Iterable[str]) -> "DomainRegistry":
        domains = [DomainId(i, n) for i, n in enumerate(names)]
        domains.append(DomainId(len(domains), UNKNOWN_DOMAIN_NAME, is_unknown_tag=True))
        return cls(domains)


@dataclass
class Corpus:
    registry: DomainRegistry
    documents: list[Document]
    source_domains: frozenset[int]
    heldout_domains: frozenset[int]

    @property
    def n_real_domains(self) -> int:
        return len(self.registry.real_domains)

    def docs(
        self, domain: DomainId | None = None, split: str | None = None
    ) -> list[Document]:
        out = self.documents
        if domain is not None:
            out = [d for d in out if d.domain.id == domain.id]
        if split is not None:
            out = [d for d in out if d.split == split]
        return out

    def source(self) -> list[DomainId]:
        return [d for d in self.registry.real_domains if d.id in self.source_domains]

    def heldout(self) -> list[DomainId]:
        return [d for d in self.registry.real_domains if d.id in self.heldout_domains]

    def with_partition(self, source: list[str], heldout: list[str]) -> "Corpus":
        """Reinterpret the same documents under a different domain partition."""
        src, held = _resolve_partition(
            [d.name for d in self.registry.real_domains], source, heldout
        )
        return Corpus(
            registry=self.registry,
            documents=self.documents,
            source_domains=frozenset(self.registry.by_name(n).id for n in src),
            heldout_domains=frozenset(self.registry.by_name(n).id for n in held),
        )


def _resolve_partition(
    names: list[str], source: list[str] | None, heldout: list[str] | None
) -> tuple[list[str], list[str]]:
    if source is None and heldout is None:
        return names, []
    source = source or []
    heldout = heldout or []
    both = set(source) & set(heldout)
    if both:
        raise CorpusError(f"domains in both partitions: {sorted(both)}")
    for n in source + heldout:
        if n not in names:
            raise CorpusError(f"partition names unknown domain {n!r} (have {names})")
    missing = [n for n in names if n not in source and n not in heldout]
    if missing:
        raise CorpusError(f"domains assigned to no partition: {missing}")
    return source, heldout


def _parse_record(obj: dict, line_no: int) -> dict:
    for key in ("doc_id", "domain", "split", "text", "summary"):
        if key not in obj:
            raise CorpusError(f"line {line_no}: record missing field {key!r}")
    if obj["split"] not in SPLITS:
        raise CorpusError(
            f"line {line_no}: unknown split {obj['split']!r} (expected one of {SPLITS})"
        )
    for key in ("text", "summary"):
        value = obj[key]
        if not isinstance(value, list) or not all(isinstance(s, str) for s in value):
            raise CorpusError(f"line {line_no}: field {key!r} must be a list of strings")
    return obj


def _sentences(raws: list[str], line_no: int, what: str) -> tuple[Sentence, ...]:
    kept = tuple(s for s in (Sentence.from_raw(r) for r in raws) if s.tokens)
    if not kept:
        raise CorpusError(f"line {line_no}: {what} has no non-empty sentences")
    return kept


def read_records(path: str | Path) -> Iterator[tuple[int, dict]]:
    """Yield (line_no, record) pairs, skipping blank and _meta lines."""
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise CorpusError(f"line {line_no}: invalid JSON ({exc.msg})") from exc
            if isinstance(obj, dict) and set(obj) == {"_meta"}:
                continue
            if not isinstance(obj, dict):
                raise CorpusError(f"line {line_no}: record is not an object")
            yield line_no, obj


def ingest(
    path: str | Path,
    source: list[str] | None = None,
    heldout: list[str] | None = None,
) -> Corpus:
    """Read a corpus file and assign domains to source/heldout partitions.

    Domain names are registered in first-seen order with the unknown tag
    appended last. When neither partition list is given, every domain is a
    source domain.
    """
    names: list[str] = []
    raw_docs: list[tuple[int, dict]] = []
    seen_ids: set[str] = set()
    for line_no, obj in read_records(path):
        obj = _parse_record(obj, line_no)
        if obj["doc_id"] in seen_ids:
            raise CorpusError(f"line {line_no}: duplicate doc_id {obj['doc_id']!r}")
        seen_ids.add(obj["doc_id"])
        if obj["domain"] not in names:
            names.append(obj["domain"])
        raw_docs.append((line_no, obj))
    if not raw_docs:
        raise CorpusError(f"{path}: no records")

    registry = DomainRegistry.from_names(names)
    documents = []
    for line_no, obj in raw_docs:
        labels = obj.get("labels")
        sentences = _sentences(obj["text"], line_no, "text")
        if labels is not None:
            if len(labels) != len(obj["text"]):
                raise CorpusError(
                    f"line {line_no}: {len(labels)} labels for {len(obj['text'])} sentences"
                )
            # Realign labels with the retained (non-empty) sentences.
            labels = tuple(
                int(lbl)
                for raw, lbl in zip(obj["text"], labels)
                if tokenize(raw)
            )
        documents.append(
            Document(
                doc_id=obj["doc_id"],
                domain=registry.by_name(obj["domain"]),
                sentences=sentences,
                reference=_sentences(obj["summary"], line_no, "summary"),
                split=obj["split"],
                labels=labels,
            )
        )

    src, held = _resolve_partition(names, source, heldout)
    return Corpus(
        registry=registry,
        documents=documents,
        source_domains=frozenset(registry.by_name(n).id for n in src),
        heldout_domains=frozenset(registry.by_name(n).id for n in held),
    )


def write_corpus(corpus: Corpus, path: str | Path, meta: dict | None = None) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        if meta is not None:
            fh.write(json.dumps({"_meta": meta}, sort_keys=True) + "\n")
        for doc in corpus.documents:
            record = {
                "doc_id": doc.doc_id,
                "domain": doc.domain.name,
                "split": doc.split,
                "text": [s.raw for s in doc.sentences],
                "summary": [s.raw for s in doc.reference],
            }
            if doc.labels is not None:
                record["labels"] = list(doc.labels)
            fh.write(json.dumps(record, sort_keys=True) + "\n")


@dataclass
class Vocabulary:
    """token -> id map with reserved PAD (0) and UNK (1) entries.

    Built only from train-split documents of source domains; max_size caps
    the number of content tokens (reserved ids excluded).
    """

    token_to_id: dict[str, int]
    min_frequency: int
    max_size: int

    def __len__(self) -> int:
        return len(self.token_to_id)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        return [self.token_to_id.get(t, UNK_ID) for t in tokens]

    def content_hash(self) -> str:
        import hashlib

        blob = "\n".join(
            f"{t}\t{i}" for t, i in sorted(self.token_to_id.items(), key=lambda kv: kv[1])
        )
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:16]


def build_vocabulary(
    corpus: Corpus, min_frequency: int = 2, max_size: int = 30000
) -> Vocabulary:
    counts: dict[str, int] = {}
    for dom in corpus.source():
        for doc in corpus.docs(domain=dom, split="train"):
            for tok in doc.text_tokens():
                counts[tok] = counts.get(tok, 0) + 1
    if not counts:
        raise CorpusError("no source-domain train text to build a vocabulary from")
    qualifying = [t for t, c in counts.items() if c >= min_frequency]
    qualifying.sort(key=lambda t: (-counts[t], t))
    kept = qualifying[:max_size]
    token_to_id = {PAD_TOKEN: PAD_ID, UNK_TOKEN: UNK_ID}
    for tok in kept:
        token_to_id[tok] = len(token_to_id)
    return Vocabulary(token_to_id, min_frequency, max_size)


def encode_document_ids(
    vocab: Vocabulary,
    doc: Document,
    max_sentences: int = DEFAULT_MAX_SENTENCES,
    max_tokens: int = DEFAULT_MAX_TOKENS,
) -> list[list[int]]:
    """Token ids per sentence, truncated to the configured encoding bounds."""
    out = []
    for sentence in doc.sentences[:max_sentences]:
        out.append(vocab.encode(sentence.tokens[:max_tokens]))
    return out


def stats(
    corpus: Corpus,
    lead_k: int = 2,
    oracle_max_select: int = 3,
) -> list[dict]:
    """Per-domain counts, fragment measures and Lead/Ext-Oracle baselines.

    Measures and baselines use each domain's test split. Returns one row dict
    per real domain plus one unweighted average row per non-empty partition
    group; domains with an empty test split keep their counts and carry None
    measures (flagged, not fatal).
    """
    from . import labeling
    from .metrics import extractive_fragments

    rows = []
    groups: dict[str, list[dict]] = {"source": [], "heldout": []}
    for dom in corpus.registry.real_domains:
        row: dict = {"domain": dom.name}
        for split in SPLITS:
            row[f"n_{split}"] = len(corpus.docs(domain=dom, split=split))
        test_docs = corpus.docs(domain=dom, split="test")
        if not test_docs:
            row.update(
                {k: None for k in (
                    "coverage", "density", "compression",
                    "lead_r1", "lead_r2", "lead_rl",
                    "oracle_r1", "oracle_r2", "oracle_rl",
                )}
            )
            row["flagged"] = "empty test split"
        else:
            cov = den = com = 0.0
            lead = [0.0, 0.0, 0.0]
            oracle = [0.0, 0.0, 0.0]
            for doc in test_docs:
                frag = extractive_fragments(doc.text_tokens(), doc.reference_tokens())
                cov += frag.coverage
                den += frag.density
                com += frag.compression
                lead_sel = labeling.lead_k(doc, lead_k)
                lead_scores = labeling.score_selection(doc, lead_sel.selection_order)
                oracle_scores = labeling.ext_oracle_eval(doc, oracle_max_select)
                for i in range(3):
                    lead[i] += lead_scores[i].f1
                    oracle[i] += oracle_scores[i].f1
            n = len(test_docs)
            row.update(
                coverage=cov / n,
                density=den / n,
                compression=com / n,
                lead_r1=100.0 * lead[0] / n,
                lead_r2=100.0 * lead[1] / n,
                lead_rl=100.0 * lead[2] / n,
                oracle_r1=100.0 * oracle[0] / n,
                oracle_r2=100.0 * oracle[1] / n,
                oracle_rl=100.0 * oracle[2] / n,
            )
            row["flagged"] = ""
        rows.append(row)
        if dom.id in corpus.source_domains:
            groups["source"].append(row)
        elif dom.id in corpus.heldout_domains:
            groups["heldout"].append(row)

    measure_keys = [
        "coverage", "density", "compression",
        "lead_r1", "lead_r2", "lead_rl",
        "oracle_r1", "oracle_r2", "oracle_rl",
    ]
    for group_name in ("source", "heldout"):
        members = [r for r in groups[group_name] if not r["flagged"]]
        if not members:
            continue
        avg: dict = {"domain": f"avg_{group_name}", "flagged": ""}
        for key in ("n_train", "n_valid", "n_test"):
            avg[key] = sum(r[key] for r in members) // len(members)
        for key in measure_keys:
            avg[key] = sum(r[key] for r in members) / len(members)
        rows.append(avg)
    return rows


STATS_HEADER = (
    "domain,n_train,n_valid,n_test,coverage,density,compression,"
    "lead_r1,lead_r2,lead_rl,oracle_r1,oracle_r2,oracle_rl"
)


def format_stats_csv(rows: list[dict], config_note: str | None = None) -> str:
    """Fixed-header CSV; measures at 2 decimals, ROUGE already x100."""
    lines = []
    if config_note:
        lines.append(f"# config: {config_note}")
    lines.append(STATS_HEADER)
    for row in rows:
        cells = [row["domain"], str(row["n_train"]), str(row["n_valid"]), str(row["n_test"])]
        for key in STATS_HEADER.split(",")[4:]:
            value = row[key]
            cells.append("" if value is None else f"{value:.2f}")
        lines.append(",".join(cells))
    return "\n".join(lines) + "\n"
