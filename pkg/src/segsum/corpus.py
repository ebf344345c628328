"""Corpus loading, synthesis, vocabulary, and example encoding.

Documents are JSON Lines records with fields:

    paragraphs  list of paragraphs; each either a string (whitespace
                tokenized, lowercased) or a list of tokens
    boundaries  ascending ints b in [1, M-1]; section j ends after
                paragraph b_j
    summaries   list of summaries (string or token list), one per
                section that has one
    first_section_has_summary  optional bool, default false

All operations here are pure functions of their inputs (and seed), safe
to call concurrently.
"""

from __future__ import annotations

import bisect
import json
import random
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np


class CorpusError(ValueError):
    """Malformed record or violated document invariant."""


PAD, BOS, EOS, X_SEP, Y_SEP, UNK = "[PAD]", "[BOS]", "[EOS]", "[X_SEP]", "[Y_SEP]", "[UNK]"
RESERVED_TOKENS = (PAD, BOS, EOS, X_SEP, Y_SEP, UNK)
PAD_ID, BOS_ID, EOS_ID, X_SEP_ID, Y_SEP_ID, UNK_ID = range(len(RESERVED_TOKENS))

# Size of the shared filler vocabulary used by the synthetic generator.
FILLER_VOCAB_SIZE = 20


@dataclass(frozen=True)
class Document:
    """A tokenized multi-paragraph document with gold structure."""

    paragraphs: tuple[tuple[str, ...], ...]
    gold_boundaries: tuple[int, ...]
    gold_summaries: tuple[tuple[str, ...], ...]
    first_section_has_summary: bool = False

    def __post_init__(self):
        m = len(self.paragraphs)
        if m < 1:
            raise CorpusError("paragraphs: document must have at least one paragraph")
        for i, p in enumerate(self.paragraphs):
            if len(p) == 0:
                raise CorpusError(f"paragraphs: paragraph {i + 1} is empty")
        b = self.gold_boundaries
        if any(b[i] >= b[i + 1] for i in range(len(b) - 1)):
            raise CorpusError("boundaries not ascending")
        if any(x < 1 or x > m - 1 for x in b):
            raise CorpusError(f"boundaries: values must lie in [1, {m - 1}]")
        n = len(b) + 1
        expected = n if self.first_section_has_summary else n - 1
        if len(self.gold_summaries) != expected:
            raise CorpusError(
                f"summaries: expected {expected} for {n} sections"
                f" (first_section_has_summary={self.first_section_has_summary}),"
                f" got {len(self.gold_summaries)}"
            )
        for i, s in enumerate(self.gold_summaries):
            if len(s) == 0:
                raise CorpusError(f"summaries: summary {i + 1} is empty")

    @property
    def num_paragraphs(self) -> int:
        return len(self.paragraphs)

    @property
    def num_sections(self) -> int:
        return len(self.gold_boundaries) + 1

    def section_of_paragraph(self, p: int) -> int:
        """1-based section index of 1-based paragraph ``p``."""
        return bisect.bisect_left(self.gold_boundaries, p) + 1


@dataclass
class Vocabulary:
    """Token/id bijection with a fixed reserved block at the front."""

    id_to_token: list[str]
    token_to_id: dict[str, int] = field(init=False)

    def __post_init__(self):
        if tuple(self.id_to_token[: len(RESERVED_TOKENS)]) != RESERVED_TOKENS:
            raise CorpusError("vocabulary: reserved block missing or reordered")
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise CorpusError("vocabulary: duplicate token")

    def __len__(self) -> int:
        return len(self.id_to_token)

    def encode_token(self, token: str) -> int:
        return self.token_to_id.get(token, UNK_ID)

    def encode(self, tokens: Iterable[str]) -> list[int]:
        get = self.token_to_id.get
        return [get(t, UNK_ID) for t in tokens]

    def decode(self, ids: Iterable[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def save(self, path: str | Path) -> None:
        lines = [f"{tok}\t{i}" for i, tok in enumerate(self.id_to_token)]
        Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Vocabulary":
        id_to_token: list[str] = []
        for ln, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
            if not line:
                continue
            try:
                tok, idx = line.split("\t")
            except ValueError:
                raise CorpusError(f"vocabulary file line {ln}: expected token<TAB>id") from None
            if int(idx) != len(id_to_token):
                raise CorpusError(f"vocabulary file line {ln}: ids not consecutive")
            id_to_token.append(tok)
        return cls(id_to_token)


@dataclass(frozen=True)
class EncodedExample:
    """Flat id sequences for one document, ready for the model.

    ``src_ids`` carries one [X_SEP] after every paragraph except the
    last; ``boundary_labels[j]`` is 1 iff a section break follows the
    paragraph that [X_SEP] j terminates. ``tgt_ids`` is
    [BOS] summary_1 [Y_SEP] ... summary_K [EOS]. Section ids are 1-based
    and nondecreasing on both sides.
    """

    src_ids: np.ndarray
    xsep_positions: np.ndarray
    src_section_of_token: np.ndarray
    boundary_labels: np.ndarray
    tgt_ids: np.ndarray
    tgt_section_of_token: np.ndarray

    @property
    def num_summaries(self) -> int:
        if len(self.tgt_ids) <= 2:  # just [BOS][EOS]
            return 0
        return int((self.tgt_ids == Y_SEP_ID).sum()) + 1


def _tokenize_field(value, what: str) -> tuple[str, ...]:
    if isinstance(value, str):
        return tuple(value.lower().split())
    if isinstance(value, list) and all(isinstance(t, str) for t in value):
        return tuple(t.lower() for t in value)
    raise CorpusError(f"{what}: expected string or list of strings")


def document_from_record(record: dict) -> Document:
    """Validate one raw JSON record into a Document."""
    if not isinstance(record, dict):
        raise CorpusError("record is not a JSON object")
    for key in ("paragraphs", "boundaries", "summaries"):
        if key not in record:
            raise CorpusError(f"missing field {key!r}")
    paragraphs = tuple(
        _tokenize_field(p, f"paragraphs[{i}]") for i, p in enumerate(record["paragraphs"])
    )
    boundaries = record["boundaries"]
    if not isinstance(boundaries, list) or not all(isinstance(b, int) for b in boundaries):
        raise CorpusError("boundaries: expected list of integers")
    summaries = tuple(
        _tokenize_field(s, f"summaries[{i}]") for i, s in enumerate(record["summaries"])
    )
    first = record.get("first_section_has_summary", False)
    if not isinstance(first, bool):
        raise CorpusError("first_section_has_summary: expected boolean")
    return Document(paragraphs, tuple(boundaries), summaries, first)


def document_to_record(doc: Document) -> dict:
    return {
        "paragraphs": [list(p) for p in doc.paragraphs],
        "boundaries": list(doc.gold_boundaries),
        "summaries": [list(s) for s in doc.gold_summaries],
        "first_section_has_summary": doc.first_section_has_summary,
    }


def load_jsonl(path: str | Path) -> list[Document]:
    """Load and validate a JSON Lines corpus. Errors name the line."""
    path = Path(path)
    if not path.exists():
        raise CorpusError(f"corpus file not found: {path}")
    docs: list[Document] = []
    with path.open("r", encoding="utf-8") as f:
        for ln, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            try:
                record = json.loads(line)
            except json.JSONDecodeError as e:
                raise CorpusError(f"{path}: line {ln}: invalid JSON ({e.msg})") from None
            try:
                docs.append(document_from_record(record))
            except CorpusError as e:
                raise CorpusError(f"{path}: line {ln}: {e}") from None
    return docs


def save_jsonl(path: str | Path, docs: Iterable[Document]) -> None:
    lines = [json.dumps(document_to_record(d), sort_keys=True) for d in docs]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


# -- synthetic corpus ---------------------------------------------------------


def topic_tokens(topic: int, vocab_per_topic: int) -> list[str]:
    return [f"t{topic:03d}w{j:02d}" for j in range(vocab_per_topic)]


def filler_tokens() -> list[str]:
    return [f"fill{j:02d}" for j in range(FILLER_VOCAB_SIZE)]


def topic_key_phrase(topic: int, vocab_per_topic: int) -> tuple[str, ...]:
    """Deterministic 2-4 token key phrase: a prefix of the topic vocabulary."""
    length = 2 + topic % 3
    length = min(length, vocab_per_topic)
    return tuple(topic_tokens(topic, vocab_per_topic)[:length])


def synth_generate(
    n_docs: int,
    n_topics: int,
    vocab_per_topic: int,
    sections_range: tuple[int, int],
    paras_per_section_range: tuple[int, int],
    para_len_range: tuple[int, int],
    seed: int,
    topic_pool: Sequence[int] | None = None,
) -> list[Document]:
    """Generate topical documents with known boundaries and key-phrase summaries.

    Each section draws a distinct topic; 90% of its paragraph tokens come
    from that topic's vocabulary and 10% from a shared filler pool. The
    gold summary of a section is its topic's key phrase. Identical
    arguments and seed reproduce the corpus exactly.
    """
    for name, (lo, hi) in (
        ("sections_range", sections_range),
        ("paras_per_section_range", paras_per_section_range),
        ("para_len_range", para_len_range),
    ):
        if lo < 1 or hi < lo:
            raise CorpusError(f"{name}: empty or invalid range [{lo}, {hi}]")
    if n_docs < 1 or n_topics < 1 or vocab_per_topic < 1:
        raise CorpusError("n_docs, n_topics, vocab_per_topic must be positive")
    pool = list(range(n_topics)) if topic_pool is None else list(topic_pool)
    if max(pool, default=-1) >= n_topics or min(pool, default=0) < 0:
        raise CorpusError("topic_pool: topic ids out of range")
    if len(pool) < sections_range[1]:
        raise CorpusError(
            f"need at least {sections_range[1]} topics for distinct sections, have {len(pool)}"
        )

    rng = random.Random(seed)
    fillers = filler_tokens()
    docs: list[Document] = []
    for _ in range(n_docs):
        n_sections = rng.randint(*sections_range)
        topics = rng.sample(pool, n_sections)
        paragraphs: list[tuple[str, ...]] = []
        boundaries: list[int] = []
        summaries: list[tuple[str, ...]] = []
        for topic in topics:
            words = topic_tokens(topic, vocab_per_topic)
            n_paras = rng.randint(*paras_per_section_range)
            for _ in range(n_paras):
                n_tok = rng.randint(*para_len_range)
                para = tuple(
                    rng.choice(words) if rng.random() < 0.9 else rng.choice(fillers)
                    for _ in range(n_tok)
                )
                paragraphs.append(para)
            boundaries.append(len(paragraphs))
            summaries.append(topic_key_phrase(topic, vocab_per_topic))
        boundaries.pop()  # last section has no boundary after it
        docs.append(Document(tuple(paragraphs), tuple(boundaries), tuple(summaries), True))
    return docs


# -- vocabulary ----------------------------------------------------------------


def build_vocab(corpus: Sequence[Document], min_freq: int = 1) -> Vocabulary:
    """Frequency vocabulary: reserved block first, then tokens with
    frequency >= min_freq in descending-frequency order (ties by token)."""
    if not corpus:
        raise CorpusError("build_vocab: empty corpus")
    counts: Counter[str] = Counter()
    for doc in corpus:
        for para in doc.paragraphs:
            counts.update(para)
        for summ in doc.gold_summaries:
            counts.update(summ)
    kept = sorted(
        (t for t, c in counts.items() if c >= min_freq),
        key=lambda t: (-counts[t], t),
    )
    return Vocabulary(list(RESERVED_TOKENS) + kept)


# -- encoding ------------------------------------------------------------------


def truncate_document(doc: Document, max_src_len: int) -> Document:
    """Drop whole paragraphs from the end until sources fit, keeping the
    gold structure consistent (boundaries and summaries re-derived)."""

    def src_len(m: int) -> int:
        return sum(len(p) for p in doc.paragraphs[:m]) + (m - 1)

    m = doc.num_paragraphs
    while m > 1 and src_len(m) > max_src_len:
        m -= 1
    if src_len(m) > max_src_len:
        raise CorpusError(
            f"first paragraph alone ({src_len(1)} tokens) exceeds max_src_len={max_src_len}"
        )
    if m == doc.num_paragraphs:
        return doc
    boundaries = tuple(b for b in doc.gold_boundaries if b <= m - 1)
    n = len(boundaries) + 1
    n_summaries = n if doc.first_section_has_summary else n - 1
    return Document(
        doc.paragraphs[:m],
        boundaries,
        doc.gold_summaries[:n_summaries],
        doc.first_section_has_summary,
    )


def encode_document(
    doc: Document, vocab: Vocabulary, max_src_len: int, max_tgt_len: int
) -> EncodedExample:
    doc = truncate_document(doc, max_src_len)

    src_ids: list[int] = []
    xsep_positions: list[int] = []
    src_sections: list[int] = []
    labels: list[int] = []
    boundary_set = set(doc.gold_boundaries)
    m = doc.num_paragraphs
    for p in range(1, m + 1):
        section = doc.section_of_paragraph(p)
        for tok in doc.paragraphs[p - 1]:
            src_ids.append(vocab.encode_token(tok))
            src_sections.append(section)
        if p < m:
            xsep_positions.append(len(src_ids))
            src_ids.append(X_SEP_ID)
            src_sections.append(section)  # separator closes the preceding paragraph
            labels.append(1 if p in boundary_set else 0)

    first_sec = 1 if doc.first_section_has_summary else 2
    tgt_ids: list[int] = [BOS_ID]
    tgt_sections: list[int] = [first_sec]
    current = first_sec
    k = len(doc.gold_summaries)
    for j, summ in enumerate(doc.gold_summaries):
        for tok in summ:
            tgt_ids.append(vocab.encode_token(tok))
            tgt_sections.append(current)
        if j < k - 1:
            tgt_ids.append(Y_SEP_ID)
            tgt_sections.append(current)  # separator belongs to the section it ends
            current += 1
    tgt_ids.append(EOS_ID)
    tgt_sections.append(current)
    if len(tgt_ids) > max_tgt_len:
        raise CorpusError(
            f"target length {len(tgt_ids)} exceeds max_tgt_len={max_tgt_len}"
        )

    return EncodedExample(
        src_ids=np.asarray(src_ids, dtype=np.int64),
        xsep_positions=np.asarray(xsep_positions, dtype=np.int64),
        src_section_of_token=np.asarray(src_sections, dtype=np.int64),
        boundary_labels=np.asarray(labels, dtype=np.int64),
        tgt_ids=np.asarray(tgt_ids, dtype=np.int64),
        tgt_section_of_token=np.asarray(tgt_sections, dtype=np.int64),
    )


def sections_from_boundaries(num_paragraphs: int, boundaries: Sequence[int]) -> list[int]:
    """1-based section id per paragraph given boundary list."""
    out = []
    section = 1
    bset = set(boundaries)
    for p in range(1, num_paragraphs + 1):
        out.append(section)
        if p in bset:
            section += 1
    return out
