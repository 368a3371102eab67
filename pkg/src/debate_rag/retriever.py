"""Lexical passage retrieval over a line-delimited corpus.

The index is a plain inverted index with Okapi BM25 scoring. It is built once
and never mutated afterwards, so a single index can be shared across threads.
"""

from __future__ import annotations

import json
import math
import re
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from debate_rag._validation import check_bool_free_int, check_interval

_TOKEN_RE = re.compile(r"[^\W_]+", re.UNICODE)


@dataclass(frozen=True)
class Passage:
    doc_id: str
    title: str
    text: str


@dataclass(frozen=True)
class ScoredPassage:
    passage: Passage
    score: float

    def to_dict(self) -> dict:
        return {
            "doc_id": self.passage.doc_id,
            "title": self.passage.title,
            "text": self.passage.text,
            "score": self.score,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ScoredPassage":
        return cls(Passage(data["doc_id"], data["title"], data["text"]), float(data["score"]))


@dataclass(frozen=True)
class RetrieverConfig:
    k_default: int = 3
    k1: float = 1.2
    b: float = 0.75

    def __post_init__(self):
        check_bool_free_int(self.k_default, "k_default", minimum=1)
        if not self.k1 > 0:
            raise ValueError(f"k1 must be > 0, got {self.k1}")
        check_interval(self.b, "b", 0.0, 1.0)


@dataclass
class CorpusIndex:
    """Inverted index plus the corpus statistics BM25 needs.

    ``term_postings`` maps each term to ``(doc_id, tf)`` pairs in ingestion
    order. ``doc_lengths`` is keyed by doc_id in ingestion order too.
    """

    doc_count: int
    avg_doc_len: float
    term_postings: dict[str, list[tuple[str, int]]]
    doc_lengths: dict[str, int]
    passages: dict[str, Passage]
    config: RetrieverConfig = field(default_factory=RetrieverConfig)
    _doc_tf: dict[str, dict[str, int]] = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if not self._doc_tf:
            for term, postings in self.term_postings.items():
                for doc_id, tf in postings:
                    self._doc_tf.setdefault(doc_id, {})[term] = tf

    def idf(self, term: str) -> float:
        df = len(self.term_postings.get(term, ()))
        return math.log((self.doc_count - df + 0.5) / (df + 0.5) + 1.0)

    def to_dict(self) -> dict:
        return {
            "config": {"k_default": self.config.k_default, "k1": self.config.k1, "b": self.config.b},
            "doc_count": self.doc_count,
            "avg_doc_len": self.avg_doc_len,
            "doc_lengths": self.doc_lengths,
            "passages": [[p.doc_id, p.title, p.text] for p in self.passages.values()],
            "term_postings": {t: [list(p) for p in ps] for t, ps in self.term_postings.items()},
        }

    @classmethod
    def from_dict(cls, data: dict) -> "CorpusIndex":
        return cls(
            doc_count=data["doc_count"],
            avg_doc_len=data["avg_doc_len"],
            term_postings={t: [(d, tf) for d, tf in ps] for t, ps in data["term_postings"].items()},
            doc_lengths=dict(data["doc_lengths"]),
            passages={d: Passage(d, title, text) for d, title, text in data["passages"]},
            config=RetrieverConfig(**data["config"]),
        )


def tokenize(text: str) -> list[str]:
    """Lowercased Unicode alphanumeric runs; punctuation and underscores split tokens."""
    return _TOKEN_RE.findall(text.lower())


def _indexable_text(title: str, text: str) -> str:
    return f"{title} {text}" if title else text


def ingest_corpus(records: Iterable, config: RetrieverConfig | None = None) -> CorpusIndex:
    """Build an index from ``(doc_id, title, text)`` tuples or :class:`Passage` objects.

    Raises:
        ValueError: if the stream is empty, a doc_id repeats, or a text is blank.
    """
    config = config or RetrieverConfig()
    passages: dict[str, Passage] = {}
    doc_lengths: dict[str, int] = {}
    postings: dict[str, list[tuple[str, int]]] = {}
    for record in records:
        passage = record if isinstance(record, Passage) else Passage(*record)
        if passage.doc_id in passages:
            raise ValueError(f"duplicate doc_id: {passage.doc_id!r}")
        if not passage.text.strip():
            raise ValueError(f"document {passage.doc_id!r} has empty text")
        tokens = tokenize(_indexable_text(passage.title, passage.text))
        tf: dict[str, int] = {}
        for token in tokens:
            tf[token] = tf.get(token, 0) + 1
        for term, count in tf.items():
            postings.setdefault(term, []).append((passage.doc_id, count))
        passages[passage.doc_id] = passage
        doc_lengths[passage.doc_id] = len(tokens)
    if not passages:
        raise ValueError("corpus is empty")
    avg = sum(doc_lengths.values()) / len(doc_lengths)
    return CorpusIndex(
        doc_count=len(passages),
        avg_doc_len=avg,
        term_postings=postings,
        doc_lengths=doc_lengths,
        passages=passages,
        config=config,
    )


def score(index: CorpusIndex, query_tokens: list[str], doc_id: str) -> float:
    """BM25 score of one document; repeated query tokens count once."""
    if doc_id not in index.doc_lengths:
        raise KeyError(f"unknown doc_id: {doc_id!r}")
    doc_tf = index._doc_tf.get(doc_id, {})
    k1, b = index.config.k1, index.config.b
    norm = k1 * (1.0 - b + b * index.doc_lengths[doc_id] / index.avg_doc_len) if index.avg_doc_len else k1
    total = 0.0
    for term in dict.fromkeys(query_tokens):
        tf = doc_tf.get(term)
        if not tf:
            continue
        total += index.idf(term) * tf * (k1 + 1.0) / (tf + norm)
    return total


def retrieve(index: CorpusIndex, query: str, k: int | None = None) -> list[ScoredPassage]:
    """Top-k passages by score, ties broken by ascending doc_id; zero scores dropped."""
    k = index.config.k_default if k is None else k
    if k <= 0:
        return []
    tokens = tokenize(query)
    candidates = {doc_id for term in set(tokens) for doc_id, _ in index.term_postings.get(term, ())}
    scored = []
    for doc_id in candidates:
        s = score(index, tokens, doc_id)
        if s > 0:
            scored.append((-s, doc_id))
    scored.sort()
    return [ScoredPassage(index.passages[d], -neg) for neg, d in scored[:k]]


def read_corpus_jsonl(path: str | Path) -> Iterator[tuple[str, str, str]]:
    """Yield ``(id, title, contents)`` from a JSONL corpus; unknown fields are ignored."""
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                yield str(rec["id"]), str(rec.get("title", "")), str(rec["contents"])
            except (json.JSONDecodeError, KeyError, TypeError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed corpus record ({exc})") from exc


def save_index(index: CorpusIndex, path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(index.to_dict(), fh, ensure_ascii=False, sort_keys=True)


def load_index(path: str | Path) -> CorpusIndex:
    with open(path, encoding="utf-8") as fh:
        return CorpusIndex.from_dict(json.load(fh))


class BM25Retriever(BaseEstimator):
    """Estimator wrapper around :func:`ingest_corpus` and :func:`retrieve`.

    ``fit`` takes corpus records, ``predict`` takes query strings and returns
    one ranked list of :class:`ScoredPassage` per query.

    Example:
        >>> r = BM25Retriever(k=2).fit([("a", "", "apple pie"), ("b", "", "banana")])
        >>> [sp.passage.doc_id for sp in r.predict(["apple"])[0]]
        ['a']
    """

    def __init__(self, k=3, k1=1.2, b=0.75):
        self.k = k
        self.k1 = k1
        self.b = b

    def fit(self, X, y=None):
        config = RetrieverConfig(k_default=self.k, k1=self.k1, b=self.b)
        if isinstance(X, (str, Path)):
            X = read_corpus_jsonl(X)
        self.index_ = ingest_corpus(X, config)
        self.n_documents_ = self.index_.doc_count
        return self

    def predict(self, X) -> list[list[ScoredPassage]]:
        check_is_fitted(self, "index_")
        if isinstance(X, str):
            raise TypeError("expected an iterable of query strings, got a single string")
        return [retrieve(self.index_, q, self.k) for q in X]
