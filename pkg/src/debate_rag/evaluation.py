"""QA scoring: answer extraction, exact match, token F1 and run aggregates."""

from __future__ import annotations

import re
import string
from collections import Counter
from dataclasses import dataclass, field
from enum import Enum
from typing import Iterable, Mapping


class AnswerType(str, Enum):
    FREE_TEXT = "free_text"
    YES_NO = "yes_no"


@dataclass(frozen=True)
class QAInstance:
    id: str
    question: str
    golden_answers: tuple[str, ...]
    answer_type: AnswerType = AnswerType.FREE_TEXT

    def __post_init__(self):
        object.__setattr__(self, "golden_answers", tuple(self.golden_answers))
        object.__setattr__(self, "answer_type", AnswerType(self.answer_type))
        if not self.golden_answers:
            raise ValueError(f"instance {self.id!r} has no golden answers")
        if self.answer_type is AnswerType.YES_NO:
            bad = [a for a in self.golden_answers if a.strip().lower() not in ("yes", "no")]
            if bad:
                raise ValueError(f"yes/no instance {self.id!r} has non yes/no answers: {bad}")


@dataclass(frozen=True)
class Prediction:
    id: str
    raw_output: str
    extracted: str


@dataclass
class MetricReport:
    em: float
    f1: float
    n: int
    avg_ret_rounds: float
    avg_query_count: float
    avg_llm_calls: float
    avg_retriever_calls: float
    avg_llm_calls_by_stage: dict[str, float] = field(default_factory=dict)
    n_failed: int = 0

    def to_dict(self) -> dict:
        """Presentation form: EM and F1 on a 0-100 scale, two decimals."""
        return {
            "em": round(self.em * 100, 2),
            "f1": round(self.f1 * 100, 2),
            "n": self.n,
            "n_failed": self.n_failed,
            "avg_ret_rounds": round(self.avg_ret_rounds, 4),
            "avg_query_count": round(self.avg_query_count, 4),
            "avg_llm_calls": round(self.avg_llm_calls, 4),
            "avg_retriever_calls": round(self.avg_retriever_calls, 4),
            "avg_llm_calls_by_stage": {k: round(v, 4) for k, v in sorted(self.avg_llm_calls_by_stage.items())},
        }


_ARTICLES = frozenset({"a", "an", "the"})
_PUNCT = set(string.punctuation)
_ANSWER_RE = re.compile(r"\banswer\s*(?:is\b|:)\s*:?\s*(.+?)(?=[.!?](?:\s|$)|\n|$)", re.IGNORECASE)
_YESNO_RE = re.compile(r"\b(yes|no)\b", re.IGNORECASE)


def normalize_answer(text: str) -> str:
    """Lowercase, strip ASCII punctuation, drop article tokens, collapse whitespace."""
    text = "".join(ch for ch in text.lower() if ch not in _PUNCT)
    return " ".join(tok for tok in text.split() if tok not in _ARTICLES)


def _answer_span(raw_output: str) -> str | None:
    spans = [m.group(1).strip().strip("*").strip() for m in _ANSWER_RE.finditer(raw_output)]
    spans = [s for s in spans if s]
    return spans[-1] if spans else None


def extract_answer(raw_output: str) -> str:
    """Text after the last "answer is"/"answer:" up to the sentence end.

    Without such a phrase, the last non-empty line; failing that, the whole text.
    """
    span = _answer_span(raw_output)
    if span is not None:
        return span
    lines = [line.strip() for line in raw_output.splitlines() if line.strip()]
    if lines:
        return lines[-1]
    return raw_output.strip()


def extract_yesno(raw_output: str) -> str:
    """First standalone yes/no in the answer span (or whole output); else "unknown"."""
    span = _answer_span(raw_output)
    region = span if span is not None else raw_output
    m = _YESNO_RE.search(region)
    return m.group(1).lower() if m else "unknown"


def exact_match(pred: str, golds: Iterable[str]) -> int:
    golds = list(golds)
    if not golds:
        raise ValueError("golds must be non-empty")
    p = normalize_answer(pred)
    return int(any(p == normalize_answer(g) for g in golds))


def _f1(pred_tokens: list[str], gold_tokens: list[str]) -> float:
    if not pred_tokens and not gold_tokens:
        return 1.0
    if not pred_tokens or not gold_tokens:
        return 0.0
    overlap = sum((Counter(pred_tokens) & Counter(gold_tokens)).values())
    if overlap == 0:
        return 0.0
    # equals 2PR/(P+R) with a single rounding step
    return 2 * overlap / (len(pred_tokens) + len(gold_tokens))


def token_f1(pred: str, golds: Iterable[str]) -> float:
    """Best multiset token F1 of ``pred`` against any gold answer."""
    golds = list(golds)
    if not golds:
        raise ValueError("golds must be non-empty")
    pred_tokens = normalize_answer(pred).split()
    return max(_f1(pred_tokens, normalize_answer(g).split()) for g in golds)


def score_prediction(instance: QAInstance, raw_output: str) -> tuple[Prediction, int, float]:
    """Extract and score one model output; yes/no items score on the yes/no token."""
    if instance.answer_type is AnswerType.YES_NO:
        extracted = extract_yesno(raw_output)
        if extracted == "unknown":
            return Prediction(instance.id, raw_output, extracted), 0, 0.0
    else:
        extracted = extract_answer(raw_output)
    pred = Prediction(instance.id, raw_output, extracted)
    return pred, exact_match(extracted, instance.golden_answers), token_f1(extracted, instance.golden_answers)


def _mean(values: list[float]) -> float:
    return sum(values) / len(values) if values else 0.0


def aggregate(entries: Iterable[Mapping]) -> MetricReport:
    """Average per-question results.

    Each entry needs ``em``, ``f1``, ``ret_rounds``, ``query_count`` and a
    ``calls`` mapping with ``llm_calls``, ``retriever_calls`` and
    ``llm_calls_by_stage``; ``failure`` is optional.
    """
    entries = list(entries)
    if not entries:
        raise ValueError("cannot aggregate zero instances")
    stages = sorted({s for e in entries for s in e["calls"]["llm_calls_by_stage"]})
    return MetricReport(
        em=_mean([float(e["em"]) for e in entries]),
        f1=_mean([float(e["f1"]) for e in entries]),
        n=len(entries),
        avg_ret_rounds=_mean([float(e["ret_rounds"]) for e in entries]),
        avg_query_count=_mean([float(e["query_count"]) for e in entries]),
        avg_llm_calls=_mean([float(e["calls"]["llm_calls"]) for e in entries]),
        avg_retriever_calls=_mean([float(e["calls"]["retriever_calls"]) for e in entries]),
        avg_llm_calls_by_stage={
            s: _mean([float(e["calls"]["llm_calls_by_stage"].get(s, 0)) for e in entries]) for s in stages
        },
        n_failed=sum(1 for e in entries if e.get("failure")),
    )
