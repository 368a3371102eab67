"""Query-pool refinement by a proponent / challenger / judge debate.

Each round the current pool is retrieved, the proponent argues the evidence
is sufficient, the challenger proposes one refinement (an optimization of an
existing query or one new query), and the judge picks a side. The loop stops
when the judge sides with the proponent, when the pool stops changing, or at
the round cap.
"""

from __future__ import annotations

import re
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import Iterable

from debate_rag import prompts
from debate_rag.llm import CallLog, DebateAborted, Gateway, GatewayError, Stage
from debate_rag.retriever import CorpusIndex, ScoredPassage, retrieve


class Origin(str, Enum):
    ORIGINAL = "original"
    OPTIMIZED = "optimized"
    EXPANDED = "expanded"


class OpKind(str, Enum):
    KEEP_ALL = "KeepAll"
    REVISE = "Revise"


class Verdict(str, Enum):
    PROPONENT = "proponent"
    CHALLENGER = "challenger"


class Termination(str, Enum):
    JUDGE_KEEP = "judge_keep"
    CONVERGED = "converged"
    ROUND_CAP = "round_cap"


def normalize_query(text: str) -> str:
    """Identity key of a query: case-folded, trimmed, inner whitespace collapsed."""
    return " ".join(text.casefold().split())


@dataclass(frozen=True)
class Query:
    text: str
    origin: Origin = Origin.ORIGINAL
    round_added: int = 0

    def __post_init__(self):
        object.__setattr__(self, "text", self.text.strip())
        object.__setattr__(self, "origin", Origin(self.origin))
        if not self.text:
            raise ValueError("query text must be non-empty")

    @property
    def key(self) -> str:
        return normalize_query(self.text)


@dataclass(frozen=True)
class QueryPool:
    question: str
    queries: tuple[Query, ...]

    def __post_init__(self):
        object.__setattr__(self, "queries", tuple(self.queries))
        if not self.queries:
            raise ValueError("query pool must be non-empty")
        keys = [q.key for q in self.queries]
        if len(set(keys)) != len(keys):
            raise ValueError("query pool contains duplicate queries")

    def __len__(self) -> int:
        return len(self.queries)

    def __iter__(self):
        return iter(self.queries)

    def __contains__(self, text: str) -> bool:
        return normalize_query(text) in self.keys()

    def keys(self) -> list[str]:
        return [q.key for q in self.queries]

    def texts(self) -> list[str]:
        return [q.text for q in self.queries]

    def get(self, text: str) -> Query | None:
        key = normalize_query(text)
        for q in self.queries:
            if q.key == key:
                return q
        return None


@dataclass(frozen=True)
class EvidenceSet:
    """Retrieved passages per pool query, in pool order."""

    entries: tuple[tuple[str, tuple[ScoredPassage, ...]], ...]

    @property
    def per_query(self) -> dict[str, tuple[ScoredPassage, ...]]:
        return {normalize_query(text): passages for text, passages in self.entries}

    def passages(self) -> list[ScoredPassage]:
        """Union over queries, first occurrence of each doc_id kept."""
        seen: set[str] = set()
        out = []
        for _, passages in self.entries:
            for sp in passages:
                if sp.passage.doc_id not in seen:
                    seen.add(sp.passage.doc_id)
                    out.append(sp)
        return out

    def is_empty(self) -> bool:
        return not any(passages for _, passages in self.entries)

    def to_dict(self) -> list[dict]:
        return [{"query": text, "passages": [sp.to_dict() for sp in ps]} for text, ps in self.entries]

    @classmethod
    def from_dict(cls, data: list[dict]) -> "EvidenceSet":
        return cls(tuple(
            (e["query"], tuple(ScoredPassage.from_dict(p) for p in e["passages"])) for e in data
        ))


@dataclass(frozen=True)
class RefinementOp:
    kind: OpKind
    retained: tuple[str, ...] = ()
    optimizations: tuple[tuple[str, str], ...] = ()
    expansions: tuple[str, ...] = ()
    fallback: bool = False

    def __post_init__(self):
        object.__setattr__(self, "kind", OpKind(self.kind))
        object.__setattr__(self, "retained", tuple(self.retained))
        object.__setattr__(self, "optimizations", tuple(tuple(p) for p in self.optimizations))
        object.__setattr__(self, "expansions", tuple(self.expansions))
        if self.kind is OpKind.KEEP_ALL and (self.retained or self.optimizations or self.expansions):
            raise ValueError("KeepAll carries no payload")

    @classmethod
    def keep_all(cls, fallback: bool = False) -> "RefinementOp":
        return cls(OpKind.KEEP_ALL, fallback=fallback)

    @classmethod
    def revise(cls, retained=(), optimizations=(), expansions=()) -> "RefinementOp":
        return cls(OpKind.REVISE, tuple(retained), tuple(optimizations), tuple(expansions))

    def to_dict(self) -> dict:
        return {
            "kind": self.kind.value,
            "retained": list(self.retained),
            "optimizations": [list(p) for p in self.optimizations],
            "expansions": list(self.expansions),
            "fallback": self.fallback,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RefinementOp":
        return cls(data["kind"], data["retained"], data["optimizations"], data["expansions"],
                   data.get("fallback", False))


@dataclass(frozen=True)
class RetDebateConfig:
    max_rounds: int = 3
    epsilon: int = 0
    max_pool_size: int = 5
    k: int = 3

    def __post_init__(self):
        if self.max_rounds < 0:
            raise ValueError("max_rounds must be >= 0")
        if self.max_pool_size < 1:
            raise ValueError("max_pool_size must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


@dataclass
class RetRound:
    round: int
    pool_before: list[str]
    proponent_argument: str
    challenger_argument: str
    parsed_op: dict
    judge_reply: str
    judge_verdict: str
    verdict_flagged: bool
    applied_op: dict
    pool_after: list[str]
    distance: int


@dataclass
class RetTranscript:
    rounds: list[RetRound] = field(default_factory=list)
    termination_reason: str | None = None
    final_pool: list[str] = field(default_factory=list)
    failure: str | None = None

    def to_dict(self) -> dict:
        return {
            "rounds": [asdict(r) for r in self.rounds],
            "termination_reason": self.termination_reason,
            "final_pool": list(self.final_pool),
            "failure": self.failure,
        }


def init_pool(question: str) -> QueryPool:
    if not isinstance(question, str) or not question.strip():
        raise ValueError("question must be non-empty")
    question = question.strip()
    return QueryPool(question, (Query(question, Origin.ORIGINAL, 0),))


def gather_evidence(pool: QueryPool, index: CorpusIndex, k: int,
                    call_log: CallLog | None = None,
                    cache: dict[str, tuple[ScoredPassage, ...]] | None = None) -> EvidenceSet:
    """Retrieve top-k per pool query; queries already in ``cache`` cost nothing."""
    cache = {} if cache is None else cache
    entries = []
    for q in pool:
        if q.key not in cache:
            cache[q.key] = tuple(retrieve(index, q.text, k))
            if call_log is not None:
                call_log.record_retriever_call()
        entries.append((q.text, cache[q.key]))
    return EvidenceSet(tuple(entries))


def format_queries(pool: QueryPool) -> str:
    return "\n".join(f"{i}. {text}" for i, text in enumerate(pool.texts(), 1))


def format_passage(i: int, sp: ScoredPassage) -> str:
    p = sp.passage
    return f"Doc {i} (Title: {p.title}) {p.text}" if p.title else f"Doc {i} {p.text}"


def format_documents(evidence: EvidenceSet) -> str:
    passages = evidence.passages()
    if not passages:
        return "(no documents retrieved)"
    return "\n".join(format_passage(i, sp) for i, sp in enumerate(passages, 1))


def _debate_prompt(template: str, question: str, pool: QueryPool, evidence: EvidenceSet, **extra) -> str:
    return prompts.render(template, question=question, queries=format_queries(pool),
                          documents=format_documents(evidence), **extra)


def build_proponent_prompt(question: str, pool: QueryPool, evidence: EvidenceSet,
                           template: str = prompts.RET_PROPONENT) -> str:
    return _debate_prompt(template, question, pool, evidence)


def build_challenger_prompt(question: str, pool: QueryPool, evidence: EvidenceSet,
                            template: str = prompts.RET_CHALLENGER) -> str:
    return _debate_prompt(template, question, pool, evidence)


def build_judge_prompt(question: str, pool: QueryPool, evidence: EvidenceSet,
                       proponent_argument: str, challenger_argument: str,
                       template: str = prompts.RET_JUDGE) -> str:
    arguments = f"Proponent Agent:\n{proponent_argument}\n\nChallenger Agent:\n{challenger_argument}"
    return _debate_prompt(template, question, pool, evidence, arguments=arguments)


_ARROW = r"(?:→|->|=>|⟶|➔)"
_OPT_RE = re.compile(r"Query\s+Optimization\s*:\s*(.+?)\s*" + _ARROW + r"\s*(.+?)\s*$",
                     re.IGNORECASE | re.MULTILINE)
_EXP_RE = re.compile(r"Query\s+Expansion\s*:\s*(.+?)\s*$", re.IGNORECASE | re.MULTILINE)
_PLACEHOLDER_QUERIES = {"new query", "original query"}


def _clean_query(text: str) -> str:
    text = text.strip().strip("*`").strip()
    if text.endswith(".") and "]" in text:
        text = text[:-1].rstrip()
    if text.startswith("[") and text.endswith("]"):
        text = text[1:-1]
    return text.strip().strip("\"'").strip()


def parse_challenger_move(reply: str, pool: QueryPool) -> RefinementOp:
    """Read the challenger's action; the last well-formed one wins.

    An optimization is well-formed only if its original query is in the pool.
    No well-formed action yields a KeepAll flagged as a fallback.
    """
    candidates = []
    for m in _OPT_RE.finditer(reply):
        candidates.append((m.start(), "opt", _clean_query(m.group(1)), _clean_query(m.group(2))))
    for m in _EXP_RE.finditer(reply):
        candidates.append((m.start(), "exp", None, _clean_query(m.group(1))))
    for _, kind, old, new in sorted(candidates, key=lambda c: c[0], reverse=True):
        if not new or normalize_query(new) in _PLACEHOLDER_QUERIES:
            continue
        if kind == "exp":
            return RefinementOp.revise(retained=pool.texts(), expansions=[new])
        member = pool.get(old)
        if member is None:
            continue
        retained = [t for t in pool.texts() if normalize_query(t) != member.key]
        return RefinementOp.revise(retained=retained, optimizations=[(member.text, new)])
    return RefinementOp.keep_all(fallback=True)


def judge_verdict_details(reply: str) -> tuple[Verdict, bool]:
    """Verdict plus whether it came from the default (both or neither named)."""
    lowered = reply.lower()
    pro, chal = "proponent" in lowered, "challenger" in lowered
    if chal and not pro:
        return Verdict.CHALLENGER, False
    if pro and not chal:
        return Verdict.PROPONENT, False
    return Verdict.PROPONENT, True


def parse_judge_verdict(reply: str) -> Verdict:
    return judge_verdict_details(reply)[0]


def apply_refinement(pool: QueryPool, op: RefinementOp, round: int, max_pool_size: int = 5) -> QueryPool:
    """Apply a refinement to the pool.

    Revise keeps the retained members in pool order, then appends optimized
    and expanded queries, dedupes by normalized text and truncates to
    ``max_pool_size`` keeping the oldest. An empty result falls back to the
    original question.

    Raises:
        ValueError: if an optimization rewrites a query that is not in the pool.
    """
    if op.kind is OpKind.KEEP_ALL:
        return pool
    for old, _ in op.optimizations:
        if old not in pool:
            raise ValueError(f"optimization targets a query not in the pool: {old!r}")
    retained_keys = {normalize_query(t) for t in op.retained}
    out: list[Query] = [q for q in pool if q.key in retained_keys]
    additions = [(new, Origin.OPTIMIZED) for _, new in op.optimizations]
    additions += [(new, Origin.EXPANDED) for new in op.expansions]
    for text, origin in additions:
        if text.strip():
            out.append(Query(text, origin, round))
    deduped: dict[str, Query] = {}
    for q in out:
        deduped.setdefault(q.key, q)
    queries = list(deduped.values())[:max_pool_size]
    if not queries:
        queries = [Query(pool.question, Origin.ORIGINAL, round)]
    return QueryPool(pool.question, tuple(queries))


def pool_distance(a: QueryPool | Iterable[str], b: QueryPool | Iterable[str]) -> int:
    """Size of the symmetric difference of the normalized query sets."""
    ka = set(a.keys()) if isinstance(a, QueryPool) else {normalize_query(t) for t in a}
    kb = set(b.keys()) if isinstance(b, QueryPool) else {normalize_query(t) for t in b}
    return len(ka ^ kb)


def replay_pools(question: str, transcript: RetTranscript, max_pool_size: int = 5) -> list[list[str]]:
    """Re-apply each round's recorded op from the initial pool; returns pool_after per round."""
    pool = init_pool(question)
    out = []
    for r in transcript.rounds:
        pool = apply_refinement(pool, RefinementOp.from_dict(r.applied_op), r.round, max_pool_size)
        out.append(pool.texts())
    return out


def run_retrieval_debate(question: str, index: CorpusIndex, gateway: Gateway,
                         config: RetDebateConfig | None = None,
                         templates: dict[str, str] | None = None):
    """Run the debate; returns ``(pool, evidence, transcript)``.

    Each executed round costs exactly three retrieval-stage LLM calls.

    Raises:
        DebateAborted: on any gateway failure; carries the partial transcript.
    """
    config = config or RetDebateConfig()
    templates = templates or prompts.DEFAULT_TEMPLATES
    pool = init_pool(question)
    question = pool.question
    cache: dict[str, tuple[ScoredPassage, ...]] = {}
    transcript = RetTranscript()
    log = gateway.call_log
    try:
        for j in range(1, config.max_rounds + 1):
            evidence = gather_evidence(pool, index, config.k, log, cache)
            pro = gateway.ask(build_proponent_prompt(question, pool, evidence, templates["ret_proponent"]),
                              Stage.RETRIEVAL)
            chal = gateway.ask(build_challenger_prompt(question, pool, evidence, templates["ret_challenger"]),
                               Stage.RETRIEVAL)
            op = parse_challenger_move(chal, pool)
            judge_reply = gateway.ask(
                build_judge_prompt(question, pool, evidence, pro, chal, templates["ret_judge"]),
                Stage.RETRIEVAL,
            )
            verdict, flagged = judge_verdict_details(judge_reply)
            applied = RefinementOp.keep_all() if verdict is Verdict.PROPONENT else op
            new_pool = apply_refinement(pool, applied, j, config.max_pool_size)
            distance = pool_distance(new_pool, pool)
            transcript.rounds.append(RetRound(
                round=j,
                pool_before=pool.texts(),
                proponent_argument=pro,
                challenger_argument=chal,
                parsed_op=op.to_dict(),
                judge_reply=judge_reply,
                judge_verdict=verdict.value,
                verdict_flagged=flagged,
                applied_op=applied.to_dict(),
                pool_after=new_pool.texts(),
                distance=distance,
            ))
            pool = new_pool
            if verdict is Verdict.PROPONENT:
                transcript.termination_reason = Termination.JUDGE_KEEP.value
                break
            if distance <= config.epsilon:
                transcript.termination_reason = Termination.CONVERGED.value
                break
        else:
            transcript.termination_reason = Termination.ROUND_CAP.value
        evidence = gather_evidence(pool, index, config.k, log, cache)
    except GatewayError as exc:
        transcript.failure = f"{type(exc).__name__}: {exc}"
        transcript.final_pool = pool.texts()
        raise DebateAborted(str(exc), transcript) from exc
    transcript.final_pool = pool.texts()
    return pool, evidence, transcript
