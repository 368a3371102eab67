"""Per-question orchestration for every run mode, plus dataset and output I/O."""

from __future__ import annotations

import hashlib
import json
import logging
import random
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable

from debate_rag import prompts
from debate_rag.evaluation import AnswerType, MetricReport, QAInstance, aggregate, score_prediction
from debate_rag.llm import DEFAULT_BUDGET, DebateAborted, Gateway, Stage
from debate_rag.response_debate import ResDebateConfig, format_evidence_blocks, run_response_debate
from debate_rag.retrieval_debate import RetDebateConfig, gather_evidence, init_pool, run_retrieval_debate
from debate_rag.retriever import CorpusIndex

logger = logging.getLogger(__name__)

TRANSCRIPTS_FILE = "transcripts.jsonl"
REPORT_FILE = "report.json"


class RunMode(str, Enum):
    NAIVE_GEN = "naive_gen"
    NAIVE_RAG = "naive_rag"
    MAD = "mad"
    DRAG = "drag"
    DRAG_RET_ONLY = "drag_ret_only"
    DRAG_RES_ONLY = "drag_res_only"
    DRAG_NO_ASYMMETRY = "drag_no_asymmetry"

    @property
    def uses_retrieval(self) -> bool:
        return self not in (RunMode.NAIVE_GEN, RunMode.MAD)


@dataclass
class PipelineConfig:
    mode: RunMode = RunMode.DRAG
    k: int = 3
    ret_rounds: int = 3
    res_rounds: int = 3
    epsilon: int = 0
    max_pool_size: int = 5
    call_budget: int = DEFAULT_BUDGET
    backend: str = "scripted"
    script: str | None = None
    api_base: str | None = None
    model: str = ""
    temperature: float = 0.0
    max_tokens: int = 512
    timeout: float = 60.0
    corpus: str | None = None
    index: str | None = None
    dataset: str | None = None
    out: str | None = None
    limit: int | None = None
    seed: int | None = None
    parallel: int = 1
    templates_dir: str | None = None

    def __post_init__(self):
        self.mode = RunMode(self.mode)
        for name in ("k", "ret_rounds", "epsilon"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be >= 0")
        if self.res_rounds < 1:
            raise ValueError("res_rounds must be >= 1")
        if self.max_pool_size < 1:
            raise ValueError("max_pool_size must be >= 1")
        if self.call_budget < 1:
            raise ValueError("call_budget must be >= 1")
        if self.parallel < 1:
            raise ValueError("parallel must be >= 1")

    @property
    def ret_config(self) -> RetDebateConfig:
        return RetDebateConfig(self.ret_rounds, self.epsilon, self.max_pool_size, self.k)

    @property
    def res_config(self) -> ResDebateConfig:
        return ResDebateConfig(self.res_rounds)

    def snapshot(self) -> dict:
        """Run settings for the report. File inputs become name + content hash, output dir is dropped."""
        data = asdict(self)
        data["mode"] = self.mode.value
        data.pop("out")
        for key in ("script", "corpus", "index", "dataset", "templates_dir"):
            value = data[key]
            if value is not None:
                path = Path(value)
                data[key] = {"name": path.name, "sha256": _sha256(path) if path.is_file() else None}
        return data


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


@dataclass
class Components:
    gateway: Gateway
    index: CorpusIndex | None = None
    templates: dict[str, str] = field(default_factory=lambda: dict(prompts.DEFAULT_TEMPLATES))


def load_dataset(path: str | Path, limit: int | None = None, seed: int | None = None) -> list[QAInstance]:
    """Read a JSONL dataset in file order.

    ``limit`` alone keeps the first N; with ``seed`` it draws N at random
    (deterministically) and keeps them in file order.

    Raises:
        ValueError: naming the line number of a malformed record.
    """
    instances = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
                answers = rec["golden_answers"]
                if isinstance(answers, str):
                    answers = [answers]
                instances.append(QAInstance(
                    id=str(rec["id"]),
                    question=str(rec["question"]),
                    golden_answers=tuple(str(a) for a in answers),
                    answer_type=rec.get("answer_type", AnswerType.FREE_TEXT.value),
                ))
            except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: malformed dataset record ({exc!r})") from exc
    if limit is not None and limit < len(instances):
        if seed is None:
            instances = instances[:limit]
        else:
            keep = sorted(random.Random(seed).sample(range(len(instances)), limit))
            instances = [instances[i] for i in keep]
    return instances


def _single_generation(question: str, evidence, gateway: Gateway, templates: dict[str, str]) -> str:
    if evidence is None:
        prompt = prompts.render(templates["naive_gen"], question=question)
    else:
        prompt = prompts.render(templates["naive_rag"], question=question,
                                documents=format_evidence_blocks(evidence))
    return gateway.ask(prompt, Stage.BASELINE)


def run_question(instance: QAInstance, config: PipelineConfig, components: Components) -> dict:
    """Answer one question in ``config.mode``; failures are recorded, not raised."""
    mode = config.mode
    gateway = components.gateway.fork()
    gateway.budget = config.call_budget
    templates = components.templates
    question = instance.question.strip()
    if mode.uses_retrieval and components.index is None:
        raise ValueError(f"mode {mode.value} needs a corpus index")

    entry = {
        "id": instance.id,
        "question": instance.question,
        "golden_answers": list(instance.golden_answers),
        "answer_type": instance.answer_type.value,
        "mode": mode.value,
        "raw_output": "",
        "final_pool": [],
        "evidence": None,
        "ret_transcript": None,
        "res_transcript": None,
        "failure": None,
    }
    pool = evidence = None
    try:
        if mode in (RunMode.DRAG, RunMode.DRAG_RET_ONLY, RunMode.DRAG_NO_ASYMMETRY):
            try:
                pool, evidence, ret = run_retrieval_debate(question, components.index, gateway,
                                                           config.ret_config, templates)
            except DebateAborted as exc:
                entry["ret_transcript"] = exc.transcript.to_dict()
                entry["final_pool"] = exc.transcript.final_pool
                raise
            entry["ret_transcript"] = ret.to_dict()
        elif mode in (RunMode.NAIVE_RAG, RunMode.DRAG_RES_ONLY):
            pool = init_pool(question)
            evidence = gather_evidence(pool, components.index, config.k, gateway.call_log)
        if pool is not None:
            entry["final_pool"] = pool.texts()
            entry["evidence"] = evidence.to_dict()

        if mode in (RunMode.NAIVE_GEN, RunMode.NAIVE_RAG, RunMode.DRAG_RET_ONLY):
            entry["raw_output"] = _single_generation(question, evidence, gateway, templates)
        else:
            try:
                final, res = run_response_debate(
                    question, evidence, gateway, config.res_config,
                    asymmetric=mode is not RunMode.DRAG_NO_ASYMMETRY, templates=templates,
                )
            except DebateAborted as exc:
                entry["res_transcript"] = exc.transcript.to_dict()
                raise
            entry["res_transcript"] = res.to_dict()
            entry["raw_output"] = final.text
    except Exception as exc:  # failures are data; the run continues
        logger.warning("question %s failed: %s", instance.id, exc)
        cause = exc.__cause__ if isinstance(exc, DebateAborted) and exc.__cause__ else exc
        entry["failure"] = f"{type(cause).__name__}: {cause}"

    if entry["failure"]:
        entry.update(prediction="", em=0, f1=0.0)
    else:
        pred, em, f1 = score_prediction(instance, entry["raw_output"])
        entry.update(prediction=pred.extracted, em=em, f1=f1)
    ret = entry["ret_transcript"]
    entry["ret_rounds"] = len(ret["rounds"]) if ret else 0
    entry["query_count"] = len(entry["final_pool"])
    entry["calls"] = gateway.call_log.to_dict()
    return entry


def run_dataset(instances: Iterable[QAInstance], config: PipelineConfig, components: Components) -> list[dict]:
    """Run every instance; results come back in input order regardless of ``parallel``."""
    instances = list(instances)
    if config.parallel == 1:
        return [run_question(inst, config, components) for inst in instances]
    with ThreadPoolExecutor(max_workers=config.parallel) as pool:
        return list(pool.map(lambda inst: run_question(inst, config, components), instances))


def dumps_entry(entry: dict) -> str:
    return json.dumps(entry, sort_keys=True, ensure_ascii=False)


def build_report(entries: list[dict], config: PipelineConfig | dict | None = None) -> dict:
    snapshot = config.snapshot() if isinstance(config, PipelineConfig) else config
    return {"config": snapshot, "metrics": aggregate(entries).to_dict()}


def write_outputs(entries: list[dict], config: PipelineConfig, output_dir: str | Path) -> tuple[Path, Path]:
    """Write the transcripts file (one JSON line per question) and the report."""
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    transcripts = output_dir / TRANSCRIPTS_FILE
    report = output_dir / REPORT_FILE
    with open(transcripts, "w", encoding="utf-8", newline="\n") as fh:
        for entry in entries:
            fh.write(dumps_entry(entry) + "\n")
    with open(report, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(json.dumps(build_report(entries, config), sort_keys=True, indent=2, ensure_ascii=False) + "\n")
    return transcripts, report


def read_transcripts(path: str | Path) -> list[dict]:
    with open(path, encoding="utf-8") as fh:
        return [json.loads(line) for line in fh if line.strip()]


def rescore_entries(entries: list[dict]) -> list[dict]:
    """Recompute EM/F1 from each entry's raw output and gold answers."""
    out = []
    for e in entries:
        e = dict(e)
        if e.get("failure"):
            e.update(prediction="", em=0, f1=0.0)
        else:
            instance = QAInstance(e["id"], e["question"], tuple(e["golden_answers"]), e["answer_type"])
            pred, em, f1 = score_prediction(instance, e["raw_output"])
            e.update(prediction=pred.extracted, em=em, f1=f1)
        out.append(e)
    return out


def score_transcripts(path: str | Path) -> MetricReport:
    return aggregate(rescore_entries(read_transcripts(path)))


def debate_stats(entries: list[dict]) -> dict:
    """Average retrieval-debate rounds and final query counts, plus termination reasons."""
    debated = [e for e in entries if e.get("ret_transcript")]
    reasons: dict[str, int] = {}
    for e in debated:
        reason = e["ret_transcript"]["termination_reason"] or "failed"
        reasons[reason] = reasons.get(reason, 0) + 1
    n = len(debated)
    return {
        "n": len(entries),
        "n_debated": n,
        "avg_debate_rounds": round(sum(len(e["ret_transcript"]["rounds"]) for e in debated) / n, 4) if n else 0.0,
        "avg_query_count": round(sum(len(e["final_pool"]) for e in debated) / n, 4) if n else 0.0,
        "termination_reasons": dict(sorted(reasons.items())),
    }
