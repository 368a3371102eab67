"""Debate-augmented retrieval question answering."""

from importlib import resources
from pathlib import Path

from debate_rag.estimator import DebateRAG
from debate_rag.evaluation import exact_match, extract_answer, normalize_answer, token_f1
from debate_rag.llm import Gateway, OpenAICompatibleBackend, ScriptedBackend
from debate_rag.pipeline import PipelineConfig, RunMode, run_dataset, run_question
from debate_rag.retrieval_debate import run_retrieval_debate
from debate_rag.response_debate import run_response_debate
from debate_rag.retriever import BM25Retriever, ingest_corpus, retrieve

__all__ = [
    "BM25Retriever",
    "DebateRAG",
    "Gateway",
    "OpenAICompatibleBackend",
    "PipelineConfig",
    "RunMode",
    "ScriptedBackend",
    "data_path",
    "exact_match",
    "extract_answer",
    "ingest_corpus",
    "normalize_answer",
    "retrieve",
    "run_dataset",
    "run_question",
    "run_response_debate",
    "run_retrieval_debate",
    "token_f1",
]


def data_path(name: str) -> Path:
    """Path of a bundled toy file: toy_corpus.jsonl, toy_dataset.jsonl or toy_script.json."""
    return Path(str(resources.files("debate_rag") / "data" / name))
