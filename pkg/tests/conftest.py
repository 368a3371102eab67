import sys

import pytest

from debate_rag import data_path
from debate_rag.llm import CaptureBackend, Gateway, ScriptedBackend, ScriptRule
from debate_rag.retriever import ingest_corpus, read_corpus_jsonl

TOY_DOCS = [("A", "", "apple fruit orchard"), ("B", "", "apple computer company"), ("C", "", "banana fruit")]


@pytest.fixture
def toy_index():
    return ingest_corpus(TOY_DOCS)


@pytest.fixture(scope="session")
def corpus_index():
    return ingest_corpus(read_corpus_jsonl(data_path("toy_corpus.jsonl")))


def scripted_gateway(rules, budget=40, capture=False):
    backend = ScriptedBackend([r if isinstance(r, ScriptRule) else ScriptRule(**r) for r in rules])
    if capture:
        backend = CaptureBackend(backend)
    return Gateway(backend, budget=budget)


def pytest_terminal_summary(terminalreporter):
    module = sys.modules.get("test_acceptance")
    lines = getattr(module, "RESULTS", None)
    if lines:
        terminalreporter.section("acceptance criteria")
        for line in lines:
            terminalreporter.write_line(line)
