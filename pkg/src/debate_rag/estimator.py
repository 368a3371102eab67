"""scikit-learn style front end for the whole question-answering pipeline."""

from __future__ import annotations

from pathlib import Path

from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from debate_rag import prompts
from debate_rag._validation import check_bool_free_int, check_question_list
from debate_rag.evaluation import QAInstance
from debate_rag.llm import DEFAULT_BUDGET, Gateway
from debate_rag.pipeline import Components, PipelineConfig, RunMode, run_dataset
from debate_rag.retriever import BM25Retriever


class DebateRAG(BaseEstimator):
    """Debate-augmented retrieval QA as an estimator.

    ``fit`` indexes a corpus (records or a JSONL path), ``predict`` answers a
    list of questions and returns the extracted answers, ``score`` is mean
    exact match. The full per-question records of the last call are kept in
    ``records_``.

    Parameters
    ----------
    backend : object
        Chat backend with ``send`` and ``fork`` (e.g. ``ScriptedBackend``).
    mode : str
        One of the :class:`RunMode` values.
    """

    def __init__(self, backend=None, mode="drag", k=3, ret_rounds=3, res_rounds=3, epsilon=0,
                 max_pool_size=5, call_budget=DEFAULT_BUDGET, model="", temperature=0.0,
                 max_tokens=512, n_jobs=1, templates_dir=None):
        self.backend = backend
        self.mode = mode
        self.k = k
        self.ret_rounds = ret_rounds
        self.res_rounds = res_rounds
        self.epsilon = epsilon
        self.max_pool_size = max_pool_size
        self.call_budget = call_budget
        self.model = model
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.n_jobs = n_jobs
        self.templates_dir = templates_dir

    def _config(self) -> PipelineConfig:
        for name in ("k", "ret_rounds", "epsilon"):
            check_bool_free_int(getattr(self, name), name)
        for name in ("res_rounds", "max_pool_size", "call_budget", "n_jobs"):
            check_bool_free_int(getattr(self, name), name, minimum=1)
        return PipelineConfig(
            mode=RunMode(self.mode), k=self.k, ret_rounds=self.ret_rounds, res_rounds=self.res_rounds,
            epsilon=self.epsilon, max_pool_size=self.max_pool_size, call_budget=self.call_budget,
            model=self.model, temperature=self.temperature, max_tokens=self.max_tokens,
            parallel=self.n_jobs,
        )

    def fit(self, X=None, y=None):
        """Index the corpus ``X``; modes without retrieval accept ``X=None``."""
        self.config_ = self._config()
        if self.backend is None:
            raise ValueError("a chat backend is required")
        if X is None:
            if self.config_.mode.uses_retrieval:
                raise ValueError(f"mode {self.config_.mode.value} needs a corpus")
            self.retriever_ = None
        else:
            self.retriever_ = BM25Retriever(k=max(self.k, 1)).fit(Path(X) if isinstance(X, str) else X)
        self.templates_ = prompts.load_templates(self.templates_dir)
        return self

    def _run(self, X, y=None) -> list[dict]:
        check_is_fitted(self, "config_")
        questions = check_question_list(X)
        golds = [None] * len(questions) if y is None else list(y)
        if len(golds) != len(questions):
            raise ValueError(f"got {len(questions)} questions but {len(golds)} answer sets")
        instances = [
            QAInstance(str(i), q, (g,) if isinstance(g, str) else tuple(g) if g else ("",))
            for i, (q, g) in enumerate(zip(questions, golds))
        ]
        gateway = Gateway(self.backend, model_id=self.model, temperature=self.temperature,
                          max_tokens=self.max_tokens, budget=self.call_budget)
        index = self.retriever_.index_ if self.retriever_ is not None else None
        self.records_ = run_dataset(instances, self.config_, Components(gateway, index, self.templates_))
        return self.records_

    def predict(self, X) -> list[str]:
        return [r["prediction"] for r in self._run(X)]

    def score(self, X, y) -> float:
        records = self._run(X, y)
        return sum(r["em"] for r in records) / len(records)
