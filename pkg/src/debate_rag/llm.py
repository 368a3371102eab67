"""Chat-completion gateway with a scripted test backend and an HTTP client.

Every agent utterance goes through :meth:`Gateway.complete`, which is where
call accounting and the per-question call budget live.
"""

from __future__ import annotations

import json
import logging
import os
import threading
from dataclasses import dataclass
from enum import Enum
from pathlib import Path
from typing import Protocol

import httpx

logger = logging.getLogger(__name__)

DEFAULT_BUDGET = 40


class Role(str, Enum):
    SYSTEM = "system"
    USER = "user"
    ASSISTANT = "assistant"


class Stage(str, Enum):
    RETRIEVAL = "retrieval"
    RESPONSE = "response"
    BASELINE = "baseline"


class GatewayError(RuntimeError):
    pass


class NoRuleError(GatewayError):
    """No scripted rule matched the request."""


class BackendTimeout(GatewayError):
    pass


class TransportError(GatewayError):
    pass


class MalformedResponse(GatewayError):
    pass


class BudgetExceeded(GatewayError):
    pass


class DebateAborted(GatewayError):
    """A debate stopped on a gateway failure; ``transcript`` holds what ran."""

    def __init__(self, message: str, transcript):
        super().__init__(message)
        self.transcript = transcript


@dataclass(frozen=True)
class ChatMessage:
    role: Role
    content: str

    def __post_init__(self):
        object.__setattr__(self, "role", Role(self.role))
        if self.role is not Role.ASSISTANT and not self.content:
            raise ValueError(f"{self.role.value} message must have content")

    def to_dict(self) -> dict:
        return {"role": self.role.value, "content": self.content}


@dataclass(frozen=True)
class ChatRequest:
    messages: tuple[ChatMessage, ...]
    stage_tag: Stage
    temperature: float = 0.0
    max_tokens: int = 512
    model_id: str = ""

    def __post_init__(self):
        object.__setattr__(self, "messages", tuple(self.messages))
        object.__setattr__(self, "stage_tag", Stage(self.stage_tag))
        if not self.messages:
            raise ValueError("request needs at least one message")
        if self.messages[0].role is Role.ASSISTANT:
            raise ValueError("first message must be system or user")
        if self.temperature < 0:
            raise ValueError("temperature must be >= 0")

    @property
    def last_user_message(self) -> str:
        for msg in reversed(self.messages):
            if msg.role is Role.USER:
                return msg.content
        return ""


@dataclass(frozen=True)
class ChatResponse:
    content: str
    prompt_tokens: int = 0
    completion_tokens: int = 0


class CallLog:
    """Thread-safe counters of LLM calls per stage and retriever calls."""

    def __init__(self):
        self._lock = threading.Lock()
        self.llm_calls_by_stage: dict[str, int] = {s.value: 0 for s in Stage}
        self.retriever_calls = 0

    def record_llm_call(self, stage: Stage | str) -> None:
        with self._lock:
            self.llm_calls_by_stage[Stage(stage).value] += 1

    def record_retriever_call(self) -> "CallLog":
        with self._lock:
            self.retriever_calls += 1
        return self

    @property
    def llm_calls(self) -> int:
        with self._lock:
            return sum(self.llm_calls_by_stage.values())

    def to_dict(self) -> dict:
        with self._lock:
            return {
                "llm_calls_by_stage": dict(self.llm_calls_by_stage),
                "llm_calls": sum(self.llm_calls_by_stage.values()),
                "retriever_calls": self.retriever_calls,
            }


def record_retriever_call(log: CallLog) -> CallLog:
    return log.record_retriever_call()


class Backend(Protocol):
    def send(self, request: ChatRequest) -> ChatResponse: ...

    def fork(self) -> "Backend": ...


@dataclass(frozen=True)
class ScriptRule:
    """One scripted reply.

    ``match`` is a substring (or list of substrings, all required) of the most
    recent user message; ``call`` is a 1-based ordinal of the request within
    the current backend fork. A rule with neither matches everything.
    """

    reply: str
    match: str | tuple[str, ...] | None = None
    call: int | None = None

    def __post_init__(self):
        if isinstance(self.match, list):
            object.__setattr__(self, "match", tuple(self.match))

    def matches(self, text: str, ordinal: int) -> bool:
        if self.call is not None and self.call != ordinal:
            return False
        if self.match is None:
            return True
        needles = (self.match,) if isinstance(self.match, str) else self.match
        return all(n in text for n in needles)

    @classmethod
    def from_dict(cls, data: dict) -> "ScriptRule":
        return cls(reply=data["reply"], match=data.get("match"), call=data.get("call"))


class ScriptedBackend:
    """Deterministic backend: first matching rule in declaration order wins."""

    def __init__(self, rules):
        self.rules = [r if isinstance(r, ScriptRule) else ScriptRule.from_dict(r) for r in rules]
        self._ordinal = 0
        self._lock = threading.Lock()

    @classmethod
    def from_file(cls, path: str | Path) -> "ScriptedBackend":
        with open(path, encoding="utf-8") as fh:
            data = json.load(fh)
        if isinstance(data, dict):
            data = data["rules"]
        return cls(data)

    def fork(self) -> "ScriptedBackend":
        return ScriptedBackend(self.rules)

    def __getstate__(self):
        return {"rules": self.rules}

    def __setstate__(self, state):
        self.__init__(state["rules"])

    def send(self, request: ChatRequest) -> ChatResponse:
        with self._lock:
            self._ordinal += 1
            ordinal = self._ordinal
        text = request.last_user_message
        for rule in self.rules:
            if rule.matches(text, ordinal):
                return ChatResponse(rule.reply, len(text.split()), len(rule.reply.split()))
        raise NoRuleError(f"no scripted rule matches call #{ordinal}: {text[:80]!r}")


class CaptureBackend:
    """Wraps another backend and keeps every request it forwards."""

    def __init__(self, inner):
        self.inner = inner
        self.requests: list[ChatRequest] = []

    def fork(self) -> "CaptureBackend":
        forked = CaptureBackend(self.inner.fork())
        forked.requests = self.requests
        return forked

    def send(self, request: ChatRequest) -> ChatResponse:
        self.requests.append(request)
        return self.inner.send(request)


class OpenAICompatibleBackend:
    """Minimal client for ``POST {base}/v1/chat/completions``."""

    def __init__(self, api_base: str | None = None, api_key: str | None = None,
                 timeout: float = 60.0, transport: httpx.BaseTransport | None = None):
        self.api_base = (api_base or os.environ.get("DRAG_API_BASE") or "").rstrip("/")
        if not self.api_base:
            raise ValueError("api base URL not configured (use --api-base or DRAG_API_BASE)")
        self.api_key = api_key if api_key is not None else os.environ.get("DRAG_API_KEY", "")
        self.timeout = timeout
        self._transport = transport
        self._client = httpx.Client(timeout=timeout, transport=transport)

    @property
    def url(self) -> str:
        base = self.api_base
        if base.endswith("/v1"):
            base = base[:-3]
        return f"{base}/v1/chat/completions"

    def fork(self) -> "OpenAICompatibleBackend":
        return self

    def __getstate__(self):
        return {"api_base": self.api_base, "api_key": self.api_key, "timeout": self.timeout,
                "transport": self._transport}

    def __setstate__(self, state):
        self.__init__(**state)

    def build_payload(self, request: ChatRequest) -> dict:
        return {
            "model": request.model_id,
            "messages": [m.to_dict() for m in request.messages],
            "temperature": request.temperature,
            "max_tokens": request.max_tokens,
        }

    def send(self, request: ChatRequest) -> ChatResponse:
        headers = {"Content-Type": "application/json"}
        if self.api_key:
            headers["Authorization"] = f"Bearer {self.api_key}"
        try:
            resp = self._client.post(self.url, json=self.build_payload(request), headers=headers)
        except httpx.TimeoutException as exc:
            raise BackendTimeout(f"request timed out after {self.timeout}s") from exc
        except httpx.TransportError as exc:
            raise TransportError(str(exc)) from exc
        if resp.status_code == 429 or resp.status_code >= 500:
            raise TransportError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        if resp.status_code >= 400:
            raise GatewayError(f"HTTP {resp.status_code}: {resp.text[:200]}")
        try:
            body = resp.json()
            content = body["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError) as exc:
            raise MalformedResponse(f"unexpected response payload: {resp.text[:200]}") from exc
        if content is None:
            content = ""
        if not isinstance(content, str):
            raise MalformedResponse("message content is not a string")
        usage = body.get("usage") or {}
        return ChatResponse(content, int(usage.get("prompt_tokens", 0)), int(usage.get("completion_tokens", 0)))


class Gateway:
    """Routes requests to a backend, counts calls, enforces the call budget.

    A gateway serves one question at a time; :meth:`fork` gives a fresh
    gateway (new :class:`CallLog`, forked backend) for the next question.
    """

    def __init__(self, backend, *, model_id: str = "", temperature: float = 0.0,
                 max_tokens: int = 512, budget: int | None = DEFAULT_BUDGET,
                 call_log: CallLog | None = None, retries: int = 1):
        self.backend = backend
        self.model_id = model_id
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.budget = budget
        self.retries = retries
        self.call_log = call_log if call_log is not None else CallLog()

    def fork(self) -> "Gateway":
        return Gateway(self.backend.fork(), model_id=self.model_id, temperature=self.temperature,
                       max_tokens=self.max_tokens, budget=self.budget, retries=self.retries)

    def complete(self, request: ChatRequest) -> ChatResponse:
        if self.budget is not None and self.call_log.llm_calls >= self.budget:
            raise BudgetExceeded(f"call budget of {self.budget} LLM calls exhausted")
        self.call_log.record_llm_call(request.stage_tag)
        attempt = 0
        while True:
            try:
                return self.backend.send(request)
            except (BackendTimeout, TransportError) as exc:
                if attempt >= self.retries:
                    raise
                attempt += 1
                logger.warning("retrying after transport fault: %s", exc)

    def chat(self, messages, stage: Stage | str) -> str:
        """Convenience wrapper: build a request with this gateway's defaults."""
        msgs = [m if isinstance(m, ChatMessage) else ChatMessage(*m) for m in messages]
        request = ChatRequest(msgs, Stage(stage), temperature=self.temperature,
                              max_tokens=self.max_tokens, model_id=self.model_id)
        return self.complete(request).content

    def ask(self, prompt: str, stage: Stage | str) -> str:
        return self.chat([ChatMessage(Role.USER, prompt)], stage)
