"""
Scorer backends - the LLM side of the reranker.

Every backend takes a fully rendered prompt and returns the raw response text;
parsing belongs to ``src.utils.parsers``. Backends are shared by many
concurrent tasks, so they keep no per-request state.
"""

from __future__ import annotations

import asyncio
import re
from collections.abc import Awaitable, Callable, Mapping
from typing import Literal, Protocol, runtime_checkable

import httpx
import openai
from loguru import logger
from pydantic_ai import Agent
from pydantic_ai.models import Model

from src.config import BackendConfig
from src.errors import BackendError
from src.models import Document, Qrels
from src.utils.parsers import format_answer

BackendKind = Literal["openai", "agent", "oracle"]
OracleMode = Literal["groupwise", "pointwise", "listwise"]

Sleep = Callable[[float], Awaitable[None]]


@runtime_checkable
class ScorerBackend(Protocol):
    """Anything that turns a prompt into a raw model response."""

    identity: str

    async def score_group(self, prompt: str) -> str: ...


def backoff_delay(attempt: int, base: float = 1.0, factor: float = 2.0) -> float:
    """Delay before retry number ``attempt`` (1-based): ``base * factor ** (attempt - 1)``."""
    return base * factor ** (attempt - 1)


# ============================================================================
# OPENAI-COMPATIBLE CHAT COMPLETIONS
# ============================================================================

_RETRYABLE = (openai.APIConnectionError, openai.RateLimitError, openai.InternalServerError)


class OpenAIChatBackend:
    """
    Chat-completions backend for any OpenAI-compatible server (OpenAI, vLLM, SGLang...).

    Request: ``{model, messages: [{role: "user", content: prompt}], temperature}``.
    The raw response is the first choice's message content. Connection errors,
    timeouts, 429 and 5xx are retried with exponential backoff; other HTTP
    errors fail at once.
    """

    def __init__(
        self,
        config: BackendConfig | None = None,
        http_client: httpx.AsyncClient | None = None,
        sleep: Sleep = asyncio.sleep,
    ):
        self.config = config or BackendConfig()
        self.identity = f"openai:{self.config.model}"
        self._sleep = sleep
        # retries are ours (backoff config), not the SDK's
        self._client = openai.AsyncOpenAI(
            api_key=self.config.api_key or "EMPTY",
            base_url=self.config.base_url,
            timeout=self.config.timeout,
            max_retries=0,
            http_client=http_client,
        )

    async def score_group(self, prompt: str) -> str:
        last_error: Exception | None = None
        for attempt in range(1, self.config.max_attempts + 1):
            try:
                response = await self._client.chat.completions.create(
                    model=self.config.model,
                    messages=[{"role": "user", "content": prompt}],
                    temperature=self.config.temperature,
                )
            except _RETRYABLE as exc:
                last_error = exc
                if attempt < self.config.max_attempts:
                    delay = backoff_delay(
                        attempt, self.config.backoff_base, self.config.backoff_factor
                    )
                    logger.warning(
                        f"⚠️  {self.identity} attempt {attempt} failed ({type(exc).__name__}); "
                        f"retrying in {delay:.1f}s"
                    )
                    await self._sleep(delay)
                continue
            except openai.APIStatusError as exc:
                raise BackendError(f"{self.identity} rejected the request: {exc}") from exc

            if not response.choices:
                raise BackendError(f"{self.identity} returned no choices")
            return response.choices[0].message.content or ""

        raise BackendError(
            f"{self.identity} unreachable after {self.config.max_attempts} attempts: {last_error}"
        ) from last_error

    async def aclose(self) -> None:
        await self._client.close()


# ============================================================================
# PYDANTIC-AI AGENT
# ============================================================================


class AgentBackend:
    """
    Backend that runs the prompt through a pydantic-ai ``Agent``.

    Accepts a ready agent or any model pydantic-ai understands
    (``"openai:gpt-4o"``, ``"anthropic:..."``, a ``Model`` instance).
    """

    def __init__(
        self,
        agent: Agent | None = None,
        model: str | Model = "openai:gpt-4o-mini",
        system_prompt: str = "",
        config: BackendConfig | None = None,
        sleep: Sleep = asyncio.sleep,
    ):
        self.agent = agent or Agent(model, system_prompt=system_prompt)
        name = model if isinstance(model, str) else model.model_name
        self.identity = f"agent:{name}"
        self.config = config or BackendConfig()
        self._sleep = sleep

    async def score_group(self, prompt: str) -> str:
        last_error: Exception | None = None
        for attempt in range(1, self.config.max_attempts + 1):
            try:
                result = await self.agent.run(prompt)
                return result.output
            except Exception as exc:
                last_error = exc
                logger.warning(f"⚠️  {self.identity} attempt {attempt} failed: {exc}")
                if attempt < self.config.max_attempts:
                    await self._sleep(
                        backoff_delay(attempt, self.config.backoff_base, self.config.backoff_factor)
                    )
        raise BackendError(
            f"{self.identity} failed after {self.config.max_attempts} attempts"
        ) from last_error


# ============================================================================
# ORACLE (deterministic mock)
# ============================================================================

_PASSAGE_LINE = re.compile(r"^\[(\d+)\] (.*)$", re.MULTILINE)


def _normalize(text: str) -> str:
    return " ".join(text.split())


class OracleBackend:
    """
    Answers prompts from known relevance grades instead of a model.

    ``grades`` maps document text to a grade; unknown passages get ``default``.
    Groupwise answers score each ``[i]`` passage with its grade (capped at 10),
    pointwise answers ``Relevance score: X.`` and listwise answers the ids
    sorted by grade. Used by tests and ``--backend oracle``.
    """

    def __init__(
        self, grades: Mapping[str, int], mode: OracleMode = "groupwise", default: int = 0
    ):
        self.grades = {_normalize(text): grade for text, grade in grades.items()}
        self.mode = mode
        self.default = default
        self.identity = f"oracle:{mode}"
        self.calls = 0

    @classmethod
    def from_qrels(
        cls,
        qrels: Qrels,
        corpus: Mapping[str, Document],
        query_id: str | None = None,
        mode: OracleMode = "groupwise",
    ) -> OracleBackend:
        """Oracle holding the judged grades of one query (or the best grade over all queries)."""
        query_ids = [query_id] if query_id is not None else qrels.query_ids()
        grades: dict[str, int] = {}
        for qid in query_ids:
            for doc_id, grade in qrels.for_query(qid).items():
                if doc_id in corpus:
                    text = corpus[doc_id].text
                    grades[text] = max(grade, grades.get(text, 0))
        return cls(grades, mode=mode)

    def _grade(self, text: str) -> int:
        return min(10, max(0, self.grades.get(_normalize(text), self.default)))

    def _passages(self, prompt: str) -> list[tuple[int, str]]:
        return [(int(i), text) for i, text in _PASSAGE_LINE.findall(prompt)]

    async def score_group(self, prompt: str) -> str:
        self.calls += 1
        if self.mode == "pointwise":
            return f"Relevance score: {self._pointwise(prompt)}."
        passages = self._passages(prompt)
        if self.mode == "listwise":
            order = sorted(passages, key=lambda p: (-self._grade(p[1]), p[0]))
            ids = ", ".join(str(i) for i, _ in order)
            return f"Sorted by known grades.\n```json\n[{ids}]\n```"
        return format_answer([self._grade(text) for _, text in passages], "oracle grades")

    def _pointwise(self, prompt: str) -> int:
        # the longest known passage contained in the prompt is the document
        flat = _normalize(prompt)
        matches = [text for text in self.grades if text and text in flat]
        if not matches:
            return min(10, max(0, self.default))
        return self._grade(max(matches, key=len))


# ============================================================================
# FACTORY
# ============================================================================


def create_backend(
    kind: BackendKind,
    config: BackendConfig | None = None,
    agent_model: str | None = None,
) -> OpenAIChatBackend | AgentBackend:
    """Backend por nome (CLI). O oracle precisa de qrels e é montado por query."""
    config = config or BackendConfig()
    if kind == "openai":
        return OpenAIChatBackend(config)
    if kind == "agent":
        return AgentBackend(model=agent_model or f"openai:{config.model}", config=config)
    raise ValueError(f"backend {kind!r} cannot be created without qrels")


__all__ = [
    "AgentBackend",
    "OpenAIChatBackend",
    "OracleBackend",
    "ScorerBackend",
    "backoff_delay",
    "create_backend",
]
