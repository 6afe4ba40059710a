"""
Orchestrator - groupwise reranking of a retriever run.

Fluxo de um ``rerank``:
1. Ordena os candidatos (ordem do retriever, ou embaralhada por rodada de ensemble)
2. Particiona em grupos disjuntos ou janelas deslizantes
3. Renderiza um prompt por grupo e despacha todos em paralelo (com teto de requisições)
4. Valida cada resposta; grupos que não parseiam depois dos retries recebem score 0
5. Acumula os scores por documento e emite um RunList pela média
"""

from __future__ import annotations

import asyncio
import math
from collections.abc import Mapping, Sequence
from enum import StrEnum
from typing import TypeVar

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict

from src.agents.backends import ScorerBackend
from src.config import RerankConfig
from src.errors import BackendError, RerankAborted
from src.fusion import fuse_runs
from src.models import Document, Query, RunList
from src.prompts import DEFAULT_GROUP_TEMPLATE, PromptTemplate, render_group_prompt
from src.utils.parsers import parse_response

T = TypeVar("T")

# ============================================================================
# COST MODEL - chamadas de LLM por paradigma
# ============================================================================


class Paradigm(StrEnum):
    POINTWISE_QLM = "pointwise.qlm"
    POINTWISE_YES_NO = "pointwise.yes_no"
    LISTWISE_GENERATION = "listwise.generation"
    LISTWISE_LIKELIHOOD = "listwise.likelihood"
    PAIRWISE_ALLPAIR = "pairwise.allpair"
    PAIRWISE_HEAPSORT = "pairwise.heapsort"
    PAIRWISE_BUBBLESORT = "pairwise.bubblesort"
    SETWISE_HEAPSORT = "setwise.heapsort"
    SETWISE_BUBBLESORT = "setwise.bubblesort"
    GROUPWISE = "groupwise"


class ParadigmInfo(BaseModel):
    """Whether a paradigm generates text, whether its calls batch, and its call complexity."""

    model_config = ConfigDict(frozen=True)

    generate: bool
    batching: bool
    complexity: str


PARADIGM_TABLE: dict[Paradigm, ParadigmInfo] = {
    Paradigm.POINTWISE_QLM: ParadigmInfo(generate=False, batching=True, complexity="O(N)"),
    Paradigm.POINTWISE_YES_NO: ParadigmInfo(generate=False, batching=True, complexity="O(N)"),
    Paradigm.LISTWISE_GENERATION: ParadigmInfo(
        generate=True, batching=False, complexity="O(r*(N/s))"
    ),
    Paradigm.LISTWISE_LIKELIHOOD: ParadigmInfo(
        generate=False, batching=False, complexity="O(r*(N/s))"
    ),
    Paradigm.PAIRWISE_ALLPAIR: ParadigmInfo(generate=True, batching=True, complexity="O(N^2-N)"),
    Paradigm.PAIRWISE_HEAPSORT: ParadigmInfo(
        generate=True, batching=False, complexity="O(k*log2(N))"
    ),
    Paradigm.PAIRWISE_BUBBLESORT: ParadigmInfo(generate=True, batching=False, complexity="O(k*N)"),
    Paradigm.SETWISE_HEAPSORT: ParadigmInfo(
        generate=True, batching=False, complexity="O(k*log_c(N))"
    ),
    Paradigm.SETWISE_BUBBLESORT: ParadigmInfo(
        generate=True, batching=False, complexity="O(k*(N/(c-1)))"
    ),
    Paradigm.GROUPWISE: ParadigmInfo(generate=True, batching=True, complexity="O(N/c)"),
}


def _ceil(x: float) -> int:
    # log2(8) * 3 must give 9, not 10
    return math.ceil(round(x, 9))


def _require_positive(**params: int) -> None:
    for name, value in params.items():
        if value < 1:
            raise ValueError(f"{name} must be >= 1, got {value}")


def estimate_llm_calls(
    method: Paradigm | str,
    n: int,
    c: int = 20,
    w: int = 20,
    s: int = 10,
    k: int = 10,
    r: int = 1,
) -> int:
    """
    Worst-case LLM calls to rerank ``n`` documents with a paradigm.

    ``c`` documents per request, sliding window ``w`` with step ``s``, top-``k``
    for the sorting variants and ``r`` listwise passes. Divisions round up.

    Raises:
        ValueError: unknown paradigm or a parameter the formula needs is out of range
    """
    method = Paradigm(method)
    _require_positive(n=n)
    match method:
        case Paradigm.POINTWISE_QLM | Paradigm.POINTWISE_YES_NO:
            return n
        case Paradigm.LISTWISE_GENERATION | Paradigm.LISTWISE_LIKELIHOOD:
            _require_positive(r=r, s=s, w=w)
            if s > w:
                raise ValueError(f"step s ({s}) must not exceed window w ({w})")
            return r * _ceil(n / s)
        case Paradigm.PAIRWISE_ALLPAIR:
            return n * n - n
        case Paradigm.PAIRWISE_HEAPSORT:
            _require_positive(k=k)
            return _ceil(k * math.log2(n))
        case Paradigm.PAIRWISE_BUBBLESORT:
            _require_positive(k=k)
            return k * n
        case Paradigm.SETWISE_HEAPSORT:
            _require_positive(k=k)
            if c < 2:
                raise ValueError(f"setwise needs c >= 2, got {c}")
            return _ceil(k * math.log(n, c))
        case Paradigm.SETWISE_BUBBLESORT:
            _require_positive(k=k)
            if c < 2:
                raise ValueError(f"setwise needs c >= 2, got {c}")
            return k * _ceil(n / (c - 1))
        case Paradigm.GROUPWISE:
            _require_positive(c=c)
            return _ceil(n / c)


# ============================================================================
# PARTITIONING
# ============================================================================


def partition_disjoint(doc_ids: Sequence[T], c: int) -> list[list[T]]:
    """``ceil(N/c)`` contiguous groups in input order; the last one may be short."""
    _require_positive(c=c)
    return [list(doc_ids[i : i + c]) for i in range(0, len(doc_ids), c)]


def partition_sliding(doc_ids: Sequence[T], w: int, s: int) -> list[list[T]]:
    """
    Overlapping windows of size ``w`` at offsets 0, s, 2s, ...

    A final window aligned to the tail is added when the last full window stops
    short of the end, so every document lands in at least one window.
    """
    _require_positive(w=w, s=s)
    if s > w:
        raise ValueError(f"step s ({s}) must not exceed window w ({w})")
    n = len(doc_ids)
    if n <= w:
        return [list(doc_ids)] if n else []
    offsets = list(range(0, n - w + 1, s))
    if offsets[-1] + w < n:
        offsets.append(n - w)
    return [list(doc_ids[o : o + w]) for o in offsets]


def round_order(doc_ids: Sequence[T], seed: int, round_no: int, ensemble_n: int) -> list[T]:
    """
    Candidate order for one ensemble round.

    Retrieval order when ``ensemble_n == 1``; otherwise every round is a
    permutation drawn from ``default_rng(seed ^ round_no)``.
    """
    if ensemble_n == 1:
        return list(doc_ids)
    rng = np.random.default_rng(seed ^ round_no)
    return [doc_ids[i] for i in rng.permutation(len(doc_ids))]


# ============================================================================
# SCORE ACCUMULATOR
# ============================================================================


class ScoreAccumulator:
    """Running sum and count of integer scores per document."""

    def __init__(self) -> None:
        self._sum: dict[str, float] = {}
        self._count: dict[str, int] = {}

    def add(self, doc_id: str, score: float) -> None:
        self._sum[doc_id] = self._sum.get(doc_id, 0.0) + score
        self._count[doc_id] = self._count.get(doc_id, 0) + 1

    def add_group(self, doc_ids: Sequence[str], scores: Sequence[float]) -> None:
        if len(doc_ids) != len(scores):
            raise ValueError(f"{len(scores)} scores for a group of {len(doc_ids)}")
        for doc_id, score in zip(doc_ids, scores, strict=True):
            self.add(doc_id, score)

    def count(self, doc_id: str) -> int:
        return self._count.get(doc_id, 0)

    def mean(self, doc_id: str) -> float:
        if doc_id not in self._count:
            raise KeyError(doc_id)
        return self._sum[doc_id] / self._count[doc_id]

    def means(self) -> dict[str, float]:
        return {doc_id: self._sum[doc_id] / n for doc_id, n in self._count.items()}

    def __len__(self) -> int:
        return len(self._count)

    def __contains__(self, doc_id: object) -> bool:
        return doc_id in self._count


# ============================================================================
# RERANK
# ============================================================================


async def score_group(
    query: Query,
    docs: Sequence[Document],
    backend: ScorerBackend,
    config: RerankConfig,
    template: PromptTemplate = DEFAULT_GROUP_TEMPLATE,
    semaphore: asyncio.Semaphore | None = None,
    label: str = "",
) -> list[int]:
    """
    Score one group: render, call, parse, retry.

    Returns the 0-10 score of each document in group order; all zeros when the
    response never parses within ``max_retries`` retries.

    Raises:
        BackendError: the backend could not be reached
    """
    semaphore = semaphore or asyncio.Semaphore(1)
    prompt = render_group_prompt(
        template, query, docs, config.use_rewritten_query, config.max_group_size
    )
    attempts = config.max_retries + 1
    for attempt in range(1, attempts + 1):
        async with semaphore:
            try:
                raw = await backend.score_group(prompt)
            except BackendError:
                raise
            except Exception as exc:
                raise BackendError(f"{backend.identity}: {exc}") from exc
        parsed = parse_response(raw, len(docs), out_of_range=config.out_of_range)
        if parsed.score_map is not None:
            logger.debug(f"group {label}: {parsed.score_map.as_list()}")
            return parsed.score_map.as_list()
        logger.debug(
            f"group {label}: unparseable response (attempt {attempt}/{attempts}, "
            f"output_ok={parsed.verdict.output_format_ok})"
        )
    logger.warning(
        f"⚠️  query {query.id} group {label}: no valid answer after {attempts} attempts; "
        f"scoring its {len(docs)} documents 0"
    )
    return [0] * len(docs)


def run_tag(config: RerankConfig) -> str:
    return f"grouprank-{config.mode}-n{config.ensemble_n}-seed{config.seed}"


async def rerank(
    query: Query,
    candidates: RunList,
    backend: ScorerBackend,
    config: RerankConfig | None = None,
    corpus: Mapping[str, Document] | None = None,
    template: PromptTemplate = DEFAULT_GROUP_TEMPLATE,
) -> RunList:
    """
    Rerank a retriever run with groupwise scoring.

    Every candidate comes out exactly once, scored by the mean of its group
    scores across windows and ensemble rounds; ties keep retrieval order.
    With ``fuse_with_retriever`` the result is fused with ``candidates``.

    Raises:
        ValueError: no candidates, or a candidate missing from ``corpus``
        RerankAborted: the backend failed for some group; carries the partial run
    """
    config = config or RerankConfig()
    corpus = corpus or {}
    if len(candidates) == 0:
        raise ValueError(f"query {query.id} has no candidates to rerank")
    missing = [doc_id for doc_id in candidates.doc_ids() if doc_id not in corpus]
    if missing:
        raise ValueError(
            f"{len(missing)} candidates of query {query.id} missing from corpus: {missing[:5]}"
        )

    retrieval_rank = candidates.rank_map()
    tag = run_tag(config)
    accumulator = ScoreAccumulator()
    semaphore = asyncio.Semaphore(config.max_in_flight)
    logger.info(
        f"🔄 query {query.id}: {len(candidates)} candidates, mode={config.mode}, "
        f"rounds={config.ensemble_n}, backend={backend.identity}"
    )

    for round_no in range(1, config.ensemble_n + 1):
        order = round_order(candidates.doc_ids(), config.seed, round_no, config.ensemble_n)
        if config.mode == "sliding":
            groups = partition_sliding(order, config.window, config.step)
        else:
            groups = partition_disjoint(order, config.group_size)

        results = await asyncio.gather(
            *(
                score_group(
                    query,
                    [corpus[doc_id] for doc_id in group],
                    backend,
                    config,
                    template,
                    semaphore,
                    label=f"r{round_no}g{index}",
                )
                for index, group in enumerate(groups, start=1)
            ),
            return_exceptions=True,
        )

        failed: list[BaseException] = []
        for group, result in zip(groups, results, strict=True):
            if isinstance(result, BaseException):
                failed.append(result)
            else:
                accumulator.add_group(group, result)
        if failed:
            for error in failed:
                if not isinstance(error, BackendError):
                    raise error
            partial = (
                RunList.from_scores(query.id, accumulator.means(), tag=tag, tiebreak=retrieval_rank)
                if len(accumulator)
                else None
            )
            raise RerankAborted(
                f"query {query.id}: {len(failed)} of {len(groups)} groups failed in round "
                f"{round_no}: {failed[0]}",
                partial=partial,
                failed_groups=len(failed),
            )
        logger.debug(f"query {query.id}: round {round_no} done ({len(groups)} groups)")

    run = RunList.from_scores(query.id, accumulator.means(), tag=tag, tiebreak=retrieval_rank)
    if config.fuse_with_retriever:
        run = fuse_runs(run, candidates, config.w_rerank, config.w_retrieve, tag=f"{tag}+fused")
    logger.success(f"✅ query {query.id} reranked")
    return run


__all__ = [
    "PARADIGM_TABLE",
    "Paradigm",
    "ParadigmInfo",
    "ScoreAccumulator",
    "estimate_llm_calls",
    "partition_disjoint",
    "partition_sliding",
    "rerank",
    "round_order",
    "run_tag",
    "score_group",
]
