"""
Training-data synthesis for the groupwise reranker.

1. ``build_candidates``: hybrid BM25 + dense fusion over the top-100 of each run, keep the top 50
2. ``annotate_pointwise``: one annotator call per (query, doc) → 0-10 relevance
3. ``annotate_listwise``: one annotator call per query → rank of every candidate
4. ``label_record`` / ``emit_training_records``: fuse both labels into the ground-truth score

Annotator calls are journaled (append-only JSONL) so an interrupted run resumes
without paying for the same annotation twice.
"""

from __future__ import annotations

import asyncio
import hashlib
from collections.abc import Awaitable, Mapping, Sequence
from pathlib import Path
from typing import Any, Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from src.agents.backends import ScorerBackend
from src.config import SynthConfig
from src.errors import BackendError, ProtocolError
from src.fusion import fuse_labels, fuse_score_maps
from src.models import Candidate, Document, Query, RunList, TrainingCandidate, TrainingRecord
from src.prompts import render_listwise_prompt, render_pointwise_prompt
from src.trec_io import PathOrStream, write_training_records
from src.utils.parsers import parse_listwise, parse_pointwise

AnnotationKind = Literal["pointwise", "listwise"]
LISTWISE_DOC_ID = "*"

# ============================================================================
# CANDIDATES
# ============================================================================


def build_candidates(
    bm25_run: RunList,
    dense_run: RunList,
    top_k_in: int = 100,
    top_k_out: int = 50,
    w_sparse: float = 0.5,
    w_dense: float = 0.5,
) -> list[Candidate]:
    """
    Hybrid candidate list of one query.

    Union of the top ``top_k_in`` of both runs, each source min-max normalized
    over its own top list (a doc absent from a source takes 0 there), weighted,
    and cut to the best ``top_k_out``. Ties keep BM25 order, then dense order.

    Raises:
        ValueError: query mismatch or an empty run
    """
    if bm25_run.query_id != dense_run.query_id:
        raise ValueError(f"query-id mismatch: {bm25_run.query_id!r} vs {dense_run.query_id!r}")
    if len(bm25_run) == 0 or len(dense_run) == 0:
        raise ValueError(f"query {bm25_run.query_id}: both runs need candidates")

    sparse = bm25_run.top(top_k_in).score_map()
    dense = dense_run.top(top_k_in).score_map()
    fused = fuse_score_maps([sparse, dense], [w_sparse, w_dense])

    sparse_rank, dense_rank = bm25_run.rank_map(), dense_run.rank_map()
    big = len(fused) + 1
    ordered = sorted(
        fused,
        key=lambda d: (-fused[d], sparse_rank.get(d, big), dense_rank.get(d, big), d),
    )[:top_k_out]

    candidates = []
    for doc_id in ordered:
        sources = {}
        if doc_id in sparse:
            sources["bm25"] = sparse[doc_id]
        if doc_id in dense:
            sources["dense"] = dense[doc_id]
        score = min(1.0, max(0.0, fused[doc_id]))
        candidates.append(Candidate(doc_id=doc_id, source_scores=sources, fused_score=score))
    return candidates


# ============================================================================
# JOURNAL (resumable annotation state)
# ============================================================================


def prompt_hash(prompt: str) -> str:
    return hashlib.sha256(prompt.encode("utf-8")).hexdigest()[:16]


class JournalEntry(BaseModel):
    """One completed annotator call."""

    model_config = ConfigDict(frozen=True)

    kind: AnnotationKind
    query_id: str
    doc_id: str
    prompt_hash: str
    value: int | list[int]

    @property
    def key(self) -> tuple[str, str, str, str]:
        return (self.kind, self.query_id, self.doc_id, self.prompt_hash)


class Journal:
    """
    Append-only JSONL journal keyed by ``(kind, query_id, doc_id, prompt_hash)``.

    Entries go through an ``asyncio.Queue`` to a single writer task. Without a
    path the journal only caches in memory.

    Usage:
        async with Journal("state.jsonl") as journal:
            ...
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path else None
        self._cache: dict[tuple[str, str, str, str], JournalEntry] = {}
        self._queue: asyncio.Queue[JournalEntry | None] = asyncio.Queue()
        self._writer: asyncio.Task | None = None
        if self.path and self.path.exists():
            self._load()

    def _load(self) -> None:
        assert self.path is not None
        with open(self.path, encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    entry = JournalEntry.model_validate_json(line)
                except ValidationError:
                    # interrupted write
                    logger.warning(f"{self.path}:{line_no}: unreadable journal line skipped")
                    continue
                self._cache[entry.key] = entry
        logger.info(f"📒 journal {self.path}: {len(self._cache)} annotations restored")

    def get(
        self, kind: AnnotationKind, query_id: str, doc_id: str, hash_: str
    ) -> int | list[int] | None:
        entry = self._cache.get((kind, query_id, doc_id, hash_))
        return entry.value if entry else None

    async def record(self, entry: JournalEntry) -> None:
        self._cache[entry.key] = entry
        if self.path:
            await self._queue.put(entry)

    async def _write_loop(self) -> None:
        assert self.path is not None
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with open(self.path, "a", encoding="utf-8") as fh:
            while (entry := await self._queue.get()) is not None:
                fh.write(entry.model_dump_json() + "\n")
                fh.flush()

    async def __aenter__(self) -> Journal:
        if self.path and self._writer is None:
            self._writer = asyncio.create_task(self._write_loop())
        return self

    async def __aexit__(self, *exc_info) -> None:
        if self._writer is not None:
            await self._queue.put(None)
            await self._writer
            self._writer = None

    def __len__(self) -> int:
        return len(self._cache)


# ============================================================================
# ANNOTATION
# ============================================================================


async def _settle(*aws: Awaitable[Any]) -> list[Any]:
    """
    Await every call, then re-raise the first failure.

    Siblings of a failed call run to completion so their annotations reach the
    journal before the query is skipped.
    """
    results = await asyncio.gather(*aws, return_exceptions=True)
    for result in results:
        if isinstance(result, BaseException):
            raise result
    return results


async def _call(backend: ScorerBackend, prompt: str, semaphore: asyncio.Semaphore) -> str:
    async with semaphore:
        try:
            return await backend.score_group(prompt)
        except BackendError:
            raise
        except Exception as exc:
            raise BackendError(f"{backend.identity}: {exc}") from exc


async def _pointwise_one(
    query: Query,
    doc: Document,
    backend: ScorerBackend,
    config: SynthConfig,
    journal: Journal,
    semaphore: asyncio.Semaphore,
) -> int:
    prompt = render_pointwise_prompt(query, doc, use_rewritten=config.use_rewritten_query)
    hash_ = prompt_hash(prompt)
    cached = journal.get("pointwise", query.id, doc.id, hash_)
    if cached is not None:
        return int(cached)

    for attempt in range(1, config.max_retries + 2):
        raw = await _call(backend, prompt, semaphore)
        try:
            score = parse_pointwise(raw)
        except ProtocolError as exc:
            logger.debug(f"pointwise {query.id}/{doc.id} attempt {attempt}: {exc}")
            continue
        await journal.record(
            JournalEntry(
                kind="pointwise", query_id=query.id, doc_id=doc.id, prompt_hash=hash_, value=score
            )
        )
        return score

    logger.warning(f"⚠️  pointwise {query.id}/{doc.id}: no valid score, using 0")
    return 0


async def annotate_pointwise(
    query: Query,
    docs: Sequence[Document],
    backend: ScorerBackend,
    config: SynthConfig | None = None,
    journal: Journal | None = None,
    semaphore: asyncio.Semaphore | None = None,
) -> list[int]:
    """
    Pointwise annotator score (0-10) of every document, requests in parallel.

    Items that never parse score 0 (with a warning).

    Raises:
        BackendError: the backend failed for some item
    """
    config = config or SynthConfig()
    journal = journal or Journal()
    semaphore = semaphore or asyncio.Semaphore(config.max_in_flight)
    return list(
        await _settle(
            *(_pointwise_one(query, doc, backend, config, journal, semaphore) for doc in docs)
        )
    )


async def annotate_listwise(
    query: Query,
    docs: Sequence[Document],
    backend: ScorerBackend,
    config: SynthConfig | None = None,
    journal: Journal | None = None,
    semaphore: asyncio.Semaphore | None = None,
) -> list[int] | None:
    """
    Listwise annotator rank of every document (``ranks[i]`` = rank of ``docs[i]``).

    Returns None when the response never parses as a permutation of 1..n.

    Raises:
        BackendError: the backend could not be reached
    """
    config = config or SynthConfig()
    journal = journal or Journal()
    semaphore = semaphore or asyncio.Semaphore(1)
    prompt = render_listwise_prompt(query, docs, use_rewritten=config.use_rewritten_query)
    hash_ = prompt_hash(prompt)
    cached = journal.get("listwise", query.id, LISTWISE_DOC_ID, hash_)
    if cached is not None:
        return list(cached)

    for attempt in range(1, config.max_retries + 2):
        raw = await _call(backend, prompt, semaphore)
        try:
            ranks = parse_listwise(raw, len(docs))
        except ProtocolError as exc:
            logger.debug(f"listwise {query.id} attempt {attempt}: {exc}")
            continue
        await journal.record(
            JournalEntry(
                kind="listwise",
                query_id=query.id,
                doc_id=LISTWISE_DOC_ID,
                prompt_hash=hash_,
                value=ranks,
            )
        )
        return ranks

    logger.warning(f"⚠️  listwise {query.id}: no valid permutation after retries")
    return None


# ============================================================================
# LABEL FUSION / RECORDS
# ============================================================================


class AnnotatedQuery(BaseModel):
    """A query with both annotator labels over its candidate documents."""

    model_config = ConfigDict(frozen=True)

    query: Query
    docs: tuple[Document, ...] = Field(min_length=1)
    pointwise: tuple[int, ...]
    listwise_ranks: tuple[int, ...]

    @model_validator(mode="after")
    def aligned(self) -> AnnotatedQuery:
        if not len(self.docs) == len(self.pointwise) == len(self.listwise_ranks):
            raise ValueError("docs, pointwise scores and listwise ranks must align")
        return self


def label_record(annotated: AnnotatedQuery, alpha: float = 0.5) -> TrainingRecord:
    """Fuse the two annotator labels of a query into a TrainingRecord."""
    gt = np.clip(fuse_labels(annotated.pointwise, annotated.listwise_ranks, alpha), 0.0, 1.0)
    return TrainingRecord(
        query=annotated.query,
        candidates=tuple(
            TrainingCandidate(doc=doc, pointwise_score=p, listwise_rank=r, gt_score=float(g))
            for doc, p, r, g in zip(
                annotated.docs, annotated.pointwise, annotated.listwise_ranks, gt, strict=True
            )
        ),
    )


def emit_training_records(
    annotated: Sequence[AnnotatedQuery], target: PathOrStream, alpha: float = 0.5
) -> int:
    """Write one JSONL training record per annotated query; returns the count."""
    count = write_training_records(target, (label_record(a, alpha) for a in annotated))
    logger.success(f"✅ {count} training records written")
    return count


# ============================================================================
# PIPELINE
# ============================================================================


async def synthesize_query(
    query: Query,
    bm25_run: RunList,
    dense_run: RunList,
    corpus: Mapping[str, Document],
    pointwise_backend: ScorerBackend,
    listwise_backend: ScorerBackend,
    config: SynthConfig | None = None,
    journal: Journal | None = None,
    semaphore: asyncio.Semaphore | None = None,
) -> AnnotatedQuery | None:
    """Candidates + both annotations for one query; None when the query is skipped."""
    config = config or SynthConfig()
    journal = journal or Journal()
    semaphore = semaphore or asyncio.Semaphore(config.max_in_flight)

    candidates = build_candidates(
        bm25_run, dense_run, config.top_k_in, config.top_k_out, config.w_sparse, config.w_dense
    )
    docs = [corpus[c.doc_id] for c in candidates if c.doc_id in corpus]
    if len(docs) < len(candidates):
        logger.warning(
            f"⚠️  query {query.id}: {len(candidates) - len(docs)} candidates missing from corpus"
        )
    if not docs:
        logger.error(f"❌ query {query.id}: no candidate documents in the corpus, skipped")
        return None

    pointwise, ranks = await _settle(
        annotate_pointwise(query, docs, pointwise_backend, config, journal, semaphore),
        annotate_listwise(query, docs, listwise_backend, config, journal, semaphore),
    )
    if ranks is None:
        logger.error(f"❌ query {query.id}: listwise annotation failed, skipped")
        return None
    return AnnotatedQuery(
        query=query, docs=tuple(docs), pointwise=tuple(pointwise), listwise_ranks=tuple(ranks)
    )


async def run_synthesis(
    queries: Mapping[str, Query],
    bm25_runs: Mapping[str, RunList],
    dense_runs: Mapping[str, RunList],
    corpus: Mapping[str, Document],
    pointwise_backend: ScorerBackend,
    listwise_backend: ScorerBackend,
    config: SynthConfig | None = None,
    journal_path: str | Path | None = None,
) -> list[AnnotatedQuery]:
    """
    Annotate every query present in both runs.

    Queries whose backend fails or whose listwise pass never parses are
    skipped with an error record; the others come back in query order.
    """
    config = config or SynthConfig()
    semaphore = asyncio.Semaphore(config.max_in_flight)
    annotated: list[AnnotatedQuery] = []

    async with Journal(journal_path) as journal:
        for qid, query in queries.items():
            if qid not in bm25_runs or qid not in dense_runs:
                logger.warning(f"⚠️  query {qid} missing from a candidate run, skipped")
                continue
            logger.info(f"🔄 synthesizing query {qid}")
            try:
                result = await synthesize_query(
                    query,
                    bm25_runs[qid],
                    dense_runs[qid],
                    corpus,
                    pointwise_backend,
                    listwise_backend,
                    config,
                    journal,
                    semaphore,
                )
            except BackendError as exc:
                logger.error(f"❌ query {qid}: backend failure, skipped: {exc}")
                continue
            if result is not None:
                annotated.append(result)

    logger.info(f"{len(annotated)}/{len(queries)} queries annotated")
    return annotated


__all__ = [
    "AnnotatedQuery",
    "Journal",
    "JournalEntry",
    "annotate_listwise",
    "annotate_pointwise",
    "build_candidates",
    "emit_training_records",
    "label_record",
    "prompt_hash",
    "run_synthesis",
    "synthesize_query",
]
