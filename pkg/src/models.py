"""
Domain types shared by every stage of the reranking toolkit.
Queries, documents, candidate lists (TREC runs), relevance judgments,
groupwise score maps and synthesized training records.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Mapping
from typing import Any

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

# ============================================================================
# QUERIES / DOCUMENTS
# ============================================================================


class Query(BaseModel):
    """A query; ``rewritten_text`` holds an optional LLM-rewritten variant."""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    text: str = Field(min_length=1)
    rewritten_text: str | None = None

    def prompt_text(self, use_rewritten: bool = False) -> str:
        """Text sent to the scorer; falls back to ``text`` when no rewrite exists."""
        if use_rewritten and self.rewritten_text:
            return self.rewritten_text
        return self.text


class Document(BaseModel):
    """A passage of the corpus."""

    model_config = ConfigDict(frozen=True)

    id: str = Field(min_length=1)
    text: str


class Candidate(BaseModel):
    """A document retrieved for one query, with its raw per-source scores."""

    model_config = ConfigDict(frozen=True)

    doc_id: str = Field(min_length=1)
    source_scores: dict[str, float] = Field(min_length=1)
    fused_score: float | None = Field(default=None, ge=0.0, le=1.0)


# ============================================================================
# RUN LISTS (TREC run semantics)
# ============================================================================


class RunEntry(BaseModel):
    """One ``(doc_id, rank, score)`` line of a run."""

    model_config = ConfigDict(frozen=True)

    doc_id: str = Field(min_length=1)
    rank: int = Field(ge=1)
    score: float

    @field_validator("score")
    @classmethod
    def finite_score(cls, v: float) -> float:
        if not math.isfinite(v):
            raise ValueError(f"score must be finite, got {v}")
        return v


class RunList(BaseModel):
    """
    Ordered scored document list for one query.

    Invariants: ranks are 1..n contiguous, scores are non-increasing along
    the ranks and doc ids are unique.
    """

    model_config = ConfigDict(frozen=True)

    query_id: str = Field(min_length=1)
    entries: tuple[RunEntry, ...] = ()
    tag: str = "run"

    @model_validator(mode="after")
    def check_order(self) -> RunList:
        seen: set[str] = set()
        for position, entry in enumerate(self.entries, start=1):
            if entry.rank != position:
                raise ValueError(f"ranks must be contiguous from 1, got {entry.rank} at {position}")
            if entry.doc_id in seen:
                raise ValueError(f"duplicate doc_id {entry.doc_id!r} in query {self.query_id!r}")
            seen.add(entry.doc_id)
            if position > 1 and entry.score > self.entries[position - 2].score:
                raise ValueError("entries must be sorted by score descending")
        return self

    @classmethod
    def from_scores(
        cls,
        query_id: str,
        scores: Mapping[str, float] | Iterable[tuple[str, float]],
        tag: str = "run",
        tiebreak: Mapping[str, Any] | None = None,
    ) -> RunList:
        """
        Build a run by sorting scores descending and assigning ranks 1..n.

        Ties are broken by ``tiebreak[doc_id]`` ascending when given, then by doc_id.
        """
        pairs = list(scores.items()) if isinstance(scores, Mapping) else list(scores)
        if tiebreak is None:
            ordered = sorted(pairs, key=lambda p: (-p[1], p[0]))
        else:
            ordered = sorted(pairs, key=lambda p: (-p[1], tiebreak[p[0]], p[0]))
        entries = tuple(
            RunEntry(doc_id=doc_id, rank=rank, score=float(score))
            for rank, (doc_id, score) in enumerate(ordered, start=1)
        )
        return cls(query_id=query_id, entries=entries, tag=tag)

    def __len__(self) -> int:
        return len(self.entries)

    def doc_ids(self) -> list[str]:
        return [e.doc_id for e in self.entries]

    def score_map(self) -> dict[str, float]:
        return {e.doc_id: e.score for e in self.entries}

    def rank_map(self) -> dict[str, int]:
        return {e.doc_id: e.rank for e in self.entries}

    def top(self, k: int | None) -> RunList:
        """First ``k`` entries (the whole run when ``k`` is None)."""
        if k is None or k >= len(self.entries):
            return self
        return self.model_copy(update={"entries": self.entries[:k]})


# ============================================================================
# QRELS
# ============================================================================


class Qrels(BaseModel):
    """Graded relevance judgments, ``judgments[query_id][doc_id] = grade``."""

    model_config = ConfigDict(frozen=True)

    judgments: dict[str, dict[str, int]] = Field(default_factory=dict)

    @field_validator("judgments")
    @classmethod
    def non_negative(cls, v: dict[str, dict[str, int]]) -> dict[str, dict[str, int]]:
        for qid, docs in v.items():
            for doc_id, grade in docs.items():
                if grade < 0:
                    raise ValueError(f"negative grade {grade} for ({qid}, {doc_id})")
        return v

    def grade(self, query_id: str, doc_id: str) -> int:
        """Absent pairs have grade 0."""
        return self.judgments.get(query_id, {}).get(doc_id, 0)

    def for_query(self, query_id: str) -> dict[str, int]:
        return self.judgments.get(query_id, {})

    def relevant(self, query_id: str) -> set[str]:
        return {d for d, g in self.for_query(query_id).items() if g > 0}

    def query_ids(self) -> list[str]:
        return list(self.judgments)

    def __contains__(self, query_id: object) -> bool:
        return query_id in self.judgments

    def __len__(self) -> int:
        return sum(len(docs) for docs in self.judgments.values())


# ============================================================================
# GROUPWISE SCORES
# ============================================================================


class GroupScoreMap(BaseModel):
    """Parsed 0-10 integer scores of one group, keyed by 1-based in-group position."""

    model_config = ConfigDict(frozen=True)

    scores: dict[int, int]
    reason: str = ""

    @field_validator("scores")
    @classmethod
    def complete_and_bounded(cls, v: dict[int, int]) -> dict[int, int]:
        if not v:
            raise ValueError("score map is empty")
        if set(v) != set(range(1, len(v) + 1)):
            raise ValueError(f"positions must be exactly 1..{len(v)}, got {sorted(v)}")
        for position, score in v.items():
            if not 0 <= score <= 10:
                raise ValueError(f"score {score} at position {position} outside [0, 10]")
        return v

    def __len__(self) -> int:
        return len(self.scores)

    def as_list(self) -> list[int]:
        """Scores in position order 1..n."""
        return [self.scores[i] for i in range(1, len(self.scores) + 1)]

    def ranking(self) -> list[int]:
        """Positions ordered by score descending, ties by position ascending."""
        return sorted(self.scores, key=lambda pos: (-self.scores[pos], pos))


# ============================================================================
# TRAINING RECORDS
# ============================================================================


class TrainingCandidate(BaseModel):
    """A document with both annotator labels and the fused supervision score."""

    model_config = ConfigDict(frozen=True)

    doc: Document
    pointwise_score: float = Field(ge=0.0, le=10.0)
    listwise_rank: int = Field(ge=1)
    gt_score: float = Field(ge=0.0, le=1.0)


class TrainingRecord(BaseModel):
    """One query with its annotated candidate list (50 documents by default)."""

    model_config = ConfigDict(frozen=True)

    query: Query
    candidates: tuple[TrainingCandidate, ...] = Field(min_length=1)

    @model_validator(mode="after")
    def ranks_are_permutation(self) -> TrainingRecord:
        ranks = sorted(c.listwise_rank for c in self.candidates)
        if ranks != list(range(1, len(self.candidates) + 1)):
            raise ValueError("listwise ranks must be a permutation of 1..n")
        return self

    def gt_scores(self) -> list[float]:
        return [c.gt_score for c in self.candidates]


# ============================================================================
# RESPONSE FORMAT VERDICT
# ============================================================================


class FormatVerdict(BaseModel):
    """Whether the reason/answer tags exist and whether the answer is a valid score map."""

    model_config = ConfigDict(frozen=True)

    output_format_ok: bool
    answer_format_ok: bool

    @model_validator(mode="after")
    def answer_implies_output(self) -> FormatVerdict:
        if self.answer_format_ok and not self.output_format_ok:
            raise ValueError("answer_format_ok requires output_format_ok")
        return self
