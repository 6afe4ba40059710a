"""
Ranking-quality metrics shared by the reward stack and the evaluation harness.

NDCG uses the trec_eval convention (gain ``2^grade - 1``, discount ``log2(i + 1)``);
RBO is the extrapolated variant, so two identical finite lists score exactly 1.
"""

from __future__ import annotations

from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field

from src.models import Qrels


class MetricValue(BaseModel):
    """A metric result, e.g. ``MetricValue(name="ndcg", value=0.73, cutoff=10)``."""

    model_config = ConfigDict(frozen=True)

    name: str
    value: float = Field(ge=0.0, le=1.0)
    cutoff: int | None = Field(default=None, ge=1)

    @property
    def label(self) -> str:
        return f"{self.name}@{self.cutoff}" if self.cutoff else self.name


def _check_k(k: int) -> None:
    if k < 1:
        raise ValueError(f"cutoff k must be >= 1, got {k}")


def _unique(ids: Sequence[str]) -> list[str]:
    # a doc listed twice only counts at its first position
    return list(dict.fromkeys(ids))


# ============================================================================
# DCG / NDCG
# ============================================================================


def dcg_at_k(grades_in_rank_order: Sequence[float], k: int) -> float:
    """Sum of ``(2^g_i - 1) / log2(i + 1)`` over the first ``k`` positions."""
    _check_k(k)
    grades = np.asarray(grades_in_rank_order[:k], dtype=float)
    if grades.size == 0:
        return 0.0
    if np.any(grades < 0):
        raise ValueError("grades must be non-negative")
    discounts = np.log2(np.arange(2, grades.size + 2))
    return float(np.sum((np.power(2.0, grades) - 1.0) / discounts))


def ndcg_from_grades(
    grades_in_rank_order: Sequence[float], all_grades: Sequence[float], k: int
) -> float:
    """NDCG@k given the ranking's grades and the grades of every judged item."""
    ideal = dcg_at_k(sorted(all_grades, reverse=True), k)
    if ideal <= 0.0:
        return 0.0
    return min(1.0, dcg_at_k(grades_in_rank_order, k) / ideal)


def ndcg_at_k(ranked_doc_ids: Sequence[str], qrels: Qrels, query_id: str, k: int) -> MetricValue:
    """NDCG@k of a ranking against the judged documents of ``query_id``."""
    _check_k(k)
    judged = qrels.for_query(query_id)
    grades = [judged.get(doc_id, 0) for doc_id in _unique(ranked_doc_ids)]
    value = ndcg_from_grades(grades, list(judged.values()), k)
    return MetricValue(name="ndcg", value=value, cutoff=k)


# ============================================================================
# RECALL
# ============================================================================


def recall_at_k(ranked_doc_ids: Sequence[str], qrels: Qrels, query_id: str, k: int) -> MetricValue:
    """Fraction of relevant (grade > 0) judged docs found in the top ``k``; 0 without positives."""
    _check_k(k)
    relevant = qrels.relevant(query_id)
    if not relevant:
        return MetricValue(name="recall", value=0.0, cutoff=k)
    found = relevant.intersection(_unique(ranked_doc_ids)[:k])
    return MetricValue(name="recall", value=len(found) / len(relevant), cutoff=k)


# ============================================================================
# RANK-BIASED OVERLAP
# ============================================================================


def rbo(list_a: Sequence[str], list_b: Sequence[str], persistence: float = 0.9) -> float:
    """
    Extrapolated rank-biased overlap of two rankings.

    ``(X_n / n) p^n + ((1 - p) / p) * sum_{d=1..n} (X_d / d) p^d`` with ``X_d``
    the overlap of the two depth-``d`` prefixes and ``n = min(|a|, |b|)``.

    Raises:
        ValueError: empty list or ``persistence`` outside (0, 1)
    """
    if not list_a or not list_b:
        raise ValueError("rbo needs two non-empty lists")
    if not 0.0 < persistence < 1.0:
        raise ValueError(f"persistence must lie in (0, 1), got {persistence}")

    p = persistence
    n = min(len(list_a), len(list_b))
    seen_a: set[str] = set()
    seen_b: set[str] = set()
    overlap = 0
    agreement = np.empty(n)
    for d in range(n):
        a, b = list_a[d], list_b[d]
        if a not in seen_a:
            seen_a.add(a)
            overlap += a in seen_b
        if b not in seen_b:
            seen_b.add(b)
            overlap += b in seen_a
        agreement[d] = overlap / (d + 1)

    weights = np.power(p, np.arange(1, n + 1))
    value = agreement[-1] * p**n + (1.0 - p) / p * float(np.sum(agreement * weights))
    return float(np.clip(value, 0.0, 1.0))
