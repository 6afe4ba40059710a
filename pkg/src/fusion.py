"""
Score normalization and weighted fusion.

Covers the hybrid retrieval score (BM25 + dense), annotator label fusion
(pointwise scores + -log listwise ranks), reranker/retriever run fusion,
reciprocal rank fusion and the score-to-distribution conversion used by the
distribution reward. ``norm`` is min-max per list everywhere.
"""

from __future__ import annotations

import math
from collections.abc import Mapping, Sequence

import numpy as np

from src.models import RunList

ScoreVector = np.ndarray
"""1-D float array aligned to a candidate list (finite values only)."""

ProbabilityVector = np.ndarray
"""1-D float array, non-negative, summing to 1."""


def _as_vector(values: Sequence[float] | np.ndarray, name: str = "scores") -> ScoreVector:
    v = np.asarray(values, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{name} must be one-dimensional")
    if v.size == 0:
        raise ValueError(f"{name} must not be empty")
    if not np.all(np.isfinite(v)):
        raise ValueError(f"{name} must contain only finite values")
    return v


def _check_permutation(ranks: Sequence[int]) -> None:
    if sorted(int(r) for r in ranks) != list(range(1, len(ranks) + 1)):
        raise ValueError(f"ranks must be a permutation of 1..{len(ranks)}")


# ============================================================================
# NORMALIZATION
# ============================================================================


def minmax_normalize(v: Sequence[float] | np.ndarray) -> ScoreVector:
    """Map ``v`` affinely onto [0, 1]; a constant vector maps to 0.5 everywhere."""
    v = _as_vector(v)
    lo, hi = float(v.min()), float(v.max())
    if hi == lo:
        return np.full(v.shape, 0.5)
    return (v - lo) / (hi - lo)


def minmax_map(scores: Mapping[str, float]) -> dict[str, float]:
    """:func:`minmax_normalize` over the values of an id-keyed map."""
    if not scores:
        return {}
    normalized = minmax_normalize(list(scores.values()))
    return dict(zip(scores, normalized.tolist(), strict=True))


# ============================================================================
# HYBRID RETRIEVAL SCORE
# ============================================================================


def hybrid_score(
    bm25: Sequence[float] | np.ndarray,
    dense: Sequence[float] | np.ndarray,
    w_sparse: float = 0.5,
    w_dense: float = 0.5,
) -> ScoreVector:
    """``w_sparse * norm(bm25) + w_dense * norm(dense)``, elementwise."""
    bm25 = _as_vector(bm25, "bm25")
    dense = _as_vector(dense, "dense")
    if bm25.shape != dense.shape:
        raise ValueError(f"length mismatch: {bm25.size} bm25 vs {dense.size} dense scores")
    if w_sparse < 0 or w_dense < 0:
        raise ValueError("fusion weights must be non-negative")
    return w_sparse * minmax_normalize(bm25) + w_dense * minmax_normalize(dense)


def fuse_score_maps(
    sources: Sequence[Mapping[str, float]], weights: Sequence[float]
) -> dict[str, float]:
    """
    Weighted sum of per-source min-max normalized scores over the union of ids.

    An id missing from a source contributes 0 for that source. Keys come out in
    order of first appearance across ``sources``.
    """
    if len(sources) != len(weights):
        raise ValueError("one weight per source is required")
    if any(w < 0 for w in weights):
        raise ValueError("fusion weights must be non-negative")
    normalized = [minmax_map(source) for source in sources]
    union = list(dict.fromkeys(doc_id for source in sources for doc_id in source))
    return {
        doc_id: math.fsum(
            w * norm.get(doc_id, 0.0) for w, norm in zip(weights, normalized, strict=True)
        )
        for doc_id in union
    }


# ============================================================================
# LABEL FUSION
# ============================================================================


def listwise_rank_to_score(rank: int, base: float = math.e) -> float:
    """``-log(rank)``; natural log unless ``base`` is given (irrelevant after min-max)."""
    if rank < 1:
        raise ValueError(f"rank must be >= 1, got {rank}")
    return -math.log(rank, base) if base != math.e else -math.log(rank)


def fuse_labels(
    pointwise: Sequence[float] | np.ndarray,
    listwise_ranks: Sequence[int],
    alpha: float = 0.5,
    log_base: float = math.e,
) -> ScoreVector:
    """
    Ground-truth supervision score of each candidate.

    ``alpha * norm(pointwise) + (1 - alpha) * norm(-log(rank))``.

    Raises:
        ValueError: length mismatch, ranks not a permutation of 1..n, alpha outside [0, 1]
    """
    pointwise = _as_vector(pointwise, "pointwise")
    if len(listwise_ranks) != pointwise.size:
        raise ValueError(
            f"length mismatch: {pointwise.size} pointwise scores vs {len(listwise_ranks)} ranks"
        )
    _check_permutation(listwise_ranks)
    if not 0.0 <= alpha <= 1.0:
        raise ValueError(f"alpha must lie in [0, 1], got {alpha}")
    listwise = np.array([listwise_rank_to_score(int(r), log_base) for r in listwise_ranks])
    return alpha * minmax_normalize(pointwise) + (1.0 - alpha) * minmax_normalize(listwise)


# ============================================================================
# RUN FUSION
# ============================================================================


def fuse_runs(
    reranker: RunList,
    retriever: RunList,
    w_rerank: float = 0.6,
    w_retrieve: float = 0.4,
    tag: str | None = None,
) -> RunList:
    """
    Weighted min-max fusion of a reranked run with its retriever run.

    Docs present in only one run take 0 for the missing normalized score.
    Ties keep the reranker order, then the retriever order.
    """
    if reranker.query_id != retriever.query_id:
        raise ValueError(
            f"query-id mismatch: {reranker.query_id!r} vs {retriever.query_id!r}"
        )
    fused = fuse_score_maps([reranker.score_map(), retriever.score_map()], [w_rerank, w_retrieve])
    rerank_pos, retrieve_pos = reranker.rank_map(), retriever.rank_map()
    big = len(rerank_pos) + len(retrieve_pos) + 1
    tiebreak = {d: (rerank_pos.get(d, big), retrieve_pos.get(d, big)) for d in fused}
    return RunList.from_scores(
        reranker.query_id,
        fused,
        tag=tag or f"{reranker.tag}+{retriever.tag}",
        tiebreak=tiebreak,
    )


def reciprocal_rank_fusion(runs: Sequence[RunList], k: int = 60, tag: str = "rrf") -> RunList:
    """Sum of ``1 / (k + rank)`` over the runs of one query."""
    if not runs:
        raise ValueError("nothing to fuse")
    query_ids = {run.query_id for run in runs}
    if len(query_ids) != 1:
        raise ValueError(f"query-id mismatch: {sorted(query_ids)}")
    scores: dict[str, float] = {}
    for run in runs:
        for entry in run.entries:
            scores[entry.doc_id] = scores.get(entry.doc_id, 0.0) + 1.0 / (k + entry.rank)
    return RunList.from_scores(runs[0].query_id, scores, tag=tag)


# ============================================================================
# SCORE DISTRIBUTIONS
# ============================================================================


def scores_to_distribution(
    v: Sequence[float] | np.ndarray, epsilon: float = 1e-6
) -> ProbabilityVector:
    """Sum-normalize with additive smoothing: ``(v_i + eps) / sum_j (v_j + eps)``."""
    v = _as_vector(v)
    if np.any(v < 0):
        raise ValueError("scores must be non-negative to form a distribution")
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    smoothed = v + epsilon
    return smoothed / smoothed.sum()
