"""
Heterogeneous reward stack for groupwise reranker RL training.

R_H = alpha * R_recall + beta * R_rank + gamma * R_dist, gated by the output
and answer formats of the raw response, plus GRPO group-advantage
normalization. Everything here is plain arithmetic over a parsed response and
the fused ground-truth scores of the group.
"""

from __future__ import annotations

import math
from collections.abc import Iterable, Sequence
from typing import Literal

import numpy as np
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field, model_validator

from src.fusion import scores_to_distribution
from src.metrics import ndcg_from_grades, rbo
from src.models import FormatVerdict, GroupScoreMap
from src.utils.parsers import parse_response

# ============================================================================
# MODELS
# ============================================================================


class RewardWeights(BaseModel):
    """Component weights of R_H and the NDCG/RBO mix inside R_rank."""

    model_config = ConfigDict(frozen=True, extra="ignore")

    alpha: float = Field(default=0.2, ge=0, description="recall weight")
    beta: float = Field(default=0.5, ge=0, description="ranking weight")
    gamma: float = Field(default=0.1, ge=0, description="distribution weight")
    ndcg_vs_rbo: float = Field(default=0.5, ge=0, le=1)


class RewardSettings(BaseModel):
    """Everything a rollout needs besides the response and the ground truth."""

    model_config = ConfigDict(frozen=True, extra="ignore")

    weights: RewardWeights = Field(default_factory=RewardWeights)
    ndcg_k: int = Field(default=10, ge=1)
    recall_k: int = Field(default=10, ge=1)
    rbo_persistence: float = Field(default=0.9, gt=0, lt=1)
    relevance_threshold: float = 0.5
    epsilon: float = Field(default=1e-6, gt=0)
    clamp_negative: bool = False
    out_of_range: Literal["invalidate", "clamp"] = "invalidate"

    @classmethod
    def from_flat(cls, values: dict[str, str] | None = None, **overrides) -> RewardSettings:
        """Flat ``key = value`` config: weight keys sit next to the other settings."""
        merged = {**(values or {}), **{k: v for k, v in overrides.items() if v is not None}}
        return cls.model_validate({**merged, "weights": RewardWeights.model_validate(merged)})


class RewardBreakdown(BaseModel):
    """All reward components of one rollout."""

    model_config = ConfigDict(frozen=True)

    output_format_ok: bool
    answer_format_ok: bool
    r_recall: float = Field(ge=0, le=1)
    r_rank: float = Field(ge=0, le=1)
    r_dist: float = Field(le=1)
    r_h: float
    final: float = Field(ge=-1)

    @model_validator(mode="after")
    def final_is_gated(self) -> RewardBreakdown:
        if self.final not in (self.r_h, 0.0, -1.0):
            raise ValueError(f"final reward {self.final} is not one of r_h, 0, -1")
        return self


def _gt_vector(gt_scores: Sequence[float]) -> np.ndarray:
    gt = np.asarray(gt_scores, dtype=float)
    if gt.ndim != 1 or gt.size == 0:
        raise ValueError("gt_scores must be a non-empty vector")
    if np.any(gt < 0) or not np.all(np.isfinite(gt)):
        raise ValueError("gt_scores must be finite and non-negative")
    return gt


def _check_complete(predicted: GroupScoreMap, n: int) -> None:
    if len(predicted) != n:
        raise ValueError(f"incomplete score map: {len(predicted)} positions for {n} documents")


def gt_order(gt_scores: Sequence[float]) -> list[int]:
    """1-based positions by ground-truth score descending, ties by position."""
    return sorted(range(1, len(gt_scores) + 1), key=lambda pos: (-gt_scores[pos - 1], pos))


# ============================================================================
# COMPONENTS
# ============================================================================


def recall_reward(
    predicted_order: Sequence[int],
    gt_scores: Sequence[float],
    k: int = 10,
    relevance_threshold: float = 0.5,
) -> float:
    """Recall@k where items with ``gt >= relevance_threshold`` count as relevant."""
    gt = _gt_vector(gt_scores)
    if sorted(predicted_order) != list(range(1, gt.size + 1)):
        raise ValueError(f"predicted order must be a permutation of 1..{gt.size}")
    if k < 1:
        raise ValueError(f"k must be >= 1, got {k}")
    relevant = {pos for pos in range(1, gt.size + 1) if gt[pos - 1] >= relevance_threshold}
    if not relevant:
        return 0.0
    return len(relevant.intersection(predicted_order[:k])) / len(relevant)


def ranking_reward(
    predicted_scores: GroupScoreMap,
    gt_scores: Sequence[float],
    weights: RewardWeights | None = None,
    k: int = 10,
    persistence: float = 0.9,
) -> float:
    """``m * NDCG@k + (1 - m) * RBO(predicted order, gt order)`` with ``m = ndcg_vs_rbo``."""
    weights = weights or RewardWeights()
    gt = _gt_vector(gt_scores)
    _check_complete(predicted_scores, gt.size)
    order = predicted_scores.ranking()
    ndcg = ndcg_from_grades([gt[pos - 1] for pos in order], gt.tolist(), k)
    overlap = rbo(order, gt_order(gt.tolist()), persistence)
    m = weights.ndcg_vs_rbo
    return float(min(1.0, m * ndcg + (1.0 - m) * overlap))


def distribution_reward(
    predicted_scores: GroupScoreMap, gt_scores: Sequence[float], epsilon: float = 1e-6
) -> float:
    """
    ``1 - KL(P_gt || P_pred)`` over sum-normalized score distributions.

    Fused gt scores live in [0, 1] and are multiplied by 10 first so both
    sides share the 0-10 scale before smoothing.
    """
    gt = _gt_vector(gt_scores)
    _check_complete(predicted_scores, gt.size)
    p_gt = scores_to_distribution(gt * 10.0, epsilon)
    p_pred = scores_to_distribution(predicted_scores.as_list(), epsilon)
    kl = float(np.sum(p_gt * np.log(p_gt / p_pred)))
    return min(1.0, 1.0 - kl)


def heterogeneous_reward(
    r_recall: float,
    r_rank: float,
    r_dist: float,
    weights: RewardWeights | None = None,
    clamp_negative: bool = False,
) -> float:
    """``alpha * r_recall + beta * r_rank + gamma * r_dist`` (exactly summed)."""
    weights = weights or RewardWeights()
    total = math.fsum(
        (weights.alpha * r_recall, weights.beta * r_rank, weights.gamma * r_dist)
    )
    return max(0.0, total) if clamp_negative else total


def final_reward(verdict: FormatVerdict, r_h: float) -> float:
    """
    R_H when both formats are good, 0 when only the output format is, -1 otherwise.

    R_H is floored at -1 on the good branch, since R_dist has no lower bound.
    """
    if verdict.output_format_ok and verdict.answer_format_ok:
        return max(-1.0, r_h)
    if verdict.output_format_ok:
        return 0.0
    return -1.0


# ============================================================================
# GRPO
# ============================================================================


def grpo_advantages(rewards: Sequence[float]) -> list[float]:
    """
    Group-relative advantages ``(r_i - mean) / std`` with population std.

    A zero-variance group (std < 1e-9) gets all-zero advantages.
    """
    r = np.asarray(rewards, dtype=float)
    if r.size == 0:
        raise ValueError("a GRPO group needs at least one reward")
    std = float(r.std())
    if std < 1e-9:
        return [0.0] * r.size
    return ((r - r.mean()) / std).tolist()


# ============================================================================
# ROLLOUT SCORING
# ============================================================================


def score_rollout(
    raw: str, gt_scores: Sequence[float], settings: RewardSettings | None = None
) -> RewardBreakdown:
    """Parse one raw model response and compute every reward component."""
    settings = settings or RewardSettings()
    gt = _gt_vector(gt_scores).tolist()
    parsed = parse_response(raw, len(gt), out_of_range=settings.out_of_range)
    verdict = parsed.verdict

    r_recall = r_rank = r_dist = 0.0
    if parsed.score_map is not None:
        r_recall = recall_reward(
            parsed.score_map.ranking(), gt, settings.recall_k, settings.relevance_threshold
        )
        r_rank = ranking_reward(
            parsed.score_map, gt, settings.weights, settings.ndcg_k, settings.rbo_persistence
        )
        r_dist = distribution_reward(parsed.score_map, gt, settings.epsilon)
    r_h = heterogeneous_reward(r_recall, r_rank, r_dist, settings.weights, settings.clamp_negative)
    final = final_reward(verdict, r_h)

    return RewardBreakdown(
        output_format_ok=verdict.output_format_ok,
        answer_format_ok=verdict.answer_format_ok,
        r_recall=r_recall,
        r_rank=r_rank,
        r_dist=r_dist,
        r_h=r_h,
        final=final,
    )


def score_rollout_groups(
    rollouts: Iterable[tuple[str | None, str, Sequence[float]]],
    settings: RewardSettings | None = None,
) -> list[tuple[RewardBreakdown, float | None]]:
    """
    Score ``(group_id, raw, gt_scores)`` rollouts and attach GRPO advantages.

    Rollouts sharing a ``group_id`` are normalized together; rollouts without
    one get no advantage.
    """
    items = list(rollouts)
    breakdowns = [score_rollout(raw, gt, settings) for _, raw, gt in items]

    groups: dict[str, list[int]] = {}
    for index, (group_id, _, _) in enumerate(items):
        if group_id is not None:
            groups.setdefault(group_id, []).append(index)

    advantages: list[float | None] = [None] * len(items)
    for group_id, members in groups.items():
        values = grpo_advantages([breakdowns[i].final for i in members])
        for i, value in zip(members, values, strict=True):
            advantages[i] = value
        logger.debug(f"GRPO group {group_id}: {len(members)} rollouts")
    return list(zip(breakdowns, advantages, strict=True))
