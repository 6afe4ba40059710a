"""
Evaluation harness.

- ``evaluate``: per-query and mean NDCG@k / Recall@k of runs against qrels
- ``cost_report``: LLM calls of every reranking paradigm for a given N, c, w, s, k, r
- ``fuse_run_files``: weighted (or RRF) fusion of two runs, query by query
- ``audit_rewards``: reward breakdown + GRPO advantage of recorded rollouts

Reports render as pandas text tables for people and as JSON for machines.
"""

from __future__ import annotations

import json
from collections.abc import Sequence
from pathlib import Path
from typing import Literal

import pandas as pd
from loguru import logger
from pydantic import BaseModel, ConfigDict, Field

from src.agents.orchestrator import PARADIGM_TABLE, estimate_llm_calls
from src.errors import EvaluationError, FormatError
from src.fusion import fuse_runs, reciprocal_rank_fusion
from src.metrics import ndcg_at_k, recall_at_k
from src.models import Qrels, RunList
from src.rewards import RewardBreakdown, RewardSettings, score_rollout_groups

SCHEMA_VERSION = "1.0"
DEFAULT_CUTOFFS = (10,)

FusionMethod = Literal["weighted", "rrf"]

# ============================================================================
# METRIC REPORT
# ============================================================================


class QueryMetrics(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str
    metrics: dict[str, float]


class EvaluationReport(BaseModel):
    """Metrics of one run file; ``mean`` is the macro-average over evaluated queries."""

    model_config = ConfigDict(frozen=True)

    schema_version: str = SCHEMA_VERSION
    run_tag: str | None = None
    cutoffs: list[int]
    per_query: list[QueryMetrics]
    mean: dict[str, float]
    excluded_queries: list[str] = Field(default_factory=list)

    def to_frame(self) -> pd.DataFrame:
        """One row per query plus a final ``mean`` row."""
        rows = [{"query_id": q.query_id, **q.metrics} for q in self.per_query]
        rows.append({"query_id": "mean", **self.mean})
        return pd.DataFrame(rows).set_index("query_id")

    def to_json(self) -> str:
        return self.model_dump_json(indent=2)


def evaluate(
    runs: Sequence[RunList], qrels: Qrels, cutoffs: Sequence[int] = DEFAULT_CUTOFFS
) -> EvaluationReport:
    """
    NDCG@k and Recall@k for each cutoff, per query and averaged.

    Run queries without judgments are excluded from the mean with a warning.

    Raises:
        EvaluationError: no run query has judgments
        ValueError: a cutoff < 1
    """
    if not cutoffs or any(k < 1 for k in cutoffs):
        raise ValueError(f"cutoffs must be positive integers, got {list(cutoffs)}")

    per_query: list[QueryMetrics] = []
    excluded: list[str] = []
    for run in runs:
        if run.query_id not in qrels:
            excluded.append(run.query_id)
            continue
        ranked = run.doc_ids()
        metrics: dict[str, float] = {}
        for k in cutoffs:
            for value in (
                ndcg_at_k(ranked, qrels, run.query_id, k),
                recall_at_k(ranked, qrels, run.query_id, k),
            ):
                metrics[value.label] = value.value
        per_query.append(QueryMetrics(query_id=run.query_id, metrics=metrics))

    if excluded:
        logger.warning(f"⚠️  {len(excluded)} run queries have no judgments and were excluded")
    if not per_query:
        raise EvaluationError("no query of the run appears in the qrels")

    labels = list(per_query[0].metrics)
    mean = {
        label: float(pd.Series([q.metrics[label] for q in per_query]).mean()) for label in labels
    }
    return EvaluationReport(
        run_tag=runs[0].tag if runs else None,
        cutoffs=list(cutoffs),
        per_query=per_query,
        mean=mean,
        excluded_queries=excluded,
    )


def format_report_table(report: EvaluationReport) -> str:
    """Aligned plain-text table (4 decimals)."""
    return report.to_frame().to_string(float_format=lambda v: f"{v:.4f}")


# ============================================================================
# COST TABLE
# ============================================================================


def cost_report(
    n: int = 100, c: int = 20, w: int = 20, s: int = 10, k: int = 10, r: int = 1
) -> pd.DataFrame:
    """Estimated LLM calls of every paradigm, with its Generate/Batching properties."""
    rows = []
    for paradigm, info in PARADIGM_TABLE.items():
        rows.append(
            {
                "method": paradigm.value,
                "generate": "yes" if info.generate else "no",
                "batching": "yes" if info.batching else "no",
                "complexity": info.complexity,
                "llm_calls": estimate_llm_calls(paradigm, n, c=c, w=w, s=s, k=k, r=r),
            }
        )
    return pd.DataFrame(rows).set_index("method")


# ============================================================================
# RUN FUSION
# ============================================================================


def fuse_run_files(
    runs_a: Sequence[RunList],
    runs_b: Sequence[RunList],
    method: FusionMethod = "weighted",
    w_a: float = 0.6,
    w_b: float = 0.4,
    rrf_k: int = 60,
) -> list[RunList]:
    """
    Fuse two runs query by query (``runs_a`` order first).

    A query present in only one run is passed through unchanged with a warning.
    """
    by_query_b = {run.query_id: run for run in runs_b}
    fused: list[RunList] = []
    for run_a in runs_a:
        run_b = by_query_b.pop(run_a.query_id, None)
        if run_b is None:
            logger.warning(f"⚠️  query {run_a.query_id} only in the first run; kept as is")
            fused.append(run_a)
        elif method == "rrf":
            fused.append(reciprocal_rank_fusion([run_a, run_b], k=rrf_k))
        else:
            fused.append(fuse_runs(run_a, run_b, w_a, w_b))
    for run_b in by_query_b.values():
        logger.warning(f"⚠️  query {run_b.query_id} only in the second run; kept as is")
        fused.append(run_b)
    return fused


# ============================================================================
# REWARD AUDIT
# ============================================================================


class RolloutAudit(BaseModel):
    """Reward breakdown of one recorded rollout."""

    model_config = ConfigDict(frozen=True)

    line: int
    group_id: str | None
    breakdown: RewardBreakdown
    advantage: float | None


def _rollout(obj, path: str | Path, line_no: int) -> tuple[int, str | None, str, list[float]]:
    if not isinstance(obj, dict):
        raise FormatError("expected a JSON object", path, line_no)
    response, gt = obj.get("response"), obj.get("gt_scores")
    if not isinstance(response, str):
        raise FormatError("'response' must be a string", path, line_no)
    if not isinstance(gt, list) or not gt:
        raise FormatError("'gt_scores' must be a non-empty list", path, line_no)
    group_id = obj.get("group_id")
    return line_no, None if group_id is None else str(group_id), response, gt


def read_rollouts(path: str | Path) -> list[tuple[int, str | None, str, list[float]]]:
    """
    Rollouts ``{"response": str, "gt_scores": [float], "group_id": str?}``.

    Either JSONL (one object per line) or a single top-level JSON array of
    objects. For an array the reported "line" is the 1-based item index.

    Raises:
        FormatError: invalid JSON or missing/mistyped fields
    """
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("["):
        try:
            items = json.loads(text)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", path, e.lineno) from None
        return [_rollout(obj, path, index) for index, obj in enumerate(items, start=1)]

    rollouts = []
    for line_no, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", path, line_no) from None
        rollouts.append(_rollout(obj, path, line_no))
    return rollouts


def audit_rewards(path: str | Path, settings: RewardSettings | None = None) -> list[RolloutAudit]:
    """Score every rollout of a rollouts file; rollouts sharing ``group_id`` get GRPO advantages."""
    rollouts = read_rollouts(path)
    try:
        scored = score_rollout_groups(((g, raw, gt) for _, g, raw, gt in rollouts), settings)
    except ValueError as e:
        raise FormatError(f"invalid rollout: {e}", path) from None
    return [
        RolloutAudit(line=line_no, group_id=group_id, breakdown=breakdown, advantage=advantage)
        for (line_no, group_id, _, _), (breakdown, advantage) in zip(rollouts, scored, strict=True)
    ]


def rewards_frame(audits: Sequence[RolloutAudit]) -> pd.DataFrame:
    """Table view of :func:`audit_rewards`."""
    return pd.DataFrame(
        [
            {
                "line": a.line,
                "group_id": a.group_id,
                **a.breakdown.model_dump(),
                "advantage": a.advantage,
            }
            for a in audits
        ]
    ).set_index("line")


__all__ = [
    "SCHEMA_VERSION",
    "EvaluationReport",
    "QueryMetrics",
    "RolloutAudit",
    "audit_rewards",
    "cost_report",
    "evaluate",
    "format_report_table",
    "fuse_run_files",
    "read_rollouts",
    "rewards_frame",
]
