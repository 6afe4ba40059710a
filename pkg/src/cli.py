"""
Command-line interface: ``grouprank <subcommand>``.

    rerank       groupwise reranking of a retriever run
    synthesize   LLM annotation + label fusion into training records
    evaluate     NDCG@k / Recall@k of a run against qrels
    fuse         weighted (or RRF) fusion of two runs
    reward       reward breakdown + GRPO advantages of recorded rollouts
    cost         LLM-call estimates of every reranking paradigm

Data goes to stdout (or ``--out``), logs go to stderr. The exit code is 0 only
when no ERROR was logged.
"""

from __future__ import annotations

import argparse
import asyncio
import json
import sys
from collections.abc import Sequence
from typing import Any

from loguru import logger

from src.agents.backends import OracleBackend, ScorerBackend, create_backend
from src.agents.orchestrator import rerank
from src.config import BackendConfig, RerankConfig, SynthConfig, load_flat_config
from src.errors import GroupRankError, RerankAborted
from src.evaluation import (
    audit_rewards,
    cost_report,
    evaluate,
    format_report_table,
    fuse_run_files,
)
from src.models import Qrels, RunList
from src.prompts import DEFAULT_GROUP_TEMPLATE, PromptTemplate
from src.rewards import RewardSettings
from src.synthesis import emit_training_records, run_synthesis
from src.trec_io import (
    read_corpus,
    read_qrels,
    read_queries,
    read_run_file,
    write_run_file,
)
from src.utils.logging_config import setup_logging

BACKENDS = ("openai", "agent", "oracle")


# ============================================================================
# HELPERS
# ============================================================================


def _config_values(args: argparse.Namespace) -> dict[str, str]:
    return load_flat_config(args.config) if args.config else {}


def _pick(args: argparse.Namespace, values: dict[str, str], name: str, cast, default):
    """Flag da CLI > arquivo de config > default."""
    flag = getattr(args, name, None)
    if flag is not None:
        return flag
    if name in values:
        return cast(values[name])
    return default


def _open_out(path: str):
    return sys.stdout if path == "-" else open(path, "w", encoding="utf-8")


def _close_out(fh) -> None:
    if fh is not sys.stdout:
        fh.close()


def _backend_config(
    args: argparse.Namespace, values: dict[str, str], prefix: str = ""
) -> BackendConfig:
    """Backend de um escopo (``pointwise_``, ``listwise_`` ou o padrão)."""
    return BackendConfig.from_sources(
        values,
        prefix=prefix,
        base_url=getattr(args, f"{prefix}base_url", None),
        model=getattr(args, f"{prefix}model", None),
        api_key_env=getattr(args, f"{prefix}api_key_env", None),
    )


def _make_backend(
    kind: str,
    config: BackendConfig,
    agent_model: str | None,
    qrels: Qrels | None,
    corpus,
    mode: str,
    query_id: str | None = None,
) -> ScorerBackend:
    if kind == "oracle":
        if qrels is None:
            raise GroupRankError("--backend oracle needs --qrels")
        return OracleBackend.from_qrels(qrels, corpus, query_id=query_id, mode=mode)
    return create_backend(kind, config, agent_model=agent_model)


async def _close(backend: ScorerBackend) -> None:
    aclose = getattr(backend, "aclose", None)
    if aclose is not None:
        await aclose()


# ============================================================================
# SUBCOMMANDS
# ============================================================================


async def _rerank(args: argparse.Namespace) -> None:
    values = _config_values(args)
    config = RerankConfig.from_sources(
        args.config,
        group_size=args.group_size,
        window=args.window,
        step=args.step,
        ensemble_n=args.ensemble_n,
        seed=args.seed,
        mode=args.mode,
        max_retries=args.max_retries,
        max_in_flight=args.max_in_flight,
        depth=args.depth,
        fuse_with_retriever=args.fuse_with_retriever,
        w_rerank=args.w_rerank,
        w_retrieve=args.w_retrieve,
        use_rewritten_query=args.use_rewritten_query,
        out_of_range=args.out_of_range,
    )
    template = (
        PromptTemplate.from_files(args.template, args.system_template)
        if args.template
        else DEFAULT_GROUP_TEMPLATE
    )
    runs = read_run_file(args.run)
    corpus = read_corpus(args.corpus)
    queries = read_queries(args.queries)
    qrels = read_qrels(args.qrels) if args.qrels else None
    backend_kind = _pick(args, values, "backend", str, "openai")
    backend_config = _backend_config(args, values)

    shared = None
    if backend_kind != "oracle":
        shared = _make_backend(
            backend_kind, backend_config, args.agent_model, qrels, corpus, "groupwise"
        )

    results: list[RunList] = []
    try:
        for run in runs:
            query = queries.get(run.query_id)
            if query is None:
                logger.error(f"❌ query {run.query_id} not found in {args.queries}")
                continue
            backend = shared or _make_backend(
                "oracle", backend_config, None, qrels, corpus, "groupwise", run.query_id
            )
            try:
                results.append(
                    await rerank(query, run.top(config.depth), backend, config, corpus, template)
                )
            except RerankAborted as exc:
                logger.error(f"❌ rerank aborted: {exc}")
                if exc.partial is not None:
                    logger.error(
                        f"partial result for query {run.query_id}: {len(exc.partial)} of "
                        f"{len(run.top(config.depth))} documents scored "
                        f"({exc.failed_groups} groups failed)"
                    )
                break
            except ValueError as exc:
                logger.error(f"❌ query {run.query_id}: {exc}")
    finally:
        if shared is not None:
            await _close(shared)

    count = write_run_file(args.out, results)
    logger.success(f"✅ {len(results)} queries reranked, {count} lines written")


async def _synthesize(args: argparse.Namespace) -> None:
    values = _config_values(args)
    config = SynthConfig.from_sources(
        args.config,
        top_k_in=args.top_k_in,
        top_k_out=args.top_k_out,
        w_sparse=args.w_sparse,
        w_dense=args.w_dense,
        alpha=args.alpha,
        max_retries=args.max_retries,
        max_in_flight=args.max_in_flight,
        use_rewritten_query=args.use_rewritten_query,
    )
    queries = read_queries(args.queries)
    corpus = read_corpus(args.corpus)
    bm25 = {run.query_id: run for run in read_run_file(args.bm25_run)}
    dense = {run.query_id: run for run in read_run_file(args.dense_run)}
    qrels = read_qrels(args.qrels) if args.qrels else None

    pointwise = _make_backend(
        _pick(args, values, "pointwise_backend", str, "openai"),
        _backend_config(args, values, "pointwise_"),
        args.pointwise_agent_model,
        qrels,
        corpus,
        "pointwise",
    )
    listwise = _make_backend(
        _pick(args, values, "listwise_backend", str, "openai"),
        _backend_config(args, values, "listwise_"),
        args.listwise_agent_model,
        qrels,
        corpus,
        "listwise",
    )
    try:
        annotated = await run_synthesis(
            queries, bm25, dense, corpus, pointwise, listwise, config, args.journal
        )
    finally:
        await _close(pointwise)
        await _close(listwise)
    emit_training_records(annotated, args.out, config.alpha)


def _evaluate(args: argparse.Namespace) -> None:
    values = _config_values(args)
    cutoffs = args.cutoffs
    if cutoffs is None:
        cutoffs = [int(k) for k in values.get("cutoffs", "10").replace(",", " ").split()]
    report = evaluate(read_run_file(args.run), read_qrels(args.qrels), cutoffs)
    if args.json:
        with open(args.json, "w", encoding="utf-8") as fh:
            fh.write(report.to_json() + "\n")
    if args.format == "json":
        print(report.to_json())
    else:
        print(format_report_table(report))


def _fuse(args: argparse.Namespace) -> None:
    values = _config_values(args)
    method = _pick(args, values, "method", str, "weighted")
    if method not in ("weighted", "rrf"):
        raise GroupRankError(f"unknown fusion method {method!r}")
    fused = fuse_run_files(
        read_run_file(args.run_a),
        read_run_file(args.run_b),
        method=method,
        w_a=_pick(args, values, "w_a", float, 0.6),
        w_b=_pick(args, values, "w_b", float, 0.4),
        rrf_k=_pick(args, values, "rrf_k", int, 60),
    )
    write_run_file(args.out, fused)
    logger.success(f"✅ {len(fused)} queries fused ({method})")


def _reward(args: argparse.Namespace) -> None:
    settings = RewardSettings.from_flat(
        _config_values(args),
        alpha=args.alpha,
        beta=args.beta,
        gamma=args.gamma,
        clamp_negative=args.clamp_negative,
        out_of_range=args.out_of_range,
    )
    audits = audit_rewards(args.rollouts, settings)
    out = _open_out(args.out)
    try:
        for audit in audits:
            row = {
                "line": audit.line,
                "group_id": audit.group_id,
                **audit.breakdown.model_dump(),
                "advantage": audit.advantage,
            }
            out.write(json.dumps(row) + "\n")
    finally:
        _close_out(out)
    if audits:
        mean_final = sum(a.breakdown.final for a in audits) / len(audits)
        logger.info(f"{len(audits)} rollouts scored, mean final reward {mean_final:.4f}")


def _cost(args: argparse.Namespace) -> None:
    values = _config_values(args)
    table = cost_report(
        n=_pick(args, values, "n", int, 100),
        c=_pick(args, values, "c", int, 20),
        w=_pick(args, values, "w", int, 20),
        s=_pick(args, values, "s", int, 10),
        k=_pick(args, values, "k", int, 10),
        r=_pick(args, values, "r", int, 1),
    )
    if args.format == "json":
        print(table.to_json(orient="index", indent=2))
    else:
        print(table.to_string())


# ============================================================================
# PARSER
# ============================================================================


def _add_backend_flags(parser: argparse.ArgumentParser, prefix: str = "") -> None:
    dest = prefix.replace("-", "_")
    parser.add_argument(f"--{prefix}backend", dest=f"{dest}backend", choices=BACKENDS)
    parser.add_argument(
        f"--{prefix}base-url", dest=f"{dest}base_url", help="OpenAI-compatible endpoint"
    )
    parser.add_argument(
        f"--{prefix}model", dest=f"{dest}model", help="model name sent to the backend"
    )
    parser.add_argument(
        f"--{prefix}api-key-env",
        dest=f"{dest}api_key_env",
        help="environment variable holding the API token (default OPENAI_API_KEY)",
    )
    parser.add_argument(
        f"--{prefix}agent-model",
        dest=f"{dest}agent_model",
        help="pydantic-ai model string for --backend agent (e.g. openai:gpt-4o)",
    )


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="flat 'key = value' config file")
    common.add_argument(
        "--log-level", default=None, help="console log level (default LOG_LEVEL or INFO)"
    )
    common.add_argument("--log-file", default=None, help="also log to this file (rotated)")

    parser = argparse.ArgumentParser(
        prog="grouprank", description="Groupwise LLM reranking toolkit."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    # rerank
    p = sub.add_parser("rerank", parents=[common], help="rerank a retriever run")
    p.add_argument("--run", required=True, help="retriever TREC run file")
    p.add_argument("--corpus", required=True, help="JSONL corpus (id, text)")
    p.add_argument("--queries", required=True, help="JSONL queries (id, text, rewritten_text?)")
    p.add_argument("--out", default="-", help="output run file ('-' = stdout)")
    p.add_argument("--qrels", help="qrels for --backend oracle")
    _add_backend_flags(p)
    p.add_argument("--mode", help="disjoint-groups | sliding-window")
    p.add_argument("-c", "--group-size", type=int)
    p.add_argument("-w", "--window", type=int)
    p.add_argument("-s", "--step", type=int)
    p.add_argument("--ensemble-n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--max-in-flight", type=int)
    p.add_argument("--depth", type=int, help="rerank only the top DEPTH candidates (default 100)")
    p.add_argument("--fuse-with-retriever", action="store_true", default=None)
    p.add_argument("--w-rerank", type=float)
    p.add_argument("--w-retrieve", type=float)
    p.add_argument("--use-rewritten-query", action="store_true", default=None)
    p.add_argument("--out-of-range", choices=("invalidate", "clamp"))
    p.add_argument("--template", help="groupwise user prompt file with {TOPK} {QUERY} {PASSAGES}")
    p.add_argument("--system-template", help="optional system prompt file")
    p.set_defaults(handler=_rerank)

    # synthesize
    p = sub.add_parser("synthesize", parents=[common], help="build training records")
    p.add_argument("--queries", required=True)
    p.add_argument("--corpus", required=True)
    p.add_argument("--bm25-run", required=True)
    p.add_argument("--dense-run", required=True)
    p.add_argument("--out", default="-", help="JSONL training records ('-' = stdout)")
    p.add_argument("--journal", help="append-only annotation journal (resume)")
    p.add_argument("--qrels", help="qrels for oracle backends")
    _add_backend_flags(p, "pointwise-")
    _add_backend_flags(p, "listwise-")
    p.add_argument("--alpha", type=float)
    p.add_argument("--top-k-in", type=int)
    p.add_argument("--top-k-out", type=int)
    p.add_argument("--w-sparse", type=float)
    p.add_argument("--w-dense", type=float)
    p.add_argument("--max-retries", type=int)
    p.add_argument("--max-in-flight", type=int)
    p.add_argument("--use-rewritten-query", action="store_true", default=None)
    p.set_defaults(handler=_synthesize)

    # evaluate
    p = sub.add_parser("evaluate", parents=[common], help="NDCG@k / Recall@k of a run")
    p.add_argument("--run", required=True)
    p.add_argument("--qrels", required=True)
    p.add_argument("--cutoffs", type=int, nargs="+", help="cutoffs k (default 10)")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.add_argument("--json", help="also write the JSON report to this path")
    p.set_defaults(handler=_evaluate)

    # fuse
    p = sub.add_parser("fuse", parents=[common], help="fuse two runs")
    p.add_argument("--run-a", required=True, help="e.g. the reranked run")
    p.add_argument("--run-b", required=True, help="e.g. the retriever run")
    p.add_argument("--w-a", type=float)
    p.add_argument("--w-b", type=float)
    p.add_argument("--method", choices=("weighted", "rrf"))
    p.add_argument("--rrf-k", type=int)
    p.add_argument("--out", default="-")
    p.set_defaults(handler=_fuse)

    # reward
    p = sub.add_parser("reward", parents=[common], help="score recorded rollouts")
    p.add_argument("--rollouts", required=True, help="JSONL or JSON array of {response, gt_scores, group_id?}")
    p.add_argument("--out", default="-")
    p.add_argument("--alpha", type=float)
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--clamp-negative", action="store_true", default=None)
    p.add_argument("--out-of-range", choices=("invalidate", "clamp"))
    p.set_defaults(handler=_reward)

    # cost
    p = sub.add_parser("cost", parents=[common], help="LLM calls per paradigm")
    p.add_argument("-n", type=int, help="documents to rerank (default 100)")
    p.add_argument("-c", type=int, help="documents per request (default 20)")
    p.add_argument("-w", type=int, help="window (default 20)")
    p.add_argument("-s", type=int, help="step (default 10)")
    p.add_argument("-k", type=int, help="top-k (default 10)")
    p.add_argument("-r", type=int, help="listwise passes (default 1)")
    p.add_argument("--format", choices=("table", "json"), default="table")
    p.set_defaults(handler=_cost)

    return parser


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    tally = setup_logging(args.log_level, args.log_file)

    try:
        result: Any = args.handler(args)
        if asyncio.iscoroutine(result):
            asyncio.run(result)
    except (GroupRankError, ValueError, OSError) as exc:
        logger.error(f"❌ {args.command}: {exc}")
    except KeyboardInterrupt:
        logger.error("interrupted")

    return 0 if tally.count == 0 else 1


if __name__ == "__main__":
    raise SystemExit(main())
