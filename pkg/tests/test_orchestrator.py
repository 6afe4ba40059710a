"""
Unit Tests for the Groupwise Orchestrator
Cost model, partitioning, ensemble ordering and end-to-end reranking
"""

import io
import math
import re

import pytest

from src.agents.backends import OracleBackend
from src.agents.orchestrator import (
    PARADIGM_TABLE,
    Paradigm,
    ScoreAccumulator,
    estimate_llm_calls,
    partition_disjoint,
    partition_sliding,
    rerank,
    round_order,
    run_tag,
)
from src.config import RerankConfig
from src.errors import RerankAborted
from src.metrics import ndcg_at_k
from src.models import Document, Qrels, Query, RunList
from src.trec_io import write_run_file
from src.utils.parsers import format_answer

# ============================================================================
# FIXTURES
# ============================================================================


class ScriptedBackend:
    """Backend de teste: responde com uma função do prompt e conta as chamadas."""

    def __init__(self, respond, identity="scripted"):
        self.respond = respond
        self.identity = identity
        self.prompts = []

    async def score_group(self, prompt):
        self.prompts.append(prompt)
        return self.respond(prompt)


def _world(n):
    corpus = {f"d{i}": Document(id=f"d{i}", text=f"passage {i}") for i in range(1, n + 1)}
    run = RunList.from_scores("q", {f"d{i}": float(n - i) for i in range(1, n + 1)}, tag="bm25")
    return Query(id="q", text="query"), run, corpus


PASSAGE = re.compile(r"^\[\d+\] ", re.MULTILINE)


def _zeros(prompt):
    return format_answer([0] * len(PASSAGE.findall(prompt)))


# ============================================================================
# TEST: Cost model
# ============================================================================


@pytest.mark.parametrize(
    "method, n, kwargs, expected",
    [
        ("groupwise", 100, {"c": 20}, 5),
        ("groupwise", 21, {"c": 20}, 2),
        ("pairwise.allpair", 10, {}, 90),
        ("pairwise.allpair", 100, {}, 9900),
        ("pointwise.qlm", 1, {}, 1),
        ("pointwise.yes_no", 100, {}, 100),
        ("listwise.generation", 100, {"w": 20, "s": 10, "r": 2}, 20),
        ("pairwise.bubblesort", 100, {"k": 10}, 1000),
        ("pairwise.heapsort", 8, {"k": 3}, 9),
        ("setwise.bubblesort", 100, {"k": 10, "c": 3}, 500),
        ("setwise.heapsort", 100, {"k": 10, "c": 10}, 20),
    ],
)
def test_estimate_llm_calls(method, n, kwargs, expected):
    assert estimate_llm_calls(method, n, **kwargs) == expected


def test_groupwise_is_cheapest_batched_paradigm():
    """Groupwise tem o menor custo entre os paradigmas que fazem batching"""
    batched = [p for p, info in PARADIGM_TABLE.items() if info.batching]
    costs = {p: estimate_llm_calls(p, 100) for p in batched}
    assert min(costs, key=costs.get) == Paradigm.GROUPWISE


def test_estimate_rejects_bad_input():
    with pytest.raises(ValueError):
        estimate_llm_calls("groupwise.v2", 10)
    with pytest.raises(ValueError, match="c >= 2"):
        estimate_llm_calls("setwise.heapsort", 10, c=1)
    with pytest.raises(ValueError, match="exceed"):
        estimate_llm_calls("listwise.generation", 10, w=5, s=10)
    with pytest.raises(ValueError):
        estimate_llm_calls("groupwise", 0)


def test_paradigm_table_flags():
    assert len(PARADIGM_TABLE) == 10
    assert PARADIGM_TABLE[Paradigm.GROUPWISE].generate
    assert PARADIGM_TABLE[Paradigm.GROUPWISE].batching
    assert not PARADIGM_TABLE[Paradigm.LISTWISE_GENERATION].batching
    assert not PARADIGM_TABLE[Paradigm.POINTWISE_QLM].generate


# ============================================================================
# TEST: Partitioning
# ============================================================================


def test_disjoint_groups():
    ids = list(range(1, 101))
    groups = partition_disjoint(ids, 20)

    assert len(groups) == 5
    assert [len(g) for g in partition_disjoint(list(range(21)), 20)] == [20, 1]
    assert [x for g in groups for x in g] == ids


def test_sliding_windows_cover_everything():
    windows = partition_sliding(list(range(1, 101)), 20, 10)
    assert len(windows) == 9
    assert windows[-1] == list(range(81, 101))

    tail = partition_sliding(list(range(1, 26)), 20, 10)
    # final window aligned to the tail
    assert tail == [list(range(1, 21)), list(range(6, 26))]


def test_sliding_small_inputs():
    assert partition_sliding(["a", "b"], 20, 10) == [["a", "b"]]
    assert partition_sliding([], 20, 10) == []
    with pytest.raises(ValueError):
        partition_sliding(["a"], 5, 10)


def test_round_order():
    ids = [f"d{i}" for i in range(30)]

    assert round_order(ids, seed=7, round_no=1, ensemble_n=1) == ids
    first = round_order(ids, seed=7, round_no=1, ensemble_n=3)
    assert first == round_order(ids, seed=7, round_no=1, ensemble_n=3)
    assert sorted(first) == sorted(ids)
    assert first != round_order(ids, seed=7, round_no=2, ensemble_n=3)


def test_score_accumulator():
    acc = ScoreAccumulator()
    acc.add_group(["a", "b"], [4, 8])
    acc.add_group(["b", "c"], [2, 5])

    assert acc.mean("b") == 5.0
    assert acc.count("b") == 2
    assert acc.means() == {"a": 4.0, "b": 5.0, "c": 5.0}
    assert "z" not in acc and len(acc) == 3
    with pytest.raises(ValueError):
        acc.add_group(["a"], [1, 2])


# ============================================================================
# TEST: Config
# ============================================================================


def test_run_tag():
    config = RerankConfig(ensemble_n=3, seed=42, mode="sliding-window")
    assert run_tag(config) == "grouprank-sliding-n3-seed42"


# ============================================================================
# TEST: Rerank
# ============================================================================


@pytest.mark.asyncio
async def test_oracle_rerank_is_ideal(tiny_query, tiny_run, tiny_corpus, tiny_qrels):
    """Com o oracle, o rerank recupera a ordem ideal dos qrels"""
    oracle = OracleBackend.from_qrels(tiny_qrels, tiny_corpus, "q1")
    config = RerankConfig(group_size=4)

    run = await rerank(tiny_query, tiny_run, oracle, config, tiny_corpus)

    assert ndcg_at_k(run.doc_ids(), tiny_qrels, "q1", 10).value == pytest.approx(1.0)
    # zero-scored docs keep retrieval order
    assert run.doc_ids() == ["d1", "d4", "d2", "d6", "d3", "d5"]
    assert run.tag == "grouprank-disjoint-n1-seed0"
    assert oracle.calls == 2


@pytest.mark.asyncio
@pytest.mark.parametrize("ensemble_n", [1, 3])
async def test_call_count(ensemble_n):
    query, run, corpus = _world(45)
    backend = ScriptedBackend(_zeros)

    await rerank(query, run, backend, RerankConfig(group_size=20, ensemble_n=ensemble_n), corpus)

    assert len(backend.prompts) == math.ceil(45 / 20) * ensemble_n


@pytest.mark.asyncio
async def test_sliding_mode_every_candidate_once():
    query, run, corpus = _world(25)
    backend = ScriptedBackend(_zeros)
    config = RerankConfig(mode="sliding", window=20, step=10)

    result = await rerank(query, run, backend, config, corpus)

    assert len(backend.prompts) == 2
    assert sorted(result.doc_ids()) == sorted(run.doc_ids())
    assert result.doc_ids() == run.doc_ids()


@pytest.mark.asyncio
async def test_ensemble_is_deterministic(tiny_query, tiny_run, tiny_corpus, tiny_qrels):
    config = RerankConfig(group_size=2, ensemble_n=3, seed=11)

    first = await rerank(
        tiny_query, tiny_run, OracleBackend.from_qrels(tiny_qrels, tiny_corpus), config, tiny_corpus
    )
    second = await rerank(
        tiny_query, tiny_run, OracleBackend.from_qrels(tiny_qrels, tiny_corpus), config, tiny_corpus
    )

    assert first == second
    assert first.doc_ids()[:3] == ["d1", "d4", "d2"]


@pytest.mark.asyncio
async def test_unparseable_group_scores_zero(tiny_query, tiny_run, tiny_corpus, log_records):
    backend = ScriptedBackend(lambda prompt: "I refuse to answer in the format.")
    config = RerankConfig(group_size=3, max_retries=1)

    run = await rerank(tiny_query, tiny_run, backend, config, tiny_corpus)

    assert set(run.score_map().values()) == {0.0}
    assert run.doc_ids() == tiny_run.doc_ids()
    # 2 groups x (1 + 1 retry)
    assert len(backend.prompts) == 4
    assert any(r["level"].name == "WARNING" for r in log_records)


@pytest.mark.asyncio
async def test_retry_recovers(tiny_query, tiny_run, tiny_corpus):
    answers = iter(["garbage", format_answer([5, 0, 0, 0, 0, 0])])
    backend = ScriptedBackend(lambda prompt: next(answers))

    run = await rerank(tiny_query, tiny_run, backend, RerankConfig(group_size=6), tiny_corpus)

    # d6 was first in the group
    assert run.doc_ids()[0] == "d6"
    assert run.score_map()["d6"] == 5.0


@pytest.mark.asyncio
async def test_backend_failure_aborts_with_partial(tiny_query, tiny_run, tiny_corpus):
    def respond(prompt):
        if "Pottery" in prompt:
            raise RuntimeError("connection reset")
        return format_answer([1] * len(PASSAGE.findall(prompt)))

    backend = ScriptedBackend(respond)
    config = RerankConfig(group_size=3)

    with pytest.raises(RerankAborted) as excinfo:
        await rerank(tiny_query, tiny_run, backend, config, tiny_corpus)

    # d3 (Pottery) is in the first group: d6, d3, d5
    assert excinfo.value.failed_groups == 1
    assert sorted(excinfo.value.partial.doc_ids()) == ["d1", "d2", "d4"]


@pytest.mark.asyncio
async def test_fuse_with_retriever(tiny_query, tiny_run, tiny_corpus, tiny_qrels):
    oracle = OracleBackend.from_qrels(tiny_qrels, tiny_corpus, "q1")
    config = RerankConfig(fuse_with_retriever=True, w_rerank=0.6, w_retrieve=0.4)

    run = await rerank(tiny_query, tiny_run, oracle, config, tiny_corpus)

    assert run.tag.endswith("+fused")
    assert sorted(run.doc_ids()) == sorted(tiny_run.doc_ids())
    # d1: .6 * 1 + .4 * 0
    assert run.score_map()["d1"] == pytest.approx(0.6)


@pytest.mark.asyncio
async def test_rerank_input_errors(tiny_query, tiny_run, tiny_corpus):
    backend = ScriptedBackend(_zeros)
    with pytest.raises(ValueError, match="missing from corpus"):
        await rerank(tiny_query, tiny_run, backend, RerankConfig(), {})
    with pytest.raises(ValueError, match="no candidates"):
        await rerank(tiny_query, RunList(query_id="q1"), backend, RerankConfig(), tiny_corpus)


# ============================================================================
# TEST: Reference settings (N=100, c=20, w=20, s=10, k=10, r=1)
# ============================================================================


def test_cost_table_at_reference_settings():
    expected = {
        "pointwise.qlm": 100,
        "pointwise.yes_no": 100,
        "listwise.generation": 10,
        "listwise.likelihood": 10,
        "pairwise.allpair": 9900,
        "pairwise.heapsort": 67,
        "pairwise.bubblesort": 1000,
        "setwise.heapsort": 16,
        "setwise.bubblesort": 60,
        "groupwise": 5,
    }
    calls = {p.value: estimate_llm_calls(p, 100, c=20, w=20, s=10, k=10, r=1) for p in Paradigm}
    assert calls == expected


def test_sliding_window_overlap_counts():
    windows = partition_sliding(list(range(1, 101)), 20, 10)
    counts = {doc: sum(doc in w for w in windows) for doc in range(1, 101)}

    assert [(w[0], w[-1]) for w in windows] == [(1 + 10 * i, 20 + 10 * i) for i in range(9)]
    assert all(counts[doc] == 2 for doc in range(11, 91))
    assert all(counts[doc] == 1 for doc in [*range(1, 11), *range(91, 101)])


@pytest.mark.asyncio
async def test_oracle_rerank_hundred_documents():
    query, run, corpus = _world(100)
    qrels = Qrels(judgments={"q": {f"d{i}": (i * 7) % 4 for i in range(1, 101)}})
    oracle = OracleBackend.from_qrels(qrels, corpus, "q")

    result = await rerank(query, run, oracle, RerankConfig(group_size=20), corpus)

    assert oracle.calls == 5
    assert ndcg_at_k(result.doc_ids(), qrels, "q", 10).value == pytest.approx(1.0)


@pytest.mark.asyncio
async def test_ensemble_pipeline_is_byte_identical():
    query, run, corpus = _world(100)
    qrels = Qrels(judgments={"q": {f"d{i}": i % 3 for i in range(1, 101)}})
    config = RerankConfig(group_size=20, ensemble_n=3, seed=2024)
    outputs = []
    for _ in range(2):
        result = await rerank(query, run, OracleBackend.from_qrels(qrels, corpus), config, corpus)
        buffer = io.StringIO()
        write_run_file(buffer, [result])
        outputs.append(buffer.getvalue())

    assert outputs[0] == outputs[1]
