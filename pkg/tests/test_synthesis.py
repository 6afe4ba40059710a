"""
Test suite for training-data synthesis
Candidate fusion, annotation with journaling, label fusion and record export
"""

import asyncio

import pytest
from pydantic import ValidationError

from src.agents.backends import OracleBackend
from src.config import SynthConfig
from src.errors import BackendError
from src.models import Document, Query, RunList
from src.synthesis import (
    AnnotatedQuery,
    Journal,
    JournalEntry,
    annotate_listwise,
    annotate_pointwise,
    build_candidates,
    emit_training_records,
    label_record,
    run_synthesis,
)
from src.trec_io import read_training_records


class CountingBackend:
    def __init__(self, respond):
        self.respond = respond
        self.identity = "counting"
        self.calls = 0

    async def score_group(self, prompt):
        self.calls += 1
        return self.respond(prompt)


class SlowBackend:
    """Answers after a short sleep, so it finishes after faster siblings fail."""

    def __init__(self, answer):
        self.answer = answer
        self.identity = "slow"
        self.calls = 0

    async def score_group(self, prompt):
        self.calls += 1
        await asyncio.sleep(0.01)
        return self.answer


@pytest.fixture
def dense_run():
    """Dense retriever: better than BM25 but still imperfect."""
    return RunList.from_scores(
        "q1", {"d4": 0.92, "d1": 0.90, "d2": 0.70, "d5": 0.40, "d6": 0.10}, tag="dense"
    )


@pytest.fixture
def oracles(tiny_qrels, tiny_corpus):
    pointwise = OracleBackend.from_qrels(tiny_qrels, tiny_corpus, "q1", mode="pointwise")
    listwise = OracleBackend.from_qrels(tiny_qrels, tiny_corpus, "q1", mode="listwise")
    return pointwise, listwise


# ============================================================================
# CANDIDATES
# ============================================================================


class TestBuildCandidates:
    def test_hand_computed(self):
        bm25 = RunList.from_scores("q", {"a": 3.0, "b": 2.0, "c": 1.0})
        dense = RunList.from_scores("q", {"b": 0.9, "c": 0.5, "d": 0.1})

        candidates = build_candidates(bm25, dense, top_k_out=3)

        # a: .5*1, b: .5*.5 + .5*1, c: .5*0 + .5*.5, d: 0
        assert [c.doc_id for c in candidates] == ["b", "a", "c"]
        assert [c.fused_score for c in candidates] == pytest.approx([0.75, 0.5, 0.25])
        assert candidates[1].source_scores == {"bm25": 3.0}
        assert candidates[0].source_scores == {"bm25": 2.0, "dense": 0.9}

    def test_identical_runs_keep_order(self, tiny_run):
        candidates = build_candidates(tiny_run, tiny_run)
        assert [c.doc_id for c in candidates] == tiny_run.doc_ids()

    def test_top_k_in_limits_each_source(self):
        bm25 = RunList.from_scores("q", {"a": 3.0, "b": 2.0, "c": 1.0})
        dense = RunList.from_scores("q", {"c": 3.0, "a": 2.0, "b": 1.0})

        candidates = build_candidates(bm25, dense, top_k_in=1, top_k_out=1)

        # only a (bm25) and c (dense) survive the cut, tie broken by bm25 rank
        assert [c.doc_id for c in candidates] == ["a"]

    def test_query_mismatch(self):
        with pytest.raises(ValueError, match="mismatch"):
            build_candidates(
                RunList.from_scores("q1", {"a": 1.0}), RunList.from_scores("q2", {"a": 1.0})
            )

    def test_config_weights(self):
        with pytest.raises(ValidationError):
            SynthConfig(w_sparse=0.8, w_dense=0.5)
        with pytest.raises(ValidationError):
            SynthConfig(top_k_in=10, top_k_out=20)


# ============================================================================
# LABELS
# ============================================================================


def _annotated(pointwise, ranks):
    docs = tuple(Document(id=f"d{i}", text=f"t{i}") for i in range(1, len(pointwise) + 1))
    return AnnotatedQuery(
        query=Query(id="q", text="t"),
        docs=docs,
        pointwise=tuple(pointwise),
        listwise_ranks=tuple(ranks),
    )


class TestLabels:
    def test_agreeing_sources(self):
        record = label_record(_annotated([10, 0], [1, 2]))
        assert record.gt_scores() == [1.0, 0.0]

    def test_conflicting_sources(self):
        record = label_record(_annotated([0, 10], [1, 2]))
        assert record.gt_scores() == [0.5, 0.5]

    def test_alpha_one_is_pointwise_only(self):
        record = label_record(_annotated([0, 5, 10], [1, 2, 3]), alpha=1.0)
        assert record.gt_scores() == [0.0, 0.5, 1.0]

    def test_misaligned_annotation(self):
        with pytest.raises(ValidationError, match="align"):
            AnnotatedQuery(
                query=Query(id="q", text="t"),
                docs=(Document(id="d", text="x"),),
                pointwise=(1, 2),
                listwise_ranks=(1,),
            )

    def test_emit_round_trip(self, tmp_path):
        annotated = [_annotated([3, 7, 1, 9], [2, 1, 4, 3]), _annotated([5, 5], [2, 1])]
        path = tmp_path / "train.jsonl"

        assert emit_training_records(annotated, path) == 2
        records = read_training_records(path)

        for written, original in zip(records, annotated, strict=True):
            expected = label_record(original).gt_scores()
            assert all(
                abs(a - b) <= 1e-12 for a, b in zip(written.gt_scores(), expected, strict=True)
            )


# ============================================================================
# ANNOTATION
# ============================================================================


class TestAnnotation:
    @pytest.mark.asyncio
    async def test_pointwise_with_oracle(self, tiny_query, tiny_corpus, oracles):
        pointwise, _ = oracles
        docs = [tiny_corpus[d] for d in ("d1", "d2", "d3", "d4")]

        assert await annotate_pointwise(tiny_query, docs, pointwise) == [3, 1, 0, 2]

    @pytest.mark.asyncio
    async def test_listwise_with_oracle(self, tiny_query, tiny_corpus, oracles):
        _, listwise = oracles
        docs = [tiny_corpus[d] for d in ("d2", "d3", "d1", "d4")]

        # d1 > d4 > d2 > d3
        assert await annotate_listwise(tiny_query, docs, listwise) == [3, 4, 1, 2]

    @pytest.mark.asyncio
    async def test_pointwise_failure_scores_zero(self, tiny_query, tiny_corpus, log_records):
        backend = CountingBackend(lambda prompt: "It is quite relevant.")
        config = SynthConfig(max_retries=1)

        scores = await annotate_pointwise(tiny_query, [tiny_corpus["d1"]], backend, config)

        assert scores == [0]
        assert backend.calls == 2
        assert any(r["level"].name == "WARNING" for r in log_records)

    @pytest.mark.asyncio
    async def test_oversized_pointwise_score_retries_then_zero(self, tiny_query, tiny_corpus):
        backend = CountingBackend(lambda prompt: f"Relevance score: {'7' * 5000}.")
        config = SynthConfig(max_retries=1)

        scores = await annotate_pointwise(tiny_query, [tiny_corpus["d1"]], backend, config)

        assert scores == [0]
        assert backend.calls == 2

    @pytest.mark.asyncio
    async def test_listwise_failure_is_none(self, tiny_query, tiny_corpus):
        backend = CountingBackend(lambda prompt: "```json\n[1, 1]\n```")

        assert await annotate_listwise(tiny_query, list(tiny_corpus.values())[:2], backend) is None

    @pytest.mark.asyncio
    async def test_backend_exceptions_become_backend_errors(self, tiny_query, tiny_corpus):
        def boom(prompt):
            raise ConnectionError("down")

        with pytest.raises(BackendError):
            await annotate_pointwise(tiny_query, [tiny_corpus["d1"]], CountingBackend(boom))


# ============================================================================
# PIPELINE / JOURNAL
# ============================================================================


class TestPipeline:
    @pytest.mark.asyncio
    async def test_end_to_end(self, tiny_query, tiny_run, dense_run, tiny_corpus, oracles):
        pointwise, listwise = oracles
        config = SynthConfig(top_k_out=4)

        annotated = await run_synthesis(
            {"q1": tiny_query},
            {"q1": tiny_run},
            {"q1": dense_run},
            tiny_corpus,
            pointwise,
            listwise,
            config,
        )

        assert len(annotated) == 1
        assert len(annotated[0].docs) == 4
        assert pointwise.calls == 4 and listwise.calls == 1
        gt = dict(zip((d.id for d in annotated[0].docs), label_record(annotated[0]).gt_scores()))
        # d1 is the best document for both annotators
        assert max(gt, key=gt.get) == "d1"

    @pytest.mark.asyncio
    async def test_journal_resume_skips_backend(
        self, tmp_path, tiny_query, tiny_run, dense_run, tiny_corpus, tiny_qrels
    ):
        journal = tmp_path / "journal.jsonl"
        args = ({"q1": tiny_query}, {"q1": tiny_run}, {"q1": dense_run}, tiny_corpus)

        def fresh():
            return (
                OracleBackend.from_qrels(tiny_qrels, tiny_corpus, "q1", mode="pointwise"),
                OracleBackend.from_qrels(tiny_qrels, tiny_corpus, "q1", mode="listwise"),
            )

        first_pw, first_lw = fresh()
        first = await run_synthesis(*args, first_pw, first_lw, journal_path=journal)
        second_pw, second_lw = fresh()
        second = await run_synthesis(*args, second_pw, second_lw, journal_path=journal)

        assert first_pw.calls == 6 and first_lw.calls == 1
        assert second_pw.calls == 0 and second_lw.calls == 0
        assert first == second

    @pytest.mark.asyncio
    async def test_listwise_failure_skips_query(
        self, tiny_query, tiny_run, dense_run, tiny_corpus, oracles, log_records
    ):
        pointwise, _ = oracles
        broken = CountingBackend(lambda prompt: "no ranking today")

        annotated = await run_synthesis(
            {"q1": tiny_query}, {"q1": tiny_run}, {"q1": dense_run}, tiny_corpus, pointwise, broken
        )

        assert annotated == []
        assert any(r["level"].name == "ERROR" for r in log_records)

    @pytest.mark.asyncio
    async def test_backend_failure_still_journals_finished_calls(
        self, tmp_path, tiny_query, tiny_run, dense_run, tiny_corpus
    ):
        journal = tmp_path / "journal.jsonl"

        def down(prompt):
            raise BackendError("pointwise annotator down")

        listwise = SlowBackend("```json\n[2, 1]\n```")

        annotated = await run_synthesis(
            {"q1": tiny_query},
            {"q1": tiny_run},
            {"q1": dense_run},
            tiny_corpus,
            CountingBackend(down),
            listwise,
            SynthConfig(top_k_out=2),
            journal_path=journal,
        )

        assert annotated == []
        assert listwise.calls == 1
        lines = journal.read_text().splitlines()
        entries = [JournalEntry.model_validate_json(line) for line in lines]
        assert [(e.kind, e.value) for e in entries] == [("listwise", [2, 1])]

    def test_journal_skips_unreadable_lines(self, tmp_path, log_records):
        path = tmp_path / "journal.jsonl"
        entry = JournalEntry(kind="pointwise", query_id="q", doc_id="d", prompt_hash="h", value=4)
        path.write_text(entry.model_dump_json() + "\n" + '{"kind": "pointw')

        journal = Journal(path)

        assert len(journal) == 1
        assert journal.get("pointwise", "q", "d", "h") == 4
        assert journal.get("listwise", "q", "*", "h") is None
        assert any(r["level"].name == "WARNING" for r in log_records)
