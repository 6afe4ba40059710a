"""
Readers and writers for the on-disk formats.

- TREC run files: ``qid Q0 docid rank score tag`` (6 columns)
- TREC qrels: ``qid 0 docid grade`` (4 columns)
- JSONL corpus (``id``/``text``) and JSONL queries (``id``/``text``/``rewritten_text``)
- JSONL training records exported by the synthesis pipeline
"""

from __future__ import annotations

import json
import math
import sys
from collections.abc import Iterable, Iterator
from contextlib import contextmanager
from pathlib import Path
from typing import IO, Any

from loguru import logger
from pydantic import ValidationError

from src.errors import FormatError
from src.models import (
    Document,
    Qrels,
    Query,
    RunList,
    TrainingCandidate,
    TrainingRecord,
)

PathOrStream = str | Path | IO[str]


@contextmanager
def _open_for_write(target: PathOrStream) -> Iterator[IO[str]]:
    """Abre um caminho para escrita; ``-`` é stdout; streams passam direto."""
    if isinstance(target, (str, Path)):
        if str(target) == "-":
            yield sys.stdout
            return
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8") as fh:
            yield fh
    else:
        yield target


def _lines(path: str | Path) -> Iterator[tuple[int, str]]:
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.strip()
            if line:
                yield line_no, line


# ============================================================================
# RUN FILES
# ============================================================================


def read_run_file(path: str | Path) -> list[RunList]:
    """
    Read a TREC run file into one RunList per query.

    Entries are re-sorted by score descending (ties by doc_id ascending) and
    re-ranked from 1; the rank column of the file is validated but not trusted.
    Queries come out in order of first appearance; each keeps the tag of its
    first line.

    Raises:
        FormatError: wrong column count, non-integer rank, non-numeric or
            non-finite score, duplicate ``(qid, docid)``
    """
    per_query: dict[str, dict[str, float]] = {}
    tags: dict[str, str] = {}
    for line_no, line in _lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(f"expected 6 columns, found {len(parts)}", path, line_no)
        qid, _, doc_id, rank, score, tag = parts
        try:
            int(rank)
        except ValueError:
            raise FormatError(f"rank {rank!r} is not an integer", path, line_no) from None
        try:
            value = float(score)
        except ValueError:
            raise FormatError(f"score {score!r} is not numeric", path, line_no) from None
        if not math.isfinite(value):
            raise FormatError(f"score {score!r} is not finite", path, line_no)
        docs = per_query.setdefault(qid, {})
        if doc_id in docs:
            raise FormatError(f"duplicate entry ({qid}, {doc_id})", path, line_no)
        docs[doc_id] = value
        tags.setdefault(qid, tag)

    runs = [RunList.from_scores(qid, docs, tag=tags[qid]) for qid, docs in per_query.items()]
    logger.debug(f"Run {path}: {len(runs)} queries, {sum(len(r) for r in runs)} entries")
    return runs


def format_run_lines(runs: Iterable[RunList]) -> Iterator[str]:
    """TREC lines for ``runs``; ``repr`` keeps scores exact for re-reading."""
    for run in runs:
        for entry in run.entries:
            yield f"{run.query_id} Q0 {entry.doc_id} {entry.rank} {entry.score!r} {run.tag}\n"


def write_run_file(target: PathOrStream, runs: Iterable[RunList]) -> int:
    """Write runs in TREC format; returns the number of lines written."""
    count = 0
    with _open_for_write(target) as fh:
        for line in format_run_lines(runs):
            fh.write(line)
            count += 1
    return count


# ============================================================================
# QRELS
# ============================================================================


def read_qrels(path: str | Path) -> Qrels:
    """
    Read TREC qrels. Later duplicates overwrite earlier ones (with a warning).

    Raises:
        FormatError: wrong column count, non-integer or negative grade
    """
    judgments: dict[str, dict[str, int]] = {}
    for line_no, line in _lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(f"expected 4 columns, found {len(parts)}", path, line_no)
        qid, _, doc_id, grade_text = parts
        try:
            grade = int(grade_text)
        except ValueError:
            raise FormatError(f"grade {grade_text!r} is not an integer", path, line_no) from None
        if grade < 0:
            raise FormatError(f"negative grade {grade}", path, line_no)
        docs = judgments.setdefault(qid, {})
        if doc_id in docs:
            logger.warning(f"{path}:{line_no}: duplicate judgment ({qid}, {doc_id}) overwritten")
        docs[doc_id] = grade
    return Qrels(judgments=judgments)


# ============================================================================
# JSONL (corpus / queries)
# ============================================================================


def _json_objects(path: str | Path) -> Iterator[tuple[int, dict[str, Any]]]:
    for line_no, line in _lines(path):
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(f"invalid JSON: {e.msg}", path, line_no) from None
        if not isinstance(obj, dict):
            raise FormatError("expected a JSON object", path, line_no)
        yield line_no, obj


def _require(obj: dict[str, Any], key: str, path: str | Path, line_no: int) -> str:
    if key not in obj:
        raise FormatError(f"missing field {key!r}", path, line_no)
    value = obj[key]
    if not isinstance(value, str):
        raise FormatError(f"field {key!r} must be a string", path, line_no)
    return value


def read_corpus(path: str | Path) -> dict[str, Document]:
    """
    Read a JSONL corpus into an id-keyed map.

    Raises:
        FormatError: invalid JSON, missing ``id``/``text``, duplicate id
    """
    corpus: dict[str, Document] = {}
    for line_no, obj in _json_objects(path):
        doc_id = _require(obj, "id", path, line_no)
        text = _require(obj, "text", path, line_no)
        if doc_id in corpus:
            raise FormatError(f"duplicate document id {doc_id!r}", path, line_no)
        try:
            corpus[doc_id] = Document(id=doc_id, text=text)
        except ValidationError as e:
            raise FormatError(str(e.errors()[0]["msg"]), path, line_no) from None
    logger.debug(f"Corpus {path}: {len(corpus)} documents")
    return corpus


def read_queries(path: str | Path) -> dict[str, Query]:
    """Read JSONL queries (``id``, ``text``, optional ``rewritten_text``)."""
    queries: dict[str, Query] = {}
    for line_no, obj in _json_objects(path):
        qid = _require(obj, "id", path, line_no)
        text = _require(obj, "text", path, line_no)
        if qid in queries:
            raise FormatError(f"duplicate query id {qid!r}", path, line_no)
        try:
            queries[qid] = Query(id=qid, text=text, rewritten_text=obj.get("rewritten_text"))
        except ValidationError as e:
            raise FormatError(str(e.errors()[0]["msg"]), path, line_no) from None
    return queries


# ============================================================================
# TRAINING RECORDS
# ============================================================================


def record_to_json(record: TrainingRecord) -> dict[str, Any]:
    """Export schema: ``{query_id, query_text, candidates: [{doc_id, text, pointwise, listwise_rank, gt_score}]}``."""
    return {
        "query_id": record.query.id,
        "query_text": record.query.text,
        "candidates": [
            {
                "doc_id": c.doc.id,
                "text": c.doc.text,
                "pointwise": c.pointwise_score,
                "listwise_rank": c.listwise_rank,
                "gt_score": c.gt_score,
            }
            for c in record.candidates
        ],
    }


def write_training_records(target: PathOrStream, records: Iterable[TrainingRecord]) -> int:
    """Write one JSON object per record; returns the record count."""
    count = 0
    with _open_for_write(target) as fh:
        for record in records:
            fh.write(json.dumps(record_to_json(record), ensure_ascii=False) + "\n")
            count += 1
    return count


def read_training_records(path: str | Path) -> list[TrainingRecord]:
    """Inverse of :func:`write_training_records`."""
    records: list[TrainingRecord] = []
    for line_no, obj in _json_objects(path):
        try:
            records.append(
                TrainingRecord(
                    query=Query(id=obj["query_id"], text=obj["query_text"]),
                    candidates=tuple(
                        TrainingCandidate(
                            doc=Document(id=c["doc_id"], text=c["text"]),
                            pointwise_score=c["pointwise"],
                            listwise_rank=c["listwise_rank"],
                            gt_score=c["gt_score"],
                        )
                        for c in obj["candidates"]
                    ),
                )
            )
        except KeyError as e:
            raise FormatError(f"missing field {e.args[0]!r}", path, line_no) from None
        except ValidationError as e:
            raise FormatError(str(e.errors()[0]["msg"]), path, line_no) from None
    return records
