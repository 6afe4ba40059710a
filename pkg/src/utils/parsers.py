"""
Parsers das respostas dos modelos.

- ``parse_response``: resposta groupwise ``<reason>…</reason><answer>{"[1]": 5, …}</answer>``.
  Nunca levanta exceção: toda falha vira um ``FormatVerdict``.
- ``parse_pointwise``: ``Relevance score: X.`` → X
- ``parse_listwise``: último array JSON cercado por ```json → rank de cada documento

Os dois últimos levantam ``ProtocolError`` para que o chamador faça retry.
"""

from __future__ import annotations

import json
import re
from typing import Any, Literal

from pydantic import BaseModel, ConfigDict, model_validator

from src.errors import ProtocolError
from src.models import FormatVerdict, GroupScoreMap

OutOfRangePolicy = Literal["invalidate", "clamp"]

_FENCE_RE = re.compile(r"^```[A-Za-z]*[ \t]*\r?\n?(.*?)\s*```$", re.DOTALL)
_FENCED_BLOCK_RE = re.compile(r"```[A-Za-z]*[ \t]*\r?\n?(.*?)```", re.DOTALL)
_BARE_ARRAY_RE = re.compile(r"\[[\s\d,]*\]")
_POINTWISE_RE = re.compile(r"Relevance score: (\d+)\.")

MIN_SCORE, MAX_SCORE = 0, 10


class ParsedResponse(BaseModel):
    """Veredito de formato + mapa de scores (presente sse a resposta é válida)."""

    model_config = ConfigDict(frozen=True)

    verdict: FormatVerdict
    score_map: GroupScoreMap | None = None

    @model_validator(mode="after")
    def map_iff_answer_ok(self) -> ParsedResponse:
        if self.verdict.answer_format_ok != (self.score_map is not None):
            raise ValueError("score_map must be present exactly when the answer format is ok")
        return self


_NO_TAGS = ParsedResponse(verdict=FormatVerdict(output_format_ok=False, answer_format_ok=False))
_BAD_ANSWER = ParsedResponse(verdict=FormatVerdict(output_format_ok=True, answer_format_ok=False))


class _DuplicateKey(ValueError):
    pass


def _reject_duplicates(pairs: list[tuple[str, Any]]) -> dict[str, Any]:
    result: dict[str, Any] = {}
    for key, value in pairs:
        if key in result:
            raise _DuplicateKey(key)
        result[key] = value
    return result


# ============================================================================
# GROUPWISE
# ============================================================================


def _tag_region(raw: str, name: str) -> tuple[int, int, str] | None:
    """``(start, end, body)`` da única região ``<name>…</name>``; None se ausente ou ambígua."""
    open_tag, close_tag = f"<{name}>", f"</{name}>"
    if raw.count(open_tag) != 1 or raw.count(close_tag) != 1:
        return None
    start = raw.index(open_tag)
    close = raw.index(close_tag)
    body_start = start + len(open_tag)
    if close < body_start:
        return None
    return start, close + len(close_tag), raw[body_start:close]


def strip_fences(body: str) -> str:
    """Remove uma cerca markdown opcional (```json … ```) em volta do corpo."""
    body = body.strip()
    match = _FENCE_RE.match(body)
    return match.group(1).strip() if match else body


def _score_value(value: Any, out_of_range: OutOfRangePolicy) -> int | None:
    # bool é subclasse de int em Python, mas não é um score
    if isinstance(value, bool) or not isinstance(value, int):
        return None
    if MIN_SCORE <= value <= MAX_SCORE:
        return value
    if out_of_range == "clamp":
        return min(MAX_SCORE, max(MIN_SCORE, value))
    return None


def _score_map(body: str, expected_n: int, out_of_range: OutOfRangePolicy) -> dict[int, int] | None:
    try:
        obj = json.loads(strip_fences(body), object_pairs_hook=_reject_duplicates)
    except (ValueError, RecursionError):
        return None
    if not isinstance(obj, dict):
        return None
    if set(obj) != {f"[{i}]" for i in range(1, expected_n + 1)}:
        return None
    scores: dict[int, int] = {}
    for i in range(1, expected_n + 1):
        score = _score_value(obj[f"[{i}]"], out_of_range)
        if score is None:
            return None
        scores[i] = score
    return scores


def parse_response(
    raw: str | bytes | None, expected_n: int, out_of_range: OutOfRangePolicy = "invalidate"
) -> ParsedResponse:
    """
    Valida uma resposta groupwise.

    ``output_format_ok``: exatamente uma região ``<reason>…</reason>`` e uma
    ``<answer>…</answer>``, sem sobreposição. ``answer_format_ok``: o corpo do
    answer (cercas ```json opcionais) é um objeto JSON com chaves exatamente
    ``"[1]"``…``"[expected_n]"`` e valores inteiros em [0, 10].

    Args:
        raw: texto cru do modelo (bytes são decodificados como UTF-8 com replace)
        expected_n: tamanho do grupo enviado no prompt
        out_of_range: ``invalidate`` rejeita scores fora de [0, 10]; ``clamp`` os satura
    """
    if isinstance(raw, bytes):
        raw = raw.decode("utf-8", errors="replace")
    if not isinstance(raw, str):
        return _NO_TAGS

    reason = _tag_region(raw, "reason")
    answer = _tag_region(raw, "answer")
    if reason is None or answer is None:
        return _NO_TAGS
    if not (reason[1] <= answer[0] or answer[1] <= reason[0]):
        return _NO_TAGS

    if not isinstance(expected_n, int) or expected_n < 1:
        return _BAD_ANSWER
    scores = _score_map(answer[2], expected_n, out_of_range)
    if scores is None:
        return _BAD_ANSWER
    return ParsedResponse(
        verdict=FormatVerdict(output_format_ok=True, answer_format_ok=True),
        score_map=GroupScoreMap(scores=scores, reason=reason[2].strip()),
    )


def format_answer(scores: list[int], reason: str = "") -> str:
    """Resposta groupwise bem formada para uma lista de scores (posição i → ``"[i]"``)."""
    payload = json.dumps({f"[{i}]": s for i, s in enumerate(scores, start=1)})
    return f"<reason>\n{reason}\n</reason>\n<answer>\n```json\n{payload}\n```\n</answer>"


# ============================================================================
# POINTWISE / LISTWISE
# ============================================================================


def parse_pointwise(raw: str) -> int:
    """
    ``Relevance score: X.`` (espaços nas pontas são ignorados) → X.

    Raises:
        ProtocolError: padrão diferente ou X fora de [0, 10]
    """
    match = _POINTWISE_RE.fullmatch(raw.strip())
    if match is None:
        raise ProtocolError(f"expected 'Relevance score: X.', got {raw.strip()[:80]!r}")
    try:
        score = int(match.group(1))
    except ValueError:
        # dígitos demais para int()
        raise ProtocolError(f"relevance score has {len(match.group(1))} digits") from None
    if not MIN_SCORE <= score <= MAX_SCORE:
        raise ProtocolError(f"relevance score {score} outside [0, 10]")
    return score


def _last_array(raw: str) -> list[Any]:
    for block in reversed(_FENCED_BLOCK_RE.findall(raw)):
        try:
            value = json.loads(block.strip())
        except ValueError:
            continue
        if isinstance(value, list):
            return value
    # sem cerca: último array de inteiros solto no texto
    bare = _BARE_ARRAY_RE.findall(raw)
    if bare:
        try:
            return json.loads(bare[-1])
        except ValueError:
            pass
    raise ProtocolError("no JSON array found in listwise response")


def parse_listwise(raw: str, expected_n: int) -> list[int]:
    """
    Ranking listwise → rank de cada documento.

    O array lista ids do mais útil ao menos útil; o retorno tem
    ``ranks[doc - 1] = posição de doc no array`` (1 = melhor).

    Raises:
        ProtocolError: array ausente, tamanho errado ou não é permutação de 1..expected_n
    """
    order = _last_array(raw)
    if len(order) != expected_n:
        raise ProtocolError(f"wrong length: {len(order)} ids for {expected_n} passages")
    if any(isinstance(i, bool) or not isinstance(i, int) for i in order):
        raise ProtocolError("listwise ids must be integers")
    if sorted(order) != list(range(1, expected_n + 1)):
        raise ProtocolError(f"not a permutation of 1..{expected_n}: {order}")
    ranks = [0] * expected_n
    for rank, doc in enumerate(order, start=1):
        ranks[doc - 1] = rank
    return ranks


__all__ = [
    "ParsedResponse",
    "format_answer",
    "parse_listwise",
    "parse_pointwise",
    "parse_response",
    "strip_fences",
]
