"""
Exceções do GroupRank toolkit.
Todas herdam de GroupRankError para que a CLI possa tratá-las num único ponto.
"""

from __future__ import annotations

from pathlib import Path
from typing import TYPE_CHECKING

if TYPE_CHECKING:
    from src.models import RunList


class GroupRankError(Exception):
    """Base de todos os erros do projeto."""


class FormatError(GroupRankError, ValueError):
    """Arquivo de entrada malformado (run, qrels, corpus, queries, records)."""

    def __init__(self, message: str, path: str | Path | None = None, line_no: int | None = None):
        self.path = str(path) if path is not None else None
        self.line_no = line_no
        location = ""
        if self.path is not None:
            location = f"{self.path}:{line_no}: " if line_no is not None else f"{self.path}: "
        super().__init__(f"{location}{message}")


class ProtocolError(GroupRankError, ValueError):
    """Resposta do modelo fora do formato esperado (pointwise/listwise)."""


class BackendError(GroupRankError):
    """Falha de transporte ao chamar um scorer backend."""


class RerankAborted(BackendError):
    """Backend inalcançável depois dos retries; carrega o resultado parcial."""

    def __init__(self, message: str, partial: RunList | None, failed_groups: int):
        self.partial = partial
        self.failed_groups = failed_groups
        super().__init__(message)


class EvaluationError(GroupRankError):
    """Nada para avaliar (interseção vazia entre run e qrels)."""


__all__ = [
    "BackendError",
    "EvaluationError",
    "FormatError",
    "GroupRankError",
    "ProtocolError",
    "RerankAborted",
]
