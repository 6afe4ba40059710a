"""
Configurações centralizadas do GroupRank toolkit.
Carrega variáveis de ambiente (.env) e define os modelos de configuração de cada estágio.
"""

from __future__ import annotations

import os
from collections.abc import Mapping
from dataclasses import dataclass, fields, replace
from pathlib import Path
from typing import Any, Literal

from dotenv import load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.errors import FormatError

# Carregar variáveis de ambiente
load_dotenv()


# ============================================================================
# ARQUIVO DE CONFIGURAÇÃO (key = value)
# ============================================================================


def load_flat_config(path: str | Path) -> dict[str, str]:
    """
    Lê um arquivo de configuração plano no formato ``key = value``.

    Linhas vazias e comentários (``#``) são ignorados. Chaves repetidas: vale a última.

    Raises:
        FormatError: linha sem ``=`` ou com chave vazia
    """
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, raw in enumerate(fh, start=1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            key, sep, value = line.partition("=")
            key = key.strip().replace("-", "_")
            if not sep or not key:
                raise FormatError(f"expected 'key = value', got {raw.strip()!r}", path, line_no)
            values[key] = value.strip()
    return values


def _merge(config_values: Mapping[str, Any] | None, overrides: Mapping[str, Any]) -> dict[str, Any]:
    """Valores do arquivo com os flags da CLI por cima (None = não informado)."""
    merged: dict[str, Any] = dict(config_values or {})
    merged.update({key: value for key, value in overrides.items() if value is not None})
    return merged


# ============================================================================
# LOGGING / BACKEND (dataclasses + variáveis de ambiente)
# ============================================================================


@dataclass
class LogConfig:
    """Configurações de logging."""

    level: str
    file: str | None
    rotation: str
    retention: str

    @classmethod
    def from_env(cls) -> LogConfig:
        """Cria configuração a partir de variáveis de ambiente."""
        return cls(
            level=os.getenv("LOG_LEVEL", "INFO"),
            file=os.getenv("LOG_FILE") or None,
            rotation=os.getenv("LOG_ROTATION", "10 MB"),
            retention=os.getenv("LOG_RETENTION", "7 days"),
        )


@dataclass
class BackendConfig:
    """Configurações de um backend OpenAI-compatible (chat completions)."""

    base_url: str = "https://api.openai.com/v1"
    model: str = "gpt-4o-mini"
    api_key_env: str = "OPENAI_API_KEY"
    temperature: float = 0.0
    timeout: float = 60.0
    max_attempts: int = 3
    backoff_base: float = 1.0
    backoff_factor: float = 2.0

    @property
    def api_key(self) -> str:
        """Token lido da variável de ambiente indicada (nunca do arquivo de config)."""
        return os.getenv(self.api_key_env, "")

    @classmethod
    def from_env(cls, prefix: str = "GROUPRANK_") -> BackendConfig:
        """Cria configuração a partir de variáveis de ambiente ``{prefix}BASE_URL`` etc."""
        values = {
            f.name: os.environ[f"{prefix}{f.name.upper()}"]
            for f in fields(cls)
            if f"{prefix}{f.name.upper()}" in os.environ
        }
        return cls()._with(values)

    @classmethod
    def from_sources(
        cls, config_values: Mapping[str, str] | None = None, prefix: str = "", **overrides: Any
    ) -> BackendConfig:
        """
        Ambiente, depois chaves ``{prefix}backend_<campo>`` do arquivo, depois flags da CLI.

        Example:
            >>> BackendConfig.from_sources({"pointwise_backend_model": "qwen"}, prefix="pointwise_")
        """
        base = cls.from_env()
        scoped = {
            f.name: config_values[f"{prefix}backend_{f.name}"]
            for f in fields(cls)
            if config_values and f"{prefix}backend_{f.name}" in config_values
        }
        return base._with(_merge(scoped, overrides))

    def _with(self, values: Mapping[str, Any]) -> BackendConfig:
        casts = {f.name: type(getattr(self, f.name)) for f in fields(self)}
        cast = {key: casts[key](value) for key, value in values.items() if key in casts}
        return replace(self, **cast)


log_config = LogConfig.from_env()


# ============================================================================
# RERANK CONFIG
# ============================================================================

_MODE_ALIASES = {
    "disjoint": "disjoint",
    "disjoint-groups": "disjoint",
    "sliding": "sliding",
    "sliding-window": "sliding",
}


class RerankConfig(BaseModel):
    """Parâmetros do reranking groupwise (grupos, janelas, ensemble, fusão final)."""

    model_config = ConfigDict(frozen=True, extra="ignore")

    group_size: int = Field(default=20, ge=1, description="c: documents compared per request")
    window: int = Field(default=20, ge=1, description="w: sliding window size")
    step: int = Field(default=10, ge=1, description="s: sliding step")
    ensemble_n: int = Field(default=1, ge=1, description="self-ensemble rounds")
    seed: int = Field(default=0, ge=0, lt=2**64)
    max_retries: int = Field(default=2, ge=0)
    mode: Literal["disjoint", "sliding"] = "disjoint"
    max_in_flight: int = Field(default=8, ge=1)
    use_rewritten_query: bool = False
    depth: int | None = Field(default=100, ge=1)
    fuse_with_retriever: bool = False
    w_rerank: float = Field(default=0.6, ge=0)
    w_retrieve: float = Field(default=0.4, ge=0)
    out_of_range: Literal["invalidate", "clamp"] = "invalidate"

    @field_validator("mode", mode="before")
    @classmethod
    def normalize_mode(cls, v):
        if isinstance(v, str) and v.strip().lower() in _MODE_ALIASES:
            return _MODE_ALIASES[v.strip().lower()]
        return v

    @model_validator(mode="after")
    def check_windows(self) -> RerankConfig:
        if self.step > self.window:
            raise ValueError(f"step ({self.step}) must not exceed window ({self.window})")
        if self.mode == "sliding" and self.group_size > self.window:
            raise ValueError(
                f"group_size ({self.group_size}) must not exceed window ({self.window}) when sliding"
            )
        return self

    @property
    def max_group_size(self) -> int:
        """Maior grupo que um prompt pode conter no modo atual."""
        return self.window if self.mode == "sliding" else self.group_size

    @classmethod
    def from_sources(cls, config_path: str | Path | None = None, **overrides: Any) -> RerankConfig:
        """Arquivo de configuração (opcional) + flags da CLI."""
        values = load_flat_config(config_path) if config_path else {}
        return cls.model_validate(_merge(values, overrides))


# ============================================================================
# SYNTH CONFIG
# ============================================================================


class SynthConfig(BaseModel):
    """Parâmetros do pipeline de síntese de labels (candidatos, anotação, fusão)."""

    model_config = ConfigDict(frozen=True, extra="ignore")

    top_k_in: int = Field(default=100, ge=1)
    top_k_out: int = Field(default=50, ge=1)
    w_sparse: float = Field(default=0.5, ge=0)
    w_dense: float = Field(default=0.5, ge=0)
    alpha: float = Field(default=0.5, ge=0, le=1)
    max_retries: int = Field(default=2, ge=0)
    max_in_flight: int = Field(default=8, ge=1)
    use_rewritten_query: bool = False

    @model_validator(mode="after")
    def check_weights(self) -> SynthConfig:
        # fused_score de um Candidate precisa ficar em [0, 1]
        if self.w_sparse + self.w_dense > 1 + 1e-9:
            raise ValueError("w_sparse + w_dense must not exceed 1")
        if self.top_k_out > self.top_k_in:
            raise ValueError("top_k_out must not exceed top_k_in")
        return self

    @classmethod
    def from_sources(cls, config_path: str | Path | None = None, **overrides: Any) -> SynthConfig:
        """Arquivo de configuração (opcional) + flags da CLI."""
        values = load_flat_config(config_path) if config_path else {}
        return cls.model_validate(_merge(values, overrides))
