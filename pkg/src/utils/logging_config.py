"""
Configuração de logging usando Loguru.
Console em stderr (stdout fica livre para os dados da CLI) e arquivo opcional com rotação.
"""

import sys
from pathlib import Path

from loguru import logger

from src.config import log_config


class ErrorTally:
    """
    Sink do loguru que apenas conta registros ERROR ou acima.

    A CLI usa a contagem para decidir o exit code (0 sse nenhum erro foi reportado).
    """

    def __init__(self) -> None:
        self.count = 0

    def __call__(self, message) -> None:
        self.count += 1


def setup_logging(level: str | None = None, log_file: str | None = None) -> ErrorTally:
    """
    Configura o sistema de logging usando Loguru.

    Features:
    - Console colorido em stderr
    - Arquivo com rotação automática (LOG_FILE ou ``log_file``)
    - Contador de erros para o exit code

    Returns:
        ErrorTally registrado como sink de nível ERROR
    """
    # Remove handler padrão do loguru
    logger.remove()

    # ====== CONSOLE HANDLER (colorido e conciso) ======
    logger.add(
        sys.stderr,
        level=level or log_config.level,
        format=(
            "<green>{time:YYYY-MM-DD HH:mm:ss}</green> | "
            "<level>{level: <8}</level> | "
            "<cyan>{name}</cyan>:<cyan>{function}</cyan> | "
            "<level>{message}</level>"
        ),
        colorize=True,
        backtrace=True,
        diagnose=False,
    )

    # ====== FILE HANDLER (completo e persistente) ======
    target = log_file or log_config.file
    if target:
        Path(target).parent.mkdir(parents=True, exist_ok=True)
        logger.add(
            target,
            level="DEBUG",  # Log tudo no arquivo
            format=(
                "{time:YYYY-MM-DD HH:mm:ss.SSS} | {level: <8} | {name}:{function}:{line} | {message}"
            ),
            rotation=log_config.rotation,
            retention=log_config.retention,
            compression="zip",
            enqueue=True,
            backtrace=True,
            diagnose=False,
        )

    tally = ErrorTally()
    logger.add(tally, level="ERROR", format="{message}")

    logger.debug(f"Logging configurado: console={level or log_config.level}, file={target}")
    return tally


# Exportar logger principal
__all__ = ["ErrorTally", "logger", "setup_logging"]
