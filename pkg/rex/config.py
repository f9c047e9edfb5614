"""Run configuration, per-phase seeds and logging setup"""
import logging
import os
from typing import NamedTuple, Optional

import numpy as np
from dotenv import load_dotenv

from rex.application.schemas.config_schemas import (
    DataConfig,
    EvaluationConfig,
    InfoContentConfig,
    RewardConfig,
    RunConfig,
)
from rex.errors import ConfigError

LOG_ENV = "REX_LOG"
THREADS_ENV = "REX_THREADS"
LOG_FORMAT = "%(asctime)s %(levelname)s %(name)s: %(message)s"

_configured = False


def configure_logging(level: Optional[str] = None) -> None:
    """Configure the root logger once; the level comes from ``REX_LOG`` unless given"""
    global _configured
    load_dotenv()
    name = (level or os.getenv(LOG_ENV, "INFO")).upper()
    numeric = logging.getLevelName(name)
    if not isinstance(numeric, int):
        raise ConfigError(f"Unknown log level '{name}' in {LOG_ENV}")
    if not _configured:
        logging.basicConfig(level=numeric, format=LOG_FORMAT)
        _configured = True
    logging.getLogger().setLevel(numeric)


def default_threads() -> Optional[int]:
    """Worker cap from ``REX_THREADS`` (or ``.env``); None when unset"""
    load_dotenv()
    value = os.getenv(THREADS_ENV)
    if not value:
        return None
    try:
        threads = int(value)
    except ValueError:
        raise ConfigError(f"{THREADS_ENV} must be an integer, got '{value}'") from None
    if threads < 1:
        raise ConfigError(f"{THREADS_ENV} must be positive, got {threads}")
    return threads


class PhaseSeeds(NamedTuple):
    """Independent seeds for each randomized phase, derived from one top-level seed"""
    embeddings: int
    clustering: int
    policy_init: int
    training: int
    evaluation: int

    @classmethod
    def expand(cls, seed: int) -> "PhaseSeeds":
        children = np.random.SeedSequence(seed).spawn(len(cls._fields))
        return cls(*(int(child.generate_state(1)[0]) for child in children))


__all__ = [
    "DataConfig",
    "EvaluationConfig",
    "InfoContentConfig",
    "PhaseSeeds",
    "RewardConfig",
    "RunConfig",
    "configure_logging",
    "default_threads",
]
