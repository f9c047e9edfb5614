"""Relevant explanations for knowledge-graph hypotheses"""

__version__ = "0.1.0"

# Core types
from .core import (
    # Base classes
    ConfiguredBaseModel,
    FrozenModel,

    # Value types
    Entity,
    Relation,
    Triple,
    Hypothesis,

    # Enums
    ICMode,
    Normalization,
    ExportFormat,
)

# Errors
from .errors import (
    RexError,
    ConfigError,
    DataError,
    ParseError,
    EmptyGraphError,
    UnknownEntityError,
    UnknownRelationError,
    CoverageError,
    OntologyError,
    VocabularyMismatchError,
    UndefinedICError,
    ClusteringError,
    ContractViolation,
    TrainingError,
)

# Domain models
from .domain.models.graph import KnowledgeGraph
from .domain.models.info_content import ClusterAssignment, EmbeddingTable, ICTable
from .domain.models.trajectory import Action, EnvState, GraphPath, Observation, Trajectory
from .domain.models.explanation import ExplanationSubgraph, Metapath, OntologyHierarchy
from .domain.models.evaluation import EvalResult

# Configuration
from .config import RewardConfig, RunConfig, PhaseSeeds, configure_logging

# Encoder
from .encoder import ExplanationEncoder, export_explanation

__all__ = [
    # Version
    "__version__",

    # Core
    "ConfiguredBaseModel",
    "FrozenModel",
    "Entity",
    "Relation",
    "Triple",
    "Hypothesis",
    "ICMode",
    "Normalization",
    "ExportFormat",

    # Errors
    "RexError",
    "ConfigError",
    "DataError",
    "ParseError",
    "EmptyGraphError",
    "UnknownEntityError",
    "UnknownRelationError",
    "CoverageError",
    "OntologyError",
    "VocabularyMismatchError",
    "UndefinedICError",
    "ClusteringError",
    "ContractViolation",
    "TrainingError",

    # Domain models
    "KnowledgeGraph",
    "ClusterAssignment",
    "EmbeddingTable",
    "ICTable",
    "Action",
    "EnvState",
    "GraphPath",
    "Observation",
    "Trajectory",
    "ExplanationSubgraph",
    "Metapath",
    "OntologyHierarchy",
    "EvalResult",

    # Configuration
    "RewardConfig",
    "RunConfig",
    "PhaseSeeds",
    "configure_logging",

    # Encoder
    "ExplanationEncoder",
    "export_explanation",
]
