"""Core types shared across the rex engine"""
from enum import Enum
from typing import NamedTuple, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator

INVERSE_PREFIX = "_inv_"
UNKNOWN_TYPE = "Unknown"
UNKNOWN_OBJECT = "?"


class ConfiguredBaseModel(BaseModel):
    """Base model with custom configuration"""
    model_config = ConfigDict(
        populate_by_name=True,
        validate_assignment=True,
        use_enum_values=True
    )


class FrozenModel(BaseModel):
    """Immutable, hashable value object"""
    model_config = ConfigDict(frozen=True, populate_by_name=True)


class ICMode(str, Enum):
    """Which information-content variant scores the graph"""
    IC = "IC"
    CIC = "CIC"
    CIC_BY_RELATION = "CIC_BY_RELATION"


class Normalization(str, Enum):
    """How raw IC scores are scaled into [0, 1]"""
    LOG_SIZE = "log_size"
    NONE = "none"


class ExportFormat(str, Enum):
    """Output formats for explanation subgraphs"""
    JSON = "json"
    DOT = "dot"


class Entity(FrozenModel):
    """A node of the knowledge graph"""
    id: int = Field(ge=0, description="Dense index, contiguous from 0")
    label: str = Field(description="Unique label within the graph")
    type_tag: Optional[str] = Field(default=None, description="Entity type, e.g. Compound")


class Relation(FrozenModel):
    """An edge label of the knowledge graph"""
    id: int = Field(ge=0, description="Dense index, contiguous from 0")
    label: str = Field(description="Unique label within the graph")
    is_inverse: bool = Field(default=False, description="True for generated inverse relations")
    inverse_of: Optional[int] = Field(default=None, description="Id of the paired relation")

    @model_validator(mode='after')
    def validate_inverse_pairing(self) -> 'Relation':
        """Inverse relations must name their counterpart"""
        if self.is_inverse and self.inverse_of is None:
            raise ValueError("Inverse relation must set inverse_of")
        return self


class Triple(NamedTuple):
    """(subject, relation, object) as integer ids"""
    subject: int
    relation: int
    object: int


class Hypothesis(FrozenModel):
    """A candidate triple to be explained; the object may be unknown at inference"""
    subject: int = Field(ge=0, description="Hypothesis subject s_h")
    relation: int = Field(ge=0, description="Hypothesis (query) relation")
    object: Optional[int] = Field(default=None, ge=0, description="Hypothesis object o_h")

    @model_validator(mode='after')
    def validate_not_degenerate(self) -> 'Hypothesis':
        """A hypothesis linking an entity to itself has nothing to explain"""
        if self.object is not None and self.object == self.subject:
            raise ValueError("Hypothesis subject and object must differ")
        return self

    def as_triple(self) -> Triple:
        if self.object is None:
            raise ValueError("Hypothesis object is unknown")
        return Triple(self.subject, self.relation, self.object)
