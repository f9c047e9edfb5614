"""Configuration schemas for every pipeline phase"""
import json
from pathlib import Path
from typing import Any, Dict, List, Literal, Optional

from pydantic import ConfigDict, Field, ValidationError, field_validator, model_validator

from rex.core import ConfiguredBaseModel, ICMode, Normalization
from rex.domain.models.info_content import ICTable
from rex.errors import ConfigError


class RewardConfig(ConfiguredBaseModel):
    """Agent, reward and REINFORCE settings (ablation switches included)"""
    model_config = ConfigDict(populate_by_name=True, validate_assignment=True,
                              use_enum_values=True, arbitrary_types_allowed=True)

    use_relevance: bool = Field(default=True, description="False gives the -r variant (fidelity-only reward)")
    use_early_stop: bool = Field(default=True, description="False gives the -s variant (no stop on reaching o_h)")
    ic_table: Optional[ICTable] = Field(default=None, exclude=True, description="Scores used by the relevance reward")
    max_len: int = Field(default=3, ge=1, description="Maximum number of edges in a rollout")
    rollouts: int = Field(default=30, ge=1, description="Rollouts sampled per hypothesis")
    baseline_decay: float = Field(default=0.95, ge=0.0, le=1.0, description="Moving-average baseline decay")
    entropy_weight: float = Field(default=0.01, ge=0.0, description="Entropy bonus weight")
    lr: float = Field(default=1e-3, gt=0.0, description="Learning rate")
    optimizer: Literal["adam", "sgd"] = Field(default="adam", description="Update rule for a gradient step")
    grad_clip: Optional[float] = Field(default=5.0, gt=0.0, description="Global gradient-norm clip; None disables")
    entity_dim: int = Field(default=32, ge=1, description="Entity embedding size")
    relation_dim: int = Field(default=32, ge=1, description="Relation embedding size")
    hidden_dim: int = Field(default=64, ge=1, description="LSTM and scorer hidden size")
    init_scale: float = Field(default=0.1, ge=0.0, description="Std-dev of the initial weights")
    epochs: int = Field(default=10, ge=1)
    batch_size: int = Field(default=8, ge=1, description="Hypotheses per update step")
    max_steps: Optional[int] = Field(default=None, ge=1, description="Stop after this many update steps")
    mask_hypothesis_edge: bool = Field(default=True, description="Hide the hypothesis edge during training")
    seed: int = Field(default=0, ge=0)


class DataConfig(ConfiguredBaseModel):
    """Input file locations"""
    triples: Path = Field(description="Graph triple file")
    train: Optional[Path] = Field(default=None, description="Training hypotheses")
    test: Optional[Path] = Field(default=None, description="Test hypotheses")
    types: Optional[Path] = Field(default=None, description="entity<TAB>type file")
    embeddings: Optional[Path] = Field(default=None, description="Pretrained entity embeddings")
    class_edges: Optional[Path] = Field(default=None, description="Ontology child<TAB>parent file")
    annotations: Optional[Path] = Field(default=None, description="Ontology entity<TAB>class file")
    class_labels: Optional[Path] = Field(default=None, description="Ontology class<TAB>label file")
    ground_truth_metapaths: Optional[Path] = Field(default=None, description="One metapath per line")
    symmetric_relations: List[str] = Field(default_factory=list, description="Self-inverse relation labels")
    add_inverses: bool = Field(default=True, description="Close the graph under inverse edges")

    def missing_files(self) -> List[str]:
        missing = []
        for name in ("triples", "train", "test", "types", "embeddings", "class_edges",
                     "annotations", "class_labels", "ground_truth_metapaths"):
            value = getattr(self, name)
            if value is not None and not Path(value).exists():
                missing.append(f"{name}={value}")
        return missing


class InfoContentConfig(ConfiguredBaseModel):
    """How node relevance is scored"""
    mode: ICMode = Field(default=ICMode.CIC_BY_RELATION)
    normalization: Normalization = Field(default=Normalization.LOG_SIZE)
    k: Optional[int] = Field(default=None, ge=1, description="Cluster count; default ceil(10% of entities)")
    max_iters: int = Field(default=100, ge=1)
    embedding_dim: int = Field(default=16, ge=2, description="Dimension of fallback embeddings")
    allow_fallback_embeddings: bool = Field(default=True)


class EvaluationConfig(ConfiguredBaseModel):
    """Ranking protocol"""
    beam_width: int = Field(default=50, ge=1)
    filtered: bool = Field(default=True, description="Report filtered ranks as the headline metrics")
    seeds: List[int] = Field(default_factory=lambda: [0], description="Independent training runs to aggregate")
    histogram_bins: int = Field(default=10, ge=1)
    explain_beam_width: int = Field(default=20, ge=1)
    explain_rollouts: int = Field(default=30, ge=0, description="Extra sampled rollouts when explaining")

    @field_validator("seeds")
    @classmethod
    def validate_seeds(cls, seeds: List[int]) -> List[int]:
        if not seeds or any(s < 0 for s in seeds):
            raise ValueError("seeds must be a non-empty list of non-negative integers")
        return seeds


class RunConfig(ConfiguredBaseModel):
    """A full experiment bundle, loaded from JSON"""
    data: DataConfig
    info_content: InfoContentConfig = Field(default_factory=InfoContentConfig)
    agent: RewardConfig = Field(default_factory=RewardConfig)
    evaluation: EvaluationConfig = Field(default_factory=EvaluationConfig)
    seed: int = Field(default=0, ge=0, description="Top-level seed expanded per phase")
    threads: int = Field(default=1, ge=1, description="Worker cap for rollouts and inference")
    output_dir: Path = Field(default=Path("runs/default"))

    @model_validator(mode='after')
    def validate_files(self) -> 'RunConfig':
        missing = self.data.missing_files()
        if missing:
            raise ValueError(f"Referenced files do not exist: {', '.join(missing)}")
        if (self.data.embeddings is None and not self.info_content.allow_fallback_embeddings
                and self.info_content.mode != ICMode.IC):
            raise ValueError("No embedding file given and fallback embeddings are disabled")
        return self

    @classmethod
    def from_dict(cls, payload: Dict[str, Any], base_dir: Optional[Path] = None) -> "RunConfig":
        """Validate a config dict; relative data paths resolve against ``base_dir``"""
        payload = json.loads(json.dumps(payload))
        if base_dir is not None:
            for key, value in list(payload.get("data", {}).items()):
                if isinstance(value, str) and key != "symmetric_relations" and not Path(value).is_absolute():
                    payload["data"][key] = str(base_dir / value)
        try:
            return cls.model_validate(payload)
        except ValidationError as exc:
            raise ConfigError(f"Invalid configuration: {exc}") from None

    @classmethod
    def from_file(cls, path: Path) -> "RunConfig":
        path = Path(path)
        try:
            payload = json.loads(path.read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"Config file not found: {path}") from None
        except ValueError as exc:
            # JSONDecodeError and UnicodeDecodeError
            raise ConfigError(f"Config file {path} is not valid UTF-8 JSON: {exc}") from None
        return cls.from_dict(payload, base_dir=path.parent)

    def with_overrides(self, seed: Optional[int] = None, threads: Optional[int] = None,
                       output_dir: Optional[Path] = None) -> "RunConfig":
        """Copy with command-line overrides applied and re-validated"""
        payload = self.model_dump(mode="json")
        if seed is not None:
            payload["seed"] = seed
        if threads is not None:
            payload["threads"] = threads
        if output_dir is not None:
            payload["output_dir"] = str(output_dir)
        return RunConfig.from_dict(payload)
