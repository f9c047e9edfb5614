"""Evaluation results, ablation tables and histograms"""
import math
from typing import Dict, List, Optional, Set, Tuple

import pandas as pd
from pydantic import Field, model_validator

from rex.core import ConfiguredBaseModel
from rex.domain.models.explanation import Metapath

METRICS_COLUMNS = ["variant", "hits1", "hits3", "hits10", "mrr", "std_mrr"]
HISTOGRAM_COLUMNS = ["bin_low", "bin_high", "count"]


class EvalResult(ConfiguredBaseModel):
    """Ranking metrics of one trained policy; unreached targets have rank None"""
    hits1: float = Field(ge=0.0, le=1.0)
    hits3: float = Field(ge=0.0, le=1.0)
    hits10: float = Field(ge=0.0, le=1.0)
    mrr: float = Field(ge=0.0, le=1.0)
    ranks: List[Optional[int]] = Field(default_factory=list)
    raw_ranks: List[Optional[int]] = Field(default_factory=list)
    raw_mrr: float = Field(default=0.0, ge=0.0, le=1.0)
    filtered: bool = True
    seed: Optional[int] = None
    training_seed: Optional[int] = Field(default=None, description="Seed the policy was trained with")
    relevances: List[float] = Field(default_factory=list, description="Relevance of the best path to each reached target")

    @model_validator(mode="after")
    def validate_monotone(self) -> "EvalResult":
        tolerance = 1e-12
        if not (self.hits1 <= self.hits3 + tolerance and self.hits3 <= self.hits10 + tolerance):
            raise ValueError("hits@k must be nondecreasing in k")
        if self.hits1 > self.mrr + tolerance:
            raise ValueError("mrr cannot be below hits@1")
        return self

    @property
    def rank_values(self) -> List[float]:
        return [math.inf if r is None else float(r) for r in self.ranks]


class AggregateResult(ConfiguredBaseModel):
    """Mean and standard deviation over independently seeded runs"""
    variant: str = "REx"
    hits1: float
    hits3: float
    hits10: float
    mrr: float
    std_hits1: float = 0.0
    std_hits3: float = 0.0
    std_hits10: float = 0.0
    std_mrr: float = 0.0
    runs: List[EvalResult] = Field(default_factory=list)

    def row(self) -> Dict[str, object]:
        return {"variant": self.variant, "hits1": self.hits1, "hits3": self.hits3,
                "hits10": self.hits10, "mrr": self.mrr, "std_mrr": self.std_mrr}


def metrics_frame(results: List[AggregateResult]) -> pd.DataFrame:
    return pd.DataFrame([r.row() for r in results], columns=METRICS_COLUMNS)


class Histogram(ConfiguredBaseModel):
    """Counts over equal-width bins of [0, 1]; the last bin is closed"""
    edges: List[float]
    counts: List[int]

    @property
    def total(self) -> int:
        return int(sum(self.counts))

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({"bin_low": self.edges[:-1], "bin_high": self.edges[1:], "count": self.counts},
                            columns=HISTOGRAM_COLUMNS)


class AblationVariant(ConfiguredBaseModel):
    name: str
    use_early_stop: bool
    use_relevance: bool


ABLATION_VARIANTS: Tuple[AblationVariant, ...] = (
    AblationVariant(name="REx", use_early_stop=True, use_relevance=True),
    AblationVariant(name="REx -s", use_early_stop=False, use_relevance=True),
    AblationVariant(name="REx -r", use_early_stop=True, use_relevance=False),
    AblationVariant(name="REx -rs", use_early_stop=False, use_relevance=False),
)


class AblationReport(ConfiguredBaseModel):
    rows: List[AggregateResult]
    histograms: Dict[str, Histogram] = Field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        return metrics_frame(self.rows)


class MetapathMatch(ConfiguredBaseModel):
    """Found metapaths split into those in the reference set and novel ones"""
    matched: Set[Metapath]
    novel: Set[Metapath]
    missing: Set[Metapath] = Field(default_factory=set, description="Reference metapaths never found")
    counts: Dict[Metapath, int] = Field(default_factory=dict)

    def summary(self) -> Dict[str, int]:
        return {"found": len(self.matched) + len(self.novel), "matched": len(self.matched),
                "novel": len(self.novel), "missing": len(self.missing)}
