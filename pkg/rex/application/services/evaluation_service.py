"""
Ranking evaluation, ablations, IC-variant comparison, relevance histograms
and ground-truth metapath matching
"""
import logging
import math
from collections import Counter
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Iterable, List, Mapping, Optional, Sequence, Set, Tuple, Union

import numpy as np
import pandas as pd

from rex.application.schemas.config_schemas import EvaluationConfig, RewardConfig
from rex.application.services.beam_search import beam_search_infer
from rex.application.services.graph_service import iter_lines
from rex.application.services.info_content_service import compute_ic_table, path_relevance
from rex.application.services.policy import PolicyParameters
from rex.application.services.trainer import train
from rex.core import Hypothesis, ICMode, Normalization
from rex.domain.models.evaluation import (
    ABLATION_VARIANTS,
    AblationReport,
    AggregateResult,
    EvalResult,
    Histogram,
    MetapathMatch,
    metrics_frame,
)
from rex.domain.models.explanation import Metapath
from rex.domain.models.graph import KnowledgeGraph
from rex.domain.models.info_content import ClusterAssignment, ICTable
from rex.domain.models.trajectory import GraphPath
from rex.errors import ContractViolation, ParseError, VocabularyMismatchError
from rex.infrastructure.storage import atomic_write_text

logger = logging.getLogger(__name__)

Rank = Union[int, float]
KnownAnswers = Mapping[Tuple[int, int], Set[int]]


# Metrics

def rank_of_target(ranked: Sequence[int], target: int, known: Optional[Iterable[int]] = None,
                   filtered: bool = True) -> Rank:
    """
    1-based rank of ``target`` in a deduplicated answer list

    With ``filtered`` the other known answers are removed first. An absent
    target has rank ``math.inf``.
    """
    others = set(known or ()) - {target} if filtered else set()
    position = 0
    for entity in ranked:
        if entity in others:
            continue
        position += 1
        if entity == target:
            return position
    return math.inf


def _check_ranks(ranks: Sequence[Rank]) -> None:
    if len(ranks) == 0:
        raise ContractViolation("Metrics need at least one rank")


def hits_at_k(ranks: Sequence[Rank], k: int) -> float:
    _check_ranks(ranks)
    return sum(1 for r in ranks if r <= k) / len(ranks)


def mrr(ranks: Sequence[Rank]) -> float:
    _check_ranks(ranks)
    return sum(0.0 if math.isinf(r) else 1.0 / r for r in ranks) / len(ranks)


def _as_optional(rank: Rank) -> Optional[int]:
    return None if math.isinf(rank) else int(rank)


# Evaluation

def evaluate(kg: KnowledgeGraph, params: PolicyParameters, test_hypotheses: Sequence[Hypothesis],
             cfg: RewardConfig, beam_width: int = 50, known: Optional[KnownAnswers] = None,
             filtered: bool = True, ic_table: Optional[ICTable] = None, seed: Optional[int] = None,
             threads: int = 1) -> EvalResult:
    """
    Rank the true object of every test hypothesis with beam search

    Args:
        kg: Graph the policy decodes on (test edges removed)
        params: Trained policy
        test_hypotheses: Hypotheses with known objects
        cfg: Agent settings (``max_len`` matters here)
        beam_width: Beam width
        known: (subject, relation) -> every known object, for filtering
        filtered: Whether the headline metrics use filtered ranks
        ic_table: Scores the relevance of each reached target's path
        seed: Recorded in the result
        threads: Query workers

    Returns:
        EvalResult with filtered and raw ranks
    """
    if params.entity_emb.shape[0] != kg.num_entities or params.relation_emb.shape[0] != kg.num_relations:
        raise VocabularyMismatchError("Policy parameters do not match the graph vocabulary")
    queries = [h for h in test_hypotheses if h.object is not None]
    if not queries:
        raise ContractViolation("Evaluation needs hypotheses with known objects")
    known = known or {}
    table = ic_table if ic_table is not None else cfg.ic_table

    def run(h: Hypothesis):
        answers = beam_search_infer(kg, params, h.subject, h.relation, beam_width, cfg.max_len)
        ranked = [a.entity for a in answers]
        others = known.get((h.subject, h.relation), set())
        path = next((a.path for a in answers if a.entity == h.object), None)
        return (rank_of_target(ranked, h.object, others, True),
                rank_of_target(ranked, h.object, others, False), path)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(run, queries))
    else:
        outcomes = [run(h) for h in queries]

    filtered_ranks = [o[0] for o in outcomes]
    raw_ranks = [o[1] for o in outcomes]
    headline = filtered_ranks if filtered else raw_ranks
    relevances = []
    if table is not None:
        relevances = [path_relevance(table, o[2]) for o in outcomes if o[2] is not None and len(o[2])]
    result = EvalResult(
        hits1=hits_at_k(headline, 1), hits3=hits_at_k(headline, 3), hits10=hits_at_k(headline, 10),
        mrr=mrr(headline), ranks=[_as_optional(r) for r in headline],
        raw_ranks=[_as_optional(r) for r in raw_ranks], raw_mrr=mrr(raw_ranks),
        filtered=filtered, seed=seed, relevances=relevances,
    )
    logger.info(f"Evaluated {len(queries)} queries: MRR {result.mrr:.4f}, Hits@10 {result.hits10:.4f}")
    return result


def aggregate_results(results: Sequence[EvalResult], variant: str = "REx") -> AggregateResult:
    """Mean and population standard deviation across seeds"""
    if not results:
        raise ContractViolation("Nothing to aggregate")

    def stats(name: str) -> Tuple[float, float]:
        values = np.array([getattr(r, name) for r in results], dtype=np.float64)
        return float(values.mean()), float(values.std())

    h1, h3, h10, m = stats("hits1"), stats("hits3"), stats("hits10"), stats("mrr")
    return AggregateResult(variant=variant, hits1=h1[0], hits3=h3[0], hits10=h10[0], mrr=m[0],
                           std_hits1=h1[1], std_hits3=h3[1], std_hits10=h10[1], std_mrr=m[1],
                           runs=list(results))


def run_seed(training_seed: int, eval_seed: int) -> int:
    """Seed of one evaluation run, derived from the training phase seed"""
    return int(np.random.SeedSequence([int(training_seed), int(eval_seed)]).generate_state(1)[0])


def train_and_evaluate(kg: KnowledgeGraph, train_hypotheses: Sequence[Hypothesis],
                       test_hypotheses: Sequence[Hypothesis], cfg: RewardConfig, ic_table: Optional[ICTable],
                       seeds: Sequence[int], beam_width: int = 50, known: Optional[KnownAnswers] = None,
                       filtered: bool = True, variant: str = "REx", threads: int = 1) -> AggregateResult:
    """
    Train one policy per evaluation seed and aggregate their evaluation

    Run ``i`` trains with ``run_seed(cfg.seed, seeds[i])``, so changing the
    top-level seed changes every run.
    """
    results = []
    for seed in seeds:
        training_seed = run_seed(cfg.seed, seed)
        run_cfg = cfg.model_copy(update={"seed": training_seed})
        params, _ = train(kg, train_hypotheses, run_cfg, ic_table=ic_table, threads=threads)
        result = evaluate(kg, params, test_hypotheses, run_cfg, beam_width, known, filtered,
                          ic_table=ic_table, seed=int(seed), threads=threads)
        results.append(result.model_copy(update={"training_seed": training_seed}))
    return aggregate_results(results, variant)


def run_ablation(kg: KnowledgeGraph, train_hypotheses: Sequence[Hypothesis], test_hypotheses: Sequence[Hypothesis],
                 base_cfg: RewardConfig, ic_table: ICTable, seeds: Sequence[int] = (0,), beam_width: int = 50,
                 known: Optional[KnownAnswers] = None, filtered: bool = True, bins: int = 10,
                 threads: int = 1) -> AblationReport:
    """
    Train and evaluate the four (early stop, relevance) variants under identical seeds

    Each variant also gets a histogram of the relevance of the paths it used
    to reach correct answers.
    """
    rows, histograms = [], {}
    for variant in ABLATION_VARIANTS:
        cfg = base_cfg.model_copy(update={"use_early_stop": variant.use_early_stop,
                                          "use_relevance": variant.use_relevance})
        logger.info(f"Ablation variant {variant.name}")
        row = train_and_evaluate(kg, train_hypotheses, test_hypotheses, cfg, ic_table, seeds, beam_width,
                                 known, filtered, variant.name, threads)
        rows.append(row)
        values = [v for run in row.runs for v in run.relevances]
        if values:
            histograms[variant.name] = histogram_of(values, bins)
    return AblationReport(rows=rows, histograms=histograms)


def compare_ic_modes(kg: KnowledgeGraph, train_hypotheses: Sequence[Hypothesis],
                     test_hypotheses: Sequence[Hypothesis], cfg: RewardConfig, clusters: ClusterAssignment,
                     seeds: Sequence[int] = (0,), beam_width: int = 50, known: Optional[KnownAnswers] = None,
                     normalization: Normalization = Normalization.LOG_SIZE, filtered: bool = True,
                     threads: int = 1) -> pd.DataFrame:
    """One train + evaluate run per IC mode with everything else held fixed"""
    rows = []
    for mode in ICMode:
        table = compute_ic_table(kg, mode, clusters=None if mode is ICMode.IC else clusters,
                                 normalization=normalization)
        rows.append(train_and_evaluate(kg, train_hypotheses, test_hypotheses, cfg, table, seeds, beam_width,
                                       known, filtered, mode.value, threads))
    return metrics_frame(rows)


class EvaluationService:
    """Ranking experiments over one prepared graph and its splits"""

    def __init__(self, kg: KnowledgeGraph, train_hypotheses: Sequence[Hypothesis],
                 test_hypotheses: Sequence[Hypothesis], agent: RewardConfig, settings: EvaluationConfig,
                 known: Optional[KnownAnswers] = None, threads: int = 1):
        self.kg = kg
        self.train_hypotheses = list(train_hypotheses)
        self.test_hypotheses = list(test_hypotheses)
        self.agent = agent
        self.settings = settings
        self.known = known or {}
        self.threads = threads

    def evaluate_policy(self, params: PolicyParameters, ic_table: Optional[ICTable]) -> AggregateResult:
        """
        Evaluate an already trained policy

        Args:
            params: Policy weights, e.g. from a checkpoint
            ic_table: Scores the relevance of the paths that reach targets

        Returns:
            AggregateResult holding the single run
        """
        result = evaluate(self.kg, params, self.test_hypotheses, self.agent, self.settings.beam_width,
                          self.known, self.settings.filtered, ic_table=ic_table, seed=self.agent.seed,
                          threads=self.threads)
        return aggregate_results([result])

    def train_and_evaluate(self, ic_table: Optional[ICTable], variant: str = "REx") -> AggregateResult:
        return train_and_evaluate(self.kg, self.train_hypotheses, self.test_hypotheses, self.agent, ic_table,
                                  self.settings.seeds, self.settings.beam_width, self.known,
                                  self.settings.filtered, variant, self.threads)

    def ablate(self, ic_table: ICTable) -> AblationReport:
        return run_ablation(self.kg, self.train_hypotheses, self.test_hypotheses, self.agent, ic_table,
                            self.settings.seeds, self.settings.beam_width, self.known, self.settings.filtered,
                            self.settings.histogram_bins, self.threads)

    def compare_ic(self, clusters: ClusterAssignment,
                   normalization: Normalization = Normalization.LOG_SIZE) -> pd.DataFrame:
        return compare_ic_modes(self.kg, self.train_hypotheses, self.test_hypotheses, self.agent, clusters,
                                self.settings.seeds, self.settings.beam_width, self.known, normalization,
                                self.settings.filtered, self.threads)


# Relevance distribution

def histogram_of(values: Sequence[float], bins: int) -> Histogram:
    if bins < 1:
        raise ContractViolation("bins must be at least 1")
    if len(values) == 0:
        raise ContractViolation("Histogram of an empty set")
    clipped = np.clip(np.asarray(values, dtype=np.float64), 0.0, 1.0)
    counts, edges = np.histogram(clipped, bins=bins, range=(0.0, 1.0))
    return Histogram(edges=edges.tolist(), counts=counts.tolist())


def ic_distribution(paths: Iterable[GraphPath], ic_table: ICTable, bins: int = 10) -> Histogram:
    """Histogram of path relevance over [0, 1]"""
    values = [path_relevance(ic_table, p) for p in paths]
    return histogram_of(values, bins)


# Metapaths

def load_metapaths(path: Union[str, Path]) -> List[Metapath]:
    """One ``|``-separated metapath per line; blank and ``#`` lines skipped"""
    metapaths = []
    for line_number, line in iter_lines(path):
        if not line.strip() or line.startswith("#"):
            continue
        try:
            metapaths.append(Metapath.from_line(line))
        except ValueError as exc:
            raise ParseError(f"invalid metapath: {exc}", path=str(path), line_number=line_number) from None
    return metapaths


def save_metapaths(metapaths: Iterable[Metapath], path: Union[str, Path]) -> None:
    atomic_write_text(path, "".join(m.to_line() + "\n" for m in metapaths))


def _vocabulary(metapaths: Iterable[Metapath]) -> Tuple[Set[str], Set[str]]:
    types, relations = set(), set()
    for m in metapaths:
        types.update(m.types)
        relations.update(m.relations)
    return types, relations


def match_ground_truth_metapaths(found: Iterable[Metapath], gt: Iterable[Metapath]) -> MetapathMatch:
    """
    Exact-sequence matching of found metapaths against a reference set

    ``found`` may repeat metapaths; repetitions become the frequency counts.
    """
    found = list(found)
    reference = set(gt)
    counts = Counter(found)
    distinct = set(counts)
    found_types, found_relations = _vocabulary(distinct)
    gt_types, gt_relations = _vocabulary(reference)
    unknown = sorted((found_types - gt_types) | (found_relations - gt_relations))
    if reference and unknown:
        logger.warning(f"Found metapaths use {len(unknown)} labels absent from the ground truth: "
                       f"{', '.join(unknown[:5])}")
    matched = distinct & reference
    return MetapathMatch(matched=matched, novel=distinct - reference, missing=reference - distinct,
                         counts=dict(counts.most_common()))
