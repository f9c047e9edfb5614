"""
``rex`` command line: preprocess, train, explain, evaluate, ablate, compare-ic
"""
import argparse
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Set, Tuple

from rex.application.services.evaluation_service import (
    EvaluationService,
    histogram_of,
    load_metapaths,
    match_ground_truth_metapaths,
    save_metapaths,
)
from rex.application.services.explanation_service import explain_hypotheses, load_ontology
from rex.application.services.graph_service import GraphService, PreparedGraph, save_triples
from rex.application.services.info_content_service import InfoContentService
from rex.application.services.trainer import TrainerState, train
from rex.config import PhaseSeeds, RunConfig, configure_logging, default_threads
from rex.core import ExportFormat, Hypothesis, ICMode
from rex.domain.models.evaluation import metrics_frame
from rex.domain.models.explanation import Metapath
from rex.domain.models.graph import KnowledgeGraph
from rex.domain.models.info_content import ICTable
from rex.encoder import ExplanationEncoder
from rex.errors import ConfigError, RexError
from rex.infrastructure.storage import (
    atomic_output_dir,
    atomic_write_text,
    ic_table_fingerprint,
    load_checkpoint,
    load_clusters,
    load_ic_table,
    save_checkpoint,
    save_clusters,
    save_ic_table,
    write_frame,
)

logger = logging.getLogger(__name__)

GRAPH_FILE = "graph.tsv"
CLUSTER_FILE = "clusters.tsv"
IC_FILE = "ic_table.tsv"
CHECKPOINT_FILE = "checkpoint.npz"
TRAINING_LOG_FILE = "training_log.csv"


@dataclass
class Workspace:
    """Everything the commands share, built deterministically from the config"""
    config: RunConfig
    seeds: PhaseSeeds
    graph: PreparedGraph
    info_content: InfoContentService
    threads: int

    @property
    def kg(self) -> KnowledgeGraph:
        return self.graph.kg

    @property
    def train(self) -> List[Hypothesis]:
        return self.graph.train

    @property
    def test(self) -> List[Hypothesis]:
        return self.graph.test

    @property
    def known(self) -> Dict[Tuple[int, int], Set[int]]:
        return self.graph.known

    def evaluation(self) -> EvaluationService:
        return EvaluationService(self.kg, self.train, self.test, _agent_config(self), self.config.evaluation,
                                 self.known, self.threads)


def build_workspace(config: RunConfig) -> Workspace:
    """Load the graph and splits; test edges (and their inverses) are removed from the graph"""
    seeds = PhaseSeeds.expand(config.seed)
    graph = GraphService(config.data).prepare()
    info = InfoContentService(graph.kg, config.info_content, config.data.embeddings,
                              embedding_seed=seeds.embeddings, clustering_seed=seeds.clustering)
    return Workspace(config=config, seeds=seeds, graph=graph, info_content=info, threads=config.threads)


def resolve_threads(config: RunConfig, flag: Optional[int] = None) -> int:
    """``--threads`` first, then a ``threads`` value written in the config, then ``REX_THREADS``"""
    if flag is not None:
        return flag
    if "threads" in config.model_fields_set:
        return config.threads
    return default_threads() or config.threads


def load_or_compute_ic(ws: Workspace) -> ICTable:
    """Reuse the preprocess IC table when its fingerprint matches the current inputs"""
    out = Path(ws.config.output_dir)
    mode = ICMode(ws.config.info_content.mode)
    if (out / IC_FILE).exists() and (mode is ICMode.IC or (out / CLUSTER_FILE).exists()):
        expected = ws.info_content.fingerprint()
        if ic_table_fingerprint(out / IC_FILE) == expected:
            clusters = load_clusters(out / CLUSTER_FILE, ws.kg) if mode is not ICMode.IC else None
            logger.info(f"Reusing {out / IC_FILE}")
            return load_ic_table(out / IC_FILE, ws.kg, clusters)
        logger.info(f"{out / IC_FILE} was built from other inputs; recomputing")
    table, _ = ws.info_content.table()
    return table


def _agent_config(ws: Workspace):
    return ws.config.agent.model_copy(update={"seed": ws.seeds.training})


def _require(hypotheses: Sequence[Hypothesis], name: str) -> None:
    if not hypotheses:
        raise ConfigError(f"The config has no {name} split")


# Commands

def cmd_preprocess(ws: Workspace, args: argparse.Namespace) -> None:
    table, clusters = ws.info_content.table()
    if clusters is None and ws.info_content.can_cluster:
        clusters = ws.info_content.clusters()
    with atomic_output_dir(ws.config.output_dir) as stage:
        save_triples(ws.kg, stage / GRAPH_FILE)
        if clusters is not None:
            save_clusters(clusters, ws.kg, stage / CLUSTER_FILE)
        save_ic_table(table, ws.kg, stage / IC_FILE, fingerprint=ws.info_content.fingerprint())
    logger.info(f"Preprocessed {len(ws.kg)} triples into {ws.config.output_dir}")


def cmd_train(ws: Workspace, args: argparse.Namespace) -> None:
    _require(ws.train, "train")
    table = load_or_compute_ic(ws)
    cfg = _agent_config(ws)
    params, state = None, None
    if args.resume:
        checkpoint = load_checkpoint(args.resume, ws.kg)
        params, state = checkpoint.params, checkpoint.state
        logger.info(f"Resuming from epoch {state.epoch}, step {state.step}")
    if state is None:
        state = TrainerState()
    params, log = train(ws.kg, ws.train, cfg, ic_table=table, params=params, state=state,
                        threads=ws.threads, init_seed=ws.seeds.policy_init, progress=args.progress)
    with atomic_output_dir(ws.config.output_dir) as stage:
        save_checkpoint(stage / CHECKPOINT_FILE, params, ws.kg, state, config=cfg.model_dump(mode="json"))
        write_frame(log.to_frame(), stage / TRAINING_LOG_FILE)
    if log.records:
        print(f"trained {state.step} steps, final mean reward {log.records[-1].mean_reward:.4f}")


def _checkpoint_path(ws: Workspace, args: argparse.Namespace) -> Path:
    return Path(args.checkpoint) if args.checkpoint else Path(ws.config.output_dir) / CHECKPOINT_FILE


def _parse_hypothesis(ws: Workspace, fields: Sequence[str]) -> Hypothesis:
    s, r, o = fields
    try:
        obj = None if o == "?" else ws.kg.entity_id(o)
        return Hypothesis(subject=ws.kg.entity_id(s), relation=ws.kg.relation_id(r), object=obj)
    except (KeyError, ValueError) as exc:
        raise ConfigError(f"Invalid hypothesis {tuple(fields)}: {exc}") from None


def cmd_explain(ws: Workspace, args: argparse.Namespace) -> None:
    hypotheses = [_parse_hypothesis(ws, args.hypothesis)] if args.hypothesis else ws.test
    _require(hypotheses, "test")
    data, ev = ws.config.data, ws.config.evaluation
    table = load_or_compute_ic(ws)
    params = load_checkpoint(_checkpoint_path(ws, args), ws.kg).params
    ont = None
    if data.class_edges is not None and data.annotations is not None:
        ont = load_ontology(data.class_edges, data.annotations, ws.kg, data.class_labels)
    documents, stats = explain_hypotheses(ws.kg, params, hypotheses, _agent_config(ws), table, ont,
                                          beam_width=ev.explain_beam_width, rollouts=ev.explain_rollouts,
                                          seed=ws.seeds.evaluation)
    json_encoder, dot_encoder = ExplanationEncoder(ExportFormat.JSON), ExplanationEncoder(ExportFormat.DOT)
    with atomic_output_dir(Path(ws.config.output_dir) / "explanations") as stage:
        for i, document in enumerate(documents):
            name = "explanation" if args.hypothesis else f"explanation_{i:04d}"
            atomic_write_text(stage / f"{name}.json", json_encoder.encode(document))
            atomic_write_text(stage / f"{name}.dot", dot_encoder.encode(document))
            if document.is_empty:
                logger.info(f"{' '.join(document.hypothesis or ())}: no explanation found")
        atomic_write_text(stage / "stats.json", stats.model_dump_json(indent=2) + "\n")
        found = [Metapath.from_line(line) for line, count in stats.metapath_counts.items() for _ in range(count)]
        save_metapaths(sorted(set(found), key=lambda m: m.elements), stage / "found_metapaths.txt")
        if data.ground_truth_metapaths is not None:
            match = match_ground_truth_metapaths(found, load_metapaths(data.ground_truth_metapaths))
            atomic_write_text(stage / "metapath_match.json", json.dumps(match.summary(), indent=2) + "\n")
    print(f"explained {stats.explained}/{stats.hypotheses} hypotheses")


def cmd_evaluate(ws: Workspace, args: argparse.Namespace) -> None:
    _require(ws.test, "test")
    ev = ws.config.evaluation
    table = load_or_compute_ic(ws)
    service = ws.evaluation()
    checkpoint = _checkpoint_path(ws, args)
    if checkpoint.exists():
        aggregate = service.evaluate_policy(load_checkpoint(checkpoint, ws.kg).params, table)
    else:
        _require(ws.train, "train")
        aggregate = service.train_and_evaluate(table)
    relevances = [v for run in aggregate.runs for v in run.relevances]
    with atomic_output_dir(ws.config.output_dir) as stage:
        write_frame(metrics_frame([aggregate]), stage / "metrics.csv")
        atomic_write_text(stage / "evaluation.json", aggregate.model_dump_json(indent=2) + "\n")
        if relevances:
            write_frame(histogram_of(relevances, ev.histogram_bins).to_frame(), stage / "ic_histogram.csv")
    print(f"MRR {aggregate.mrr:.4f} (std {aggregate.std_mrr:.4f}), Hits@1 {aggregate.hits1:.4f}, "
          f"Hits@3 {aggregate.hits3:.4f}, Hits@10 {aggregate.hits10:.4f}")


def cmd_ablate(ws: Workspace, args: argparse.Namespace) -> None:
    _require(ws.train, "train")
    _require(ws.test, "test")
    report = ws.evaluation().ablate(load_or_compute_ic(ws))
    with atomic_output_dir(ws.config.output_dir) as stage:
        write_frame(report.to_frame(), stage / "ablation.csv")
        for name, histogram in report.histograms.items():
            write_frame(histogram.to_frame(), stage / "histograms" / f"{name.replace(' ', '_')}.csv")
    print(report.to_frame().to_string(index=False))


def cmd_compare_ic(ws: Workspace, args: argparse.Namespace) -> None:
    _require(ws.train, "train")
    _require(ws.test, "test")
    frame = ws.evaluation().compare_ic(ws.info_content.clusters(), ws.config.info_content.normalization)
    with atomic_output_dir(ws.config.output_dir) as stage:
        write_frame(frame, stage / "ic_comparison.csv")
    print(frame.to_string(index=False))


COMMANDS = {
    "preprocess": cmd_preprocess,
    "train": cmd_train,
    "explain": cmd_explain,
    "evaluate": cmd_evaluate,
    "ablate": cmd_ablate,
    "compare-ic": cmd_compare_ic,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="rex", description="Relevant explanations for knowledge-graph hypotheses")
    subparsers = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sub = subparsers.add_parser(name)
        sub.add_argument("--config", required=True, type=Path, help="JSON run configuration")
        sub.add_argument("--seed", type=int, help="Override the top-level seed")
        sub.add_argument("--threads", type=int, help="Worker cap (default: the config, then REX_THREADS)")
        sub.add_argument("--out", type=Path, help="Override the output directory")
        if name == "train":
            sub.add_argument("--resume", type=Path, help="Checkpoint to continue from")
            sub.add_argument("--progress", action="store_true", help="Show a progress bar")
        if name in ("explain", "evaluate"):
            sub.add_argument("--checkpoint", type=Path, help="Checkpoint (default: <out>/checkpoint.npz)")
        if name == "explain":
            sub.add_argument("--hypothesis", nargs=3, metavar=("SUBJECT", "RELATION", "OBJECT"),
                             help="Explain one hypothesis instead of the test split")
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        configure_logging()
        config = RunConfig.from_file(args.config)
        config = config.with_overrides(seed=args.seed, threads=resolve_threads(config, args.threads),
                                       output_dir=args.out)
        ws = build_workspace(config)
        COMMANDS[args.command](ws, args)
    except RexError as exc:
        logger.error(f"{exc.code}: {exc}")
        return exc.exit_code
    return 0


if __name__ == "__main__":
    sys.exit(main())
