"""
Artifact persistence: cluster and IC tables, checkpoints, CSV reports and
atomic output directories
"""
import json
import logging
import os
import shutil
import tempfile
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Iterator, Optional, Tuple, Union

import numpy as np
import pandas as pd

from rex.application.services.graph_service import iter_lines, iter_records, vocabulary_hash
from rex.application.services.policy import PolicyParameters
from rex.application.services.trainer import TrainerState
from rex.core import ICMode, Normalization
from rex.domain.models.graph import KnowledgeGraph
from rex.domain.models.info_content import ClusterAssignment, ICTable
from rex.errors import DataError, ParseError, VocabularyMismatchError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]

CHECKPOINT_FORMAT = "rex-checkpoint/1"
ANY_RELATION = "*"


# Atomic writes

def atomic_write_text(path: PathLike, text: str) -> None:
    """Write ``text`` next to ``path`` and move it into place"""
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"Cannot write {path}: {exc}", path=str(path)) from exc


@contextmanager
def atomic_output_dir(final_dir: PathLike) -> Iterator[Path]:
    """
    Stage outputs in a temporary sibling directory

    Files written into the yielded directory are moved into ``final_dir``
    only when the block completes; on error the staging area is discarded.
    """
    final_dir = Path(final_dir)
    try:
        final_dir.parent.mkdir(parents=True, exist_ok=True)
        stage = Path(tempfile.mkdtemp(dir=final_dir.parent, prefix=f".{final_dir.name}.staging-"))
    except OSError as exc:
        raise DataError(f"Cannot create output directory {final_dir}: {exc}", path=str(final_dir)) from exc
    try:
        yield stage
        final_dir.mkdir(parents=True, exist_ok=True)
        for source in sorted(stage.rglob("*")):
            if source.is_dir():
                continue
            target = final_dir / source.relative_to(stage)
            target.parent.mkdir(parents=True, exist_ok=True)
            os.replace(source, target)
    finally:
        shutil.rmtree(stage, ignore_errors=True)


def _fmt(value: float) -> str:
    return repr(float(value))


# Clusters

def save_clusters(clusters: ClusterAssignment, kg: KnowledgeGraph, path: PathLike) -> None:
    lines = [f"# k={clusters.k} seed={clusters.seed} iterations={clusters.iterations}"]
    lines += [f"{kg.entity_labels[v]}\t{int(c)}" for v, c in enumerate(clusters.labels.tolist())]
    atomic_write_text(path, "\n".join(lines) + "\n")


def _parse_header(path: PathLike) -> Dict[str, str]:
    lines = iter_lines(path)
    first = next(lines, (1, ""))[1].strip()
    lines.close()
    if not first.startswith("#"):
        raise ParseError("missing '# key=value' header", path=str(path), line_number=1)
    header = {}
    for token in first[1:].split():
        key, _, value = token.partition("=")
        header[key] = value
    return header


def _optional_int(value: Optional[str]) -> Optional[int]:
    return None if value in (None, "", "None") else int(value)


def load_clusters(path: PathLike, kg: KnowledgeGraph) -> ClusterAssignment:
    header = _parse_header(path)
    labels = np.full(kg.num_entities, -1, dtype=np.int64)
    for line_number, (entity, cluster) in iter_records(path, 2):
        try:
            labels[kg.entity_id(entity)] = int(cluster)
        except (KeyError, ValueError) as exc:
            raise ParseError(str(exc), path=str(path), line_number=line_number) from None
    if np.any(labels < 0):
        missing = kg.entity_labels[int(np.flatnonzero(labels < 0)[0])]
        raise DataError(f"Cluster file {path} does not cover entity '{missing}'", path=str(path))
    return ClusterAssignment(labels=labels, k=int(header["k"]), seed=_optional_int(header.get("seed")),
                             iterations=int(header.get("iterations", 0)))


# IC tables

def save_ic_table(table: ICTable, kg: KnowledgeGraph, path: PathLike, fingerprint: Optional[str] = None) -> None:
    """
    ``entity[<TAB>relation]<TAB>raw<TAB>normalized`` with a one-line header

    In CIC_BY_RELATION mode the relation column is always present; ``*`` marks
    the relation-agnostic fallback score of the entity. ``fingerprint``, when
    given, is stored in the header so stale tables can be detected on reuse.
    """
    lines = [f"# mode={table.mode.value} z={_fmt(table.z)} k={table.k} seed={table.seed} "
             f"normalization={table.normalization.value}"
             + (f" fingerprint={fingerprint}" if fingerprint else "")]
    by_relation = table.mode is ICMode.CIC_BY_RELATION
    for v in range(table.num_entities):
        raw = float(table.node_raw[v])
        if np.isnan(raw):
            continue
        label = kg.entity_labels[v]
        if by_relation:
            lines.append(f"{label}\t{ANY_RELATION}\t{_fmt(raw)}\t{_fmt(table.normalize(raw))}")
        else:
            lines.append(f"{label}\t{_fmt(raw)}\t{_fmt(table.normalize(raw))}")
    if by_relation:
        for v, r, raw, norm in table.rows():
            lines.append(f"{kg.entity_labels[v]}\t{kg.relation_labels[r]}\t{_fmt(raw)}\t{_fmt(norm)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def ic_table_fingerprint(path: PathLike) -> Optional[str]:
    """Fingerprint recorded by ``save_ic_table``, or None for tables written without one"""
    return _parse_header(path).get("fingerprint") or None


def load_ic_table(path: PathLike, kg: KnowledgeGraph, clusters: Optional[ClusterAssignment] = None) -> ICTable:
    """Read a table written by ``save_ic_table``; clustered modes need the cluster assignment"""
    header = _parse_header(path)
    mode = ICMode(header["mode"])
    node_raw = np.full(kg.num_entities, np.nan)
    relation_raw: Dict[Tuple[int, int], float] = {}
    if mode is not ICMode.IC and clusters is None:
        raise DataError(f"{mode.value} table {path} needs its cluster assignment", path=str(path))
    arity = 4 if mode is ICMode.CIC_BY_RELATION else 3
    for line_number, fields in iter_records(path, arity):
        try:
            v = kg.entity_id(fields[0])
            raw = float(fields[-2])
            if arity == 4 and fields[1] != ANY_RELATION:
                relation_raw[(clusters.cluster_of(v), kg.relation_id(fields[1]))] = raw
            else:
                node_raw[v] = raw
        except (KeyError, ValueError) as exc:
            raise ParseError(str(exc), path=str(path), line_number=line_number) from None
    return ICTable(
        mode=mode,
        z=float(header["z"]),
        node_raw=node_raw,
        normalization=Normalization(header.get("normalization", Normalization.LOG_SIZE.value)),
        relation_raw=relation_raw,
        cluster_labels=clusters.labels if clusters is not None else None,
        k=_optional_int(header.get("k")),
        seed=_optional_int(header.get("seed")),
    )


# Checkpoints

@dataclass
class Checkpoint:
    params: PolicyParameters
    state: TrainerState
    config: Dict[str, Any] = field(default_factory=dict)
    meta: Dict[str, Any] = field(default_factory=dict)


def save_checkpoint(path: PathLike, params: PolicyParameters, kg: KnowledgeGraph,
                    state: Optional[TrainerState] = None, config: Optional[Dict[str, Any]] = None) -> Path:
    """Parameters, optimizer moments and metadata in one ``.npz`` archive"""
    path = Path(path)
    state = state or TrainerState()
    arrays = {f"param/{name}": array for name, array in params.items()}
    if state.adam_m is not None and state.adam_v is not None:
        arrays.update({f"adam_m/{name}": array for name, array in state.adam_m.items()})
        arrays.update({f"adam_v/{name}": array for name, array in state.adam_v.items()})
    meta = {
        "format": CHECKPOINT_FORMAT,
        "vocabulary_hash": vocabulary_hash(kg),
        "num_entities": kg.num_entities,
        "num_relations": kg.num_relations,
        "shapes": {name: list(array.shape) for name, array in params.items()},
        "trainer": state.meta(),
        "config": config or {},
    }
    arrays["meta"] = np.array(json.dumps(meta, sort_keys=True))
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
        with os.fdopen(fd, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except OSError as exc:
        raise DataError(f"Cannot write checkpoint {path}: {exc}", path=str(path)) from exc
    logger.info(f"Saved checkpoint {path} (step {state.step}, epoch {state.epoch})")
    return path


def load_checkpoint(path: PathLike, kg: KnowledgeGraph) -> Checkpoint:
    """Load a checkpoint, refusing one trained on a different vocabulary"""
    path = Path(path)
    if not path.exists():
        raise DataError(f"Checkpoint not found: {path}", path=str(path))
    with np.load(path, allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        expected = vocabulary_hash(kg)
        if meta.get("vocabulary_hash") != expected:
            raise VocabularyMismatchError(
                f"Checkpoint {path} was trained on a different vocabulary",
                path=str(path), expected=expected, found=meta.get("vocabulary_hash"),
            )
        names = PolicyParameters.names()
        params = PolicyParameters(**{name: data[f"param/{name}"].astype(np.float64) for name in names})
        trainer = meta.get("trainer", {})
        state = TrainerState(baseline=float(trainer.get("baseline", 0.0)), step=int(trainer.get("step", 0)),
                             epoch=int(trainer.get("epoch", 0)), adam_t=int(trainer.get("adam_t", 0)))
        if f"adam_m/{names[0]}" in data.files:
            state.adam_m = PolicyParameters(**{n: data[f"adam_m/{n}"].astype(np.float64) for n in names})
            state.adam_v = PolicyParameters(**{n: data[f"adam_v/{n}"].astype(np.float64) for n in names})
    params.validate()
    return Checkpoint(params=params, state=state, config=meta.get("config", {}), meta=meta)


# Tabular reports

def write_frame(frame: pd.DataFrame, path: PathLike) -> Path:
    """CSV with shortest round-trip float formatting"""
    path = Path(path)
    atomic_write_text(path, frame.to_csv(index=False, lineterminator="\n"))
    return path


def read_frame(path: PathLike) -> pd.DataFrame:
    path = Path(path)
    if not path.exists():
        raise DataError(f"File not found: {path}", path=str(path))
    return pd.read_csv(path)
