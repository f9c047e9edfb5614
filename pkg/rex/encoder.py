"""Explanation encoder for JSON documents and Graphviz DOT"""
from pathlib import Path
from typing import Union

from rex.core import ExportFormat
from rex.domain.models.explanation import ExplanationSubgraph
from rex.infrastructure.storage import atomic_write_text

CLASS_NODE_STYLE = 'shape=box, style="rounded,filled", fillcolor="#f6e7b4"'
ENTITY_NODE_STYLE = "shape=ellipse"


def _quote(text: str) -> str:
    return '"' + text.replace("\\", "\\\\").replace('"', '\\"') + '"'


class ExplanationEncoder:
    """
    Encodes ExplanationSubgraph objects into JSON or DOT text.
    """

    def __init__(self, format: Union[ExportFormat, str] = ExportFormat.JSON):
        """
        Creates a new encoder instance.

        Args:
            format: Output format, ``json`` or ``dot``
        """
        self.format = ExportFormat(format)

    def encode(self, g: ExplanationSubgraph) -> str:
        if self.format is ExportFormat.DOT:
            return self.encode_dot(g)
        return self.encode_json(g)

    @staticmethod
    def encode_json(g: ExplanationSubgraph) -> str:
        return g.model_dump_json(by_alias=True, indent=2) + "\n"

    @staticmethod
    def decode_json(text: str) -> ExplanationSubgraph:
        return ExplanationSubgraph.model_validate_json(text)

    @staticmethod
    def encode_dot(g: ExplanationSubgraph) -> str:
        """Entities as ellipses, ontology classes as filled boxes, axioms dashed"""
        lines = ["digraph explanation {", "  rankdir=LR;"]
        if g.hypothesis is not None:
            lines.append(f"  label={_quote(' '.join(g.hypothesis))};")
        for entity in g.entities:
            lines.append(f"  {_quote('e:' + entity)} [label={_quote(entity)}, {ENTITY_NODE_STYLE}];")
        for node in g.classes:
            lines.append(f"  {_quote('c:' + node.id)} [label={_quote(node.label)}, {CLASS_NODE_STYLE}];")
        for s, r, o in g.triples:
            lines.append(f"  {_quote('e:' + s)} -> {_quote('e:' + o)} [label={_quote(r)}];")
        for axiom in g.type_axioms():
            lines.append(f"  {_quote('e:' + axiom.entity)} -> {_quote('c:' + axiom.class_)} "
                         f"[label=\"type\", style=dashed];")
        for axiom in g.subclass_axioms():
            lines.append(f"  {_quote('c:' + axiom.child)} -> {_quote('c:' + axiom.parent)} "
                         f"[label=\"subClassOf\", style=dotted];")
        lines.append("}")
        return "\n".join(lines) + "\n"


def export_explanation(g: ExplanationSubgraph, path: Union[str, Path],
                       format: Union[ExportFormat, str] = ExportFormat.JSON) -> Path:
    """Write ``g`` to ``path`` atomically"""
    path = Path(path)
    atomic_write_text(path, ExplanationEncoder(format).encode(g))
    return path
