"""File formats: canonical JSON, ILF output CSVs, task bundles and model files.

Canonical JSON sorts object keys and writes every float with 17 significant
digits (always with a decimal point or exponent), so decoding and
re-encoding a file reproduces it byte for byte.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .graph import ABSTAIN, GraphError, IlfSpec, Label, LabelGraph, Relation, Role, from_dag
from .model import Dependency, FactorModel, Family, build_plrm, build_wslg

__all__ = [
    "dumps", "loads", "write_json", "read_json", "write_jsonl", "read_jsonl",
    "graph_to_dict", "graph_from_dict", "dag_from_dict", "ilfs_to_dict", "ilfs_from_dict",
    "write_outputs_csv", "read_outputs_csv", "write_labels_csv", "read_labels_csv",
    "write_matrix_csv", "read_matrix_csv", "model_to_dict", "model_from_dict",
    "content_hash", "posteriors_to_records", "posteriors_from_records",
    "ABSTAIN_CSV",
]

ABSTAIN_CSV = "-"


# ----------------------------------------------------------------------------
# canonical JSON

def _float(x: float) -> str:
    if not math.isfinite(x):
        raise ValueError(f"cannot encode non-finite float {x!r}")
    text = format(x, ".17g")
    if not any(ch in text for ch in ".en"):
        text += ".0"
    return text


def _encode(obj: Any, indent: int | None, level: int) -> str:
    if obj is None or isinstance(obj, (bool, np.bool_)):
        return json.dumps(None if obj is None else bool(obj))
    if isinstance(obj, (int, np.integer)):
        return str(int(obj))
    if isinstance(obj, (float, np.floating)):
        return _float(float(obj))
    if isinstance(obj, str):
        return json.dumps(obj, ensure_ascii=False)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    pad, inner = ("", "") if indent is None else ("\n" + " " * indent * level,
                                                  "\n" + " " * indent * (level + 1))
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        keys = sorted(obj, key=str)
        items = [f"{inner}{json.dumps(str(k), ensure_ascii=False)}:"
                 f"{'' if indent is None else ' '}{_encode(obj[k], indent, level + 1)}"
                 for k in keys]
        return "{" + ",".join(items) + pad + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        items = [inner + _encode(v, indent, level + 1) for v in obj]
        return "[" + ",".join(items) + pad + "]"
    raise TypeError(f"cannot encode {type(obj).__name__}")


def dumps(obj: Any, indent: int | None = 2) -> str:
    return _encode(obj, indent, 0)


def loads(text: str) -> Any:
    return json.loads(text)


def write_json(path, obj: Any) -> None:
    Path(path).write_text(dumps(obj) + "\n", encoding="utf-8")


def read_json(path) -> Any:
    return loads(Path(path).read_text(encoding="utf-8"))


def write_jsonl(path, records: Iterable[Any]) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for rec in records:
            fh.write(dumps(rec, indent=None) + "\n")


def read_jsonl(path) -> list:
    with open(path, encoding="utf-8") as fh:
        return [loads(line) for line in fh if line.strip()]


# ----------------------------------------------------------------------------
# graphs and ILFs

def graph_to_dict(graph: LabelGraph) -> dict:
    return {
        "labels": [{"id": lab.id, "name": lab.name, "role": lab.role.value} for lab in graph.labels],
        "relations": [{"a": a, "b": b, "type": str(r)} for a, b, r in graph.canonical_relations()],
    }


def _label_ref(graph_names: dict, ref) -> int:
    if isinstance(ref, str):
        if ref not in graph_names:
            raise GraphError(f"unknown label {ref!r}")
        return graph_names[ref]
    return int(ref)


def graph_from_dict(d: dict) -> LabelGraph:
    """Parse a graph file; a file with "edges" is read as a label DAG."""
    if "edges" in d:
        return dag_from_dict(d)
    try:
        labels = [Label(int(x["id"]), str(x["name"]), Role(x["role"])) for x in d["labels"]]
    except (KeyError, ValueError) as exc:
        raise GraphError(f"malformed label entry: {exc}") from None
    names = {lab.name: lab.id for lab in labels}
    rel = {}
    for r in d.get("relations", []):
        a, b = _label_ref(names, r["a"]), _label_ref(names, r["b"])
        if (a, b) in rel or (b, a) in rel:
            raise GraphError(f"relation between {a} and {b} given twice")
        rel[(a, b)] = Relation.parse(r["type"])
    return LabelGraph(labels, rel)


def dag_from_dict(d: dict) -> LabelGraph:
    return from_dag([tuple(e) for e in d["edges"]], d["roles"])


def ilfs_to_dict(graph: LabelGraph, ilfs: Sequence[IlfSpec]) -> dict:
    return {"ilfs": [{"id": f.ilf_id,
                      "output_space": [graph.name_of(v) for v in f.output_space],
                      "can_abstain": f.can_abstain} for f in ilfs]}


def ilfs_from_dict(graph: LabelGraph, d: dict) -> tuple[IlfSpec, ...]:
    names = {lab.name: lab.id for lab in graph.labels}
    return tuple(IlfSpec(int(x["id"]), tuple(_label_ref(names, v) for v in x["output_space"]),
                         bool(x.get("can_abstain", True))) for x in d["ilfs"])


def content_hash(graph: LabelGraph, ilfs: Sequence[IlfSpec]) -> str:
    blob = dumps({"graph": graph_to_dict(graph), "ilfs": ilfs_to_dict(graph, ilfs)}, indent=None)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


# ----------------------------------------------------------------------------
# CSV

def write_outputs_csv(path, ilfs: Sequence[IlfSpec], outputs) -> None:
    outputs = np.asarray(outputs, dtype=np.int64)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f.ilf_id for f in ilfs])
        for row in outputs:
            w.writerow([ABSTAIN_CSV if v == ABSTAIN else int(v) for v in row])


def read_outputs_csv(path, ilfs: Sequence[IlfSpec] | None = None) -> np.ndarray:
    """Read an ILF output matrix; columns are reordered to match ilfs when given."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise ValueError(f"{path}: empty outputs file")
    header = [int(h) for h in rows[0]]
    try:
        data = np.array([[ABSTAIN if v.strip() == ABSTAIN_CSV else int(v) for v in r]
                         for r in rows[1:] if r], dtype=np.int64).reshape(-1, len(header))
    except ValueError as exc:
        raise ValueError(f"{path}: bad output entry ({exc})") from None
    if ilfs is None:
        return data
    pos = {h: i for i, h in enumerate(header)}
    missing = [f.ilf_id for f in ilfs if f.ilf_id not in pos]
    if missing:
        raise ValueError(f"{path}: no column for ILF(s) {missing}")
    return data[:, [pos[f.ilf_id] for f in ilfs]]


def write_labels_csv(path, labels, header: str = "label") -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([header])
        for v in np.asarray(labels, dtype=np.int64):
            w.writerow([int(v)])


def read_labels_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([int(r[0]) for r in rows[1:] if r], dtype=np.int64)


def write_matrix_csv(path, X) -> None:
    X = np.asarray(X, dtype=float)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([f"x{i}" for i in range(X.shape[1])])
        for row in X:
            w.writerow([_float(float(v)) for v in row])


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    return np.array([[float(v) for v in r] for r in rows[1:] if r], dtype=float).reshape(
        -1, len(rows[0]) if rows else 0)


# ----------------------------------------------------------------------------
# models and posteriors

def model_to_dict(model: FactorModel) -> dict:
    return {
        "kind": model.kind,
        "include_unknown": model.include_unknown,
        "dependencies": [{"family": str(d.family), "participants": list(d.participants),
                          "relation": None if d.relation is None else str(d.relation)}
                         for d in model.dependencies],
        "theta": [float(t) for t in model.theta],
        "content_hash": content_hash(model.graph, model.ilfs),
        "graph": graph_to_dict(model.graph),
        "ilfs": ilfs_to_dict(model.graph, model.ilfs),
    }


def model_from_dict(d: dict) -> FactorModel:
    graph = graph_from_dict(d["graph"])
    ilfs = ilfs_from_dict(graph, d["ilfs"])
    if content_hash(graph, ilfs) != d.get("content_hash"):
        raise ValueError("model file content hash does not match its graph and ILFs")
    builder = build_plrm if d["kind"] == "plrm" else build_wslg
    model = builder(graph, ilfs, include_unknown=bool(d["include_unknown"]))
    deps = tuple(Dependency(Family[x["family"].upper()], tuple(int(p) for p in x["participants"]),
                            None if x["relation"] is None else Relation.parse(x["relation"]))
                 for x in d["dependencies"])
    if deps != model.dependencies:
        # a reduced factor set (e.g. no pseudo accuracy) is still a valid model
        model = FactorModel(graph, ilfs, deps, np.zeros(len(deps)), bool(d["include_unknown"]),
                            d["kind"])
    return model.with_theta(np.array(d["theta"], dtype=float))


def posteriors_to_records(probs: np.ndarray, names: Sequence[str]) -> list[dict]:
    return [{"point": i, "p": {n: float(p) for n, p in zip(names, row)}}
            for i, row in enumerate(np.asarray(probs, dtype=float))]


def posteriors_from_records(records: Sequence[dict], names: Sequence[str] | None = None):
    """(probs, names) with rows ordered by point index."""
    records = sorted(records, key=lambda r: r["point"])
    if names is None:
        names = list(records[0]["p"]) if records else []
    probs = np.array([[r["p"].get(n, 0.0) for n in names] for r in records], dtype=float)
    return probs.reshape(len(records), len(names)), list(names)
