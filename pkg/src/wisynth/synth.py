"""Synthetic weak indirect supervision tasks and evaluation metrics.

A task is a random label taxonomy (converted to a label graph), a set of
ILFs over the seen labels, gold desired labels and the ILF output matrix.
Each ILF votes, when it does not abstain, for a seen label compatible with
the gold label (non-exclusive to it) with probability equal to its accuracy
and for an incompatible one otherwise, uniformly within each group.
"""
from __future__ import annotations

import itertools
from dataclasses import asdict, dataclass, field, replace
from typing import Sequence

import numpy as np

from . import inference as inf
from .graph import (ABSTAIN, GraphError, IlfSpec, Label, LabelGraph, Relation,
                    check_consistency, check_distinguishability, from_dag)
from .model import FactorModel

__all__ = [
    "SimSpec", "Task", "Metrics", "generate_task", "generate_paired_tasks",
    "sample_from_model", "evaluate", "gaussian_features", "emit_ilf_outputs",
]

# stream keys for the per-task seed sequence
_STRUCTURE, _GOLD, _ILF_BASE, _BREAKER = 0, 1, 100, 99


@dataclass(frozen=True)
class SimSpec:
    """Parameters of a synthetic task.

    kind_weights sets how often a new seen label is a child of an existing
    label, a parent of several desired labels, or overlaps desired labels.
    accuracies / abstain_rates give per-ILF values; when accuracies is None
    each ILF draws one uniformly from accuracy_range.
    """

    k: int = 3
    k_hat: int = 6
    kind_weights: tuple[float, float, float] = (0.4, 0.35, 0.25)
    n_ilfs: int = 6
    space_size: int = 3
    accuracies: tuple[float, ...] | None = None
    accuracy_range: tuple[float, float] = (0.55, 0.95)
    abstain_rate: float = 0.1
    m: int = 500
    force_indistinct_pair: bool = False
    rng_seed: int = 0
    max_retries: int = 200

    def __post_init__(self):
        if self.k < 2 or self.k_hat < 1:
            raise ValueError("need at least two desired labels and one seen label")
        if self.n_ilfs < 1 or self.space_size < 1 or self.m < 1:
            raise ValueError("n_ilfs, space_size and m must be positive")
        if len(self.kind_weights) != 3 or min(self.kind_weights) < 0 or sum(self.kind_weights) <= 0:
            raise ValueError("kind_weights must be three non-negative numbers, not all zero")
        lo, hi = self.accuracy_range
        if not 0 <= lo <= hi <= 1:
            raise ValueError("accuracy_range must satisfy 0 <= lo <= hi <= 1")
        if self.accuracies is not None:
            if len(self.accuracies) != self.n_ilfs:
                raise ValueError("need one accuracy per ILF")
            if not all(0 <= a <= 1 for a in self.accuracies):
                raise ValueError("accuracies must lie in [0, 1]")
        if not 0 <= self.abstain_rate < 1:
            raise ValueError("abstain_rate must lie in [0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["kind_weights"] = list(self.kind_weights)
        d["accuracy_range"] = list(self.accuracy_range)
        if self.accuracies is not None:
            d["accuracies"] = list(self.accuracies)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SimSpec":
        d = dict(d)
        for key in ("kind_weights", "accuracy_range", "accuracies"):
            if d.get(key) is not None:
                d[key] = tuple(d[key])
        return cls(**d)


@dataclass
class Task:
    graph: LabelGraph
    ilfs: tuple[IlfSpec, ...]
    gold: np.ndarray
    outputs: np.ndarray
    spec: SimSpec
    accuracies: tuple[float, ...]
    info: dict = field(default_factory=dict)


def _streams(seed: int):
    root = np.random.SeedSequence(int(seed))

    def rng(key: int) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(root.entropy, spawn_key=(key,)))

    return rng


def _random_taxonomy(spec: SimSpec, rng: np.random.Generator, twin: bool):
    """Edges (parent, child) over names d0.., s0.. and the planted twin pair.

    Desired labels never get a common descendant, so they stay exclusive.
    With twin=True the last two desired labels share parents and have no
    descendants, which makes their relation vectors identical.
    """
    desired = [f"d{i}" for i in range(spec.k)]
    seen = [f"s{i}" for i in range(spec.k_hat)]
    edges: set[tuple[str, str]] = set()
    owner: dict[str, str] = {}             # seen label inside a single desired label
    free = desired[:-2] if twin else desired
    weights = np.asarray(spec.kind_weights, dtype=float) / sum(spec.kind_weights)
    for s in seen:
        kind = rng.choice(3, p=weights)
        inner = [c for c in owner if owner[c] in free]
        if kind == 2 and len({owner[c] for c in inner}) < 2:
            kind = 1
        if kind == 0 and free:
            parents = free + [c for c in owner if owner[c] in free]
            p = parents[rng.integers(len(parents))]
            edges.add((p, s))
            owner[s] = owner.get(p, p)
        elif kind == 2:
            by_label: dict[str, list[str]] = {}
            for c in inner:
                by_label.setdefault(owner[c], []).append(c)
            labels = sorted(by_label)
            pick = rng.choice(len(labels), size=int(rng.integers(2, len(labels) + 1)), replace=False)
            for i in sorted(pick):
                group = by_label[labels[i]]
                edges.add((s, group[rng.integers(len(group))]))
            # a fresh leaf keeps s from being swallowed by any single label
            edges.add((s, f"{s}_x"))
        else:
            size = int(rng.integers(1, spec.k))
            for i in sorted(rng.choice(spec.k, size=size, replace=False)):
                edges.add((s, desired[i]))
    if twin:
        a, b = desired[-2], desired[-1]
        for s, c in list(edges):
            if c == a:
                edges.add((s, b))
            elif c == b:
                edges.add((s, a))
    return desired, seen, edges


def _graph_from_taxonomy(desired, seen, edges) -> LabelGraph:
    extra = sorted({c for _, c in edges if c not in desired and c not in seen})
    roles = {d: "desired" for d in desired}
    roles.update({s: "seen" for s in seen})
    # helper leaves only shape the set semantics; they are dropped afterwards
    roles.update({x: "seen" for x in extra})
    full = from_dag(sorted(edges), roles)
    keep = [full.id_of(n) for n in desired + seen]
    labels = [Label(i, full.name_of(o), full.role_of(o)) for i, o in enumerate(keep)]
    rel = {(i, j): full.relation(keep[i], keep[j])
           for i, j in itertools.combinations(range(len(keep)), 2)}
    return LabelGraph(labels, rel)


def _random_ilfs(graph: LabelGraph, spec: SimSpec, rng: np.random.Generator):
    seen = np.array(graph.seen)
    size = min(spec.space_size, len(seen))
    ilfs = []
    for j in range(spec.n_ilfs):
        space = tuple(sorted(int(v) for v in rng.choice(seen, size=size, replace=False)))
        ilfs.append(IlfSpec(j, space))
    return tuple(ilfs)


def emit_ilf_outputs(graph: LabelGraph, ilf: IlfSpec, gold: np.ndarray, accuracy: float,
                     abstain: float, rng: np.random.Generator) -> np.ndarray:
    """One ILF's votes for every gold label.

    Each vote is compatible with the gold label with probability accuracy.
    A compatible draw for a gold label with no compatible output becomes an
    abstention; an incompatible draw with no incompatible output falls back
    to a compatible one.
    """
    m = len(gold)
    u = rng.random((m, 3))
    out = np.full(m, ABSTAIN, dtype=np.int64)
    space = list(ilf.output_space)
    for y in np.unique(gold):
        rows = np.flatnonzero(gold == y)
        comp = [v for v in space if graph.relation(int(y), v) != Relation.EXCLUSIVE]
        inc = [v for v in space if v not in comp]
        for r in rows:
            if ilf.can_abstain and u[r, 0] < abstain:
                continue
            group = comp if (u[r, 1] < accuracy or not inc) else inc
            if group:
                out[r] = group[min(int(u[r, 2] * len(group)), len(group) - 1)]
    return out


def _retry_error(spec: SimSpec, reason: str) -> GraphError:
    return GraphError(f"could not satisfy the task spec after {spec.max_retries} attempts: {reason}")


def _build_structure(spec: SimSpec, rng: np.random.Generator, twin: bool):
    reason = "no attempt made"
    for _ in range(spec.max_retries):
        desired, seen, edges = _random_taxonomy(spec, rng, twin)
        graph = _graph_from_taxonomy(desired, seen, edges)
        if not check_consistency(graph).consistent:
            reason = "generated graph is inconsistent"
            continue
        pairs = check_distinguishability(graph).indistinct_pairs
        want = [(spec.k - 2, spec.k - 1)] if twin else []
        if list(pairs) != want:
            reason = f"distinguishability check returned {list(pairs)}, wanted {want}"
            continue
        ilfs = _random_ilfs(graph, spec, rng)
        if not _informative(graph, ilfs):
            reason = "no ILF set separates every desired label"
            continue
        return desired, seen, edges, graph, ilfs
    raise _retry_error(spec, reason)


def _informative(graph: LabelGraph, ilfs) -> bool:
    """Every desired label has some ILF output compatible with it alone or exclusive to it."""
    for y in graph.desired:
        if not any(graph.relation(y, v) == Relation.EXCLUSIVE for f in ilfs for v in f.output_space):
            return False
    return True


def _emit_all(graph, ilfs, spec, rngs, gold, accs):
    return np.stack([emit_ilf_outputs(graph, f, gold, accs[j], spec.abstain_rate,
                                      rngs(_ILF_BASE + j))
                     for j, f in enumerate(ilfs)], axis=1)


def generate_task(spec: SimSpec) -> Task:
    rngs = _streams(spec.rng_seed)
    srng = rngs(_STRUCTURE)
    desired, seen, edges, graph, ilfs = _build_structure(spec, srng, spec.force_indistinct_pair)
    accs = _accuracies(spec, srng)
    gold = np.asarray(graph.desired)[rngs(_GOLD).integers(spec.k, size=spec.m)]
    outputs = _emit_all(graph, ilfs, spec, rngs, gold, accs)
    info = {"indistinct_pair": [spec.k - 2, spec.k - 1]} if spec.force_indistinct_pair else {}
    return Task(graph, ilfs, gold, outputs, spec, accs, info)


def _accuracies(spec: SimSpec, rng) -> tuple[float, ...]:
    if spec.accuracies is not None:
        return tuple(float(a) for a in spec.accuracies)
    lo, hi = spec.accuracy_range
    return tuple(float(a) for a in rng.uniform(lo, hi, size=spec.n_ilfs))


def generate_paired_tasks(spec: SimSpec, breaker_accuracy: float | None = None) -> tuple[Task, Task]:
    """(distinguishable, violated) tasks sharing taxonomy, gold labels and ILF votes.

    The violated task plants a symmetric pair of desired labels.  The
    distinguishable task adds two seen labels, each containing one twin
    (and everything above it) but not the other, and an ILF that votes
    between them.
    """
    spec = replace(spec, force_indistinct_pair=True)
    rngs = _streams(spec.rng_seed)
    srng = rngs(_STRUCTURE)
    desired, seen, edges, bad, ilfs = _build_structure(spec, srng, True)
    accs = _accuracies(spec, srng)
    gold = np.asarray(bad.desired)[rngs(_GOLD).integers(spec.k, size=spec.m)]
    breakers = [f"s{spec.k_hat}", f"s{spec.k_hat + 1}"]
    fixed = set(edges)
    for name, twin in zip(breakers, desired[-2:]):
        fixed |= {(name, twin)} | {(p, name) for p, c in edges if c == twin}
    good = _graph_from_taxonomy(desired, seen + breakers, fixed)
    if not check_distinguishability(good).distinguishable or not check_consistency(good).consistent:
        raise GraphError("breaker labels failed to separate the planted pair")
    b_ilf = IlfSpec(len(ilfs), tuple(good.id_of(b) for b in breakers))
    b_acc = float(np.mean(accs)) if breaker_accuracy is None else float(breaker_accuracy)
    b_out = emit_ilf_outputs(good, b_ilf, gold, b_acc, spec.abstain_rate, rngs(_BREAKER))
    # seen ids are unchanged: the breakers are appended after every existing label
    shared = _emit_all(bad, ilfs, spec, rngs, gold, accs)
    info = {"indistinct_pair": [spec.k - 2, spec.k - 1]}
    violated = Task(bad, ilfs, gold, shared, spec, accs, info)
    distinct = Task(good, ilfs + (b_ilf,), gold, np.column_stack([shared, b_out]),
                    replace(spec, force_indistinct_pair=False, n_ilfs=spec.n_ilfs + 1,
                            accuracies=accs + (b_acc,)),
                    accs + (b_acc,), {"breakers": list(b_ilf.output_space)})
    return distinct, violated


def sample_from_model(model: FactorModel, m: int, rng: np.random.Generator | int):
    """m exact joint draws; returns (ILF output matrix, hidden gold label ids)."""
    rng = np.random.default_rng(rng)
    ys, _, slots = inf.sample_joint(model, m, rng)
    c = model.compiled
    outputs = c.slot_ids[np.arange(c.n)[None, :], slots] if c.n else np.zeros((m, 0), np.int64)
    return outputs.astype(np.int64), c.y_ids[ys].astype(np.int64)


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    per_class: dict

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "macro_f1": self.macro_f1,
                "per_class": {str(k): v for k, v in self.per_class.items()}}


def evaluate(pred, gold, classes: Sequence[int] | None = None) -> Metrics:
    """Accuracy and macro F1 of hard predictions (or argmax of posteriors).

    Predictions outside the desired classes (unknown, abstain) count as
    wrong.  classes defaults to the labels seen in gold or predictions.
    """
    if isinstance(pred, inf.PosteriorLabels):
        pred = pred.hard_ids()
    pred = np.asarray(pred, dtype=np.int64)
    gold = np.asarray(gold, dtype=np.int64)
    if pred.shape != gold.shape:
        raise ValueError(f"{len(pred)} predictions for {len(gold)} gold labels")
    if classes is None:
        classes = sorted({int(v) for v in np.concatenate([gold, pred]) if v >= 0})
    acc = float(np.mean(pred == gold)) if len(gold) else 0.0
    per_class = {}
    for c in classes:
        tp = int(np.sum((pred == c) & (gold == c)))
        n_pred, n_gold = int(np.sum(pred == c)), int(np.sum(gold == c))
        f1 = 2 * tp / (n_pred + n_gold) if n_pred + n_gold else 0.0
        per_class[int(c)] = {"precision": tp / n_pred if n_pred else 0.0,
                             "recall": tp / n_gold if n_gold else 0.0,
                             "f1": f1, "support": n_gold}
    macro = float(np.mean([v["f1"] for v in per_class.values()])) if per_class else 0.0
    return Metrics(acc, macro, per_class)


def gaussian_features(gold, classes: Sequence[int], dim: int = 5, separation: float = 3.0,
                      noise: float = 1.0, rng: np.random.Generator | int = 0) -> np.ndarray:
    """Features drawn from one isotropic Gaussian cluster per class."""
    rng = np.random.default_rng(rng)
    classes = list(classes)
    means = separation * rng.standard_normal((len(classes), dim))
    pos = {c: i for i, c in enumerate(classes)}
    idx = np.array([pos[int(g)] for g in gold], dtype=np.intp)
    return means[idx] + noise * rng.standard_normal((len(idx), dim))
