"""Typed label-relation graphs over desired (unseen) and seen labels.

Every pair of distinct labels carries exactly one of four relations, read as
set relations between the label extensions:

    EXCLUSIVE    A and B are disjoint
    OVERLAPPING  A and B intersect, neither contains the other
    SUBSUMING    A strictly contains B
    SUBSUMED     A is strictly contained in B

Relations are stored once per unordered pair (lower id first) and inverted
on query.
"""
from __future__ import annotations

import enum
import graphlib
import itertools
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

__all__ = [
    "Relation", "Role", "Label", "IlfSpec", "LabelGraph", "GraphError",
    "FORBIDDEN_TRIPLETS", "ConsistencyReport", "DistinguishabilityReport",
    "InformativenessReport", "relation", "non_exclusive_neighbors",
    "check_consistency", "check_distinguishability", "check_informativeness",
    "from_dag", "validate_ilfs", "ABSTAIN",
]

ABSTAIN = -1


class GraphError(ValueError):
    pass


class Relation(enum.IntEnum):
    EXCLUSIVE = 0
    OVERLAPPING = 1
    SUBSUMING = 2
    SUBSUMED = 3

    @property
    def inverse(self) -> "Relation":
        return _INVERSE[self]

    @classmethod
    def parse(cls, text: str | "Relation") -> "Relation":
        if isinstance(text, Relation):
            return text
        key = str(text).strip().lower()
        try:
            return _BY_NAME[key]
        except KeyError:
            raise GraphError(f"unknown relation type {text!r}") from None

    def __str__(self) -> str:
        return self.name.lower()


_INVERSE = {
    Relation.EXCLUSIVE: Relation.EXCLUSIVE,
    Relation.OVERLAPPING: Relation.OVERLAPPING,
    Relation.SUBSUMING: Relation.SUBSUMED,
    Relation.SUBSUMED: Relation.SUBSUMING,
}
_BY_NAME = {r.name.lower(): r for r in Relation}
_BY_NAME.update({"overlap": Relation.OVERLAPPING, "e": Relation.EXCLUSIVE,
                 "o": Relation.OVERLAPPING, "sg": Relation.SUBSUMING,
                 "sd": Relation.SUBSUMED})
_INVERSE_CODE = np.array([0, 1, 3, 2], dtype=np.int8)


class Role(str, enum.Enum):
    DESIRED = "desired"
    SEEN = "seen"


@dataclass(frozen=True)
class Label:
    id: int
    name: str
    role: Role


@dataclass(frozen=True)
class IlfSpec:
    """An indirect labeling function: emits one of `output_space` or abstains."""

    ilf_id: int
    output_space: tuple[int, ...]
    can_abstain: bool = True

    def __post_init__(self):
        object.__setattr__(self, "output_space", tuple(int(v) for v in self.output_space))
        if not self.output_space:
            raise GraphError(f"ILF {self.ilf_id} has an empty output space")
        if len(set(self.output_space)) != len(self.output_space):
            raise GraphError(f"ILF {self.ilf_id} lists a label twice")


# (t_ab, t_bc, t_ac) patterns that no family of sets can realize.
_E, _O, _SG, _SD = Relation
FORBIDDEN_TRIPLETS: frozenset[tuple[Relation, Relation, Relation]] = frozenset({
    (_O, _SD, _SG), (_O, _SD, _E), (_O, _SG, _SD), (_O, _E, _SD),
    (_E, _SD, _SG), (_E, _O, _SG), (_E, _SG, _SG), (_E, _SG, _SD), (_E, _SG, _O),
    (_SG, _E, _SD), (_SG, _SD, _E), (_SG, _O, _SD), (_SG, _O, _E),
    (_SG, _SG, _E), (_SG, _SG, _SD), (_SG, _SG, _O),
    (_SD, _O, _SG), (_SD, _SD, _E), (_SD, _SD, _SG), (_SD, _SD, _O),
    (_SD, _E, _SG), (_SD, _E, _SD), (_SD, _E, _O),
})
_FORBIDDEN = np.zeros((4, 4, 4), dtype=bool)
for _t in FORBIDDEN_TRIPLETS:
    _FORBIDDEN[_t] = True


class LabelGraph:
    """Total relation map over a dense, contiguous set of labels.

    `relations` may give each pair in either orientation, but only once.
    Desired labels must be pairwise exclusive (multi-class target).
    """

    def __init__(self, labels: Sequence[Label],
                 relations: Mapping[tuple[int, int], Relation | str]):
        labels = tuple(sorted(labels, key=lambda lab: lab.id))
        if [lab.id for lab in labels] != list(range(len(labels))):
            raise GraphError("label ids must be unique and contiguous from 0")
        names = [lab.name for lab in labels]
        if len(set(names)) != len(names):
            raise GraphError("label names must be unique")
        self.labels = labels
        self._by_name = {lab.name: lab.id for lab in labels}
        k = len(labels)
        rel = np.full((k, k), -1, dtype=np.int8)
        for (a, b), t in relations.items():
            a, b = int(a), int(b)
            t = Relation.parse(t)
            if a == b:
                raise GraphError(f"self-relation on label {a} is undefined")
            if not (0 <= a < k and 0 <= b < k):
                raise GraphError(f"relation references unknown label ({a}, {b})")
            if rel[a, b] != -1:
                raise GraphError(f"relation for pair ({a}, {b}) given twice")
            rel[a, b] = t
            rel[b, a] = _INVERSE_CODE[t]
        missing = [(a, b) for a, b in itertools.combinations(range(k), 2) if rel[a, b] == -1]
        if missing:
            a, b = missing[0]
            raise GraphError(f"relation map is not total: {len(missing)} pairs missing, "
                             f"e.g. ({labels[a].name}, {labels[b].name})")
        self._rel = rel
        self._rel.setflags(write=False)
        self.desired = tuple(lab.id for lab in labels if lab.role == Role.DESIRED)
        self.seen = tuple(lab.id for lab in labels if lab.role == Role.SEEN)
        for a, b in itertools.combinations(self.desired, 2):
            if rel[a, b] != Relation.EXCLUSIVE:
                raise GraphError(
                    f"desired labels {labels[a].name!r} and {labels[b].name!r} must be "
                    f"exclusive, got {Relation(rel[a, b])}")

    def __len__(self) -> int:
        return len(self.labels)

    def __eq__(self, other) -> bool:
        return (isinstance(other, LabelGraph) and self.labels == other.labels
                and np.array_equal(self._rel, other._rel))

    def __repr__(self) -> str:
        return f"LabelGraph({len(self.desired)} desired, {len(self.seen)} seen)"

    @property
    def matrix(self) -> np.ndarray:
        """K x K relation codes, -1 on the diagonal (read-only)."""
        return self._rel

    def id_of(self, name: str) -> int:
        try:
            return self._by_name[name]
        except KeyError:
            raise GraphError(f"unknown label {name!r}") from None

    def name_of(self, label_id: int) -> str:
        return self.labels[self._check(label_id)].name

    def role_of(self, label_id: int) -> Role:
        return self.labels[self._check(label_id)].role

    def _check(self, label_id) -> int:
        if isinstance(label_id, str):
            return self.id_of(label_id)
        label_id = int(label_id)
        if not 0 <= label_id < len(self.labels):
            raise GraphError(f"unknown label id {label_id}")
        return label_id

    def relation(self, a, b) -> Relation:
        a, b = self._check(a), self._check(b)
        if a == b:
            raise GraphError(f"self-relation on label {a} is undefined")
        return Relation(int(self._rel[a, b]))

    def non_exclusive_neighbors(self, y, among: Iterable) -> frozenset[int]:
        y = self._check(y)
        return frozenset(b for b in (self._check(s) for s in among)
                         if b != y and self._rel[y, b] != Relation.EXCLUSIVE)

    def canonical_relations(self) -> list[tuple[int, int, Relation]]:
        k = len(self.labels)
        return [(a, b, Relation(int(self._rel[a, b])))
                for a, b in itertools.combinations(range(k), 2)]

    @classmethod
    def from_names(cls, desired: Sequence[str], seen: Sequence[str],
                   relations: Mapping[tuple[str, str], Relation | str],
                   default: Relation | None = None) -> "LabelGraph":
        """Build a graph by label name; desired labels get the lowest ids.

        Pairs absent from `relations` take `default` when given, and desired
        pairs default to EXCLUSIVE.
        """
        labels = [Label(i, n, Role.DESIRED) for i, n in enumerate(desired)]
        labels += [Label(len(desired) + i, n, Role.SEEN) for i, n in enumerate(seen)]
        ids = {lab.name: lab.id for lab in labels}
        rel: dict[tuple[int, int], Relation] = {}
        done = set()
        for (a, b), t in relations.items():
            ia, ib = ids[a], ids[b]
            rel[(ia, ib)] = Relation.parse(t)
            done.add(frozenset((ia, ib)))
        for a, b in itertools.combinations(range(len(labels)), 2):
            if frozenset((a, b)) in done:
                continue
            if labels[a].role == Role.DESIRED and labels[b].role == Role.DESIRED:
                rel[(a, b)] = Relation.EXCLUSIVE
            elif default is not None:
                rel[(a, b)] = default
        return cls(labels, rel)


def relation(graph: LabelGraph, a, b) -> Relation:
    return graph.relation(a, b)


def non_exclusive_neighbors(graph: LabelGraph, y, among: Iterable) -> frozenset[int]:
    """N(y, S): labels of S whose relation to y is not EXCLUSIVE (y itself dropped)."""
    return graph.non_exclusive_neighbors(y, among)


class Violation(NamedTuple):
    labels: tuple[int, int, int]
    relations: tuple[Relation, Relation, Relation]


@dataclass(frozen=True)
class ConsistencyReport:
    violations: tuple[Violation, ...] = ()

    @property
    def consistent(self) -> bool:
        return not self.violations


def check_consistency(graph: LabelGraph) -> ConsistencyReport:
    """Scan every triple a<b<c for a forbidden (t_ab, t_bc, t_ac) pattern."""
    k = len(graph)
    if k < 3:
        return ConsistencyReport()
    tri = np.array(list(itertools.combinations(range(k), 3)), dtype=np.intp)
    a, b, c = tri.T
    r = graph.matrix
    ab, bc, ac = r[a, b], r[b, c], r[a, c]
    bad = np.flatnonzero(_FORBIDDEN[ab, bc, ac])
    violations = tuple(
        Violation((int(a[i]), int(b[i]), int(c[i])),
                  (Relation(int(ab[i])), Relation(int(bc[i])), Relation(int(ac[i]))))
        for i in bad)
    return ConsistencyReport(violations)


@dataclass(frozen=True)
class DistinguishabilityReport:
    indistinct_pairs: tuple[tuple[int, int], ...] = ()
    # seen labels that would break each pair's symmetry; left for the user to fill
    suggested_fixes: Mapping[tuple[int, int], tuple] = field(default_factory=dict)

    @property
    def distinguishable(self) -> bool:
        return not self.indistinct_pairs


def check_distinguishability(graph: LabelGraph) -> DistinguishabilityReport:
    """Flag desired pairs whose relations to every seen label coincide."""
    seen = np.array(graph.seen, dtype=np.intp)
    pairs = []
    for yi, yj in itertools.combinations(graph.desired, 2):
        if np.array_equal(graph.matrix[yi, seen], graph.matrix[yj, seen]):
            pairs.append((yi, yj))
    return DistinguishabilityReport(tuple(pairs), {p: () for p in pairs})


@dataclass(frozen=True)
class InformativenessReport:
    ilf_id: int
    structural: bool
    # desired labels lacking an exclusive output in the ILF's space
    structural_failures: tuple[int, ...]
    empirical: bool | None = None
    empirical_failures: tuple[int, ...] = ()


def validate_ilfs(graph: LabelGraph, ilfs: Sequence[IlfSpec]) -> None:
    seen = set(graph.seen)
    for ilf in ilfs:
        for v in ilf.output_space:
            if v not in seen:
                role = "unknown" if not 0 <= v < len(graph) else graph.role_of(v).value
                raise GraphError(f"ILF {ilf.ilf_id} outputs label {v} which is {role}, "
                                 "not a seen label")


def check_informativeness(graph: LabelGraph, ilfs: Sequence[IlfSpec],
                          outputs: np.ndarray | None = None) -> list[InformativenessReport]:
    """Structural and (optionally) empirical informativeness per ILF.

    Structural: every desired y has some output exclusive to it.  Empirical:
    for every desired y some data point's vote falls outside N(y, space);
    an abstention counts as outside.
    """
    validate_ilfs(graph, ilfs)
    if outputs is not None:
        outputs = np.asarray(outputs)
        if outputs.ndim != 2 or outputs.shape[1] != len(ilfs):
            raise GraphError(f"outputs shape {outputs.shape} does not match {len(ilfs)} ILFs")
    reports = []
    for j, ilf in enumerate(ilfs):
        s_fail = tuple(y for y in graph.desired
                       if all(graph.relation(y, v) != Relation.EXCLUSIVE for v in ilf.output_space))
        emp, e_fail = None, ()
        if outputs is not None:
            col = outputs[:, j]
            e_fail = tuple(
                y for y in graph.desired
                if np.isin(col, list(graph.non_exclusive_neighbors(y, ilf.output_space))).all())
            emp = not e_fail
        reports.append(InformativenessReport(ilf.ilf_id, not s_fail, s_fail, emp, e_fail))
    return reports


def from_dag(edges: Iterable[tuple], roles: Mapping) -> LabelGraph:
    """Convert a label DAG (parent subsumes child) into its label graph.

    `roles` maps label name to role and fixes the id order; edges name
    labels either by name or by id.  A cycle raises GraphError.
    """
    names = list(roles)
    ids = {n: i for i, n in enumerate(names)}

    def _id(x) -> int:
        if isinstance(x, str):
            if x not in ids:
                raise GraphError(f"edge references unknown label {x!r}")
            return ids[x]
        x = int(x)
        if not 0 <= x < len(names):
            raise GraphError(f"edge references unknown label id {x}")
        return x

    children: dict[int, set[int]] = {i: set() for i in range(len(names))}
    for parent, child in edges:
        p, c = _id(parent), _id(child)
        if p == c:
            raise GraphError(f"self-loop on {names[p]!r}")
        children[p].add(c)
    try:
        order = list(graphlib.TopologicalSorter(children).static_order())
    except graphlib.CycleError as exc:
        cyc = [names[i] for i in exc.args[1]]
        raise GraphError(f"label hierarchy has a cycle: {' -> '.join(cyc)}") from None
    # static_order yields children before parents for this mapping
    desc = [0] * len(names)
    for node in order:
        bits = 0
        for c in children[node]:
            bits |= desc[c] | (1 << c)
        desc[node] = bits
    labels = [Label(i, n, Role(roles[n])) for i, n in enumerate(names)]
    rel = {}
    for a, b in itertools.combinations(range(len(names)), 2):
        if desc[a] >> b & 1:
            rel[(a, b)] = Relation.SUBSUMING
        elif desc[b] >> a & 1:
            rel[(a, b)] = Relation.SUBSUMED
        elif desc[a] & desc[b]:
            rel[(a, b)] = Relation.OVERLAPPING
        else:
            rel[(a, b)] = Relation.EXCLUSIVE
    return LabelGraph(labels, rel)
