"""Independent reference implementations used as test oracles.

Everything here works from first principles (explicit sets, explicit
assignment lists, the per-factor case table) and shares no code with the
vectorized paths under test beyond the model's public factor definitions.
"""
from __future__ import annotations

import itertools

import numpy as np
from scipy.special import logsumexp

from wisynth.graph import ABSTAIN, IlfSpec, LabelGraph, Relation
from wisynth.model import Assignment, FactorModel, feature_vector


# ----------------------------------------------------------------------------
# set semantics

def set_relation(a: frozenset, b: frozenset) -> Relation | None:
    """Relation between two non-empty sets, None when they are equal."""
    if a == b:
        return None
    if not a & b:
        return Relation.EXCLUSIVE
    if b < a:
        return Relation.SUBSUMING
    if a < b:
        return Relation.SUBSUMED
    return Relation.OVERLAPPING


def realizable_triplets() -> set[tuple[Relation, Relation, Relation]]:
    """(t_ab, t_bc, t_ac) patterns realized by some three non-empty sets.

    Three sets partition their union into at most seven Venn regions, so
    choosing which regions are inhabited covers every configuration.
    """
    regions = [r for r in itertools.product((0, 1), repeat=3) if any(r)]
    out = set()
    for mask in range(1, 2 ** len(regions)):
        used = [r for i, r in enumerate(regions) if mask >> i & 1]
        sets = [frozenset(i for i, r in enumerate(used) if r[k]) for k in range(3)]
        if not all(sets):
            continue
        t = (set_relation(sets[0], sets[1]), set_relation(sets[1], sets[2]),
             set_relation(sets[0], sets[2]))
        if None not in t:
            out.add(t)
    return out


def dag_relation_by_leaves(edges, names) -> dict[tuple[int, int], Relation]:
    """Relations read off as set relations between descendant-or-self sets."""
    children = {n: set() for n in names}
    for p, c in edges:
        children[p].add(c)

    def reach(n, seen=None):
        seen = set() if seen is None else seen
        for c in children[n]:
            if c not in seen:
                seen.add(c)
                reach(c, seen)
        return seen

    ext = {n: frozenset(reach(n) | {n}) for n in names}
    out = {}
    for i, j in itertools.combinations(range(len(names)), 2):
        a, b = ext[names[i]], ext[names[j]]
        if names[j] in a and names[i] not in b:
            out[(i, j)] = Relation.SUBSUMING
        elif names[i] in b and names[j] not in a:
            out[(i, j)] = Relation.SUBSUMED
        elif a & b:
            out[(i, j)] = Relation.OVERLAPPING
        else:
            out[(i, j)] = Relation.EXCLUSIVE
    return out


# ----------------------------------------------------------------------------
# brute-force factor model

class BruteForce:
    """Every assignment of (Y, Ybar, lambda) with its feature vector."""

    def __init__(self, model: FactorModel):
        self.model = model
        choices = [list(f.output_space) + ([ABSTAIN] if f.can_abstain else [])
                   for f in model.ilfs]
        self.assignments = [
            Assignment(y, bits, lam)
            for y in model.y_domain
            for bits in itertools.product((0, 1), repeat=len(model.latent))
            for lam in itertools.product(*choices)]
        self.features = np.array([feature_vector(model, a) for a in self.assignments], dtype=float)
        self.lams = [a.lambda_hat for a in self.assignments]

    def log_weights(self, theta=None):
        theta = self.model.theta if theta is None else theta
        return self.features @ theta

    def log_partition(self, theta=None) -> float:
        return float(logsumexp(self.log_weights(theta)))

    def probs(self, theta=None) -> np.ndarray:
        lw = self.log_weights(theta)
        return np.exp(lw - logsumexp(lw))

    def mask(self, lam) -> np.ndarray:
        lam = tuple(int(v) for v in lam)
        return np.array([x == lam for x in self.lams])

    def joint_expectation(self, theta=None) -> np.ndarray:
        return self.probs(theta) @ self.features

    def conditional_expectation(self, lam, theta=None) -> np.ndarray:
        p = self.probs(theta) * self.mask(lam)
        return (p / p.sum()) @ self.features

    def y_posterior(self, lam, theta=None) -> np.ndarray:
        p = self.probs(theta) * self.mask(lam)
        p = p / p.sum()
        return np.array([p[[a.y == y for a in self.assignments]].sum()
                         for y in self.model.y_domain])

    def posterior_table(self, lam, theta=None) -> dict:
        """(y, y_bar) -> P(y, y_bar | lambda)."""
        p = self.probs(theta) * self.mask(lam)
        p = p / p.sum()
        out = {}
        for a, q in zip(self.assignments, p):
            out[(a.y, a.y_bar)] = out.get((a.y, a.y_bar), 0.0) + q
        return out

    def nll(self, outputs, theta=None) -> float:
        lw = self.log_weights(theta)
        z = logsumexp(lw)
        return float(-np.mean([logsumexp(lw[self.mask(row)]) - z for row in outputs]))

    def all_rows(self):
        return sorted(set(self.lams))


# ----------------------------------------------------------------------------
# baselines by definition

def lr_mv_oracle(graph: LabelGraph, outputs, weighted: bool):
    """Per-point vote tally computed one vote at a time from the relations."""
    k = len(graph.desired)
    tallies = np.zeros((len(outputs), k))
    for r, row in enumerate(outputs):
        for v in row:
            if v == ABSTAIN:
                continue
            nbrs = [i for i, y in enumerate(graph.desired)
                    if graph.relation(y, v) != Relation.EXCLUSIVE]
            if not weighted:
                for i in nbrs:
                    tallies[r, i] += 1
                continue
            anc = [i for i in nbrs if graph.relation(graph.desired[i], v) == Relation.SUBSUMING]
            rest = [i for i in nbrs if i not in anc]
            for i in anc:
                tallies[r, i] += 1
            for i in rest:
                tallies[r, i] += 1 / len(rest)
    preds = []
    for t in tallies:
        if k == 0 or t.max() <= 0:
            preds.append(ABSTAIN)
        else:
            preds.append(graph.desired[int(np.flatnonzero(t == t.max())[0])])
    return np.array(preds), tallies


def consistent_assignments_oracle(graph: LabelGraph) -> list[tuple[int, ...]]:
    """Bit vectors over graph.seen that some family of sets realizes.

    A vector is kept iff every pair of switched-on labels may co-occur
    (not exclusive) and no switched-on label sits inside a switched-off one.
    """
    seen = graph.seen
    rel = {(a, b): graph.relation(seen[a], seen[b])
           for a, b in itertools.permutations(range(len(seen)), 2)}
    out = []
    for bits in itertools.product((0, 1), repeat=len(seen)):
        ok = True
        for (a, b), r in rel.items():
            if bits[a] and bits[b] and r == Relation.EXCLUSIVE:
                ok = False
            if bits[a] and not bits[b] and r == Relation.SUBSUMED:
                ok = False
        if ok:
            out.append(bits)
    return out


def label_attributes_oracle(graph: LabelGraph, assignments, y) -> list[int]:
    return [int(all(not (b and graph.relation(y, s) == Relation.EXCLUSIVE)
                    for b, s in zip(bits, graph.seen))) for bits in assignments]


def point_attributes_oracle(graph: LabelGraph, assignments, row):
    """One-hot over assignments of the upward closure of the votes."""
    on = set()
    for v in row:
        if v == ABSTAIN:
            continue
        on.add(v)
        on.update(s for s in graph.seen
                  if s != v and graph.relation(s, v) == Relation.SUBSUMING)
    if any(graph.relation(a, b) == Relation.EXCLUSIVE
           for a, b in itertools.combinations(sorted(on), 2)):
        return [0] * len(assignments), True
    vec = tuple(int(s in on) for s in graph.seen)
    return [int(tuple(a) == vec) for a in assignments], False


# ----------------------------------------------------------------------------
# random structures

def random_graph_from_dag(rng: np.random.Generator, k: int, k_hat: int,
                          p_edge: float = 0.35) -> LabelGraph:
    """A random consistent graph: DAG over seen labels, desired labels as leaves."""
    from wisynth.graph import from_dag
    names = [f"d{i}" for i in range(k)] + [f"s{i}" for i in range(k_hat)]
    roles = {n: ("desired" if n.startswith("d") else "seen") for n in names}
    order = [f"s{i}" for i in range(k_hat)]
    edges = set()
    for i, child in enumerate(order):
        for parent in order[:i]:
            if rng.random() < p_edge:
                edges.add((parent, child))
    for d in names[:k]:
        for s in order:
            if rng.random() < p_edge:
                edges.add((s, d))
    return from_dag(sorted(edges), roles)


def random_ilfs(rng: np.random.Generator, graph: LabelGraph, n: int, size: int) -> list[IlfSpec]:
    seen = np.array(graph.seen)
    size = min(size, len(seen))
    return [IlfSpec(j, tuple(sorted(int(v) for v in rng.choice(seen, size, replace=False))),
                    can_abstain=bool(rng.random() < 0.8)) for j in range(n)]
