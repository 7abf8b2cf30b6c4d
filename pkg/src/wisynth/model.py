"""Factor models over (Y, Ybar, lambda): PLRM and the WS-LG baseline.

P(Y, Ybar, lambda) is proportional to exp(theta . Phi(Y, Ybar, lambda)) with
four dependency families, enumerated in this order:

1. pseudo accuracy   [Y = y and lambda_j = v], for v in N(y, space_j)
2. accuracy          [Ybar_v = 1 and lambda_j = v]
3. seen/seen         one relation factor per seen pair i < j
4. desired/seen      one relation factor per (desired y, seen s)

Within a family factors are sorted by desired id, then seen id, then ILF
position.  WS-LG keeps family 1 only and has no latent seen bits.
"""
from __future__ import annotations

import enum
import itertools
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import sparse

from .graph import (ABSTAIN, GraphError, IlfSpec, LabelGraph, Relation,
                    check_consistency, validate_ilfs)

__all__ = [
    "Family", "Dependency", "Assignment", "FactorModel", "UNKNOWN",
    "build_plrm", "build_wslg", "factor_value", "feature_vector",
    "log_unnormalized", "swap_theta_blocks", "DEFAULT_THETA_INIT",
]

UNKNOWN = -2
DEFAULT_THETA_INIT = 0.1


class Family(enum.IntEnum):
    PSEUDO_ACCURACY = 1
    ACCURACY = 2
    SEEN_SEEN = 3
    DESIRED_SEEN = 4

    def __str__(self) -> str:
        return self.name.lower()


@dataclass(frozen=True)
class Dependency:
    """One factor.

    participants by family:
      PSEUDO_ACCURACY  (desired id, seen id, ILF position)
      ACCURACY         (seen id, ILF position)
      SEEN_SEEN        (seen id i, seen id j), i < j
      DESIRED_SEEN     (desired id, seen id)
    """

    family: Family
    participants: tuple[int, ...]
    relation: Relation | None = None


@dataclass(frozen=True)
class Assignment:
    """A full configuration.

    y is a desired label id or UNKNOWN; y_bar holds one bit per latent seen
    label (model.latent order); lambda_hat holds a seen id or ABSTAIN per ILF.
    """

    y: int
    y_bar: tuple[int, ...]
    lambda_hat: tuple[int, ...]


@dataclass(eq=False)
class FactorModel:
    graph: LabelGraph
    ilfs: tuple[IlfSpec, ...]
    dependencies: tuple[Dependency, ...]
    theta: np.ndarray
    include_unknown: bool = True
    kind: str = "plrm"
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        self.theta = np.array(self.theta, dtype=np.float64)
        if self.theta.shape != (len(self.dependencies),):
            raise ValueError(f"theta has shape {self.theta.shape}, expected "
                             f"({len(self.dependencies)},)")

    @property
    def n_factors(self) -> int:
        return len(self.dependencies)

    @property
    def desired(self) -> tuple[int, ...]:
        return self.graph.desired

    @property
    def latent(self) -> tuple[int, ...]:
        """Seen label ids carrying a latent bit (none for WS-LG)."""
        return self.graph.seen if self.kind == "plrm" else ()

    @property
    def y_domain(self) -> tuple[int, ...]:
        return self.graph.desired + ((UNKNOWN,) if self.include_unknown else ())

    def y_names(self) -> list[str]:
        return [self.graph.name_of(y) if y != UNKNOWN else "<unknown>" for y in self.y_domain]

    def with_theta(self, theta) -> "FactorModel":
        return FactorModel(self.graph, self.ilfs, self.dependencies, np.array(theta, dtype=float),
                           self.include_unknown, self.kind, self._cache)

    def family_indices(self, family: Family) -> np.ndarray:
        return np.array([r for r, d in enumerate(self.dependencies) if d.family == family],
                        dtype=np.intp)

    @property
    def compiled(self) -> "Compiled":
        if "compiled" not in self._cache:
            self._cache["compiled"] = Compiled(self)
        return self._cache["compiled"]

    def check_assignment(self, a: Assignment) -> None:
        if a.y not in self.y_domain:
            raise ValueError(f"y={a.y} is not in the model's label domain")
        if len(a.y_bar) != len(self.latent):
            raise ValueError(f"y_bar has length {len(a.y_bar)}, expected {len(self.latent)}")
        if len(a.lambda_hat) != len(self.ilfs):
            raise ValueError(f"lambda_hat has length {len(a.lambda_hat)}, expected {len(self.ilfs)}")
        for ilf, v in zip(self.ilfs, a.lambda_hat):
            if v == ABSTAIN and ilf.can_abstain:
                continue
            if v not in ilf.output_space:
                raise ValueError(f"ILF {ilf.ilf_id} cannot output {v}")


def _prepare(graph: LabelGraph, ilfs: Sequence[IlfSpec]) -> tuple[IlfSpec, ...]:
    report = check_consistency(graph)
    if not report.consistent:
        v = report.violations[0]
        names = ", ".join(graph.name_of(i) for i in v.labels)
        raise GraphError(f"label graph is inconsistent ({len(report.violations)} bad "
                         f"triangles, e.g. {names}: {', '.join(map(str, v.relations))})")
    ilfs = tuple(ilfs)
    validate_ilfs(graph, ilfs)
    return ilfs


def _pseudo_accuracy(graph, ilfs):
    return [Dependency(Family.PSEUDO_ACCURACY, (y, v, j))
            for y in graph.desired
            for v in graph.seen
            for j, ilf in enumerate(ilfs)
            if v in ilf.output_space and graph.relation(y, v) != Relation.EXCLUSIVE]


def build_plrm(graph: LabelGraph, ilfs: Sequence[IlfSpec], *, include_unknown: bool = True,
               pseudo_accuracy: bool = True,
               theta_init: float = DEFAULT_THETA_INIT) -> FactorModel:
    ilfs = _prepare(graph, ilfs)
    deps = _pseudo_accuracy(graph, ilfs) if pseudo_accuracy else []
    deps += [Dependency(Family.ACCURACY, (v, j))
             for v in graph.seen for j, ilf in enumerate(ilfs) if v in ilf.output_space]
    deps += [Dependency(Family.SEEN_SEEN, (a, b), graph.relation(a, b))
             for a, b in itertools.combinations(graph.seen, 2)]
    deps += [Dependency(Family.DESIRED_SEEN, (y, s), graph.relation(y, s))
             for y in graph.desired for s in graph.seen]
    return FactorModel(graph, ilfs, tuple(deps), np.full(len(deps), theta_init),
                       include_unknown, "plrm")


def build_wslg(graph: LabelGraph, ilfs: Sequence[IlfSpec], *, include_unknown: bool = True,
               theta_init: float = DEFAULT_THETA_INIT) -> FactorModel:
    ilfs = _prepare(graph, ilfs)
    deps = _pseudo_accuracy(graph, ilfs)
    return FactorModel(graph, ilfs, tuple(deps), np.full(len(deps), theta_init),
                       include_unknown, "wslg")


def _relation_factor(rel: Relation, a_on: bool, a_bit_other: bool, b_on: bool) -> int:
    # a_on: left participant active; b_on: right participant active;
    # a_bit_other: left participant is a desired label and Y holds another label
    if rel == Relation.EXCLUSIVE:
        return -int(a_on and b_on)
    if rel == Relation.OVERLAPPING:
        return int(a_on and b_on)
    if rel == Relation.SUBSUMING:
        return -int(a_bit_other and b_on)
    return -int(a_on and not b_on)


def factor_value(model: FactorModel, dep: Dependency, a: Assignment) -> int:
    """Value in {-1, 0, 1} of one factor under a full assignment."""
    fam, p = dep.family, dep.participants
    if fam == Family.PSEUDO_ACCURACY:
        y, v, j = p
        return int(a.y == y and a.lambda_hat[j] == v)
    latent = model.latent
    if fam == Family.ACCURACY:
        v, j = p
        return int(a.y_bar[latent.index(v)] == 1 and a.lambda_hat[j] == v)
    if fam == Family.SEEN_SEEN:
        bi = a.y_bar[latent.index(p[0])] == 1
        bj = a.y_bar[latent.index(p[1])] == 1
        # seen/seen subsuming: i active requires nothing, j active requires i
        return _relation_factor(dep.relation, bi, not bi, bj)
    y, s = p
    bit = a.y_bar[latent.index(s)] == 1
    return _relation_factor(dep.relation, a.y == y, a.y != y, bit)


def feature_vector(model: FactorModel, a: Assignment) -> np.ndarray:
    model.check_assignment(a)
    return np.array([factor_value(model, d, a) for d in model.dependencies], dtype=np.int64)


def log_unnormalized(model: FactorModel, a: Assignment) -> float:
    """theta . Phi(a)."""
    return float(model.theta @ feature_vector(model, a))


def swap_theta_blocks(model: FactorModel, yi: int, yj: int) -> np.ndarray:
    """Theta with the weights of factors on yi and yj exchanged.

    Factors are matched when they share family and all other participants;
    factors without a counterpart keep their weight.
    """
    index = {(d.family, d.participants): r for r, d in enumerate(model.dependencies)}
    theta = model.theta.copy()
    for r, d in enumerate(model.dependencies):
        if d.family not in (Family.PSEUDO_ACCURACY, Family.DESIRED_SEEN) or d.participants[0] != yi:
            continue
        twin = index.get((d.family, (yj,) + d.participants[1:]))
        if twin is not None:
            theta[r], theta[twin] = model.theta[twin], model.theta[r]
    return theta


class Compiled:
    """Dense index structures and the linear map theta -> table cells.

    The log-weight of any assignment is a sum of a handful of table cells:

      T[y, s, b]          desired/seen terms for Y = y and bit s = b
      P[i, j, bi, bj]     seen/seen terms, i < j
      PA[j, y, slot]      pseudo-accuracy terms for Y = y and lambda_j = slot
      ACC[j, slot]        accuracy term, paid only when the slot's bit is 1

    with cells = L @ theta.  Each factor is an integer combination of cell
    indicators, so Phi(a) = L.T @ ind(a) and E[Phi] = L.T @ E[ind].
    Slot `width - 1` of each ILF is ABSTAIN.
    """

    def __init__(self, model: FactorModel):
        g = model.graph
        self.ky = len(model.y_domain)
        self.k = len(g.desired)
        self.kh = len(model.latent)
        self.n = len(model.ilfs)
        self.m = model.n_factors
        self.y_ids = np.array(model.y_domain)
        self.y_pos = {y: i for i, y in enumerate(model.y_domain)}
        self.latent_pos = {s: i for i, s in enumerate(model.latent)}
        vmax = max((len(f.output_space) for f in model.ilfs), default=0)
        self.width = w = vmax + 1
        self.abstain_slot = vmax
        self.slot_ids = np.full((self.n, w), ABSTAIN, dtype=np.int64)
        # latent bit of each slot's label; kh points at an always-zero pad bit
        self.slot_latent = np.full((self.n, w), self.kh, dtype=np.intp)
        self.mask = np.full((self.n, w), -np.inf)
        self.slot_of: list[dict[int, int]] = []
        self.n_valid = np.zeros(self.n, dtype=np.intp)
        for j, ilf in enumerate(model.ilfs):
            space = sorted(ilf.output_space)
            self.slot_of.append({v: i for i, v in enumerate(space)})
            self.slot_ids[j, :len(space)] = space
            self.mask[j, :len(space)] = 0.0
            self.n_valid[j] = len(space)
            for i, v in enumerate(space):
                self.slot_latent[j, i] = self.latent_pos.get(v, self.kh)
            if ilf.can_abstain:
                self.mask[j, vmax] = 0.0
                self.slot_of[-1][ABSTAIN] = vmax
        self.can_abstain = np.array([f.can_abstain for f in model.ilfs], dtype=bool)

        ky, kh, n = self.ky, self.kh, self.n
        self.off_t = 0
        self.off_p = ky * kh * 2
        self.off_pa = self.off_p + kh * kh * 4
        self.off_acc = self.off_pa + n * ky * w
        self.n_cells = self.off_acc + n * w
        rows, cols, vals = [], [], []

        def put(cell, r, v):
            rows.append(cell)
            cols.append(r)
            vals.append(v)

        for r, d in enumerate(model.dependencies):
            p = d.participants
            if d.family == Family.PSEUDO_ACCURACY:
                y, v, j = p
                put(self.pa_cell(j, self.y_pos[y], self.slot_of[j][v]), r, 1)
            elif d.family == Family.ACCURACY:
                v, j = p
                put(self.acc_cell(j, self.slot_of[j][v]), r, 1)
            elif d.family == Family.SEEN_SEEN:
                i, jj = self.latent_pos[p[0]], self.latent_pos[p[1]]
                for bi, bj in itertools.product((0, 1), repeat=2):
                    val = _relation_factor(d.relation, bool(bi), not bi, bool(bj))
                    if val:
                        put(self.p_cell(i, jj, bi, bj), r, val)
            else:
                y, s = p
                sp = self.latent_pos[s]
                for yy, b in itertools.product(range(ky), (0, 1)):
                    here = self.y_ids[yy] == y
                    val = _relation_factor(d.relation, here, not here, bool(b))
                    if val:
                        put(self.t_cell(yy, sp, b), r, val)
        L = sparse.csr_matrix((np.array(vals, dtype=np.float64), (rows, cols)),
                              shape=(self.n_cells, self.m))
        self.L = L
        self.LT = L.T.tocsr()
        self.L_dense = L.toarray() if self.n_cells * self.m <= 4_000_000 else None
        self.pairs = np.array(list(itertools.combinations(range(kh), 2)), dtype=np.intp).reshape(-1, 2)

    def t_cell(self, y, s, b):
        return self.off_t + (y * self.kh + s) * 2 + b

    def p_cell(self, i, j, bi, bj):
        return self.off_p + ((i * self.kh + j) * 2 + bi) * 2 + bj

    def pa_cell(self, j, y, slot):
        return self.off_pa + (j * self.ky + y) * self.width + slot

    def acc_cell(self, j, slot):
        return self.off_acc + j * self.width + slot

    def cells(self, theta: np.ndarray) -> np.ndarray:
        if self.L_dense is not None:
            return self.L_dense @ theta
        return self.L @ theta

    def tables(self, theta: np.ndarray):
        c = self.cells(theta)
        ky, kh, n, w = self.ky, self.kh, self.n, self.width
        T = c[self.off_t:self.off_p].reshape(ky, kh, 2)
        P = c[self.off_p:self.off_pa].reshape(kh, kh, 2, 2)
        PA = c[self.off_pa:self.off_acc].reshape(n, ky, w)
        ACC = c[self.off_acc:].reshape(n, w)
        return T, P, PA, ACC

    def features_from_cells(self, ind: np.ndarray) -> np.ndarray:
        """L.T @ ind for an indicator (or expected-indicator) vector."""
        if self.L_dense is not None:
            return ind @ self.L_dense
        return self.LT @ ind

    def encode(self, a: Assignment) -> tuple[int, np.ndarray, np.ndarray]:
        """(y position, bits, slots) for an Assignment."""
        y = self.y_pos[a.y]
        bits = np.array(a.y_bar, dtype=np.int8)
        slots = np.array([self.slot_of[j][v] for j, v in enumerate(a.lambda_hat)], dtype=np.intp)
        return y, bits, slots

    def decode(self, y: int, bits, slots) -> Assignment:
        return Assignment(int(self.y_ids[y]), tuple(int(b) for b in bits),
                          tuple(int(self.slot_ids[j, s]) for j, s in enumerate(slots)))

    def touched_cells(self, y: int, bits: np.ndarray, slots: np.ndarray) -> np.ndarray:
        kh = self.kh
        out = [self.off_t + (y * kh + np.arange(kh)) * 2 + bits]
        if len(self.pairs):
            i, j = self.pairs.T
            out.append(self.off_p + ((i * kh + j) * 2 + bits[i]) * 2 + bits[j])
        jj = np.arange(self.n)
        out.append(self.off_pa + (jj * self.ky + y) * self.width + slots)
        padded = np.append(bits, 0)
        on = padded[self.slot_latent[jj, slots]] == 1
        out.append(self.off_acc + jj[on] * self.width + slots[on])
        return np.concatenate(out).astype(np.intp)

    def phi(self, y: int, bits: np.ndarray, slots: np.ndarray) -> np.ndarray:
        cells = self.touched_cells(y, bits, slots)
        if self.L_dense is not None:
            return self.L_dense[cells].sum(axis=0)
        return np.asarray(self.L[cells].sum(axis=0)).ravel()

    def phi_batch(self, ys: np.ndarray, bits: np.ndarray, slots: np.ndarray) -> np.ndarray:
        """Feature vectors for many (y position, bits, slots) triples, shape (B, m)."""
        ys = np.asarray(ys, dtype=np.intp)
        B, kh, jj = len(ys), self.kh, np.arange(self.n)
        bits = np.asarray(bits, dtype=np.intp).reshape(B, kh)
        slots = np.asarray(slots, dtype=np.intp).reshape(B, self.n)
        cols = [self.off_t + (ys[:, None] * kh + np.arange(kh)) * 2 + bits]
        if len(self.pairs):
            i, j = self.pairs.T
            cols.append(self.off_p + ((i * kh + j) * 2 + bits[:, i]) * 2 + bits[:, j])
        cols.append(self.off_pa + (jj * self.ky + ys[:, None]) * self.width + slots)
        cols.append(self.off_acc + jj * self.width + slots)
        padded = np.concatenate([bits, np.zeros((B, 1), np.intp)], axis=1)
        on = padded[np.arange(B)[:, None], self.slot_latent[jj, slots]]
        cols = np.concatenate(cols, axis=1)
        data = np.ones(cols.shape)
        if self.n:
            data[:, -self.n:] = on
        ind = sparse.csr_matrix((data.ravel(), (np.repeat(np.arange(B), cols.shape[1]),
                                                cols.ravel())), shape=(B, self.n_cells))
        return (ind @ self.L).toarray()
