"""Baseline label models and the noise-aware linear end model.

LR-MV replaces each seen-label vote with its non-exclusive desired labels and
takes a majority vote; W-LR-MV down-weights replacements that are not
ancestors of the vote.  DAP builds attributes from the consistent
assignments of seen labels.  All argmax decisions break ties towards the
lowest label id.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp, softmax

from .graph import ABSTAIN, LabelGraph, Relation

__all__ = [
    "VoteResult", "lr_mv", "w_lr_mv", "replacement_weights", "enumerate_consistent_assignments",
    "dap_label_attributes", "dap_point_attributes", "dap_predict", "DapResult", "dap",
    "LinearClassifier", "noise_aware_loss", "train_noise_aware_linear", "ASSIGNMENT_CAP",
    "PRIOR_FLOOR",
]

ASSIGNMENT_CAP = 20
PRIOR_FLOOR = 1e-6


@dataclass
class VoteResult:
    """Hard predictions (desired id or ABSTAIN) and the (m, k) vote tally.

    Tally columns follow graph.desired order.
    """

    predictions: np.ndarray
    tally: np.ndarray
    desired: tuple[int, ...]


def _argmax_or_abstain(tally: np.ndarray, desired) -> np.ndarray:
    desired = np.asarray(desired, dtype=np.int64)
    if tally.shape[1] == 0:
        return np.full(len(tally), ABSTAIN, dtype=np.int64)
    pred = desired[np.argmax(tally, axis=1)]
    return np.where(tally.max(axis=1) > 0, pred, ABSTAIN)


def replacement_weights(graph: LabelGraph, weighted: bool) -> dict[int, np.ndarray]:
    """Per seen label, the weight each desired label receives from one vote."""
    out = {}
    for v in graph.seen:
        nbrs = [graph.relation(y, v) != Relation.EXCLUSIVE for y in graph.desired]
        w = np.array(nbrs, dtype=float)
        if weighted:
            ancestor = np.array([graph.relation(y, v) == Relation.SUBSUMING for y in graph.desired])
            others = w.astype(bool) & ~ancestor
            if others.any():
                w[others] = 1.0 / others.sum()
        out[v] = w
    return out


def _tally(graph: LabelGraph, outputs, weighted: bool) -> VoteResult:
    outputs = np.asarray(outputs, dtype=np.int64)
    weights = replacement_weights(graph, weighted)
    k = len(graph.desired)
    table = np.zeros((len(graph), k))
    for v, w in weights.items():
        table[v] = w
    votes = outputs != ABSTAIN
    tally = np.zeros((len(outputs), k))
    for j in range(outputs.shape[1] if outputs.ndim == 2 else 0):
        col = outputs[:, j]
        tally[votes[:, j]] += table[col[votes[:, j]]]
    return VoteResult(_argmax_or_abstain(tally, graph.desired), tally, graph.desired)


def lr_mv(graph: LabelGraph, outputs) -> VoteResult:
    return _tally(graph, outputs, weighted=False)


def w_lr_mv(graph: LabelGraph, outputs) -> VoteResult:
    """Weighted vote: ancestors of the voted label get 1, others share 1 equally."""
    return _tally(graph, outputs, weighted=True)


def _seen_constraints(graph: LabelGraph):
    seen = graph.seen
    excl, sub = [], []
    for a, b in itertools.combinations(range(len(seen)), 2):
        r = graph.relation(seen[a], seen[b])
        if r == Relation.EXCLUSIVE:
            excl.append((a, b))
        elif r == Relation.SUBSUMED:
            sub.append((a, b))        # a inside b
        elif r == Relation.SUBSUMING:
            sub.append((b, a))
    return excl, sub


def enumerate_consistent_assignments(graph: LabelGraph, cap: int = ASSIGNMENT_CAP) -> np.ndarray:
    """All seen-label bit vectors compatible with the graph, in lexicographic order.

    Columns follow graph.seen.  Exclusive labels are never both on, and a
    label that is on switches on every label containing it.
    """
    kh = len(graph.seen)
    if kh > cap:
        raise ValueError(f"{kh} seen labels exceed the assignment enumeration cap of {cap}")
    codes = np.arange(2 ** kh, dtype=np.int64)
    S = ((codes[:, None] >> np.arange(kh - 1, -1, -1)) & 1).astype(bool)
    keep = np.ones(len(S), dtype=bool)
    excl, sub = _seen_constraints(graph)
    for a, b in excl:
        keep &= ~(S[:, a] & S[:, b])
    for inner, outer in sub:
        keep &= ~S[:, inner] | S[:, outer]
    return S[keep]


def dap_label_attributes(graph: LabelGraph, S: np.ndarray, y: int) -> np.ndarray:
    """Bit m is 1 iff no label switched on in S[m] is exclusive to y."""
    excl = np.array([graph.relation(y, s) == Relation.EXCLUSIVE for s in graph.seen], dtype=bool)
    return ~(np.asarray(S, dtype=bool) & excl).any(axis=1)


def _ancestor_closure(graph: LabelGraph) -> np.ndarray:
    seen = graph.seen
    kh = len(seen)
    closure = np.eye(kh, dtype=bool)
    for a, b in itertools.product(range(kh), repeat=2):
        if a != b and graph.relation(seen[b], seen[a]) == Relation.SUBSUMING:
            closure[a, b] = True
    return closure


def dap_point_attributes(graph: LabelGraph, S: np.ndarray, row) -> tuple[np.ndarray, bool]:
    """Bit vector over S for one ILF output row and a conflict flag.

    The point's seen-label set is its votes plus every seen label containing
    a vote.  Conflicting (exclusive) votes give the all-zero vector and True.
    """
    bits, conflict = _point_attributes(graph, np.asarray(S, dtype=bool),
                                       np.asarray(row, dtype=np.int64)[None, :])
    return bits[0], bool(conflict[0])


def _point_attributes(graph: LabelGraph, S: np.ndarray, outputs: np.ndarray):
    seen_pos = {s: i for i, s in enumerate(graph.seen)}
    closure = _ancestor_closure(graph)
    kh = len(graph.seen)
    active = np.zeros((len(outputs), kh), dtype=bool)
    for j in range(outputs.shape[1]):
        col = outputs[:, j]
        for r in np.flatnonzero(col != ABSTAIN):
            active[r] |= closure[seen_pos[int(col[r])]]
    excl, _ = _seen_constraints(graph)
    conflict = np.zeros(len(outputs), dtype=bool)
    for a, b in excl:
        conflict |= active[:, a] & active[:, b]
    weights = 1 << np.arange(kh - 1, -1, -1, dtype=np.int64)
    s_codes = S.astype(np.int64) @ weights
    p_codes = active.astype(np.int64) @ weights
    bits = p_codes[:, None] == s_codes[None, :]
    bits[conflict] = False
    return bits, conflict


def dap_predict(attr_prob, label_attrs, attr_priors, *, literal: bool = False,
                floor: float = PRIOR_FLOOR) -> np.ndarray:
    """Index of the best label per point.

    attr_prob is p(a_m = 1 | x), shape (M,) or (R, M); label_attrs is (C, M).
    Scores are sum_m log p(a_m = a^c_m | x) - log p(a_m = a^c_m) with priors
    floored.  literal=True divides by the posterior itself, which makes every
    label score zero.
    """
    p = np.atleast_2d(np.asarray(attr_prob, dtype=float))
    A = np.asarray(label_attrs, dtype=bool)
    prior = np.asarray(attr_priors, dtype=float)
    tiny = np.finfo(float).tiny
    log_p1, log_p0 = np.log(np.maximum(p, tiny)), np.log(np.maximum(1 - p, tiny))
    # (R, C): sum over attributes of the matching log posterior
    num = log_p1 @ A.T.astype(float) + log_p0 @ (~A).T.astype(float)
    if literal:
        den = num
    else:
        lq1 = np.log(np.maximum(prior, floor))
        lq0 = np.log(np.maximum(1 - prior, floor))
        den = (A.astype(float) @ lq1 + (~A).astype(float) @ lq0)[None, :]
    return np.argmax(num - den, axis=1)


@dataclass
class DapResult:
    predictions: np.ndarray
    assignments: np.ndarray
    label_attrs: np.ndarray
    point_attrs: np.ndarray
    conflicts: np.ndarray
    priors: np.ndarray


def dap(graph: LabelGraph, outputs, features: np.ndarray | None = None, *,
        literal: bool = False, smoothing: float = 1e-3, cap: int = ASSIGNMENT_CAP,
        linear_cfg: dict | None = None) -> DapResult:
    """Full DAP baseline over an ILF output matrix.

    Without features the attribute posterior is the point's own attribute
    vector smoothed towards 1/2; with features it is a linear classifier
    over assignments trained on the points' attributes.
    """
    outputs = np.asarray(outputs, dtype=np.int64)
    S = enumerate_consistent_assignments(graph, cap)
    A = np.array([dap_label_attributes(graph, S, y) for y in graph.desired]).reshape(-1, len(S))
    bits, conflict = _point_attributes(graph, S, outputs)
    priors = bits.mean(axis=0) if len(bits) else np.zeros(len(S))
    if features is None:
        probs = np.clip(bits.astype(float), smoothing, 1 - smoothing)
    else:
        targets = np.where(bits.any(axis=1, keepdims=True), bits, 1.0 / len(S)).astype(float)
        clf = train_noise_aware_linear(features, targets, **(linear_cfg or {}))
        probs = clf.predict_proba(features)
    idx = dap_predict(probs, A, priors, literal=literal)
    pred = np.asarray(graph.desired, dtype=np.int64)[idx] if len(graph.desired) else idx
    return DapResult(pred, S, A, bits, conflict, priors)


# ----------------------------------------------------------------------------
# noise-aware linear end model

@dataclass
class LinearClassifier:
    """Multinomial logistic regression; weights include a trailing bias row."""

    weights: np.ndarray
    history: list[float] = field(default_factory=list, repr=False)

    def logits(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        return X @ self.weights[:-1] + self.weights[-1]

    def predict_proba(self, X) -> np.ndarray:
        return softmax(self.logits(X), axis=1)

    def predict(self, X) -> np.ndarray:
        return np.argmax(self.logits(X), axis=1)


def _augment(X):
    return np.hstack([X, np.ones((len(X), 1))])


def noise_aware_loss(weights: np.ndarray, X: np.ndarray, P: np.ndarray,
                     l2: float = 0.0) -> tuple[float, np.ndarray]:
    """Expected cross-entropy under soft targets P, and its gradient.

    weights is (d + 1, K) with the bias in the last row.
    """
    Xa = _augment(np.asarray(X, dtype=float))
    z = Xa @ weights
    m = len(Xa)
    loss = float((logsumexp(z, axis=1) * P.sum(axis=1) - (P * z).sum(axis=1)).sum() / m)
    grad = Xa.T @ (softmax(z, axis=1) * P.sum(axis=1, keepdims=True) - P) / m
    if l2:
        loss += 0.5 * l2 * float((weights[:-1] ** 2).sum())
        grad[:-1] += l2 * weights[:-1]
    return loss, grad


def train_noise_aware_linear(features, posteriors, *, steps: int = 500, lr: float = 0.5,
                             l2: float = 0.0, seed: int = 0,
                             init_scale: float = 0.0) -> LinearClassifier:
    """Full-batch gradient descent on the noise-aware loss.

    posteriors is an (m, K) matrix of target distributions (or anything with a
    `probs` attribute).  init_scale > 0 draws the starting weights from a
    seeded normal; the default starts at zero.
    """
    X = np.asarray(features, dtype=float)
    P = np.asarray(getattr(posteriors, "probs", posteriors), dtype=float)
    if X.ndim != 2 or P.ndim != 2 or len(X) != len(P):
        raise ValueError(f"features {X.shape} and posteriors {P.shape} do not align")
    if not np.isfinite(X).all():
        raise ValueError("features contain NaN or Inf")
    if not np.isfinite(P).all() or (P < 0).any():
        raise ValueError("posteriors must be finite and non-negative")
    rng = np.random.default_rng(seed)
    W = init_scale * rng.standard_normal((X.shape[1] + 1, P.shape[1]))
    history = []
    for _ in range(steps):
        loss, grad = noise_aware_loss(W, X, P, l2)
        history.append(loss)
        W -= lr * grad
    return LinearClassifier(W, history)
