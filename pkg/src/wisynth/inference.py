"""Exact and sampled inference for factor models.

Exact routines enumerate every (Y, Ybar) configuration.  The ILF outputs are
conditionally independent given (Y, Ybar), so joint quantities sum each
lambda_j out in closed form instead of enumerating the product space.

The Gibbs sampler is a systematic scan (Y, Ybar ascending, lambda ascending)
vectorized across independent chains.  Every chain draws from its own
seeded stream, so results do not depend on how chains are batched.
"""
from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Iterator, Sequence

import numpy as np
from scipy.special import logsumexp

from .graph import ABSTAIN
from .model import Assignment, Compiled, FactorModel

__all__ = [
    "BudgetExceededError", "PosteriorLabels", "CONDITIONAL_BUDGET", "JOINT_BUDGET",
    "exact_posterior", "exact_y_posterior", "exact_joint_expectation",
    "exact_log_partition", "exact_conditional_expectation", "exact_nll",
    "y_conditional", "gibbs_sample", "gibbs_y_marginals", "posterior_labels",
    "encode_rows", "within_budget", "mean_conditional_expectation", "sample_joint",
    "sample_conditional",
]

CONDITIONAL_BUDGET = 2 ** 21
JOINT_BUDGET = 2 ** 23


class BudgetExceededError(RuntimeError):
    pass


def _states(c: Compiled) -> int:
    return c.ky * 2 ** c.kh


def within_budget(model: FactorModel, joint: bool = False, budget: int | None = None) -> bool:
    c = model.compiled
    if joint:
        return _states(c) * max(1, c.n * c.width) <= (budget or JOINT_BUDGET)
    return _states(c) <= (budget or CONDITIONAL_BUDGET)


def _require(model, joint, budget):
    if not within_budget(model, joint, budget):
        c = model.compiled
        raise BudgetExceededError(
            f"{c.ky} x 2^{c.kh} configurations exceed the {'joint' if joint else 'conditional'} "
            "enumeration budget; use Gibbs sampling")


def encode_rows(model: FactorModel, outputs) -> np.ndarray:
    """Map an (m, n) matrix of seen ids / ABSTAIN to ILF slot indices."""
    c = model.compiled
    outputs = np.asarray(outputs, dtype=np.int64)
    if outputs.ndim == 1:
        outputs = outputs[None, :]
    if outputs.ndim != 2 or outputs.shape[1] != c.n:
        raise ValueError(f"outputs have shape {outputs.shape}, expected (m, {c.n})")
    slots = np.empty(outputs.shape, dtype=np.intp)
    for j in range(c.n):
        col = outputs[:, j]
        lut = c.slot_of[j]
        try:
            slots[:, j] = [lut[int(v)] for v in col]
        except KeyError as exc:
            ilf = model.ilfs[j]
            what = "ABSTAIN" if exc.args[0] == ABSTAIN else f"label {exc.args[0]}"
            raise ValueError(f"ILF {ilf.ilf_id} cannot output {what}") from None
    return slots


class _Enumeration:
    """All (Y, Ybar) configurations, Y-major, bit 0 least significant."""

    def __init__(self, c: Compiled):
        self.c = c
        nb = 2 ** c.kh
        self.nb = nb
        codes = np.arange(nb)
        bits = ((codes[:, None] >> np.arange(c.kh)) & 1).astype(np.intp)
        self.ys = np.repeat(np.arange(c.ky), nb)
        self.bits = np.tile(bits, (c.ky, 1))
        # extra always-zero column addressed by non-latent slots
        self.bits_pad = np.concatenate([self.bits, np.zeros((len(self.ys), 1), np.intp)], axis=1)
        # cell index tables turn scoring into gathers; skipped when they get large
        S, kh, w = len(self.ys), c.kh, c.width
        self.state_cells = self.pa_idx = None
        if S * (kh + len(c.pairs)) <= 2 ** 22:
            parts = [c.off_t + (self.ys[:, None] * kh + np.arange(kh)) * 2 + self.bits]
            if len(c.pairs):
                i, j = c.pairs.T
                parts.append(c.off_p + ((i * kh + j) * 2 + self.bits[:, i]) * 2 + self.bits[:, j])
            self.state_cells = np.concatenate(parts, axis=1)
        if c.n and S * c.n * w <= 2 ** 22:
            jj = np.arange(c.n)
            self.pa_idx = (c.off_pa + (jj[None, :, None] * c.ky + self.ys[:, None, None]) * w
                           + np.arange(w)[None, None, :])
            self.acc_idx = c.off_acc + jj[:, None] * w + np.arange(w)
            self.lat = self.bits_pad[:, c.slot_latent].astype(float)

    def scores(self, theta):
        """Relation score per state and ILF slot scores, shape (S,) and (S, n, W)."""
        c = self.c
        cells = c.cells(theta)
        S = len(self.ys)
        if self.state_cells is not None:
            rel = cells[self.state_cells].sum(axis=1)
        else:
            T, P, _, _ = c.tables(theta)
            rel = np.zeros(S)
            if c.kh:
                rel += T[self.ys[:, None], np.arange(c.kh)[None, :], self.bits].sum(axis=1)
                for i, j in c.pairs:
                    rel += P[i, j][self.bits[:, i], self.bits[:, j]]
        if not c.n:
            sc = np.zeros((S, 0, c.width))
        elif self.pa_idx is not None:
            sc = cells[self.pa_idx] + cells[self.acc_idx] * self.lat + c.mask
        else:
            _, _, PA, ACC = c.tables(theta)
            lat = self.bits_pad[:, c.slot_latent]                   # (S, n, W)
            sc = PA[:, self.ys, :].transpose(1, 0, 2) + ACC[None] * lat + c.mask[None]
        return rel, sc

    def log_weights(self, theta):
        rel, sc = self.scores(theta)
        lw = rel + (logsumexp(sc, axis=2).sum(axis=1) if self.c.n else 0.0)
        return lw, rel, sc

    def conditional_log_weights(self, rel, sc, slots):
        """(S, R) log-weights of (Y, Ybar) given each row of slots."""
        out = np.repeat(rel[:, None], len(slots), axis=1)
        for j in range(self.c.n):
            out += sc[:, j, :][:, slots[:, j]]
        return out

    def expected_cells(self, p, q=None, slots=None):
        """E[cell indicators] under state weights p.

        Either q (S, n, W) gives each state's lambda distribution, or slots
        (n,) fixes lambda.
        """
        c = self.c
        ind = np.zeros(c.n_cells)
        if c.kh:
            idx = c.off_t + (self.ys[:, None] * c.kh + np.arange(c.kh)) * 2 + self.bits
            ind[:c.off_p] = np.bincount(idx.ravel(), weights=np.repeat(p, c.kh),
                                        minlength=c.off_p)[:c.off_p]
            for i, j in c.pairs:
                code = 2 * self.bits[:, i] + self.bits[:, j]
                base = c.p_cell(i, j, 0, 0)
                ind[base:base + 4] = np.bincount(code, weights=p, minlength=4)
        if c.n:
            jj = np.arange(c.n)
            if q is None:
                q = np.zeros((len(p), c.n, c.width))
                q[:, jj, slots] = 1.0
            pq = p[:, None, None] * q                               # (S, n, W)
            pa = pq.reshape(c.ky, self.nb, c.n, c.width).sum(axis=1)  # (ky, n, W)
            ind[c.off_pa:c.off_acc] = pa.transpose(1, 0, 2).ravel()
            lat = self.bits_pad[:, c.slot_latent]
            ind[c.off_acc:] = (pq * lat).sum(axis=0).ravel()
        return ind


def _enum(model: FactorModel) -> _Enumeration:
    cache = model._cache
    if "enum" not in cache:
        cache["enum"] = _Enumeration(model.compiled)
    return cache["enum"]


def _softmax(lw, axis=None):
    z = lw - np.max(lw, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def exact_posterior(model: FactorModel, lambda_obs, budget: int | None = None) -> np.ndarray:
    """P(Y, Ybar | lambda) as a (|Y domain|, 2**kh) table.

    Column index encodes Ybar with the first latent bit least significant.
    """
    _require(model, False, budget)
    e = _enum(model)
    slots = encode_rows(model, lambda_obs)
    rel, sc = e.scores(model.theta)
    lw = e.conditional_log_weights(rel, sc, slots)[:, 0]
    return _softmax(lw).reshape(e.c.ky, e.nb)


def exact_y_posterior(model: FactorModel, outputs, budget: int | None = None) -> np.ndarray:
    """P(Y | lambda) for every row of outputs, shape (m, |Y domain|)."""
    _require(model, False, budget)
    e = _enum(model)
    slots = encode_rows(model, outputs)
    rel, sc = e.scores(model.theta)
    lw = e.conditional_log_weights(rel, sc, slots)              # (S, R)
    lw = lw.reshape(e.c.ky, e.nb, -1)
    ly = logsumexp(lw, axis=1)                                  # (ky, R)
    return _softmax(ly, axis=0).T


def y_conditional(model: FactorModel, y_bar, lambda_hat) -> np.ndarray:
    """P(Y | Ybar, lambda) over the model's Y domain."""
    c = model.compiled
    T, P, PA, ACC = c.tables(model.theta)
    bits = np.asarray(y_bar, dtype=np.intp)
    slots = encode_rows(model, lambda_hat)[0]
    lw = np.zeros(c.ky)
    if c.kh:
        lw += T[:, np.arange(c.kh), bits].sum(axis=1)
    if c.n:
        lw += PA[np.arange(c.n), :, slots].sum(axis=0)
    return _softmax(lw)


def exact_log_partition(model: FactorModel, budget: int | None = None) -> float:
    _require(model, True, budget)
    lw, _, _ = _enum(model).log_weights(model.theta)
    return float(logsumexp(lw))


def exact_joint_expectation(model: FactorModel, budget: int | None = None) -> np.ndarray:
    """E[Phi] under the joint model."""
    _require(model, True, budget)
    e = _enum(model)
    lw, rel, sc = e.log_weights(model.theta)
    p = _softmax(lw)
    q = _softmax(sc, axis=2) if e.c.n else None
    return e.c.features_from_cells(e.expected_cells(p, q=q))


def exact_conditional_expectation(model: FactorModel, lambda_obs,
                                  budget: int | None = None) -> np.ndarray:
    """E[Phi | lambda = lambda_obs]."""
    _require(model, False, budget)
    e = _enum(model)
    slots = encode_rows(model, lambda_obs)
    rel, sc = e.scores(model.theta)
    p = _softmax(e.conditional_log_weights(rel, sc, slots)[:, 0])
    return e.c.features_from_cells(e.expected_cells(p, slots=slots[0]))


def mean_conditional_expectation(model: FactorModel, outputs,
                                 budget: int | None = None) -> np.ndarray:
    """Average of E[Phi | lambda = row] over the rows of outputs."""
    _require(model, False, budget)
    e = _enum(model)
    c = e.c
    uniq, counts = np.unique(encode_rows(model, outputs), axis=0, return_counts=True)
    w = counts / counts.sum()
    rel, sc = e.scores(model.theta)
    p = _softmax(e.conditional_log_weights(rel, sc, uniq), axis=0)   # (S, R)
    ind = e.expected_cells(p @ w, q=np.zeros((len(e.ys), c.n, c.width)))
    if c.n:
        py = p.reshape(c.ky, e.nb, -1).sum(axis=1) * w               # (ky, R)
        pa = np.zeros((c.n, c.ky, c.width))
        acc = np.zeros((c.n, c.width))
        for j in range(c.n):
            s = uniq[:, j]
            np.add.at(pa[j].T, s, py.T)
            on = e.bits_pad[:, c.slot_latent[j, s]]                   # (S, R)
            np.add.at(acc[j], s, (p * on).sum(axis=0) * w)
        ind[c.off_pa:c.off_acc] = pa.ravel()
        ind[c.off_acc:] = acc.ravel()
    return c.features_from_cells(ind)


def exact_nll(model: FactorModel, outputs, budget: int | None = None) -> float:
    """Mean negative log marginal likelihood of the rows of outputs."""
    _require(model, True, budget)
    e = _enum(model)
    uniq, counts = np.unique(encode_rows(model, outputs), axis=0, return_counts=True)
    lw, rel, sc = e.log_weights(model.theta)
    log_z = logsumexp(lw)
    log_zc = logsumexp(e.conditional_log_weights(rel, sc, uniq), axis=0)
    return float(log_z - (counts * log_zc).sum() / counts.sum())


def _draw(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Inverse-CDF draws from the rows (or the single vector) of cumulative weights."""
    if cum.ndim == 1:
        return np.minimum(np.searchsorted(cum, u * cum[-1], side="right"), len(cum) - 1)
    return np.minimum((cum < (u * cum[:, -1])[:, None]).sum(axis=1), cum.shape[1] - 1)


def sample_joint(model: FactorModel, size: int, rng: np.random.Generator,
                 budget: int | None = None):
    """Exact i.i.d. draws of (Y position, Ybar bits, lambda slots)."""
    _require(model, True, budget)
    e = _enum(model)
    c = e.c
    lw, rel, sc = e.log_weights(model.theta)
    state = _draw(np.cumsum(np.exp(lw - lw.max())), rng.random(size))
    slots = np.zeros((size, c.n), dtype=np.intp)
    if c.n:
        q = np.cumsum(_softmax(sc, axis=2), axis=2)                    # (S, n, W)
        u = rng.random((size, c.n))
        for j in range(c.n):
            slots[:, j] = _draw(q[state, j], u[:, j])
    return e.ys[state], e.bits[state], slots


def sample_conditional(model: FactorModel, slots: np.ndarray, rng: np.random.Generator,
                       budget: int | None = None):
    """One exact draw of (Y position, Ybar bits) per row of ILF slots."""
    _require(model, False, budget)
    e = _enum(model)
    slots = np.asarray(slots, dtype=np.intp).reshape(-1, e.c.n)
    uniq, inverse = np.unique(slots, axis=0, return_inverse=True)
    rel, sc = e.scores(model.theta)
    cw = np.cumsum(_softmax(e.conditional_log_weights(rel, sc, uniq), axis=0), axis=0).T
    state = _draw(cw[inverse.reshape(-1)], rng.random(len(slots)))
    return e.ys[state], e.bits[state]


# ----------------------------------------------------------------------------
# Gibbs sampling

def _chain_rng(seed: int, key: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), int(key)])))


def _categorical(logits: np.ndarray, u: np.ndarray) -> np.ndarray:
    p = np.exp(logits - logits.max(axis=1, keepdims=True))
    cum = np.cumsum(p, axis=1)
    return (cum < (u * cum[:, -1])[:, None]).sum(axis=1)


class _Chains:
    """R chains advanced in lockstep.  slots of clamped rows never change."""

    def __init__(self, model: FactorModel, rngs: Sequence[np.random.Generator],
                 clamp: np.ndarray | None, block: int = 256):
        c = self.c = model.compiled
        self.block = block
        self.rngs = list(rngs)
        self.R = R = len(self.rngs)
        self.clamped = clamp is not None
        self.n_sites = 1 + c.kh + (0 if self.clamped else c.n)
        self.set_theta(model.theta)
        init = np.stack([g.random(1 + c.kh + c.n) for g in self.rngs])
        self.y = np.minimum((init[:, 0] * c.ky).astype(np.intp), c.ky - 1)
        self.bits = np.zeros((R, c.kh + 1), dtype=np.intp)
        self.bits[:, :c.kh] = init[:, 1:1 + c.kh] < 0.5
        if self.clamped:
            self.slots = np.array(clamp, dtype=np.intp).reshape(R, c.n)
        else:
            u = init[:, 1 + c.kh:]
            nv = c.n_valid + c.can_abstain
            pick = np.minimum((u * nv).astype(np.intp), nv - 1)
            # index nv-1 means abstain when the ILF can abstain
            self.slots = np.where(c.can_abstain & (pick == nv - 1), c.abstain_slot, pick)
        self._buf = None
        self._pos = 0

    def set_theta(self, theta):
        c = self.c
        self.T, P, self.PA, self.ACC = c.tables(theta)
        P2 = np.zeros((c.kh, c.kh, 2, 2))
        for i, j in c.pairs:
            P2[i, j] = P[i, j]
            P2[j, i] = P[i, j].T
        self.P2 = P2

    def _uniforms(self) -> np.ndarray:
        if self._buf is None or self._pos >= self._buf.shape[1]:
            self._buf = np.stack([g.random((self.block, self.n_sites)) for g in self.rngs])
            self._pos = 0
        u = self._buf[:, self._pos]
        self._pos += 1
        return u

    def y_logits(self):
        c = self.c
        lw = np.zeros((self.R, c.ky))
        if c.kh:
            lw += self.T[:, np.arange(c.kh)[None, :], self.bits[:, :c.kh]].sum(axis=2).T
        if c.n:
            lw += self.PA[np.arange(c.n)[None, :], :, self.slots].sum(axis=1)
        return lw

    def bit_logodds(self, s):
        c = self.c
        d = self.T[self.y, s, 1] - self.T[self.y, s, 0]
        if c.kh > 1:
            kk = np.arange(c.kh)
            b = self.bits[:, :c.kh]
            d = d + (self.P2[s, kk, 1, b] - self.P2[s, kk, 0, b]).sum(axis=1)
        if c.n:
            jj = np.arange(c.n)[None, :]
            hit = c.slot_latent[jj, self.slots] == s
            d = d + (self.ACC[jj, self.slots] * hit).sum(axis=1)
        return d

    def slot_logits(self, j):
        c = self.c
        lat = self.bits[:, c.slot_latent[j]]                      # (R, W)
        return self.PA[j][self.y] + self.ACC[j][None, :] * lat + c.mask[j][None, :]

    def sweep(self):
        c = self.c
        u = self._uniforms()
        self.y = _categorical(self.y_logits(), u[:, 0])
        for s in range(c.kh):
            p1 = 1.0 / (1.0 + np.exp(-self.bit_logodds(s)))
            self.bits[:, s] = u[:, 1 + s] < p1
        if not self.clamped:
            for j in range(c.n):
                self.slots[:, j] = _categorical(self.slot_logits(j), u[:, 1 + c.kh + j])


def gibbs_sample(model: FactorModel, condition=None, sweeps: int = 1000, burn_in: int = 100,
                 rng_seed: int = 0) -> Iterator[Assignment]:
    """Yield one Assignment per sweep after burn-in.

    `condition` clamps lambda to an observed row of seen ids / ABSTAIN.
    """
    if not sweeps > burn_in >= 0:
        raise ValueError("need sweeps > burn_in >= 0")
    clamp = None if condition is None else encode_rows(model, condition)
    ch = _Chains(model, [_chain_rng(rng_seed, 0)], clamp)
    c = model.compiled
    for t in range(sweeps):
        ch.sweep()
        if t >= burn_in:
            yield c.decode(int(ch.y[0]), ch.bits[0, :c.kh], ch.slots[0])


def gibbs_y_marginals(model: FactorModel, outputs, sweeps: int = 2000, burn_in: int = 200,
                      rng_seed: int = 0, keys: Sequence[int] | None = None) -> np.ndarray:
    """Empirical Y frequencies of one clamped chain per row, shape (R, |Y domain|).

    keys seed each row's chain (defaults to the row index).
    """
    if not sweeps > burn_in >= 0:
        raise ValueError("need sweeps > burn_in >= 0")
    slots = encode_rows(model, outputs)
    keys = range(len(slots)) if keys is None else keys
    ch = _Chains(model, [_chain_rng(rng_seed, k) for k in keys], slots)
    counts = np.zeros((len(slots), model.compiled.ky))
    rows = np.arange(len(slots))
    for t in range(sweeps):
        ch.sweep()
        if t >= burn_in:
            counts[rows, ch.y] += 1
    return counts / (sweeps - burn_in)


@dataclass
class PosteriorLabels:
    """Per-point distributions over the model's Y domain (desired ids, then unknown)."""

    probs: np.ndarray
    names: list[str]
    provenance: dict = field(default_factory=dict)
    # label id per column (desired ids, UNKNOWN for the unknown class)
    ids: tuple[int, ...] = ()

    def __len__(self):
        return len(self.probs)

    def hard(self) -> np.ndarray:
        """Argmax position per point; ties go to the lowest position."""
        return np.argmax(self.probs, axis=1)

    def hard_ids(self) -> np.ndarray:
        """Argmax label id per point."""
        return np.asarray(self.ids, dtype=np.int64)[self.hard()]


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("WISYNTH_THREADS", "1")))
    except ValueError:
        return 1


def posterior_labels(model: FactorModel, outputs, method: str = "auto", *, sweeps: int = 2000,
                     burn_in: int = 200, rng_seed: int = 0,
                     budget: int | None = None) -> PosteriorLabels:
    """P(Y | lambda) for every data point; identical rows are computed once."""
    outputs = np.asarray(outputs, dtype=np.int64)
    slots = encode_rows(model, outputs)
    uniq, first, inverse = np.unique(slots, axis=0, return_index=True, return_inverse=True)
    inverse = inverse.reshape(-1)
    if method == "auto":
        method = "exact" if within_budget(model, False, budget) else "gibbs"
    if method == "exact":
        probs = exact_y_posterior(model, outputs[first], budget)
        prov = {"method": "exact"}
    elif method == "gibbs":
        rows = outputs[first]
        chunks = np.array_split(np.arange(len(rows)), min(_threads(), max(1, len(rows))))

        def run(idx):
            return gibbs_y_marginals(model, rows[idx], sweeps, burn_in, rng_seed, keys=first[idx])

        if len(chunks) > 1:
            with ThreadPoolExecutor(len(chunks)) as pool:
                parts = list(pool.map(run, chunks))
        else:
            parts = [run(chunks[0])]
        probs = np.concatenate(parts, axis=0)
        prov = {"method": "gibbs", "sweeps": sweeps, "burn_in": burn_in, "seed": rng_seed}
    else:
        raise ValueError(f"unknown inference method {method!r}")
    return PosteriorLabels(probs[inverse], model.y_names(), prov, tuple(model.y_domain))
