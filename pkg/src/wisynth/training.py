"""Stochastic maximum marginal likelihood for factor models.

Each update draws one configuration from the model and one completion of
the observed row, then moves theta by eta * (Phi(conditional) -
Phi(unconditional)), a single-sample estimate of minus the gradient of the
per-example negative log marginal likelihood.  Small models are sampled
exactly by enumeration; larger ones fall back to a persistent Gibbs chain
for the unconditional draw plus a short clamped chain per example.
"""
from __future__ import annotations

import logging
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from . import inference as inf
from .model import DEFAULT_THETA_INIT, FactorModel

__all__ = [
    "TrainConfig", "TrainResult", "TrainingDivergedError", "fit", "fit_full_batch",
    "exact_nll_gradient",
    "exact_dataset_gradient", "project_positive", "stochastic_update_estimate",
]

log = logging.getLogger(__name__)


class TrainingDivergedError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    """SGD settings.  step_size None means 1 / (number of training points).

    theta_init None keeps the incoming model's weights.
    """

    step_size: float | None = None
    epochs: int = 10
    burn_in: int = 10
    persistent: bool = True
    sweeps_per_update: int = 1
    eps: float = 1e-6
    theta_init: float | None = DEFAULT_THETA_INIT
    rng_seed: int = 0
    weight_decay: float = 0.0
    divergence_bound: float = 1e3
    sampler: str = "auto"
    reverse_sign: bool = False
    monitor_nll: bool = True

    def __post_init__(self):
        if self.step_size is not None and not self.step_size > 0:
            raise ValueError("step_size must be positive")
        if self.eps < 0:
            raise ValueError("eps must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be at least 1")
        if self.burn_in < 0 or self.sweeps_per_update < 1:
            raise ValueError("burn_in must be >= 0 and sweeps_per_update >= 1")
        if self.sampler not in ("auto", "exact", "gibbs"):
            raise ValueError(f"unknown sampler {self.sampler!r}")

    def to_dict(self) -> dict:
        return asdict(self)


class TrainResult(NamedTuple):
    model: FactorModel
    log: list[dict]


def project_positive(theta, eps: float) -> np.ndarray:
    if eps < 0:
        raise ValueError("eps must be non-negative")
    return np.maximum(np.asarray(theta, dtype=float), eps)


def exact_nll_gradient(model: FactorModel, lambda_obs, budget: int | None = None) -> np.ndarray:
    """Gradient of -log P(lambda_obs): E[Phi] - E[Phi | lambda_obs]."""
    return (inf.exact_joint_expectation(model, budget)
            - inf.exact_conditional_expectation(model, lambda_obs, budget))


def exact_dataset_gradient(model: FactorModel, outputs, budget: int | None = None) -> np.ndarray:
    """Gradient of the mean negative log marginal likelihood over the rows."""
    return (inf.exact_joint_expectation(model, budget)
            - inf.mean_conditional_expectation(model, outputs, budget))


def stochastic_update_estimate(model: FactorModel, outputs, n_pairs: int,
                               rng_seed: int = 0) -> np.ndarray:
    """Mean of Phi(conditional) - Phi(unconditional) over n_pairs exact draws.

    Rows are picked uniformly from outputs.  The expectation is minus the
    dataset gradient.
    """
    rng = np.random.default_rng(rng_seed)
    c = model.compiled
    slots = inf.encode_rows(model, outputs)
    pick = slots[rng.integers(len(slots), size=n_pairs)]
    yu, bu, su = inf.sample_joint(model, n_pairs, rng)
    yc, bc = inf.sample_conditional(model, pick, rng)
    return (c.phi_batch(yc, bc, pick) - c.phi_batch(yu, bu, su)).mean(axis=0)


class _ExactSampler:
    """Exact draws from the enumerated model; returns feature vectors directly."""

    def __init__(self, model: FactorModel, rng: np.random.Generator):
        self.e = inf._enum(model)
        self.c = model.compiled
        self.rng = rng
        self.jj = np.arange(self.c.n)
        self.fast = self.e.state_cells is not None and self.c.L_dense is not None and (
            self.e.pa_idx is not None or not self.c.n)

    def _phi(self, s, slots):
        e, c = self.e, self.c
        if not self.fast:
            return c.phi(e.ys[s], e.bits[s], slots)
        cells = [e.state_cells[s]]
        if c.n:
            on = e.lat[s, self.jj, slots] == 1
            cells += [e.pa_idx[s, self.jj, slots], e.acc_idx[self.jj[on], slots[on]]]
        return c.L_dense[np.concatenate(cells)].sum(axis=0)

    def step(self, theta, row):
        """Phi(conditional draw) - Phi(unconditional draw)."""
        e, c, rng = self.e, self.c, self.rng
        rel, sc = e.scores(theta)
        mx = sc.max(axis=2, keepdims=True)
        ex = np.exp(sc - mx)
        lw = rel + (mx[:, :, 0] + np.log(ex.sum(axis=2))).sum(axis=1)
        u = rng.random(2 + c.n)
        s = inf._draw(np.cumsum(np.exp(lw - lw.max())), u[0])
        q = np.cumsum(ex[s], axis=1)
        su = np.minimum((q < (u[2:] * q[:, -1])[:, None]).sum(axis=1), c.width - 1)
        lc = rel + sc[:, self.jj, row].sum(axis=1)
        s2 = inf._draw(np.cumsum(np.exp(lc - lc.max())), u[1])
        return self._phi(s2, row) - self._phi(s, su)


class _GibbsSampler:
    def __init__(self, model: FactorModel, cfg: TrainConfig):
        self.model = model
        self.cfg = cfg
        self.rng_u = inf._chain_rng(cfg.rng_seed, 1)
        self.rng_c = inf._chain_rng(cfg.rng_seed, 2)
        self.chain = None

    def _phi(self, ch):
        return ch.c.phi(ch.y[0], ch.bits[0, :ch.c.kh], ch.slots[0])

    def step(self, theta, row):
        """Phi(clamped chain state) - Phi(persistent chain state)."""
        cfg = self.cfg
        if self.chain is None or not cfg.persistent:
            self.chain = inf._Chains(self.model, [self.rng_u], None, block=16)
            self.chain.set_theta(theta)
            for _ in range(cfg.burn_in):
                self.chain.sweep()
        self.chain.set_theta(theta)
        for _ in range(cfg.sweeps_per_update):
            self.chain.sweep()
        cond = inf._Chains(self.model, [self.rng_c], row[None, :], block=cfg.burn_in + 1)
        cond.set_theta(theta)
        for _ in range(cfg.burn_in + 1):
            cond.sweep()
        return self._phi(cond) - self._phi(self.chain)


def fit(model: FactorModel, outputs, cfg: TrainConfig | None = None) -> TrainResult:
    """Train theta on an (m, n) matrix of ILF outputs; returns (model, per-epoch log)."""
    cfg = cfg or TrainConfig()
    slots = inf.encode_rows(model, outputs)
    m = len(slots)
    if m == 0:
        raise ValueError("no training data")
    eta = cfg.step_size if cfg.step_size is not None else 1.0 / m
    theta = model.theta.copy() if cfg.theta_init is None else np.full(model.n_factors,
                                                                      float(cfg.theta_init))
    if cfg.eps > 0:
        theta = project_positive(theta, cfg.eps)
    sampler_name = cfg.sampler
    if sampler_name == "auto":
        sampler_name = "exact" if inf.within_budget(model, joint=True) else "gibbs"
    rng = inf._chain_rng(cfg.rng_seed, 0)
    sampler = _ExactSampler(model, rng) if sampler_name == "exact" else _GibbsSampler(model, cfg)
    monitor = cfg.monitor_nll and inf.within_budget(model, joint=True)
    sign = -1.0 if cfg.reverse_sign else 1.0

    def record(epoch):
        entry = {"epoch": epoch,
                 "exact_nll": inf.exact_nll(model.with_theta(theta), outputs) if monitor else None,
                 "theta_norm": float(np.linalg.norm(theta)),
                 "step_size": eta,
                 "sampler": sampler_name}
        log.debug("epoch %d: %s", epoch, entry)
        return entry

    history = [record(0)]
    for epoch in range(1, cfg.epochs + 1):
        for i in rng.permutation(m):
            theta += sign * eta * sampler.step(theta, slots[i])
            if cfg.weight_decay:
                theta -= eta * cfg.weight_decay * theta
            if cfg.eps > 0:
                np.maximum(theta, cfg.eps, out=theta)
            if np.abs(theta).max() > cfg.divergence_bound:
                raise TrainingDivergedError(
                    f"|theta|_inf exceeded {cfg.divergence_bound:g} in epoch {epoch}")
        history.append(record(epoch))
    return TrainResult(model.with_theta(theta.copy()), history)


def fit_full_batch(model: FactorModel, outputs, iterations: int = 300, step_size: float = 2.0,
                   eps: float = 1e-6, theta_init: float | None = DEFAULT_THETA_INIT,
                   budget: int | None = None) -> TrainResult:
    """Projected gradient descent on the exact mean negative log marginal likelihood.

    Each iteration takes the expected value of the stochastic update over
    the whole dataset, so it needs the joint model within the enumeration
    budget.  eps > 0 floors theta after every step; eps = 0 leaves it free.
    The log has one entry per iteration in the format of fit.
    """
    if iterations < 1 or not step_size > 0:
        raise ValueError("iterations must be >= 1 and step_size positive")
    if not inf.within_budget(model, joint=True, budget=budget):
        raise inf.BudgetExceededError("full-batch training needs an enumerable model")
    outputs = np.asarray(outputs, dtype=np.int64)
    if len(outputs) == 0:
        raise ValueError("no training data")
    theta = model.theta.copy() if theta_init is None else np.full(model.n_factors,
                                                                  float(theta_init))
    floor = (lambda t: project_positive(t, eps)) if eps > 0 else (lambda t: t)
    theta = floor(theta)
    history = []
    for it in range(iterations + 1):
        current = model.with_theta(theta)
        history.append({"epoch": it, "exact_nll": inf.exact_nll(current, outputs, budget),
                        "theta_norm": float(np.linalg.norm(theta)), "step_size": step_size,
                        "sampler": "full_batch"})
        if it == iterations:
            break
        theta = floor(theta - step_size * exact_dataset_gradient(current, outputs, budget))
    return TrainResult(model.with_theta(theta), history)
