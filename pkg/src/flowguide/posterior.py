"""Isotropic variance estimators for the clean-action posterior.

Three interchangeable estimators of the scalar posterior variance of a0
given a_t, all batch expectations over freshly perturbed dataset actions:

* p1: (sigma^2/alpha^2) [1 - mean ||eps_hat||^2 / d]
* p2: Var(a0) - mean ||mu_hat - u0||^2 / d     (u0 = dataset action mean)
* p3: (sigma^2/(alpha^2 d)) mean ||eps - eps_hat||^2   (same eps as a_t)

Imperfect networks can push p1/p2 negative, so results are floored at
VAR_FLOOR; the downstream quadratic energy term needs a nonnegative value.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import behavior as bhv
from . import schedule as sched

VAR_FLOOR = 1e-8


@dataclass
class DatasetActionStats:
    u0: np.ndarray      # dataset-wide action mean, shape (action_dim,)
    var_a0: float       # per-dimension average action variance

    def __post_init__(self):
        if self.var_a0 < 0.0:
            raise ValueError("var_a0 must be >= 0")


@dataclass
class PosteriorEstimate:
    mean: np.ndarray    # mu_hat(a0 | a_t, s), shape (action_dim,)
    variance: float     # scalar isotropic variance, >= 0
    kind: str           # one of p1 / p2 / p3
    t: float


def compute_action_stats(actions: np.ndarray) -> DatasetActionStats:
    a = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    u0 = a.mean(axis=0)
    var = float(np.mean(np.var(a, axis=0)))
    return DatasetActionStats(u0, var)


def _fresh_perturbation(m, states, actions, t, rng):
    states = np.atleast_2d(np.asarray(states, dtype=np.float64))
    actions = np.atleast_2d(np.asarray(actions, dtype=np.float64))
    if states.shape[0] == 0:
        raise ValueError("empty batch")
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < m.schedule.t_min) or np.any(t_arr > m.schedule.T):
        raise ValueError(f"t={t} outside [{m.schedule.t_min}, {m.schedule.T}]")
    eps = rng.standard_normal(actions.shape)
    a_t = sched.perturb(m.schedule, actions, t, eps)
    return states, actions, a_t, eps


def variance_p1_from_expectation(s: sched.NoiseSchedule, t: float, mean_eps_sq_per_dim: float) -> float:
    """The p1 formula given E||eps_hat||^2 / d directly (no sampling)."""
    a, sig = sched.alpha_sigma(s, t)
    return max(float((sig * sig) / (a * a) * (1.0 - mean_eps_sq_per_dim)), VAR_FLOOR)


def variance_p1(m: bhv.NoiseModel, states, actions, t: float,
                rng: np.random.Generator) -> float:
    states, actions, a_t, _ = _fresh_perturbation(m, states, actions, t, rng)
    pred = m.epsilon(states, a_t, t)
    mean_sq = float(np.mean(np.sum(pred * pred, axis=1)) / actions.shape[1])
    return variance_p1_from_expectation(m.schedule, t, mean_sq)


def variance_p2(m: bhv.NoiseModel, stats: DatasetActionStats, states, actions,
                t: float, rng: np.random.Generator) -> float:
    if stats is None:
        raise ValueError("p2 needs dataset action stats")
    states, actions, a_t, _ = _fresh_perturbation(m, states, actions, t, rng)
    mu = bhv.posterior_mean(m, states, a_t, t)
    dev = mu - stats.u0
    mean_sq = float(np.mean(np.sum(dev * dev, axis=1)) / actions.shape[1])
    return max(stats.var_a0 - mean_sq, VAR_FLOOR)


def variance_p3(m: bhv.NoiseModel, states, actions, t: float,
                rng: np.random.Generator) -> float:
    states, actions, a_t, eps = _fresh_perturbation(m, states, actions, t, rng)
    pred = m.epsilon(states, a_t, t)
    resid = eps - pred
    a, sig = sched.alpha_sigma(m.schedule, t)
    mean_sq = float(np.mean(np.sum(resid * resid, axis=1)) / actions.shape[1])
    return max(float((sig * sig) / (a * a) * mean_sq), VAR_FLOOR)


def estimate_variance(m, kind: str, states, actions, t, rng,
                      stats: DatasetActionStats | None = None) -> float:
    if kind == "p1":
        return variance_p1(m, states, actions, t, rng)
    if kind == "p2":
        return variance_p2(m, stats, states, actions, t, rng)
    if kind == "p3":
        return variance_p3(m, states, actions, t, rng)
    raise ValueError(f"unknown posterior kind {kind!r}")


# ---------------------------------------------------------------------------
# Cached variance grid
# ---------------------------------------------------------------------------

@dataclass
class VarianceGrid:
    """Posterior variance on a fixed t grid, linearly interpolated between nodes."""

    kind: str
    t_grid: np.ndarray
    var: np.ndarray

    def __post_init__(self):
        self.t_grid = np.asarray(self.t_grid, dtype=np.float64)
        self.var = np.asarray(self.var, dtype=np.float64)
        if self.t_grid.shape != self.var.shape or self.t_grid.ndim != 1:
            raise ValueError("t_grid and var must be 1-D arrays of equal length")
        if np.any(np.diff(self.t_grid) <= 0):
            raise ValueError("t_grid must be strictly increasing")

    def __call__(self, t):
        return np.interp(np.asarray(t, dtype=np.float64), self.t_grid, self.var)

    def mean(self) -> float:
        return float(np.mean(self.var))


def estimate_variance_grid(
    m: bhv.NoiseModel,
    kind: str,
    states: np.ndarray,
    actions: np.ndarray,
    rng: np.random.Generator,
    stats: DatasetActionStats | None = None,
    n_nodes: int = 32,
) -> VarianceGrid:
    """Batched estimate at n_nodes uniformly spaced times in [t_min, T]."""
    t_grid = np.linspace(m.schedule.t_min, m.schedule.T, n_nodes)
    var = np.array([estimate_variance(m, kind, states, actions, float(t), rng, stats)
                    for t in t_grid])
    return VarianceGrid(kind, t_grid, var)


def save_variance_grid(path, grid: VarianceGrid) -> None:
    from .tensornet import _fmt
    t_doc = "[" + ",".join(_fmt(v) for v in grid.t_grid) + "]"
    v_doc = "[" + ",".join(_fmt(v) for v in grid.var) + "]"
    with open(path, "w") as fh:
        fh.write('{"kind":%s,"t_grid":%s,"var":%s}' % (json.dumps(grid.kind), t_doc, v_doc))


def load_variance_grid(path) -> VarianceGrid:
    with open(path) as fh:
        doc = json.load(fh)
    return VarianceGrid(doc["kind"], np.asarray(doc["t_grid"]), np.asarray(doc["var"]))
