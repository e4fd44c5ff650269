"""Improved grey wolf optimizer: weighted leader update, Levy flight, greedy pick.

Each iteration, every wolf proposes two positions: the leader-guided one
combined by :func:`weighted_position`, and a Levy-flight jump toward the alpha.
The fitter of the two replaces the wolf. With ``levy_enabled=False`` and
``weight_mode="mean"`` this is the canonical optimizer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import InputError, NumericalError

WEIGHT_MODES = ("paper_literal", "normalized", "mean")
_SINGULAR_SUM = 1e-12


@dataclass
class GwoConfig:
    dim: int
    lower: np.ndarray
    upper: np.ndarray
    pop_size: int = 20
    max_iter: int = 200
    beta: float = 1.5
    seed: int = 0
    weight_mode: str = "paper_literal"
    levy_enabled: bool = True
    chaotic_init: bool = False

    def __post_init__(self):
        self.lower = np.broadcast_to(np.asarray(self.lower, dtype=float), (self.dim,)).copy()
        self.upper = np.broadcast_to(np.asarray(self.upper, dtype=float), (self.dim,)).copy()
        if self.dim < 1:
            raise InputError("dim must be positive", field="dim")
        if self.pop_size < 3:
            raise InputError("pop_size must be >= 3 so that alpha, beta and delta exist", field="pop_size")
        if self.max_iter < 0:
            raise InputError("max_iter must be >= 0", field="max_iter")
        if not np.all(self.lower < self.upper):
            raise InputError("lower must be < upper elementwise", field="lower")
        if not 0 < self.beta <= 2:
            raise InputError("beta must lie in (0, 2]", field="beta")
        if self.weight_mode not in WEIGHT_MODES:
            raise InputError(f"weight_mode must be one of {WEIGHT_MODES}", field="weight_mode")


@dataclass
class GwoState:
    positions: np.ndarray
    fitnesses: np.ndarray
    leaders: np.ndarray
    leader_fitnesses: np.ndarray
    t: int
    rng: np.random.Generator = field(repr=False)


@dataclass
class GwoResult:
    best: np.ndarray
    best_fitness: float
    trace: np.ndarray
    evaluations: int


def a_factor(t, max_iter) -> float:
    """Convergence factor, decreasing linearly from 2 at t=0 to 0 at t=T."""
    if max_iter <= 0:
        raise InputError("max_iter must be positive", field="max_iter")
    if t < 0 or t > max_iter:
        raise InputError(f"iteration {t} outside [0, {max_iter}]", field="t")
    return 2.0 * (1.0 - t / max_iter)


def perturbations(a, rng, size=None):
    """Draw the ``A`` and ``C`` disturbance factors."""
    r1 = rng.random(size)
    r2 = rng.random(size)
    return 2.0 * a * r1 - a, 2.0 * r2


def leader_step(x_k, leaders, a, rng):
    """Positions proposed by the alpha, beta and delta wolves for ``x_k``.

    ``leaders`` is a (3, d) array. Fresh ``A`` and ``C`` are drawn per leader
    and per dimension. Returns a (3, d) array.
    """
    x_k = np.asarray(x_k, dtype=float)
    leaders = np.asarray(leaders, dtype=float)
    A, C = perturbations(a, rng, leaders.shape)
    D = np.abs(C * leaders - x_k)
    return leaders - A * D


def weighted_position(x1, x2, x3, mode: str = "paper_literal"):
    """Combine the three leader proposals elementwise.

    ``paper_literal`` divides the sum of squares by three times the sum (so
    identical proposals x give x/3), ``normalized`` divides by the sum alone,
    ``mean`` is the plain average. Where the sum vanishes the mean is used.
    """
    x1, x2, x3 = (np.asarray(v, dtype=float) for v in (x1, x2, x3))
    total = x1 + x2 + x3
    mean = total / 3.0
    if mode == "mean":
        return mean
    if mode not in WEIGHT_MODES:
        raise InputError(f"unknown weight mode {mode!r}", field="mode")
    squares = x1 * x1 + x2 * x2 + x3 * x3
    denom = 3.0 * total if mode == "paper_literal" else total
    singular = np.abs(total) < _SINGULAR_SUM
    out = np.divide(squares, np.where(singular, 1.0, denom))
    return np.where(singular, mean, out)


def levy_sigma(beta: float) -> float:
    """Scale of the ``u`` numerator in Mantegna's Levy step.

    Evaluated without the customary outer ``1/beta`` power; for beta = 1.5
    that gives 0.5814 (the usual Mantegna value is about 0.6966).
    """
    if not 0 < beta <= 2:
        raise InputError("beta must lie in (0, 2]", field="beta")
    num = math.gamma(1 + beta) * math.sin(math.pi * beta / 2)
    den = 2 ** ((beta - 1) / 2) * math.gamma((1 + beta) / 2) * beta
    return num / den


def levy_step(rng, beta: float = 1.5, size=None, sigma=None):
    """Heavy-tailed step ``u / |v|**(1/beta)``."""
    if sigma is None:
        sigma = levy_sigma(beta)
    u = rng.normal(0.0, 1.0, size) * sigma
    v = rng.normal(0.0, 1.0, size)
    return u / np.abs(v) ** (1.0 / beta)


def levy_position(x_alpha, x_k, rng=None, beta: float = 1.5, step=None):
    """Jump from ``x_k`` along the direction to the alpha wolf."""
    x_alpha = np.asarray(x_alpha, dtype=float)
    x_k = np.asarray(x_k, dtype=float)
    if step is None:
        step = levy_step(rng, beta, x_k.shape)
    return x_k + step * (x_alpha - x_k)


def _chaotic_population(rng, n, d):
    # logistic map at r = 4; start away from its fixed points
    x = rng.uniform(0.05, 0.95, d)
    out = np.empty((n, d))
    for i in range(n):
        x = 4.0 * x * (1.0 - x)
        out[i] = x
    return out


def _evaluate(f, x, t):
    val = float(f(x))
    if not math.isfinite(val):
        raise NumericalError(f"non-finite fitness {val} at iteration {t}, position {x.tolist()}", stage="gwo")
    return val


def _rank_leaders(candidates, fits):
    order = np.argsort(fits, kind="stable")[:3]
    return candidates[order].copy(), fits[order].copy()


def init_state(f: Callable, cfg: GwoConfig) -> GwoState:
    rng = np.random.default_rng(cfg.seed)
    span = cfg.upper - cfg.lower
    if cfg.chaotic_init:
        unit = _chaotic_population(rng, cfg.pop_size, cfg.dim)
    else:
        unit = rng.random((cfg.pop_size, cfg.dim))
    positions = cfg.lower + unit * span
    fits = np.array([_evaluate(f, x, 0) for x in positions])
    leaders, leader_fits = _rank_leaders(positions, fits)
    return GwoState(positions, fits, leaders, leader_fits, 0, rng)


def step(f: Callable, cfg: GwoConfig, state: GwoState) -> int:
    """Advance the population by one iteration; returns evaluations used."""
    t = state.t
    a = a_factor(t, cfg.max_iter)
    rng = state.rng
    evals = 0
    for k in range(cfg.pop_size):
        x_k = state.positions[k]
        x1, x2, x3 = leader_step(x_k, state.leaders, a, rng)
        cand = np.clip(weighted_position(x1, x2, x3, cfg.weight_mode), cfg.lower, cfg.upper)
        fit = _evaluate(f, cand, t + 1)
        evals += 1
        if cfg.levy_enabled:
            jump = np.clip(levy_position(state.leaders[0], x_k, rng, cfg.beta), cfg.lower, cfg.upper)
            jump_fit = _evaluate(f, jump, t + 1)
            evals += 1
            if jump_fit < fit:
                cand, fit = jump, jump_fit
        state.positions[k] = cand
        state.fitnesses[k] = fit
    # leaders are the best seen so far, which keeps the trace monotone
    pool = np.vstack([state.leaders, state.positions])
    pool_fits = np.concatenate([state.leader_fitnesses, state.fitnesses])
    state.leaders, state.leader_fitnesses = _rank_leaders(pool, pool_fits)
    state.t = t + 1
    return evals


def optimize(f: Callable, cfg: GwoConfig) -> GwoResult:
    """Minimize ``f`` over the box ``[cfg.lower, cfg.upper]``.

    Deterministic for a given ``cfg.seed``. ``trace[t]`` is the best fitness
    after ``t`` iterations (``trace[0]`` is the initial population).
    """
    state = init_state(f, cfg)
    trace = [state.leader_fitnesses[0]]
    evals = cfg.pop_size
    for _ in range(cfg.max_iter):
        evals += step(f, cfg, state)
        trace.append(state.leader_fitnesses[0])
    return GwoResult(
        best=state.leaders[0].copy(),
        best_fitness=float(state.leader_fitnesses[0]),
        trace=np.asarray(trace),
        evaluations=evals,
    )


def sphere(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum(x * x))


def rastrigin(x):
    x = np.asarray(x, dtype=float)
    return float(10.0 * x.size + np.sum(x * x - 10.0 * np.cos(2.0 * np.pi * x)))


def rosenbrock(x):
    x = np.asarray(x, dtype=float)
    return float(np.sum(100.0 * (x[1:] - x[:-1] ** 2) ** 2 + (1.0 - x[:-1]) ** 2))


BENCHMARKS = {"sphere": sphere, "rastrigin": rastrigin, "rosenbrock": rosenbrock}
