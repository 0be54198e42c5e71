"""Real-valued estimation-of-distribution optimizer with constraint domination.

Each generation fits a full multivariate normal to the better half of the
population (feasible beats infeasible, then lower violation, then lower
objective), samples the next generation from it, and restarts from a fresh
uniform population after prolonged stagnation. Deterministic given the seed.
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np


@dataclass
class OptimizerConfig:
    population_size: int = 50
    selection_fraction: float = 0.35
    max_evaluations: int = 50_000
    time_budget_seconds: float = 90.0
    seed: int = 0
    stagnation_generations: int = 30  # restart trigger

    def __post_init__(self):
        if self.population_size < 10:
            raise ValueError("population size must be >= 10")
        if self.max_evaluations is None and self.time_budget_seconds is None:
            raise ValueError("need an evaluation or time budget")


@dataclass(frozen=True)
class OptimizeResult:
    x: np.ndarray
    objective: float
    violation: float
    evaluations: int


def _dominates_key(violation: float, objective: float) -> tuple:
    # feasible (violation 0) sorts before infeasible; ties by objective
    return (violation, objective)


def optimize(objective, violation, bounds, config: OptimizerConfig) -> OptimizeResult:
    """Minimize objective over a box subject to a violation measure.

    bounds: (lower, upper) arrays. Returns the best point under the
    constraint-domination ordering.
    """
    lower = np.asarray(bounds[0], dtype=float)
    upper = np.asarray(bounds[1], dtype=float)
    if lower.shape != upper.shape or np.any(~np.isfinite(lower)) or np.any(~np.isfinite(upper)) \
            or np.any(lower >= upper):
        raise ValueError("bounds must be finite with lower < upper")
    dim = len(lower)
    rng = np.random.default_rng(config.seed)
    pop_n = config.population_size
    sel_n = max(2, int(round(pop_n * config.selection_fraction)))
    deadline = None
    if config.time_budget_seconds is not None:
        deadline = time.monotonic() + config.time_budget_seconds

    evaluations = 0
    best_x, best_key = None, (np.inf, np.inf)

    def evaluate(x):
        nonlocal evaluations, best_x, best_key
        evaluations += 1
        v = float(violation(x))
        f = float(objective(x))
        key = _dominates_key(v, f)
        if key < best_key:
            best_key, best_x = key, x.copy()
        return key

    def budget_left():
        if config.max_evaluations is not None and evaluations >= config.max_evaluations:
            return False
        if deadline is not None and time.monotonic() >= deadline:
            return False
        return True

    def uniform_population():
        return rng.uniform(lower, upper, size=(pop_n, dim))

    n_ams = max(1, int(round(0.5 * config.selection_fraction * pop_n)))

    # independent restarts: adaptation tracks the run-local best so a strong
    # early run cannot starve later restarts of variance
    while budget_left():
        pop = uniform_population()
        keys = []
        for x in pop:
            if not budget_left():
                break
            keys.append(evaluate(x))
        if not keys:
            break
        pop = pop[: len(keys)]
        run_i = min(range(len(keys)), key=lambda i: keys[i])
        run_best_x, run_best_key = pop[run_i].copy(), keys[run_i]
        multiplier = 1.0
        stagnant = 0
        prev_mean = None
        while budget_left():
            ranked = sorted(range(len(keys)), key=lambda i: keys[i])
            selected = pop[ranked[:sel_n]]
            mean = selected.mean(axis=0)
            mean_shift = mean - prev_mean if prev_mean is not None else np.zeros(dim)
            prev_mean = mean
            centered = selected - mean
            cov = (centered.T @ centered / sel_n) * multiplier
            # keep sampling well-posed once the population has collapsed
            scale = max(np.trace(cov) / dim, 1e-300)
            cov = cov + np.eye(dim) * scale * 1e-12
            try:
                chol = np.linalg.cholesky(cov)
            except np.linalg.LinAlgError:
                chol = np.diag(np.sqrt(np.maximum(np.diag(cov), 1e-300)))
            new_pop = np.empty((pop_n, dim))
            new_pop[0] = run_best_x  # elitism within the run
            z = rng.standard_normal((pop_n - 1, dim))
            new_pop[1:] = mean + z @ chol.T
            # anticipated mean shift: nudge a few samples along the mean's
            # motion so the distribution can travel down curved valleys
            new_pop[1 : 1 + n_ams] += 2.0 * multiplier * mean_shift
            new_pop[1:] = np.clip(new_pop[1:], lower, upper)
            pop = new_pop
            keys = []
            for x in pop:
                if not budget_left():
                    break
                keys.append(evaluate(x))
            if not keys:
                break
            pop = pop[: len(keys)]
            gen_i = min(range(len(keys)), key=lambda i: keys[i])
            if keys[gen_i] < run_best_key:
                improved_x = pop[gen_i]
                # expand when the improving sample sits far from the mean
                diff = np.linalg.solve(chol, improved_x - mean)
                if np.max(np.abs(diff)) > 1.0:
                    multiplier = min(multiplier / 0.9, 10.0)
                else:
                    multiplier = max(1.0, multiplier)
                run_best_x, run_best_key = improved_x.copy(), keys[gen_i]
                stagnant = 0
            else:
                multiplier *= 0.9
                stagnant += 1
            if multiplier < 1e-10 or np.trace(cov) < 1e-280 \
                    or stagnant > config.stagnation_generations:
                break  # restart

    return OptimizeResult(best_x, best_key[1], best_key[0], evaluations)
