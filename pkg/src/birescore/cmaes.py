"""Covariance Matrix Adaptation Evolution Strategy for nonnegative weights.

Minimizes a black-box objective (here: development-set WER as a function of
LM weight vectors) by sampling candidates from N(mean, sigma^2 * C) and
updating mean, covariance, evolution paths, and step size from the fitness
ranking. Selection is rank-based, so any monotone transform of the objective
leaves the iterates unchanged.

Feasibility (lambda_k >= 0) is handled by projection: the objective only ever
sees componentwise max(x, 0); the update itself runs on the raw samples.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Sequence

import numpy as np

from .errors import ConfigError, NumericalError, RescoreError


@dataclass
class Candidate:
    raw: np.ndarray
    feasible: np.ndarray
    fitness: float | None = None


@dataclass
class CmaesState:
    mean: np.ndarray
    cov: np.ndarray
    sigma: float
    generation: int
    p_sigma: np.ndarray
    p_c: np.ndarray
    rng: np.random.Generator

    @property
    def dim(self) -> int:
        return len(self.mean)

    def dump(self) -> str:
        return (
            f"generation={self.generation} sigma={self.sigma!r} mean={self.mean.tolist()} "
            f"cov={self.cov.tolist()}"
        )


def default_population(dim: int) -> int:
    return 4 + int(3 * math.log(dim))


def new_state(
    dim: int,
    mean: Sequence[float] | None = None,
    sigma: float = 0.3,
    seed: int | np.random.Generator = 0,
) -> CmaesState:
    if dim < 1:
        raise ConfigError(f"dimension must be >= 1, got {dim}")
    if sigma <= 0:
        raise ConfigError(f"initial step size must be > 0, got {sigma}")
    m = np.ones(dim) if mean is None else np.asarray(mean, dtype=float).copy()
    if m.shape != (dim,):
        raise ConfigError(f"initial mean shape {m.shape} does not match dim {dim}")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return CmaesState(
        mean=m,
        cov=np.eye(dim),
        sigma=float(sigma),
        generation=0,
        p_sigma=np.zeros(dim),
        p_c=np.zeros(dim),
        rng=rng,
    )


def _decompose(state: CmaesState) -> tuple[np.ndarray, np.ndarray]:
    """Eigendecomposition of the symmetrized covariance; (eigvals, eigvecs)."""
    cov = 0.5 * (state.cov + state.cov.T)
    try:
        eigvals, eigvecs = np.linalg.eigh(cov)
    except np.linalg.LinAlgError as e:
        raise NumericalError(f"covariance decomposition failed: {e}; state: {state.dump()}") from e
    if not np.all(np.isfinite(eigvals)) or np.any(eigvals <= 0):
        raise NumericalError(
            f"covariance not positive definite (eigenvalues {eigvals.tolist()}); state: {state.dump()}"
        )
    return eigvals, eigvecs


def ask(state: CmaesState, population_size: int) -> list[Candidate]:
    """Sample candidates from N(mean, sigma^2 * C); feasible = max(raw, 0)."""
    if population_size < 2:
        raise ConfigError(f"population size must be >= 2, got {population_size}")
    eigvals, eigvecs = _decompose(state)
    scale = np.sqrt(eigvals)
    z = state.rng.standard_normal((population_size, state.dim))
    raw = state.mean + state.sigma * (z * scale) @ eigvecs.T
    return [Candidate(raw=x, feasible=np.maximum(x, 0.0)) for x in raw]


def tell(state: CmaesState, candidates: Sequence[Candidate]) -> CmaesState:
    """Rank-based mu/mu_w update of mean, evolution paths, covariance, and sigma."""
    lam = len(candidates)
    if lam < 2:
        raise ConfigError(f"tell needs at least 2 evaluated candidates, got {lam}")
    fitness = np.empty(lam)
    for i, c in enumerate(candidates):
        if c.fitness is None:
            raise ConfigError(f"candidate #{i} has no fitness")
        if math.isnan(c.fitness):
            raise NumericalError(f"candidate #{i} with raw {c.raw.tolist()} has NaN fitness")
        fitness[i] = c.fitness

    N = state.dim
    mu = lam // 2
    w = np.log(mu + 0.5) - np.log(np.arange(1, mu + 1))
    w /= w.sum()
    mueff = 1.0 / float(w @ w)

    cs = (mueff + 2) / (N + mueff + 5)
    damps = 1 + 2 * max(0.0, math.sqrt((mueff - 1) / (N + 1)) - 1) + cs
    cc = (4 + mueff / N) / (N + 4 + 2 * mueff / N)
    c1 = 2 / ((N + 1.3) ** 2 + mueff)
    cmu = min(1 - c1, 2 * (mueff - 2 + 1 / mueff) / ((N + 2) ** 2 + mueff))

    order = np.argsort(fitness, kind="stable")
    # recombine the projected vectors: the raw mean can otherwise drift
    # arbitrarily deep into the clipped (flat-fitness) half-space and stall
    xs = np.stack([candidates[i].feasible for i in order[:mu]])

    xold = state.mean
    mean = w @ xs
    y = (mean - xold) / state.sigma

    eigvals, eigvecs = _decompose(state)
    invsqrt = (eigvecs / np.sqrt(eigvals)) @ eigvecs.T
    p_sigma = (1 - cs) * state.p_sigma + math.sqrt(cs * (2 - cs) * mueff) * (invsqrt @ y)

    gen = state.generation + 1
    ps_norm2 = float(p_sigma @ p_sigma)
    hsig = ps_norm2 / N / (1 - (1 - cs) ** (2 * gen)) < 2 + 4 / (N + 1)
    p_c = (1 - cc) * state.p_c + (math.sqrt(cc * (2 - cc) * mueff) * y if hsig else 0.0)

    c1a = c1 * (1 - (not hsig) * cc * (2 - cc))
    artmp = (xs - xold) / state.sigma
    cov = (
        (1 - c1a - cmu) * state.cov
        + c1 * np.outer(p_c, p_c)
        + cmu * (artmp.T * w) @ artmp
    )
    cov = 0.5 * (cov + cov.T)

    sigma = state.sigma * math.exp(min(1.0, (cs / damps) * (ps_norm2 / N - 1) / 2))
    if not math.isfinite(sigma) or sigma <= 0:
        raise NumericalError(f"step size became {sigma!r}; state: {state.dump()}")

    return replace(state, mean=mean, cov=cov, sigma=sigma, generation=gen, p_sigma=p_sigma, p_c=p_c)


def optimize(
    objective: Callable[[np.ndarray], float],
    dim: int,
    budget_evals: int,
    seed: int,
    init: Sequence[float] | None = None,
    sigma0: float = 0.3,
    population: int | None = None,
    restart_on_stall: bool = False,
    stall_generations: int = 20,
    jobs: int = 1,
) -> tuple[np.ndarray, float, list[dict]]:
    """Minimize the objective over the nonnegative orthant.

    Loops ask/tell until the evaluation budget cannot cover another
    generation; returns the best feasible point ever evaluated, its fitness,
    and a history with one record per generation:
    {generation, best_fitness, mean, sigma} where best_fitness is the best
    seen so far (non-increasing). With restart_on_stall, a single restart
    with doubled population fires after `stall_generations` generations
    without improvement.
    """
    pop = population if population is not None else default_population(dim)
    if budget_evals < pop:
        raise ConfigError(f"budget {budget_evals} cannot cover one generation of {pop} evaluations")
    state = new_state(dim, mean=init, sigma=sigma0, seed=seed)

    def evaluate(cands: list[Candidate]) -> None:
        def run(c: Candidate) -> float:
            try:
                return float(objective(c.feasible))
            except RescoreError:
                raise
            except Exception as e:
                raise RescoreError(f"objective failed at candidate {c.feasible.tolist()}: {e}") from e

        if jobs > 1:
            with ThreadPoolExecutor(max_workers=jobs) as pool:
                results = list(pool.map(run, cands))
        else:
            results = [run(c) for c in cands]
        for c, f in zip(cands, results):
            c.fitness = f

    best_x: np.ndarray | None = None
    best_f = float("inf")
    history: list[dict] = []
    evals = 0
    stall = 0
    restarted = False
    while evals + pop <= budget_evals:
        cands = ask(state, pop)
        evaluate(cands)
        evals += pop
        gen_best = min(cands, key=lambda c: c.fitness)
        if gen_best.fitness < best_f:
            best_x, best_f = gen_best.feasible.copy(), gen_best.fitness
            stall = 0
        else:
            stall += 1
        state = tell(state, cands)
        history.append(
            {
                "generation": state.generation,
                "best_fitness": best_f,
                "mean": state.mean.tolist(),
                "sigma": state.sigma,
            }
        )
        if restart_on_stall and not restarted and stall >= stall_generations:
            restarted = True
            stall = 0
            pop *= 2
            state = new_state(dim, mean=init, sigma=sigma0, seed=state.rng)
    if best_x is None:
        raise ConfigError("no candidate was ever evaluated")
    return best_x, best_f, history
