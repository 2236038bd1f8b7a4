"""NSGA-II: non-dominated sorting, crowding, tournaments, and the run loop.

Two modes share one code path. In ``pareto`` mode dominance compares the
2-vector of weighted objectives; in ``weighted_single`` mode the comparison
key collapses to the 1-vector scalarization, which degenerates NSGA-II into
a plain elitist GA (the quality-only baseline uses weights (1, 0)). Weights
scale the objectives before dominance and crowding; their signs set the
direction, and both scaled coordinates are maximized.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from random import Random
from typing import Callable, Sequence

from .evaluation import (
    Backend,
    EvalCache,
    EvalRequest,
    EvaluationRecord,
    cache_key,
    evaluate_batch,
    utc_now,
)
from .space import Candidate, SearchSpace, crossover, mutate, render_prompt, sample_random

logger = logging.getLogger(__name__)

MODE_PARETO = "pareto"
MODE_WEIGHTED = "weighted_single"

DEFAULT_REF_POINT = (1.0, 50000.0)  # (quality_loss, time_ms), see metrics


@dataclass(frozen=True)
class ObjectiveVector:
    """Raw objectives: inference time in milliseconds, quality in [0, 1]."""

    time_ms: float
    quality: float

    def __post_init__(self) -> None:
        if not (math.isfinite(self.time_ms) and self.time_ms >= 0):
            raise ValueError(f"time_ms must be finite and >= 0, got {self.time_ms}")
        if not (math.isfinite(self.quality) and 0.0 <= self.quality <= 1.0):
            raise ValueError(f"quality must be in [0, 1], got {self.quality}")


@dataclass(frozen=True)
class ScalingWeights:
    """Per-objective weights; sign encodes direction (positive = maximize).

    ``w_time`` applies to time in seconds, not milliseconds.
    """

    w_quality: float = 0.001
    w_time: float = -1000.0

    def __post_init__(self) -> None:
        if not (math.isfinite(self.w_quality) and math.isfinite(self.w_time)):
            raise ValueError("weights must be finite")


QUALITY_ONLY_WEIGHTS = ScalingWeights(w_quality=1.0, w_time=0.0)


@dataclass
class Individual:
    """A candidate with its objectives and the NSGA-II bookkeeping fields.

    ``rank`` and ``crowding`` are only meaningful right after a sort of the
    population they were computed in; ``rank == -1`` marks them stale.
    """

    candidate: Candidate
    objectives: ObjectiveVector
    rank: int = -1
    crowding: float = 0.0


@dataclass(frozen=True)
class NsgaConfig:
    population_size: int = 25
    generations: int = 50
    mutation_rate: float = 0.2
    crossover_rate: float = 0.2
    weights: ScalingWeights = field(default_factory=ScalingWeights)
    mode: str = MODE_PARETO
    master_seed: int = 0

    def __post_init__(self) -> None:
        if self.population_size < 1:
            raise ValueError("population_size must be >= 1")
        if self.generations < 0:
            raise ValueError("generations must be >= 0")
        for name in ("mutation_rate", "crossover_rate"):
            rate = getattr(self, name)
            if not 0.0 <= rate <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {rate}")
        if self.mode not in (MODE_PARETO, MODE_WEIGHTED):
            raise ValueError(f"mode must be {MODE_PARETO!r} or {MODE_WEIGHTED!r}, got {self.mode!r}")


@dataclass
class RunArchive:
    """Everything one optimization run produced.

    ``records`` is append-only, one row per distinct candidate evaluated in
    this run, in evaluation order. ``ref_point`` carries the hypervolume
    reference ``(quality_loss, time_ms)`` the run was configured to report
    against, so later comparisons can refuse to mix conventions.
    """

    config: NsgaConfig
    records: list[EvaluationRecord] = field(default_factory=list)
    final_front: list[Individual] = field(default_factory=list)
    space: SearchSpace | None = None
    ref_point: tuple[float, float] = DEFAULT_REF_POINT
    incomplete: bool = False
    error: str | None = None


def scaled(objectives: ObjectiveVector, weights: ScalingWeights) -> tuple[float, float]:
    """Weighted view of the objectives; both coordinates are maximized."""
    return (
        weights.w_quality * objectives.quality,
        weights.w_time * (objectives.time_ms / 1000.0),
    )


def scalar_fitness(objectives: ObjectiveVector, weights: ScalingWeights) -> float:
    pair = scaled(objectives, weights)
    return pair[0] + pair[1]


def comparison_key(
    objectives: ObjectiveVector, weights: ScalingWeights, mode: str
) -> tuple[float, ...]:
    """The tuple dominance actually compares in the given mode."""
    if mode == MODE_PARETO:
        return scaled(objectives, weights)
    if mode == MODE_WEIGHTED:
        return (scalar_fitness(objectives, weights),)
    raise ValueError(f"unknown mode {mode!r}")


def dominates(a: Sequence[float], b: Sequence[float]) -> bool:
    """True iff a >= b everywhere and a > b somewhere (maximization)."""
    if len(a) != len(b):
        raise ValueError("keys must have equal length")
    better = False
    for x, y in zip(a, b):
        if x < y:
            return False
        if x > y:
            better = True
    return better


def sort_keys(keys: Sequence[Sequence[float]]) -> list[list[int]]:
    """Fast non-dominated sort over raw comparison keys.

    Returns index fronts: front 0 is the non-dominated set, front k is the
    non-dominated set once fronts < k are removed. Deb's bookkeeping keeps
    this O(n^2 * m) worst case but linear passes after the pairwise scan.
    """
    n = len(keys)
    dominated_by: list[list[int]] = [[] for _ in range(n)]
    domination_count = [0] * n
    for i in range(n):
        for j in range(i + 1, n):
            if dominates(keys[i], keys[j]):
                dominated_by[i].append(j)
                domination_count[j] += 1
            elif dominates(keys[j], keys[i]):
                dominated_by[j].append(i)
                domination_count[i] += 1
    fronts: list[list[int]] = []
    current = [i for i in range(n) if domination_count[i] == 0]
    while current:
        fronts.append(current)
        nxt: list[int] = []
        for i in current:
            for j in dominated_by[i]:
                domination_count[j] -= 1
                if domination_count[j] == 0:
                    nxt.append(j)
        nxt.sort()
        current = nxt
    return fronts


def fast_nondominated_sort(
    population: Sequence[Individual],
    weights: ScalingWeights,
    mode: str = MODE_PARETO,
) -> list[list[int]]:
    """Partition the population into fronts and stamp each rank field."""
    keys = [comparison_key(ind.objectives, weights, mode) for ind in population]
    fronts = sort_keys(keys)
    for rank, front in enumerate(fronts):
        for i in front:
            population[i].rank = rank
    return fronts


def crowding_distance(
    front: Sequence[Individual],
    weights: ScalingWeights,
    mode: str = MODE_PARETO,
) -> list[float]:
    """Crowding distances for one front, also stamped onto the individuals.

    Per objective the front is sorted; boundary individuals get +inf,
    interior ones accumulate (next - prev) / (max - min). An objective that
    is constant across the front contributes nothing.
    """
    if not front:
        raise ValueError("front must be non-empty")
    n = len(front)
    distances = [0.0] * n
    keys = [comparison_key(ind.objectives, weights, mode) for ind in front]
    for m in range(len(keys[0])):
        order = sorted(range(n), key=lambda i: keys[i][m])
        lo, hi = keys[order[0]][m], keys[order[-1]][m]
        distances[order[0]] = math.inf
        distances[order[-1]] = math.inf
        if hi == lo:
            continue
        for pos in range(1, n - 1):
            i = order[pos]
            if distances[i] != math.inf:
                distances[i] += (keys[order[pos + 1]][m] - keys[order[pos - 1]][m]) / (hi - lo)
    for ind, d in zip(front, distances):
        ind.crowding = d
    return distances


def tournament_select(population: Sequence[Individual], rng: Random) -> Individual:
    """Binary tournament: lower rank wins, ties by larger crowding, then draw order."""
    a = population[rng.randrange(len(population))]
    b = population[rng.randrange(len(population))]
    if b.rank < a.rank:
        return b
    if b.rank == a.rank and b.crowding > a.crowding:
        return b
    return a


@dataclass(frozen=True)
class GenerationSnapshot:
    """What the observer sees after each generation's selection."""

    generation: int
    best_scalar: float
    front: tuple[Individual, ...]
    evaluations: int


Observer = Callable[[GenerationSnapshot], None]


def _environmental_selection(
    combined: list[Individual],
    size: int,
    weights: ScalingWeights,
    mode: str,
) -> list[Individual]:
    """Elitist truncation: fill front by front, split front by crowding."""
    fronts = fast_nondominated_sort(combined, weights, mode)
    survivors: list[Individual] = []
    for front_indices in fronts:
        front = [combined[i] for i in front_indices]
        crowding_distance(front, weights, mode)
        if len(survivors) + len(front) <= size:
            survivors.extend(front)
        else:
            # Stable sort keeps earlier indices first among equal crowding.
            front.sort(key=lambda ind: -ind.crowding)
            survivors.extend(front[: size - len(survivors)])
            break
    return survivors


class _RunState:
    """Mutable bookkeeping shared by the phases of one evolve() call."""

    def __init__(self, backend: Backend, base_prompt: str, space: SearchSpace):
        self.backend = backend
        self.base_prompt = base_prompt
        self.space = space
        self.cache = EvalCache()
        self.seen_keys: set[str] = set()
        self.next_id = 0
        self.evaluations = 0

    def request_for(self, candidate: Candidate) -> EvalRequest:
        self.next_id += 1
        positive, negative = render_prompt(candidate, self.base_prompt, self.space)
        return EvalRequest(
            id=f"e{self.next_id:06d}",
            candidate=candidate,
            base_prompt=self.base_prompt,
            positive_prompt=positive,
            negative_prompt=negative,
        )


def evolve(
    space: SearchSpace,
    backend: Backend,
    config: NsgaConfig,
    base_prompt: str = "",
    observer: Observer | None = None,
    parallelism: int = 1,
    retries: int = 1,
    ref_point: tuple[float, float] = DEFAULT_REF_POINT,
) -> RunArchive:
    """Run the full evolutionary loop and return the run's archive.

    Duplicate candidates are evaluated once (cache) and recorded once, on
    their first in-run occurrence, so record order and count are identical
    for any ``parallelism``. If the backend still fails after ``retries``
    extra attempts the run stops where it is and the archive comes back
    flagged incomplete, with the final front of whatever was evaluated.
    """
    rng = Random(config.master_seed)
    archive = RunArchive(config=config, space=space, ref_point=ref_point)
    state = _RunState(backend, base_prompt, space)

    def evaluate(candidates: list[Candidate], generation: int) -> list[Individual] | None:
        """Returns individuals, or None after recording the abort."""
        requests = [state.request_for(c) for c in candidates]
        results = evaluate_batch(
            requests, backend, parallelism=parallelism, retries=retries, cache=state.cache
        )
        individuals: list[Individual] = []
        for request, result in zip(requests, results):
            if not result.ok:
                archive.incomplete = True
                archive.error = f"evaluation {request.id} failed: {result.error}"
                logger.error("aborting run: %s", archive.error)
                return None
            state.evaluations += 1
            key = cache_key(request.candidate)
            if key not in state.seen_keys:
                state.seen_keys.add(key)
                archive.records.append(
                    EvaluationRecord(
                        generation=generation,
                        candidate=request.candidate,
                        time_ms=result.time_ms,
                        quality=result.quality,
                        evaluator_id=backend.evaluator_id,
                        wall_clock=utc_now(),
                    )
                )
            individuals.append(
                Individual(
                    candidate=request.candidate,
                    objectives=ObjectiveVector(time_ms=result.time_ms, quality=result.quality),
                )
            )
        return individuals

    def finish(population: list[Individual]) -> RunArchive:
        if population:
            fronts = fast_nondominated_sort(population, config.weights, config.mode)
            archive.final_front = [population[i] for i in fronts[0]]
        return archive

    def notify(generation: int, population: list[Individual]) -> None:
        if observer is None or not population:
            return
        best = max(scalar_fitness(ind.objectives, config.weights) for ind in population)
        front = tuple(ind for ind in population if ind.rank == 0)
        observer(
            GenerationSnapshot(
                generation=generation,
                best_scalar=best,
                front=front,
                evaluations=state.evaluations,
            )
        )

    initial = [sample_random(space, rng) for _ in range(config.population_size)]
    population = evaluate(initial, generation=0)
    if population is None:
        return finish([])
    fronts = fast_nondominated_sort(population, config.weights, config.mode)
    for front_indices in fronts:
        crowding_distance([population[i] for i in front_indices], config.weights, config.mode)
    notify(0, population)

    for generation in range(1, config.generations + 1):
        offspring_candidates: list[Candidate] = []
        for _ in range(config.population_size):
            parent_a = tournament_select(population, rng)
            parent_b = tournament_select(population, rng)
            if rng.random() < config.crossover_rate:
                child, _unused = crossover(parent_a.candidate, parent_b.candidate, space, rng)
            else:
                child = parent_a.candidate
            offspring_candidates.append(mutate(child, space, config.mutation_rate, rng))
        offspring = evaluate(offspring_candidates, generation=generation)
        if offspring is None:
            return finish(population)
        population = _environmental_selection(
            population + offspring, config.population_size, config.weights, config.mode
        )
        notify(generation, population)

    return finish(population)
