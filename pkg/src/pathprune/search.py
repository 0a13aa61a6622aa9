"""FLOPs-constrained aging evolution with a learned proxy, plus brute-force oracle."""

from __future__ import annotations

import csv
import io
import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .flops import extreme_path, total_flops
from .space import BlockChoice, Path, SearchSpace, count_paths, enumerate_paths, sample_uniform


@dataclass(frozen=True)
class EvoConfig:
    population_size: int = 64
    sample_size: int = 16
    generations: int = 500
    mutation_prob: float = 0.1
    retry_cap: int = 50
    init_draw_cap: int = 100_000
    seed: int = 0

    def __post_init__(self):
        if not 1 <= self.sample_size <= self.population_size:
            raise ValueError("need 1 <= sample_size <= population_size")
        if self.generations < 1:
            raise ValueError("generations must be at least 1")


@dataclass
class SearchResult:
    best: Path
    score: float
    flops: float
    budget: float
    generation_found: int
    history: list = field(default_factory=list)
    evaluations: int = 0


class CachedScorer:
    """Memoises a batch scorer ``paths -> scores`` per path."""

    def __init__(self, scorer):
        self.scorer = scorer
        self.cache: dict[Path, float] = {}

    def __call__(self, paths) -> np.ndarray:
        paths = list(paths)
        todo = list(dict.fromkeys(p for p in paths if p not in self.cache))
        if todo:
            for p, s in zip(todo, np.asarray(self.scorer(todo), dtype=np.float64)):
                self.cache[p] = float(s)
        return np.array([self.cache[p] for p in paths])


def mutate(space: SearchSpace, path: Path, prob: float, rng: np.random.Generator) -> Path:
    """Redraw each decision (depth, width, every expand slot) with probability ``prob``.

    Only choices that survive in ``space`` are ever drawn.
    """
    blocks = []
    for b, choice in enumerate(path.blocks):
        blk = space.blocks[b]
        valid = {(d, w) for d, w, _, _ in space._block_options(b)}
        d, w = choice.depth, choice.width
        if rng.random() < prob:
            w = blk.width_choices[int(rng.integers(len(blk.width_choices)))]
        if rng.random() < prob:
            d = blk.depth_choices[int(rng.integers(len(blk.depth_choices)))]
        if (d, w) not in valid:
            options = sorted(valid)
            d, w = options[int(rng.integers(len(options)))]
        expands = []
        for l in range(blk.layers_for_depth(d)):
            opts = space.allowed_expands(b, l, w)
            redraw = rng.random() < prob
            if l < len(choice.expands) and choice.expands[l] in opts and not redraw:
                expands.append(choice.expands[l])
            else:
                expands.append(opts[int(rng.integers(len(opts)))])
        blocks.append(BlockChoice(d, w, tuple(expands)))
    return Path(tuple(blocks))


def _initial_population(space, budget, cfg, rng):
    pop, draws = [], 0
    while len(pop) < cfg.population_size:
        if draws >= cfg.init_draw_cap:
            raise ValueError(f"no feasible population under budget {budget} after {draws} draws")
        p = sample_uniform(space, rng)
        draws += 1
        if total_flops(space, p) <= budget:
            pop.append(p)
    return pop


def evolve(scorer, space: SearchSpace, budget: float, cfg: EvoConfig = EvoConfig(),
           seeds: list | None = None) -> SearchResult:
    """Aging evolution maximising ``scorer`` subject to ``FLOPs <= budget``.

    ``seeds`` optionally replaces the first members of the initial population
    (used to warm-start a sweep).
    """
    lo = total_flops(space, extreme_path(space, largest=False))
    if budget < lo:
        raise ValueError(f"budget {budget} below the minimum achievable FLOPs {lo}")
    rng = np.random.default_rng(cfg.seed)
    score = scorer if isinstance(scorer, CachedScorer) else CachedScorer(scorer)
    pop = _initial_population(space, budget, cfg, rng)
    for i, p in enumerate(seeds or []):
        if i < len(pop) and total_flops(space, p) <= budget:
            pop[i] = p
    scores = [float(x) for x in score(pop)]
    population = deque(zip(pop, scores))
    best_i = int(np.argmax(scores))
    best, best_score, found = pop[best_i], scores[best_i], 0
    history = [best_score]
    for gen in range(1, cfg.generations + 1):
        picks = rng.choice(len(population), size=cfg.sample_size, replace=False)
        parent = max((population[i] for i in sorted(picks)), key=lambda t: t[1])[0]
        child = parent
        for _ in range(cfg.retry_cap):
            cand = mutate(space, parent, cfg.mutation_prob, rng)
            if total_flops(space, cand) <= budget:
                child = cand
                break
        s = float(score([child])[0])
        population.append((child, s))
        population.popleft()
        if s > best_score:
            best, best_score, found = child, s, gen
        history.append(best_score)
    return SearchResult(best, best_score, total_flops(space, best), budget, found, history, len(score.cache))


def brute_force_best(scorer, space: SearchSpace, budget: float, cap: int = 100_000,
                     chunk: int = 4096) -> tuple[Path, float]:
    """Exact argmax over feasible paths; the first path in enumeration order wins ties."""
    if count_paths(space) > cap:
        raise ValueError("space too large for brute force")
    best, best_score = None, -math.inf
    buf = []

    def flush():
        nonlocal best, best_score
        if not buf:
            return
        s = np.asarray(scorer(buf), dtype=np.float64)
        i = int(np.argmax(s))
        if s[i] > best_score:
            best, best_score = buf[i], float(s[i])
        buf.clear()

    for p in enumerate_paths(space, cap=cap):
        if total_flops(space, p) <= budget:
            buf.append(p)
            if len(buf) >= chunk:
                flush()
    flush()
    if best is None:
        raise ValueError(f"no feasible path under budget {budget}")
    return best, best_score


def pareto_sweep(scorer, space: SearchSpace, budgets, cfg: EvoConfig = EvoConfig(),
                 oracle=None) -> tuple[list[SearchResult], str]:
    """One search per budget in ascending order, each warm-started with the previous best.

    Returns the results and a CSV table
    (budget, flops, proxy_score, oracle_loss, generation_found).
    """
    scorer = CachedScorer(scorer)
    results, prev = [], None
    for budget in sorted(float(b) for b in budgets):
        # the previous best is feasible here and best-ever tracking keeps it,
        # so scores cannot drop as the budget grows
        res = evolve(scorer, space, budget, cfg, seeds=[prev.best] if prev else None)
        results.append(res)
        prev = res
    return results, sweep_csv(results, oracle)


def sweep_csv(results, oracle=None) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["budget", "flops", "proxy_score", "oracle_loss", "generation_found"])
    for r in results:
        loss = "" if oracle is None else repr(float(oracle(r.best)))
        w.writerow([repr(r.budget), repr(r.flops), repr(r.score), loss, r.generation_found])
    return buf.getvalue()
