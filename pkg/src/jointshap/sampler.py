"""Monte-Carlo joint Shapley values and the random arrival process.

Random streams
--------------
A run is driven by ``numpy.random.SeedSequence(seed)``. Target ``j`` (in the
order given) owns child ``j`` of that sequence and splits it again into three
PCG64 generators: one for arrival sizes, one for subset draws and one for
baseline draws. Every draw consumes a fixed amount of its stream, so the
sampled coalitions depend only on ``(seed, iterations, targets)``: not on the
chunk size, the thread count or the order in which targets are scheduled.
Running sums are accumulated per chunk, so a different ``batch`` can change
the last bits of a float estimate; identical configs reproduce bit for bit.
"""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Iterator, Protocol, Sequence

import numpy as np

from .coefficients import CoefficientTable, arrival_size_distribution, binom, compute_q
from .game import Game, as_bits, bits_to_agents, coalitions_up_to, iter_subsets
from .indices import IndexResult


class SamplerError(ValueError):
    pass


@dataclass(frozen=True)
class SamplerConfig:
    iterations: int = 10_000
    seed: int = 0
    batch: int = 1024
    threads: int = 1

    def __post_init__(self):
        if self.iterations < 1:
            raise SamplerError(f"iterations must be at least 1, got {self.iterations}")
        if self.batch < 1:
            raise SamplerError(f"batch must be at least 1, got {self.batch}")
        if not 0 <= self.seed < 2**64:
            raise SamplerError("seed must fit in 64 bits")
        if self.threads < 1:
            raise SamplerError("threads must be at least 1")


class ValueSource(Protocol):
    """Anything the sampler can draw marginal contributions from."""

    n: int
    parallel_safe: bool

    def marginals(self, target: np.ndarray, present: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """``v(S u T) - v(S)`` for each row ``S`` of the boolean ``present`` matrix."""


class GameSource:
    """Adapter exposing a :class:`Game` as a value source."""

    parallel_safe = True
    #: games up to this size are evaluated through a dense numpy worth table
    dense_limit = 20

    def __init__(self, game: Game):
        self.game = game
        self.n = game.n
        self._dense = None
        if game.n <= self.dense_limit:
            self._dense = np.array([float(x) for x in game.table()])
            self._pow2 = (1 << np.arange(game.n)).astype(np.int64)

    def marginals(self, target, present, rng):
        if self._dense is not None:
            S = present.astype(np.int64) @ self._pow2
            T = int(target.astype(np.int64) @ self._pow2)
            return self._dense[S | T] - self._dense[S]
        g = self.game
        T = sum(1 << int(i) for i in np.flatnonzero(target))
        out = np.empty(len(present))
        for row, mask in enumerate(present):
            S = sum(1 << int(i) for i in np.flatnonzero(mask))
            out[row] = float(g(S | T)) - float(g(S))
        return out


def as_source(value_source) -> ValueSource:
    if isinstance(value_source, Game):
        return GameSource(value_source)
    if hasattr(value_source, "marginals"):
        return value_source
    raise SamplerError(f"cannot sample from {type(value_source).__name__}")


def spawn_streams(seed: int, n_targets: int) -> list[tuple[np.random.Generator, ...]]:
    """Per-target (size, subset, baseline) generators; see the module docstring."""
    children = np.random.SeedSequence(seed).spawn(n_targets)
    return [tuple(np.random.Generator(np.random.PCG64(s)) for s in child.spawn(3)) for child in children]


def _draw_present(target_mask, cdf, n_draws, size_rng, subset_rng):
    """Boolean matrix of pre-arrival sets for one target.

    Each row draws ``X`` by inverting the size CDF, then keeps the ``X``
    complement agents with the smallest uniform keys, which picks a uniform
    subset of that size.
    """
    others = np.flatnonzero(~target_mask)
    m = len(others)
    sizes = np.searchsorted(cdf, size_rng.random(n_draws), side="right")
    np.minimum(sizes, m, out=sizes)
    present = np.zeros((n_draws, len(target_mask)), dtype=bool)
    if m:
        keys = subset_rng.random((n_draws, m))
        ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
        present[:, others] = ranks < sizes[:, None]
    return present, sizes


@dataclass
class _TargetRun:
    bits: int
    total: float = 0.0
    total_sq: float = 0.0
    count: int = 0

    def add(self, draws: np.ndarray):
        self.total += float(draws.sum())
        self.total_sq += float(np.dot(draws, draws))
        self.count += len(draws)

    @property
    def mean(self) -> float:
        return self.total / self.count

    @property
    def sem(self) -> float:
        if self.count < 2:
            return math.inf
        var = (self.total_sq - self.total**2 / self.count) / (self.count - 1)
        return math.sqrt(max(var, 0.0) / self.count)


def _iter_target(source, table: CoefficientTable, T: int, cfg: SamplerConfig, streams, chunk: int):
    """Yield ``(iterations_done, scaled_mean, scaled_sem)`` after each chunk."""
    n = source.n
    t = T.bit_count()
    dist = arrival_size_distribution(table, t)
    cdf = np.asarray(dist.cdf())
    scale = float(dist.scale)
    target_mask = np.zeros(n, dtype=bool)
    target_mask[list(bits_to_agents(T))] = True
    size_rng, subset_rng, base_rng = streams
    run = _TargetRun(T)
    done = 0
    while done < cfg.iterations:
        m = min(chunk, cfg.iterations - done)
        present, _ = _draw_present(target_mask, cdf, m, size_rng, subset_rng)
        draws = np.asarray(source.marginals(target_mask, present, base_rng), dtype=float)
        run.add(draws)
        done += m
        yield done, scale * run.mean, scale * run.sem


def _check_targets(targets, n: int, k: int) -> list[int]:
    out = []
    for T in targets:
        b = as_bits(T, n)
        if not 1 <= b.bit_count() <= k:
            raise SamplerError(f"target {bits_to_agents(b)} must have size 1..{k}")
        out.append(b)
    if not out:
        raise SamplerError("no targets given")
    return out


def sample_joint_shapley(value_source, n: int, k: int, targets: Sequence | None = None,
                         cfg: SamplerConfig | None = None, table: CoefficientTable | None = None,
                         progress: Callable[[int, int], None] | None = None) -> IndexResult:
    """Estimate joint Shapley values by sampling pre-arrival sets.

    For each target ``T`` draw ``X`` with ``P(X=i)`` proportional to
    ``C(n-t, i) q_i``, draw ``S`` uniformly among the size-``X`` subsets of
    ``N \\ T``, average ``v(S u T) - v(S)`` and multiply by
    ``sum_j C(n-t, j) q_j``. ``targets`` defaults to every coalition of
    size at most ``k`` (small ``n`` only).
    """
    cfg = cfg or SamplerConfig()
    source = as_source(value_source)
    if source.n != n:
        raise SamplerError(f"value source has {source.n} agents, expected {n}")
    table = table or compute_q(n, k)
    if (table.n, table.k) != (n, k):
        raise SamplerError("coefficient table does not match (n, k)")
    if targets is None:
        targets = coalitions_up_to(n, k)
    Ts = _check_targets(targets, n, k)
    streams = spawn_streams(cfg.seed, len(Ts))

    def run_one(j):
        last = None
        for last in _iter_target(source, table, Ts[j], cfg, streams[j], cfg.batch):
            if progress is not None:
                progress(j, last[0])
        return last

    workers = cfg.threads if source.parallel_safe else 1
    if workers > 1 and len(Ts) > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            finals = list(pool.map(run_one, range(len(Ts))))
    else:
        finals = [run_one(j) for j in range(len(Ts))]
    values = {T: f[1] for T, f in zip(Ts, finals)}
    sems = {T: f[2] for T, f in zip(Ts, finals)}
    return IndexResult("joint_shapley", n, k, values, mode="sampled",
                       meta={"seed": cfg.seed, "iterations": cfg.iterations, "sem": sems})


def sampler_estimand(game: Game, k: int, T) -> Fraction:
    """Exact expectation of the sampling estimator, by enumerating its law.

    Sums ``P(X=i) / C(n-t, i)`` times each marginal over every size-``i``
    subset of ``N \\ T``, then applies the scale factor. No randomness.
    """
    n = game.n
    T = as_bits(T, n)
    t = T.bit_count()
    dist = arrival_size_distribution(compute_q(n, k), t)
    acc = Fraction(0)
    for S in iter_subsets(((1 << n) - 1) & ~T):
        s = S.bit_count()
        acc += dist.exact[s] / binom(n - t, s) * (game(S | T) - game(S))
    return dist.scale * acc


# --------------------------------------------------------- arrival process


def _group_size_cdfs(n: int, k: int) -> np.ndarray:
    """Row ``m``: CDF of the size of a uniform non-empty group of at most ``k`` among ``m``."""
    cdfs = np.ones((n + 1, k + 1))
    for m in range(1, n + 1):
        total = sum(binom(m, a) for a in range(1, min(k, m) + 1))
        acc = 0
        cdfs[m, 0] = 0.0
        for a in range(1, k + 1):
            acc += binom(m, a) if a <= m else 0
            cdfs[m, a] = acc / total
    return cdfs


@dataclass
class ArrivalResult:
    estimate: IndexResult
    # arrivals[t][s]: number of times a group of size t arrived onto s present agents
    arrivals: np.ndarray = field(repr=False)
    iterations: int = 0

    def empirical_q(self, t: int) -> np.ndarray:
        """Per-pair arrival frequency ``P(B = S, A = T)`` for each ``|S| = s``.

        Divides the arrival counts by the number of ``(S, T)`` pairs of the
        given sizes; each entry estimates ``q_s``.
        """
        n = self.estimate.n
        out = np.full(n - t + 1, np.nan)
        for s in range(n - t + 1):
            pairs = binom(n, t) * binom(n - t, s)
            out[s] = self.arrivals[t, s] / (self.iterations * pairs)
        return out


MAX_ARRIVAL_AGENTS = 20


def arrival_process_simulate(game: Game, k: int, cfg: SamplerConfig | None = None) -> ArrivalResult:
    """Simulate full arrival sequences and credit each arriving group its marginal worth.

    At each step the next group is uniform over the non-empty subsets of at
    most ``k`` absent agents. A coalition that never arrives is credited 0.
    All coalitions of size at most ``k`` are estimated at once.
    """
    cfg = cfg or SamplerConfig()
    n = game.n
    if n > MAX_ARRIVAL_AGENTS:
        raise SamplerError(f"arrival simulation supports n <= {MAX_ARRIVAL_AGENTS}")
    if not 1 <= k <= n:
        raise SamplerError(f"order k={k} outside 1..{n}")
    worth = np.array([float(x) for x in game.table()])
    cdfs = _group_size_cdfs(n, k)
    rng = np.random.Generator(np.random.PCG64(np.random.SeedSequence(cfg.seed)))
    credit = np.zeros(1 << n)
    arrivals = np.zeros((n + 1, n + 1), dtype=np.int64)
    pow2 = (1 << np.arange(n)).astype(np.int64)
    done = 0
    while done < cfg.iterations:
        m = min(cfg.batch, cfg.iterations - done)
        present = np.zeros((m, n), dtype=bool)
        B = np.zeros(m, dtype=np.int64)
        active = np.ones(m, dtype=bool)
        while active.any():
            rows = np.flatnonzero(active)
            absent = ~present[rows]
            n_absent = absent.sum(axis=1)
            size = (rng.random(len(rows))[:, None] >= cdfs[n_absent, :]).sum(axis=1)
            keys = np.where(absent, rng.random((len(rows), n)), np.inf)
            ranks = np.argsort(np.argsort(keys, axis=1), axis=1)
            group = (ranks < size[:, None]) & absent
            A = group.astype(np.int64) @ pow2
            before = B[rows]
            np.add.at(credit, A, worth[before | A] - worth[before])
            np.add.at(arrivals, (size, n - n_absent), 1)
            B[rows] = before | A
            present[rows] |= group
            active[rows] = B[rows] != (1 << n) - 1
        done += m
    values = {T: credit[T] / cfg.iterations for T in coalitions_up_to(n, k)}
    est = IndexResult("joint_shapley", n, k, values, mode="sampled",
                      meta={"seed": cfg.seed, "iterations": cfg.iterations, "method": "arrival"})
    return ArrivalResult(est, arrivals, cfg.iterations)


def arrival_process_expectation(game: Game, k: int) -> IndexResult:
    """Exact expected worth each coalition brings on arrival.

    Walks every arrival sequence with its exact probability (no sampling and
    no use of the coefficient recursion). Exponential; meant for ``n <= 5``.
    """
    n = game.n
    if not 1 <= k <= n:
        raise SamplerError(f"order k={k} outside 1..{n}")
    full = (1 << n) - 1
    zero = Fraction(0) if game.exact else 0.0
    credit = {T: zero for T in coalitions_up_to(n, k)}

    def walk(B: int, prob: Fraction):
        if B == full:
            return
        groups = [A for A in iter_subsets(full & ~B) if 0 < A.bit_count() <= k]
        p = prob / len(groups)
        for A in groups:
            credit[A] += p * (game(B | A) - game(B))
            walk(B | A, p)

    walk(0, Fraction(1))
    return IndexResult("joint_shapley", n, k, credit, meta={"method": "arrival-enumeration"})


# ------------------------------------------------------------ convergence


@dataclass
class ConvergenceTrace:
    """Checkpointed estimates; ``l2`` is to the reference, or to the previous checkpoint."""

    iterations: list[int]
    estimates: list[dict[int, float]]
    l2: list[float]
    mode: str

    def rows(self) -> Iterator[tuple[int, int, float, float]]:
        for it, est, dist in zip(self.iterations, self.estimates, self.l2):
            for T, val in est.items():
                yield it, T, val, dist


def convergence_trace(value_source, n: int, k: int, targets: Sequence | None = None,
                      cfg: SamplerConfig | None = None, reference: IndexResult | None = None,
                      checkpoint_every: int | None = None) -> ConvergenceTrace:
    """Record sampled estimates every ``checkpoint_every`` iterations.

    Uses the same streams as :func:`sample_joint_shapley`, so the last
    checkpoint equals its result for the same config.
    """
    cfg = cfg or SamplerConfig()
    every = cfg.batch if checkpoint_every is None else checkpoint_every
    if every < 1:
        raise SamplerError("checkpoints must be at least one iteration apart")
    if every > cfg.iterations:
        raise SamplerError("checkpoint spacing exceeds the iteration budget")
    source = as_source(value_source)
    table = compute_q(n, k)
    if targets is None:
        targets = coalitions_up_to(n, k)
    Ts = _check_targets(targets, n, k)
    streams = spawn_streams(cfg.seed, len(Ts))
    runs = [_iter_target(source, table, T, cfg, streams[j], every) for j, T in enumerate(Ts)]
    its, ests, l2 = [], [], []
    prev = None
    for step in zip(*runs):
        est = {T: s[1] for T, s in zip(Ts, step)}
        if reference is not None:
            d = math.sqrt(sum((est[T] - float(reference[T])) ** 2 for T in Ts))
        elif prev is None:
            d = math.nan
        else:
            d = math.sqrt(sum((est[T] - prev[T]) ** 2 for T in Ts))
        its.append(step[0][0])
        ests.append(est)
        l2.append(d)
        prev = est
    return ConvergenceTrace(its, ests, l2, "reference" if reference is not None else "consecutive")


__all__ = [
    "ArrivalResult",
    "ConvergenceTrace",
    "GameSource",
    "SamplerConfig",
    "SamplerError",
    "arrival_process_expectation",
    "arrival_process_simulate",
    "convergence_trace",
    "sample_joint_shapley",
    "sampler_estimand",
    "spawn_streams",
]
