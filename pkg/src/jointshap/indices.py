"""Exact joint Shapley values and five comparison indices over explicit games."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from math import factorial
from typing import Iterable

import numpy as np

from .coefficients import binom, compute_q, shapley_weights
from .game import (
    MAX_EXACT_AGENTS,
    Coalition,
    Game,
    GameError,
    Permutation,
    as_bits,
    bits_to_agents,
    coalition_key,
    coalitions_up_to,
    iter_subsets,
    permute_game,
)

INDEX_KINDS = (
    "joint_shapley",
    "shapley",
    "shapley_interaction",
    "generalised_shapley",
    "added_value",
    "shapley_taylor",
)

#: Tolerance for identity checks on numeric (float) games.
NUMERIC_TOL = 1e-9


@dataclass
class IndexResult:
    """Values of one index, keyed by coalition bitmask."""

    index_kind: str
    n: int
    k: int
    values: dict[int, object]
    mode: str = "exact"
    meta: dict = field(default_factory=dict)

    def __getitem__(self, T):
        return self.values[as_bits(T, self.n)]

    def __contains__(self, T):
        return as_bits(T, self.n) in self.values

    def __len__(self):
        return len(self.values)

    def coalitions(self) -> list[Coalition]:
        return [Coalition(b, self.n) for b in self.values]

    def by_agents(self) -> dict[tuple[int, ...], object]:
        return {bits_to_agents(b): v for b, v in self.values.items()}

    def sorted_items(self):
        """Items ordered by coalition size, then lexicographically by members."""
        return sorted(self.values.items(), key=lambda kv: (kv[0].bit_count(), bits_to_agents(kv[0])))

    def total(self):
        return sum(self.values.values(), Fraction(0) if self.is_rational else 0.0)

    @property
    def is_rational(self) -> bool:
        return all(isinstance(v, Fraction) for v in self.values.values())

    def as_float(self) -> "IndexResult":
        return IndexResult(self.index_kind, self.n, self.k, {b: float(v) for b, v in self.values.items()},
                           self.mode, dict(self.meta))

    def to_dict(self, rational: bool = True) -> dict:
        vals = {}
        for b, v in self.sorted_items():
            vals[coalition_key(b)] = str(v) if rational and isinstance(v, Fraction) else float(v)
        return {"index": self.index_kind, "n": self.n, "k": self.k, "mode": self.mode,
                "values": vals, "meta": self.meta}


# --------------------------------------------------------------- helpers


def _check_exact_size(n: int):
    if n > MAX_EXACT_AGENTS:
        raise GameError(
            f"n={n} is beyond exact enumeration (limit {MAX_EXACT_AGENTS}); "
            "use sample_joint_shapley instead"
        )


def _scaled_table(game: Game):
    """Worth table as integers over a common denominator (exact) or floats.

    Returns ``(table, denom)`` so that worth = table[b] / denom. Integer
    arithmetic keeps the exhaustive loops fast while staying exact.
    """
    _check_exact_size(game.n)
    raw = game.table()
    if not game.exact:
        return [float(x) for x in raw], None
    denom = 1
    for x in raw:
        denom = math.lcm(denom, x.denominator)
    return [x.numerator * (denom // x.denominator) for x in raw], denom


def _finish(acc, denom):
    if denom is None:
        return float(acc)
    return Fraction(acc, denom) if isinstance(acc, int) else acc / denom


def _weighted(sums_by_size: list, weights) -> object:
    """``sum_s weights[s] * sums_by_size[s]`` keeping exact types exact."""
    total = 0
    for s, x in enumerate(sums_by_size):
        if x:
            total = total + weights[s] * x
    return total


def _check_k(n: int, k: int):
    if not 1 <= k <= n:
        raise GameError(f"order k={k} outside 1..{n}")


def predicted_pair_count(n: int, k: int) -> int:
    """Number of (T, S) pairs the exact joint Shapley loop visits."""
    return sum(binom(n, t) * 2 ** (n - t) for t in range(1, k + 1))


def _marginal_sums(table, n: int, T: int) -> list:
    """``sum_{S <= N\\T, |S|=s} [v(S u T) - v(S)]`` for every size ``s``."""
    comp = ((1 << n) - 1) & ~T
    sums = [0] * (n + 1)
    for S in iter_subsets(comp):
        sums[S.bit_count()] += table[S | T] - table[S]
    return sums


def _derivative(table, T: int, S: int):
    """Discrete derivative ``sum_{L <= T} (-1)^(t-l) v(S u L)``."""
    t = T.bit_count()
    acc = 0
    for L in iter_subsets(T):
        term = table[S | L]
        acc = acc + term if (t - L.bit_count()) % 2 == 0 else acc - term
    return acc


def _targets(n: int, k: int | None) -> list[int]:
    return coalitions_up_to(n, n if k is None else k)


def _weights(values, exact: bool):
    return list(values) if exact else [float(w) for w in values]


# --------------------------------------------------------------- indices


def joint_shapley_exact(game: Game, k: int, targets: Iterable | None = None) -> IndexResult:
    """Joint Shapley values of every non-empty coalition of size at most ``k``.

    ``phi_T = sum_{S <= N\\T} q_{|S|} [v(S u T) - v(S)]``. The loop visits each
    ``(T, S)`` pair once; see :func:`predicted_pair_count`.
    """
    n = game.n
    _check_k(n, k)
    _check_exact_size(n)
    q = compute_q(n, k)
    table, denom = _scaled_table(game)
    w = _weights(q.q, game.exact)
    if targets is None:
        Ts = _targets(n, k)
    else:
        Ts = [as_bits(T, n) for T in targets]
        for T in Ts:
            if not 1 <= T.bit_count() <= k:
                raise GameError(f"target {coalition_key(T)!r} must have size 1..{k}")
    values = {T: _finish(_weighted(_marginal_sums(table, n, T), w), denom) for T in Ts}
    return IndexResult("joint_shapley", n, k, values, meta={"pairs": predicted_pair_count(n, k)})


def shapley(game: Game) -> IndexResult:
    """Classical Shapley value of each agent."""
    n = game.n
    table, denom = _scaled_table(game)
    w = _weights(shapley_weights(n), game.exact)
    values = {1 << i: _finish(_weighted(_marginal_sums(table, n, 1 << i), w), denom) for i in range(n)}
    return IndexResult("shapley", n, 1, values)


def shapley_interaction(game: Game) -> IndexResult:
    """Shapley interaction index for every non-empty coalition."""
    n = game.n
    table, denom = _scaled_table(game)
    values = {}
    for T in _targets(n, None):
        t = T.bit_count()
        comp = ((1 << n) - 1) & ~T
        sums = [0] * (n - t + 1)
        for S in iter_subsets(comp):
            sums[S.bit_count()] += _derivative(table, T, S)
        w = _weights((Fraction(1, (n - t + 1) * binom(n - t, s)) for s in range(n - t + 1)), game.exact)
        values[T] = _finish(_weighted(sums, w), denom)
    return IndexResult("shapley_interaction", n, n, values)


def generalised_shapley(game: Game) -> IndexResult:
    """Generalised Shapley value for every non-empty coalition."""
    n = game.n
    table, denom = _scaled_table(game)
    values = {}
    for T in _targets(n, None):
        t = T.bit_count()
        w = _weights(
            (Fraction(factorial(n - s - t) * factorial(s), factorial(n - t + 1)) for s in range(n - t + 1)),
            game.exact,
        )
        values[T] = _finish(_weighted(_marginal_sums(table, n, T)[: n - t + 1], w), denom)
    return IndexResult("generalised_shapley", n, n, values)


def _added_value_weights(n: int) -> list[Fraction]:
    """Weight on a marginal ``v(C u i) - v(C)`` with ``|C| = c`` in the subgame average.

    Averaging the Shapley value of ``i`` over the ``2^(n-1)`` coalitions
    ``S`` containing ``i`` puts weight ``c! (s-c-1)! / s!`` on each ``C`` for
    every ``S >= C u i``; summing over those ``S`` by size gives the factor.
    """
    out = []
    for c in range(n):
        free = n - 1 - c
        acc = Fraction(0)
        for m in range(free + 1):
            acc += binom(free, m) * Fraction(factorial(c) * factorial(m), factorial(c + 1 + m))
        out.append(acc / 2 ** (n - 1))
    return out


def added_value(game: Game) -> IndexResult:
    """Added-value index: ``v(T)`` minus the members' average subgame Shapley values."""
    n = game.n
    table, denom = _scaled_table(game)
    w = _weights(_added_value_weights(n), game.exact)
    avg = [_weighted(_marginal_sums(table, n, 1 << i)[:n], w) for i in range(n)]
    values = {}
    for T in _targets(n, None):
        acc = table[T]
        for i in bits_to_agents(T):
            acc = acc - avg[i]
        values[T] = _finish(acc, denom)
    return IndexResult("added_value", n, n, values)


def added_value_literal(game: Game) -> IndexResult:
    """Added-value index evaluated term by term over every ``S`` containing ``i``.

    Quadratic in ``3^n``; used to cross-check :func:`added_value`.
    """
    n = game.n
    v = game.table()
    full = (1 << n) - 1
    per_agent = []
    for i in range(n):
        acc = Fraction(0) if game.exact else 0.0
        for S in iter_subsets(full):
            if not S >> i & 1:
                continue
            s = S.bit_count()
            for C in iter_subsets(S & ~(1 << i)):
                c = C.bit_count()
                wt = Fraction(factorial(c) * factorial(s - c - 1), factorial(s))
                acc += (wt if game.exact else float(wt)) * (v[C | 1 << i] - v[C])
        per_agent.append(acc / 2 ** (n - 1))
    values = {}
    for T in _targets(n, None):
        values[T] = v[T] - sum((per_agent[i] for i in bits_to_agents(T)), Fraction(0) if game.exact else 0.0)
    return IndexResult("added_value", n, n, values)


def shapley_taylor(game: Game, k: int) -> IndexResult:
    """Shapley-Taylor interaction index of order ``k``."""
    n = game.n
    _check_k(n, k)
    table, denom = _scaled_table(game)
    full = (1 << n) - 1
    w = _weights((Fraction(k, n * binom(n - 1, s)) for s in range(n)), game.exact)
    values = {}
    for T in _targets(n, k):
        t = T.bit_count()
        if t < k:
            values[T] = _finish(_derivative(table, T, 0), denom)
            continue
        sums = [0] * n
        for S in iter_subsets(full & ~T):
            sums[S.bit_count()] += _derivative(table, T, S)
        values[T] = _finish(_weighted(sums, w), denom)
    return IndexResult("shapley_taylor", n, k, values)


def compute_index(game: Game, kind: str, k: int | None = None) -> IndexResult:
    """Dispatch by index name; ``k`` is used by the joint and Shapley-Taylor indices."""
    aliases = {"joint": "joint_shapley", "j": "joint_shapley", "st": "shapley_taylor",
               "si": "shapley_interaction", "gs": "generalised_shapley", "av": "added_value"}
    kind = aliases.get(kind, kind)
    if kind == "joint_shapley":
        return joint_shapley_exact(game, k if k is not None else game.n)
    if kind == "shapley_taylor":
        return shapley_taylor(game, k if k is not None else game.n)
    if kind == "shapley":
        return shapley(game)
    if kind == "shapley_interaction":
        return shapley_interaction(game)
    if kind == "generalised_shapley":
        return generalised_shapley(game)
    if kind == "added_value":
        return added_value(game)
    raise GameError(f"unknown index {kind!r}; choose from {INDEX_KINDS}")


# ----------------------------------------------------------------- axioms


@dataclass
class AxiomReport:
    efficiency_residual: object
    null_coalitions: list[int]
    null_violations: list[int]
    symmetric_pairs: list[tuple[int, int]]
    symmetry_violations: list[tuple[int, int]]
    anonymity_checks: int
    anonymity_violations: list[tuple[tuple[int, ...], int]]
    exact: bool

    @property
    def efficiency_ok(self) -> bool:
        if self.exact:
            return self.efficiency_residual == 0
        return abs(self.efficiency_residual) <= NUMERIC_TOL

    @property
    def ok(self) -> bool:
        return (self.efficiency_ok and not self.null_violations and not self.symmetry_violations
                and not self.anonymity_violations)

    def lines(self) -> list[str]:
        mark = lambda good: "PASS" if good else "FAIL"  # noqa: E731
        return [
            f"{mark(self.efficiency_ok)} JEF efficiency residual = {self.efficiency_residual}",
            f"{mark(not self.null_violations)} JNU {len(self.null_coalitions)} null coalitions, "
            f"{len(self.null_violations)} violations",
            f"{mark(not self.symmetry_violations)} JSY {len(self.symmetric_pairs)} symmetric pairs, "
            f"{len(self.symmetry_violations)} violations",
            f"{mark(not self.anonymity_violations)} JAN {self.anonymity_checks} permutations, "
            f"{len(self.anonymity_violations)} violations",
        ]


def _same(a, b, exact: bool) -> bool:
    return a == b if exact else abs(a - b) <= NUMERIC_TOL


def is_null(table, n: int, T: int, exact: bool = True) -> bool:
    comp = ((1 << n) - 1) & ~T
    return all(_same(table[S | T], table[S], exact) for S in iter_subsets(comp))


def joint_symmetric(table, n: int, T: int, U: int, exact: bool = True) -> bool:
    """All three joint-symmetry hypotheses for ``T`` and ``U`` hold."""
    full = (1 << n) - 1
    for S in iter_subsets(full & ~(T | U)):
        if not _same(table[S | T], table[S | U], exact):
            return False
    for S in iter_subsets(full & ~T):
        if S & U and not _same(table[S | T], table[S], exact):
            return False
    for S in iter_subsets(full & ~U):
        if S & T and not _same(table[S | U], table[S], exact):
            return False
    return True


def check_axioms(result: IndexResult, game: Game, n_permutations: int = 3, seed: int = 0,
                 symmetry_limit: int = 8) -> AxiomReport:
    """Check an exact joint Shapley result against the five axioms' testable forms.

    Null coalitions and symmetric pairs are found by enumeration; the pair
    search is skipped above ``symmetry_limit`` agents.
    """
    if result.index_kind != "joint_shapley" or result.mode != "exact":
        raise GameError("check_axioms needs an exact joint_shapley result")
    n, k = game.n, result.k
    exact = game.exact
    table = game.table()
    vals = result.values
    eff = sum(vals.values(), Fraction(0) if exact else 0.0) - table[-1]

    nulls, null_bad = [], []
    for T, val in vals.items():
        if is_null(table, n, T, exact):
            nulls.append(T)
            if not _same(val, 0, exact):
                null_bad.append(T)

    pairs, sym_bad = [], []
    if n <= symmetry_limit:
        keys = sorted(vals)
        for a, T in enumerate(keys):
            for U in keys[a + 1:]:
                if joint_symmetric(table, n, T, U, exact):
                    pairs.append((T, U))
                    if not _same(vals[T], vals[U], exact):
                        sym_bad.append((T, U))

    rng = np.random.default_rng(seed)
    anon_bad = []
    for _ in range(n_permutations):
        sigma = Permutation.random(n, rng)
        permuted = joint_shapley_exact(permute_game(game, sigma), k)
        for T, val in vals.items():
            if not _same(permuted.values[sigma.apply(T)], val, exact):
                anon_bad.append((sigma.perm, T))
    return AxiomReport(eff, nulls, null_bad, pairs, sym_bad, n_permutations, anon_bad, exact)
