"""Arrival weights ``q_0 .. q_{n-1}`` of the joint Shapley value.

``q_s`` is the weight on a marginal contribution ``v(S u T) - v(S)`` with
``|S| = s``. It is also the probability, under the random arrival process in
which each step brings a uniformly chosen non-empty group of at most ``k``
absent agents, that a fixed set ``S`` has arrived and a fixed ``T`` comes next.
All arithmetic here is exact.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import combinations
from math import comb, factorial


class CoefficientError(ValueError):
    pass


_PASCAL: list[tuple[int, ...]] = [(1,)]
_PASCAL_LIMIT = 4096


def binom(m: int, j: int) -> int:
    """Binomial coefficient from a memoised Pascal triangle (``math.comb`` past the cap)."""
    if j < 0 or j > m:
        return 0
    if m > _PASCAL_LIMIT:
        return comb(m, j)
    while len(_PASCAL) <= m:
        prev = _PASCAL[-1]
        _PASCAL.append((1,) + tuple(prev[i] + prev[i + 1] for i in range(len(prev) - 1)) + (1,))
    return _PASCAL[m][j]


def group_count(m: int, k: int) -> int:
    """Number of non-empty groups of at most ``k`` among ``m`` agents."""
    return sum(binom(m, i) for i in range(1, min(k, m) + 1))


@dataclass(frozen=True)
class CoefficientTable:
    n: int
    k: int
    q: tuple[Fraction, ...]
    # arithmetic operations spent building the table; not part of equality
    ops: int = field(default=0, compare=False, repr=False)

    def __post_init__(self):
        if self.n < 1:
            raise CoefficientError(f"n must be positive, got {self.n}")
        if not 1 <= self.k <= self.n:
            raise CoefficientError(f"order k={self.k} outside 1..{self.n}")
        if len(self.q) != self.n:
            raise CoefficientError(f"expected {self.n} coefficients, got {len(self.q)}")

    def __getitem__(self, s: int) -> Fraction:
        return self.q[s]

    def __len__(self):
        return self.n

    def as_floats(self) -> list[float]:
        return [float(x) for x in self.q]

    def replace(self, s: int, value) -> "CoefficientTable":
        """Copy with ``q_s`` overwritten (no validation)."""
        q = list(self.q)
        q[s] = Fraction(value)
        return CoefficientTable(self.n, self.k, tuple(q))


def _check_order(n: int, k: int):
    if n < 1:
        raise CoefficientError(f"n must be positive, got {n}")
    if not 1 <= k <= n:
        raise CoefficientError(f"order k={k} outside 1..{n}")


def compute_q(n: int, k: int) -> CoefficientTable:
    """Solve the recursion for ``q_0 .. q_{n-1}`` at order ``k``.

    ``q_0 = 1 / sum_{i=1..k} C(n, i)`` and for ``r >= 1``::

        q_r = sum_{s=max(r-k,0)}^{r-1} C(r, s) q_s  /  sum_{s=1}^{min(k, n-r)} C(n-r, s)
    """
    _check_order(n, k)
    ops = 0
    den = 0
    for i in range(1, k + 1):
        den += binom(n, i)
        ops += 1
    q = [Fraction(1, den)]
    for r in range(1, n):
        num = Fraction(0)
        for s in range(max(r - k, 0), r):
            num += binom(r, s) * q[s]
            ops += 2
        den = 0
        for s in range(1, min(k, n - r) + 1):
            den += binom(n - r, s)
            ops += 1
        q.append(num / den)
        ops += 1
    return CoefficientTable(n, k, tuple(q), ops=ops)


def closed_form_q(n: int) -> CoefficientTable:
    """``q_r = sum_j C(r, j) (-2)^(r-j) / (2^(n-j) - 1)``, valid for ``k = n``."""
    if n < 1:
        raise CoefficientError(f"n must be positive, got {n}")
    q = []
    for r in range(n):
        q.append(sum(Fraction(binom(r, j) * (-2) ** (r - j), 2 ** (n - j) - 1) for j in range(r + 1)))
    return CoefficientTable(n, n, tuple(q))


def shapley_weights(n: int) -> tuple[Fraction, ...]:
    """Classical weights ``s! (n-s-1)! / n!`` for ``s = 0 .. n-1``."""
    return tuple(Fraction(factorial(s) * factorial(n - s - 1), factorial(n)) for s in range(n))


@dataclass
class CoefficientReport:
    recursion_residuals: list[Fraction]
    efficiency_residual: Fraction
    balance_checked: bool
    balance_failures: list[tuple[int, ...]]
    negative: list[int]

    @property
    def violations(self) -> list[str]:
        out = []
        for r, res in enumerate(self.recursion_residuals):
            if res != 0:
                out.append(f"recursion residual at r={r}: {res}")
        if self.efficiency_residual != 0:
            out.append(f"sum_s C(n,s) q_s - 1 = {self.efficiency_residual}")
        for S in self.balance_failures:
            out.append(f"balance fails at S={set(S)}")
        for s in self.negative:
            out.append(f"q_{s} is negative")
        return out

    @property
    def ok(self) -> bool:
        return not self.violations


def _balance(table: CoefficientTable, s: int) -> Fraction:
    """Right-hand side of the balance identity for any ``S`` of size ``s``.

    ``sum_{T <= S, 1<=|T|<=k} q_{s-t}  -  sum_{T <= N\\S, 1<=|T|<=k} q_s``.
    """
    n, k, q = table.n, table.k, table.q
    gain = sum((binom(s, t) * q[s - t] for t in range(1, min(k, s) + 1)), Fraction(0))
    loss = q[s] * group_count(n - s, k) if s < n else Fraction(0)
    return gain - loss


def verify_coefficient_identities(table: CoefficientTable, balance_limit: int = 10) -> CoefficientReport:
    """Check a table against every identity it must satisfy.

    Violations are collected in the report, never raised. The per-coalition
    balance identity is checked for every non-empty ``S`` when
    ``n <= balance_limit``.
    """
    n, k, q = table.n, table.k, table.q
    residuals = [q[0] - Fraction(1, group_count(n, k))]
    for r in range(1, n):
        num = sum((binom(r, s) * q[s] for s in range(max(r - k, 0), r)), Fraction(0))
        residuals.append(q[r] * group_count(n - r, k) - num)
    eff = sum((binom(n, s) * q[s] for s in range(n - k, n)), Fraction(0)) - 1

    failures: list[tuple[int, ...]] = []
    checked = n <= balance_limit
    if checked:
        by_size = {s: _balance(table, s) for s in range(1, n + 1)}
        for s in range(1, n + 1):
            target = 1 if s == n else 0
            if by_size[s] != target:
                failures.extend(combinations(range(n), s))
    negative = [s for s, x in enumerate(q) if x < 0]
    return CoefficientReport(residuals, eff, checked, failures, negative)


@dataclass(frozen=True)
class ArrivalSizeDistribution:
    """Law of the number of agents present when a group of size ``t`` arrives."""

    t: int
    probs: tuple[float, ...]
    exact: tuple[Fraction, ...]
    scale: Fraction  # sum_j C(n-t, j) q_j

    def cdf(self) -> list[float]:
        out, acc = [], Fraction(0)
        for p in self.exact:
            acc += p
            out.append(float(acc))
        out[-1] = 1.0
        return out


def arrival_size_distribution(table: CoefficientTable, t: int) -> ArrivalSizeDistribution:
    """``P(X = i)`` proportional to ``C(n-t, i) q_i`` for ``i = 0 .. n-t``."""
    if not 1 <= t <= table.k:
        raise CoefficientError(f"group size t={t} outside 1..k={table.k}")
    m = table.n - t
    weights = [binom(m, i) * table.q[i] for i in range(m + 1)]
    total = sum(weights, Fraction(0))
    if total <= 0:
        raise CoefficientError("coefficients give a degenerate arrival law")
    exact = tuple(w / total for w in weights)
    return ArrivalSizeDistribution(t, tuple(float(p) for p in exact), exact, total)


__all__ = [
    "ArrivalSizeDistribution",
    "CoefficientError",
    "CoefficientReport",
    "CoefficientTable",
    "arrival_size_distribution",
    "binom",
    "closed_form_q",
    "compute_q",
    "group_count",
    "shapley_weights",
    "verify_coefficient_identities",
]
