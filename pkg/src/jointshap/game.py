"""Agents, coalitions and cooperative games.

Coalitions are bitmasks: agent ``i`` is present iff bit ``i`` is set. Agents
are numbered from 0. Python integers are unbounded, so the same representation
serves any number of agents; only the exhaustive paths impose a size guard.
"""
from __future__ import annotations

import json
import math
from itertools import combinations
from dataclasses import dataclass
from fractions import Fraction
from numbers import Rational
from pathlib import Path
from typing import Callable, Iterable, Iterator, Sequence, Union

import numpy as np

#: Largest game whose worth table is materialised by exhaustive routines.
MAX_EXACT_AGENTS = 25

Worth = Union[Fraction, float]


class GameError(ValueError):
    """Raised for malformed games, coalitions or game files."""


@dataclass(frozen=True)
class Coalition:
    """A subset of ``{0, ..., n-1}`` stored as a bitmask."""

    bits: int
    n: int

    def __post_init__(self):
        if self.n < 0:
            raise GameError(f"agent count must be non-negative, got {self.n}")
        if self.bits < 0 or self.bits >> self.n:
            raise GameError(f"bitmask {self.bits:#x} does not fit {self.n} agents")

    @classmethod
    def from_agents(cls, agents: Iterable[int], n: int) -> "Coalition":
        return cls(agents_to_bits(agents, n), n)

    @classmethod
    def empty(cls, n: int) -> "Coalition":
        return cls(0, n)

    @classmethod
    def full(cls, n: int) -> "Coalition":
        return cls((1 << n) - 1, n)

    @property
    def agents(self) -> tuple[int, ...]:
        return bits_to_agents(self.bits)

    def __len__(self) -> int:
        return self.bits.bit_count()

    def __contains__(self, agent: int) -> bool:
        return bool(self.bits >> agent & 1)

    def __iter__(self) -> Iterator[int]:
        return iter(self.agents)

    def __or__(self, other: "Coalition") -> "Coalition":
        self._check_same(other)
        return Coalition(self.bits | other.bits, self.n)

    def __and__(self, other: "Coalition") -> "Coalition":
        self._check_same(other)
        return Coalition(self.bits & other.bits, self.n)

    def __sub__(self, other: "Coalition") -> "Coalition":
        self._check_same(other)
        return Coalition(self.bits & ~other.bits, self.n)

    def complement(self) -> "Coalition":
        return Coalition(((1 << self.n) - 1) & ~self.bits, self.n)

    def subsets(self) -> Iterator["Coalition"]:
        for b in iter_subsets(self.bits):
            yield Coalition(b, self.n)

    def key(self) -> str:
        return coalition_key(self.bits)

    def _check_same(self, other: "Coalition"):
        if other.n != self.n:
            raise GameError(f"coalitions over {self.n} and {other.n} agents")

    def __repr__(self):
        return f"Coalition({set(self.agents) or '{}'}, n={self.n})"


def agents_to_bits(agents: Iterable[int], n: int | None = None) -> int:
    bits = 0
    for a in agents:
        a = int(a)
        if a < 0 or (n is not None and a >= n):
            raise GameError(f"agent {a} out of range for n={n}")
        bits |= 1 << a
    return bits


def bits_to_agents(bits: int) -> tuple[int, ...]:
    out = []
    i = 0
    while bits:
        if bits & 1:
            out.append(i)
        bits >>= 1
        i += 1
    return tuple(out)


def coalition_key(bits: int) -> str:
    """Sorted-agent-list key, e.g. ``"0,2"``; the empty coalition is ``""``."""
    return ",".join(map(str, bits_to_agents(bits)))


def iter_subsets(mask: int) -> Iterator[int]:
    """Yield every subset of ``mask`` (including 0 and ``mask``), descending."""
    sub = mask
    while True:
        yield sub
        if sub == 0:
            return
        sub = (sub - 1) & mask


def coalitions_up_to(n: int, k: int) -> list[int]:
    """All non-empty coalitions of size at most ``k``, by size then lexicographically."""
    out: list[int] = []
    for size in range(1, min(k, n) + 1):
        for combo in combinations(range(n), size):
            out.append(agents_to_bits(combo))
    return out


def as_bits(S, n: int) -> int:
    """Normalise a Coalition, bitmask or agent iterable to a checked bitmask."""
    if isinstance(S, Coalition):
        if S.n != n:
            raise GameError(f"coalition over {S.n} agents used with a game of {n}")
        return S.bits
    if isinstance(S, (int, np.integer)) and not isinstance(S, bool):
        S = int(S)
        if S < 0 or S >> n:
            raise GameError(f"bitmask {S:#x} does not fit {n} agents")
        return S
    return agents_to_bits(S, n)


def to_fraction(x) -> Fraction:
    """Exact rational from an int, Fraction, float or ``"p/q"`` string."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, bool):
        raise GameError("boolean is not a worth")
    if isinstance(x, (int, Rational)):
        return Fraction(x)
    if isinstance(x, (float, np.floating)):
        if not math.isfinite(x):
            raise GameError(f"non-finite worth {x}")
        return Fraction(float(x))
    if isinstance(x, str):
        try:
            return Fraction(x.strip())
        except (ValueError, ZeroDivisionError) as exc:
            raise GameError(f"cannot parse rational {x!r}") from exc
    raise GameError(f"unsupported worth type {type(x).__name__}")


class Game:
    """A set function on ``2^N`` with ``v(empty) = 0``.

    ``worth`` maps a bitmask to a worth. Exact games return ``Fraction`` and
    numeric games return ``float``; the two never mix inside a computation.
    Evaluations are memoised, so ``worth`` must be deterministic.
    """

    def __init__(self, n: int, worth: Callable[[int], object], exact: bool = True, name: str = "game"):
        if n < 1:
            raise GameError(f"a game needs at least one agent, got n={n}")
        self.n = n
        self.exact = exact
        self.name = name
        self.k_hint: int | None = None
        self._worth = worth
        self._memo: dict[int, Worth] = {}
        if self(0) != 0:
            raise GameError(f"v(empty) must be 0, got {self(0)}")

    @property
    def kind(self) -> str:
        return "exact" if self.exact else "numeric"

    @property
    def full(self) -> int:
        return (1 << self.n) - 1

    def __call__(self, S) -> Worth:
        bits = as_bits(S, self.n)
        try:
            return self._memo[bits]
        except KeyError:
            pass
        raw = self._worth(bits)
        val = to_fraction(raw) if self.exact else float(raw)
        # setdefault keeps the first stored value if two threads race
        return self._memo.setdefault(bits, val)

    def table(self) -> list:
        """Worths of all ``2^n`` coalitions, indexed by bitmask."""
        if self.n > MAX_EXACT_AGENTS:
            raise GameError(
                f"n={self.n} exceeds the exhaustive limit of {MAX_EXACT_AGENTS}; use the sampler"
            )
        return [self(b) for b in range(1 << self.n)]

    def __repr__(self):
        return f"<Game {self.name} n={self.n} {self.kind}>"


class TabularGame(Game):
    """Game backed by an explicit list of ``2^n`` worths."""

    def __init__(self, n: int, worths: Sequence, exact: bool = True, name: str = "table"):
        if len(worths) != 1 << n:
            raise GameError(f"expected {1 << n} worths, got {len(worths)}")
        conv = to_fraction if exact else float
        self._values = [conv(w) for w in worths]
        super().__init__(n, self._values.__getitem__, exact=exact, name=name)

    def table(self) -> list:
        return list(self._values)


def eval_game(game: Game, S) -> Worth:
    """``v(S)``; raises :class:`GameError` if ``S`` does not fit ``game``."""
    if isinstance(S, Coalition) and S.n != game.n:
        raise GameError(f"coalition over {S.n} agents, game has {game.n}")
    return game(S)


# ---------------------------------------------------------------- built-ins


def majority(n: int = 3) -> Game:
    """Worth 1 for any coalition holding at least two agents."""
    return Game(n, lambda b: 1 if b.bit_count() >= 2 else 0, name=f"majority({n})")


def linear_crosses(n: int = 3, c=0) -> Game:
    """``v(T) = |T| + c * max(0, |T| - 2)``."""
    c = to_fraction(c)
    return Game(n, lambda b: b.bit_count() + c * max(0, b.bit_count() - 2), name=f"linear_crosses({n}, c={c})")


def identity_game(n: int, R) -> Game:
    """Worth 1 on exactly the coalition ``R`` and 0 elsewhere."""
    r = as_bits(R, n)
    if r == 0:
        raise GameError("identity game needs a non-empty coalition")
    return Game(n, lambda b: 1 if b == r else 0, name=f"identity({coalition_key(r)})")


def threshold_game(n: int, m: int) -> Game:
    """Worth 1 for coalitions of size at least ``m`` (``m >= 1``)."""
    if m < 1:
        raise GameError(f"threshold must be at least 1, got {m}")
    return Game(n, lambda b: 1 if b.bit_count() >= m else 0, name=f"threshold({m})")


def threshold_x(n: int, c: int, t: int) -> Game:
    """The cardinality game ``x(R) = 1 iff |R| >= n - c - 1 + t``."""
    return threshold_game(n, n - c - 1 + t)


def constant_zero(n: int) -> Game:
    return Game(n, lambda b: 0, name="constant_zero")


def additive_game(weights: Sequence) -> Game:
    """``v(S)`` is the sum of the weights of members of ``S``."""
    w = [to_fraction(x) for x in weights]
    return Game(len(w), lambda b: sum((w[i] for i in bits_to_agents(b)), Fraction(0)), name="additive")


_BUILTINS = {
    "majority": (majority, ()),
    "linear_crosses": (linear_crosses, ("c",)),
    "identity": (identity_game, ("R",)),
    "threshold": (threshold_game, ("m",)),
    "threshold_x": (threshold_x, ("c", "t")),
    "constant_zero": (constant_zero, ()),
}


def builtin_game(name: str, n: int, **params) -> Game:
    """Construct one of the named built-in games on ``n`` agents."""
    try:
        factory, allowed = _BUILTINS[name]
    except KeyError:
        raise GameError(f"unknown game {name!r}; choose from {sorted(_BUILTINS)}") from None
    extra = set(params) - set(allowed)
    if extra:
        raise GameError(f"game {name!r} does not take {sorted(extra)}")
    missing = [p for p in allowed if p not in params and not (name == "linear_crosses" and p == "c")]
    if missing:
        raise GameError(f"game {name!r} needs {missing}")
    if n < 1:
        raise GameError(f"n must be positive, got {n}")
    kwargs = {}
    for key, val in params.items():
        if key == "R":
            kwargs[key] = _parse_agent_list(val) if isinstance(val, str) else val
        elif key == "c" and name == "linear_crosses":
            kwargs[key] = to_fraction(val)
        else:
            kwargs[key] = int(val)
    return factory(n, **kwargs)


def _parse_agent_list(text: str) -> tuple[int, ...]:
    text = text.strip()
    if not text:
        return ()
    try:
        return tuple(int(p) for p in text.split(","))
    except ValueError as exc:
        raise GameError(f"bad agent list {text!r}") from exc


# ------------------------------------------------------------- permutations


@dataclass(frozen=True)
class Permutation:
    """A bijection on ``{0, ..., n-1}``; ``perm[i]`` is the image of ``i``."""

    perm: tuple[int, ...]

    def __post_init__(self):
        if sorted(self.perm) != list(range(len(self.perm))):
            raise GameError(f"{self.perm} is not a permutation")

    @classmethod
    def swap(cls, n: int, i: int, j: int) -> "Permutation":
        p = list(range(n))
        p[i], p[j] = p[j], p[i]
        return cls(tuple(p))

    @classmethod
    def random(cls, n: int, rng: np.random.Generator) -> "Permutation":
        return cls(tuple(int(i) for i in rng.permutation(n)))

    @property
    def n(self) -> int:
        return len(self.perm)

    def inverse(self) -> "Permutation":
        inv = [0] * self.n
        for i, p in enumerate(self.perm):
            inv[p] = i
        return Permutation(tuple(inv))

    def apply(self, bits: int) -> int:
        out = 0
        for a in bits_to_agents(bits):
            out |= 1 << self.perm[a]
        return out


def permute_game(game: Game, sigma: Permutation) -> Game:
    """The game ``sigma v`` with ``(sigma v)(sigma(S)) = v(S)``."""
    if sigma.n != game.n:
        raise GameError(f"permutation on {sigma.n} agents, game has {game.n}")
    inv = sigma.inverse()
    return Game(game.n, lambda b: game(inv.apply(b)), exact=game.exact, name=f"permuted {game.name}")


# ---------------------------------------------------------------- game files


def _parse_key(key: str, n: int) -> int:
    key = key.strip()
    if key and set(key) <= {"0", "1"} and len(key) == n and "," not in key:
        # bit-string form is the bitmask written in binary
        return int(key, 2)
    return agents_to_bits(_parse_agent_list(key), n)


def game_from_dict(doc: dict) -> Game:
    try:
        n = int(doc["n"])
    except (KeyError, TypeError, ValueError) as exc:
        raise GameError("game file needs an integer field 'n'") from exc
    if not 1 <= n <= MAX_EXACT_AGENTS:
        raise GameError(f"n={n} outside the supported range 1..{MAX_EXACT_AGENTS}")
    raw = doc.get("worths", {}) or {}
    if not isinstance(raw, dict):
        raise GameError("'worths' must be an object")
    worths: dict[int, Fraction] = {}
    for key, val in raw.items():
        bits = _parse_key(str(key), n)
        if bits in worths:
            raise GameError(f"coalition {coalition_key(bits)!r} listed twice")
        worths[bits] = to_fraction(val)
    if worths.get(0, 0) != 0:
        raise GameError("the empty coalition must have worth 0")
    game = Game(n, lambda b: worths.get(b, 0), name=doc.get("name", "file"))
    if "k" in doc and doc["k"] is not None:
        game.k_hint = int(doc["k"])
    return game


def game_from_file(path) -> Game:
    """Load a JSON game. Unlisted coalitions have worth 0."""
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise GameError(f"{path}: invalid JSON ({exc})") from exc
    return game_from_dict(doc)


def format_worth(x) -> Union[str, float]:
    if isinstance(x, Fraction):
        return str(x)
    return float(x)


def game_to_dict(game: Game, k: int | None = None, sparse: bool = True) -> dict:
    worths = {}
    for b, val in enumerate(game.table()):
        if b == 0 or (sparse and val == 0):
            continue
        worths[coalition_key(b)] = format_worth(val)
    doc = {"n": game.n, "worths": worths}
    if k is not None:
        doc["k"] = k
    return doc


def game_to_file(game: Game, path, k: int | None = None, sparse: bool = True) -> None:
    Path(path).write_text(json.dumps(game_to_dict(game, k, sparse), indent=2) + "\n")
