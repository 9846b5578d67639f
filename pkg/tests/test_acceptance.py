"""Acceptance gate: one check per criterion, each printing a PASS/FAIL line.

Run under pytest (``pytest tests/test_acceptance.py -s``) or directly
(``python tests/test_acceptance.py``) for a summary table.
"""
from __future__ import annotations

import math
import random
import sys
import time
from fractions import Fraction
from itertools import combinations
from pathlib import Path

import numpy as np
import pytest

from jointshap.attribution import (
    Dataset,
    additive_decomposition_check,
    binary_feature_space,
    global_mean_abs,
    local_joint_shapley,
    presence_adjusted_global,
)
from jointshap.coefficients import binom, closed_form_q, compute_q, shapley_weights, verify_coefficient_identities
from jointshap.game import (
    Permutation,
    TabularGame,
    agents_to_bits,
    iter_subsets,
    linear_crosses,
    majority,
    permute_game,
)
from jointshap.indices import (
    added_value,
    generalised_shapley,
    joint_shapley_exact,
    shapley,
    shapley_interaction,
    shapley_taylor,
)
from jointshap.models import builtin_model, external_model
from jointshap.sampler import SamplerConfig, arrival_process_expectation, sample_joint_shapley

F = Fraction
MODELS = Path(__file__).parent / "models"


def report(number: int, ok: bool, detail: str) -> None:
    print(f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {detail}")


# ------------------------------------------------------------------ 1


def reference_table(c=None):
    """Reference n=3 comparison values, keyed by coalition size (1, 2, 3)."""
    if c is None:
        return {
            "shapley": {1: F(1, 3)},
            "si": {1: F(1, 3), 2: F(0), 3: F(-2)},
            "gs": {1: F(1, 3), 2: F(1, 2), 3: F(1)},
            "av": {1: F(-1, 3), 2: F(1, 3), 3: F(0)},
            "st2": {1: F(0), 2: F(1, 3)},
            "st3": {1: F(0), 2: F(1), 3: F(-2)},
            "j2": {1: F(1, 9), 2: F(2, 9)},
            "j3": {1: F(2, 21), 2: F(4, 21), 3: F(3, 21)},
        }
    return {
        "shapley": {1: (3 + c) / 3},
        "si": {1: (3 + c) / 3, 2: c / 3, 3: c},
        "gs": {1: (3 + c) / 3, 2: (4 + c) / 2, 3: 3 + c},
        "av": {1: -c / 12, 2: -c / 6, 3: 3 * c / 4},
        "st2": {1: F(1), 2: c / 3},
        "st3": {1: F(1), 2: F(0), 3: c},
        "j2": {1: F(5, 18) * (2 + c), 2: (8 + c) / 18},
        "j3": {1: F(5, 21) * (2 + c), 2: (8 + c) / 21, 3: F(3, 21) * (3 + c)},
    }


def criterion_1():
    t0 = time.perf_counter()
    cases = [("majority", majority(3), None)] + [
        (f"crosses c={c}", linear_crosses(3, F(c)), F(c)) for c in (-2, 0, 1, 4)
    ]
    mismatches = []
    checked = 0
    for label, game, c in cases:
        got = {
            "shapley": shapley(game), "si": shapley_interaction(game), "gs": generalised_shapley(game),
            "av": added_value(game), "st2": shapley_taylor(game, 2), "st3": shapley_taylor(game, 3),
            "j2": joint_shapley_exact(game, 2), "j3": joint_shapley_exact(game, 3),
        }
        for col, cells in reference_table(c).items():
            for size, want in cells.items():
                for T in combinations(range(3), size):
                    checked += 1
                    val = got[col][T]
                    if val != want:
                        mismatches.append((label, col, size, val, want))
    elapsed = time.perf_counter() - t0
    ok = not mismatches and elapsed < 1.0
    detail = f"{checked - len(mismatches)}/{checked} cells match in {elapsed:.2f}s"
    if mismatches:
        groups = {}
        for label, col, size, val, want in mismatches:
            groups[label, col, size] = (val, want)
        detail += "; differing cells (computed vs reference): " + "; ".join(
            f"{label} {col} |T|={size}: {val} vs {want}" for (label, col, size), (val, want) in groups.items())
    return ok, detail


# ------------------------------------------------------------------ 2


def criterion_2():
    t0 = time.perf_counter()
    problems = []
    for n in range(1, 13):
        for k in range(1, n + 1):
            table = compute_q(n, k)
            rep = verify_coefficient_identities(table, balance_limit=12)
            if not rep.ok:
                problems.append(f"(n={n},k={k}) {rep.violations[0]}")
            if any(r != 0 for r in rep.recursion_residuals):
                problems.append(f"(n={n},k={k}) recursion residual")
            if sum(binom(n, s) * table[s] for s in range(n - k, n)) != 1:
                problems.append(f"(n={n},k={k}) efficiency sum")
        if compute_q(n, n) != closed_form_q(n):
            problems.append(f"n={n} closed form")
        if compute_q(n, 1).q != shapley_weights(n):
            problems.append(f"n={n} Shapley weights")
    elapsed = time.perf_counter() - t0
    ok = not problems and elapsed < 5.0
    return ok, f"78 (n,k) tables, {len(problems)} identity failures, {elapsed:.2f}s" + (
        f"; first: {problems[0]}" if problems else "")


# ------------------------------------------------------------------ 3


def random_rational_game(rnd: random.Random, n: int) -> TabularGame:
    worths = [F(0)] + [F(rnd.randint(-50, 50), rnd.randint(1, 12)) for _ in range((1 << n) - 1)]
    return TabularGame(n, worths)


def criterion_3(n_games: int = 200, seed: int = 20240601):
    t0 = time.perf_counter()
    rnd = random.Random(seed)
    np_rng = np.random.default_rng(seed)
    failures = {"JEF": 0, "JLI": 0, "JNU": 0, "JAN": 0}
    for _ in range(n_games):
        n = rnd.randint(1, 6)
        k = rnd.randint(1, n)
        g = random_rational_game(rnd, n)
        phi = joint_shapley_exact(g, k)
        full = (1 << n) - 1
        if phi.total() != g(full):
            failures["JEF"] += 1

        h = random_rational_game(rnd, n)
        a, b = F(rnd.randint(-9, 9), rnd.randint(1, 5)), F(rnd.randint(-9, 9), rnd.randint(1, 5))
        combo = TabularGame(n, [a * x + b * y for x, y in zip(g.table(), h.table())])
        phi_h = joint_shapley_exact(h, k)
        lhs = joint_shapley_exact(combo, k)
        if any(lhs.values[T] != a * phi.values[T] + b * phi_h.values[T] for T in lhs.values):
            failures["JLI"] += 1

        t = rnd.randint(1, k)
        T = agents_to_bits(rnd.sample(range(n), t))
        table = g.table()
        for S in iter_subsets(full & ~T):
            table[S | T] = table[S]
        if joint_shapley_exact(TabularGame(n, table), k).values[T] != 0:
            failures["JNU"] += 1

        sigma = Permutation.random(n, np_rng)
        moved = joint_shapley_exact(permute_game(g, sigma), k)
        if any(moved.values[sigma.apply(U)] != v for U, v in phi.values.items()):
            failures["JAN"] += 1
    elapsed = time.perf_counter() - t0
    ok = not any(failures.values()) and elapsed < 30.0
    return ok, f"{n_games} games, failures {failures}, {elapsed:.2f}s"


# ------------------------------------------------------------------ 4


def criterion_4(seed: int = 7):
    t0 = time.perf_counter()
    rnd = random.Random(seed)
    games = [majority(n) for n in range(1, 6)] + [linear_crosses(3, F(c)) for c in (-2, 0, 1, 4)]
    games += [random_rational_game(rnd, n) for n in (1, 2, 3, 4, 5, 5)]
    cases = 0
    bad = []
    for g in games:
        for k in range(1, g.n + 1):
            cases += 1
            if arrival_process_expectation(g, k).values != joint_shapley_exact(g, k).values:
                bad.append((g.name, g.n, k))
    elapsed = time.perf_counter() - t0
    return not bad, f"{cases - len(bad)}/{cases} (game, k) pairs equal exactly, {elapsed:.2f}s"


# ------------------------------------------------------------------ 5


def criterion_5(seed: int = 12345):
    t0 = time.perf_counter()
    g = majority(3)
    exact = joint_shapley_exact(g, 2)
    res = sample_joint_shapley(g, 3, 2, cfg=SamplerConfig(iterations=100_000, seed=seed))
    worst = max(abs(res.values[T] - float(v)) for T, v in exact.values.items())
    singles = [1 << i for i in range(3)]
    iters = np.array([1_000, 3_000, 10_000, 30_000, 100_000])
    sems = []
    for m in iters:
        r = sample_joint_shapley(g, 3, 2, targets=singles, cfg=SamplerConfig(iterations=int(m), seed=seed))
        sems.append(np.mean([r.meta["sem"][T] for T in singles]))
    slope = np.polyfit(np.log(iters), np.log(sems), 1)[0]
    elapsed = time.perf_counter() - t0
    ok = worst < 0.01 and abs(slope + 0.5) <= 0.1 and elapsed < 10.0
    return ok, f"max |error| {worst:.4f} at 1e5 iterations, SEM slope {slope:.3f}, {elapsed:.2f}s"


# ------------------------------------------------------------------ 6

TABLE3_ORDER = [(0,), (1,), (2,), (0, 1), (0, 2), (1, 2), (0, 1, 2)]
TABLE3 = {
    "f1": (builtin_model("select", 0), [F(5, 21), 0, 0, F(1, 21), F(1, 21), 0, F(1, 56)]),
    "f2": (builtin_model("sum", 0, 1), [F(5, 21), F(5, 21), 0, F(2, 21), F(1, 21), F(1, 21), F(1, 28)]),
    "f4": (builtin_model("product", 0, 1), [F(5, 42), F(5, 42), 0, F(1, 14), F(1, 42), F(1, 42), F(3, 112)]),
}


def criterion_6():
    t0 = time.perf_counter()
    cube = binary_feature_space(3)
    matches = 0
    misses = []
    for name, (model, expected) in TABLE3.items():
        rep = presence_adjusted_global(model, cube, 3, rational=True)
        for T, want in zip(TABLE3_ORDER, expected):
            got = rep.presence_adjusted[agents_to_bits(T)]
            if got == want:
                matches += 1
            else:
                misses.append(f"{name} {T}: {got} vs {want}")
    elapsed = time.perf_counter() - t0
    ok = not misses and elapsed < 1.0
    return ok, f"{matches}/21 entries exact, {elapsed:.2f}s" + (f"; {misses[0]}" if misses else "")


# ------------------------------------------------------------------ 7


def criterion_7():
    cube = binary_feature_space(3)
    out = {name: additive_decomposition_check(model, cube, 0) for name, (model, _) in TABLE3.items()}
    ok = (out["f1"].accept and out["f1"].residual == 0 and out["f2"].accept and out["f2"].residual == 0
          and not out["f4"].accept and out["f4"].residual >= F(1, 42))
    detail = ", ".join(f"{k}: {'accept' if r.accept else 'reject'} (residual {r.residual})" for k, r in out.items())
    return ok, detail


# ------------------------------------------------------------------ 8


def table2_globals(seed: int = 50):
    rng = np.random.default_rng(seed)
    indep = rng.uniform(size=(50, 3))
    corr = indep.copy()
    corr[:, 1] = 1 - corr[:, 0]
    models = {"f1": builtin_model("select", 0), "f2": builtin_model("sum", 0, 1), "f3": builtin_model("diff", 0, 1)}
    out = {}
    for label, rows in (("indep", indep), ("corr", corr)):
        data = Dataset(rows)
        for name, model in models.items():
            locals_ = [local_joint_shapley(model, data, x, 3) for x in data.rows]
            out[label, name] = global_mean_abs(locals_).mean_abs
    return out


def criterion_8():
    g = table2_globals()
    x1, x2, x3 = 1, 2, 4
    no_x1 = [T for T in range(1, 8) if not T & x1]
    f1_zero = all(g["indep", "f1"][T] == 0 for T in no_x1)
    both = [T for T in range(1, 8) if T & x1 and T & x2]
    f2_cancel = all(abs(g["corr", "f2"][T]) < 1e-12 for T in both)
    pair = x1 | x2
    enhance = g["corr", "f3"][pair] > g["indep", "f3"][pair]
    ok = f1_zero and f2_cancel and enhance
    return ok, (f"f1 zeros off x1: {f1_zero}; correlated f2 zero on x1&x2 coalitions: {f2_cancel}; "
                f"f3 pair {g['corr', 'f3'][pair]:.3f} (correlated) > {g['indep', 'f3'][pair]:.3f} (independent): "
                f"{enhance}; x3 alone under f1 = {g['indep', 'f1'][x3]}")


# ------------------------------------------------------------------ 9


def criterion_9():
    rng = np.random.default_rng(9)
    A = rng.normal(size=(2000, 3))
    with external_model([sys.executable, str(MODELS / "sum_model.py")], n_features=3) as ext:
        gap = float(np.max(np.abs(ext.predict(A) - builtin_model("sum", 0, 1).predict(A))))
        data = Dataset(A[:30])
        ext_vals = local_joint_shapley(ext, data, A[0], 2).values
    ref_vals = local_joint_shapley(builtin_model("sum", 0, 1), data, A[0], 2).values
    value_gap = max(abs(ext_vals[T] - ref_vals[T]) for T in ref_vals)

    n = 1004
    big = Dataset(rng.integers(0, 2, size=(200, n)).astype(float))
    model = builtin_model("linear", rng.normal(size=n))
    targets = [(i,) for i in range(10)]
    cfg = SamplerConfig(iterations=10_000, seed=2024)
    t0 = time.perf_counter()
    first = local_joint_shapley(model, big, big.rows[0], 2, mode="sampled", cfg=cfg, targets=targets)
    elapsed = time.perf_counter() - t0
    second = local_joint_shapley(model, big, big.rows[0], 2, mode="sampled", cfg=cfg, targets=targets)
    finite = all(math.isfinite(v) for v in first.values.values())
    stable = first.values == second.values
    ok = gap <= 1e-12 and value_gap <= 1e-12 and finite and stable and elapsed < 60.0
    return ok, (f"external vs builtin: predictions {gap:.1e}, values {value_gap:.1e}; "
                f"n=1004 sampled run {elapsed:.1f}s, finite={finite}, seed-stable={stable}")


CRITERIA = [criterion_1, criterion_2, criterion_3, criterion_4, criterion_5,
            criterion_6, criterion_7, criterion_8, criterion_9]


@pytest.mark.parametrize("number", range(1, 10))
def test_criterion(number):
    ok, detail = CRITERIA[number - 1]()
    report(number, ok, detail)
    assert ok, detail


if __name__ == "__main__":
    results = []
    for number, fn in enumerate(CRITERIA, start=1):
        ok, detail = fn()
        report(number, ok, detail)
        results.append(ok)
    print(f"{sum(results)}/{len(results)} criteria pass")
    sys.exit(0 if all(results) else 1)
