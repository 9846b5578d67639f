"""Joint Shapley attribution for prediction models.

The game explained for an instance ``x`` is the prediction difference::

    v_x(S) = mean_{z in A} [ f(tau(x, z, S)) - f(z) ]

where ``tau(x, z, S)`` takes features in ``S`` from ``x`` and the rest from
the baseline row ``z``, and ``A`` is the background dataset.
"""
from __future__ import annotations

import csv
import itertools
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Sequence

import numpy as np

from .coefficients import binom, compute_q
from .game import MAX_EXACT_AGENTS, Game, GameError, as_bits, bits_to_agents
from .indices import IndexResult, joint_shapley_exact
from .models import ModelError, ModelHandle, as_model
from .sampler import SamplerConfig, sample_joint_shapley


class AttributionError(ValueError):
    pass


@dataclass
class Dataset:
    rows: np.ndarray
    feature_names: list[str] = field(default_factory=list)

    def __post_init__(self):
        rows = np.asarray(self.rows, dtype=float)
        if rows.ndim == 1:
            rows = rows[:, None]
        if rows.ndim != 2 or rows.shape[0] == 0 or rows.shape[1] == 0:
            raise AttributionError(f"dataset must be a non-empty 2-D table, got shape {rows.shape}")
        if not np.isfinite(rows).all():
            raise AttributionError("dataset contains non-finite values")
        self.rows = rows
        if not self.feature_names:
            self.feature_names = [f"x{i + 1}" for i in range(rows.shape[1])]
        if len(self.feature_names) != rows.shape[1]:
            raise AttributionError(
                f"{len(self.feature_names)} feature names for {rows.shape[1]} columns"
            )

    @property
    def n_features(self) -> int:
        return self.rows.shape[1]

    def __len__(self) -> int:
        return self.rows.shape[0]

    @property
    def is_binary(self) -> bool:
        return bool(np.isin(self.rows, (0.0, 1.0)).all())

    @classmethod
    def from_csv(cls, path) -> "Dataset":
        with Path(path).open(newline="") as fh:
            reader = csv.reader(fh)
            try:
                header = next(reader)
            except StopIteration:
                raise AttributionError(f"{path}: empty file") from None
            rows = []
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise AttributionError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
                try:
                    rows.append([float(v) for v in row])
                except ValueError as exc:
                    raise AttributionError(f"{path}:{lineno}: {exc}") from exc
        if not rows:
            raise AttributionError(f"{path}: no data rows")
        return cls(np.array(rows), [h.strip() for h in header])

    def coalition_names(self, bits: int) -> list[str]:
        return [self.feature_names[i] for i in bits_to_agents(bits)]


def binary_feature_space(n: int, feature_names: Sequence[str] | None = None) -> Dataset:
    """Every point of ``{0, 1}^n`` once: independent fair Bernoulli features."""
    rows = np.array(list(itertools.product((0.0, 1.0), repeat=n)))
    return Dataset(rows, list(feature_names) if feature_names else [])


def tau(x, z, S) -> np.ndarray:
    """Splice: features in ``S`` from ``x``, all others from ``z``."""
    x = np.asarray(x, dtype=float)
    z = np.asarray(z, dtype=float)
    if x.shape != z.shape or x.ndim != 1:
        raise AttributionError(f"instance shapes differ: {x.shape} vs {z.shape}")
    mask = np.zeros(x.shape[0], dtype=bool)
    mask[list(bits_to_agents(as_bits(S, x.shape[0])))] = True
    return np.where(mask, x, z)


def _predict_checked(model: ModelHandle, X: np.ndarray) -> np.ndarray:
    """Predict a batch; on failure, locate the first failing row."""
    try:
        out = model.predict(X)
    except Exception as exc:
        for r in range(X.shape[0]):
            try:
                model.predict(X[r:r + 1])
            except Exception as row_exc:
                raise ModelError(f"model failed on row {r} ({list(X[r])}): {row_exc}") from row_exc
        raise ModelError(f"model failed on a batch of {X.shape[0]} rows: {exc}") from exc
    out = np.asarray(out, dtype=float)
    if out.shape != (X.shape[0],):
        raise ModelError(f"model returned shape {out.shape} for {X.shape[0]} rows")
    return out


class ValueFunction:
    """The game ``v_x`` induced by a model, background data and instance.

    ``mode="exact"`` averages over every background row. ``mode="sampled"``
    leaves baselines to the sampler: each draw picks one background row ``z``
    and evaluates ``f(tau(x, z, S u T)) - f(tau(x, z, S))``, so the same ``z``
    serves both terms.
    """

    def __init__(self, model, dataset: Dataset, x, mode: str = "exact", rational: bool = False,
                 batch_rows: int = 1 << 16):
        if mode not in ("exact", "sampled"):
            raise AttributionError(f"mode must be 'exact' or 'sampled', got {mode!r}")
        self.model = as_model(model)
        self.dataset = dataset
        self.x = np.asarray(x, dtype=float).reshape(-1)
        if self.x.shape[0] != dataset.n_features:
            raise AttributionError(f"instance has {self.x.shape[0]} features, dataset has {dataset.n_features}")
        self.mode = mode
        self.rational = rational
        self.n = dataset.n_features
        self.parallel_safe = self.model.parallel_safe
        self.batch_rows = batch_rows
        self._memo: dict[int, object] = {}
        self._base = None

    def _mean(self, preds: np.ndarray):
        if self.rational:
            return sum((Fraction(float(p)) for p in preds), Fraction(0)) / len(preds)
        return float(np.mean(preds))

    @property
    def baseline_mean(self):
        if self._base is None:
            self._base = self._mean(_predict_checked(self.model, self.dataset.rows))
        return self._base

    def _masks(self, bits_list: Sequence[int]) -> np.ndarray:
        masks = np.zeros((len(bits_list), self.n), dtype=bool)
        for r, b in enumerate(bits_list):
            masks[r, list(bits_to_agents(b))] = True
        return masks

    def evaluate_many(self, bits_list: Sequence[int]) -> list:
        """``v_x`` on many coalitions, batching the model calls."""
        Z = self.dataset.rows
        if 0 not in self._memo:
            self._memo[0] = Fraction(0) if self.rational else 0.0
        todo = [b for b in dict.fromkeys(bits_list) if b not in self._memo]
        per_batch = max(1, self.batch_rows // len(Z))
        for start in range(0, len(todo), per_batch):
            chunk = todo[start:start + per_batch]
            masks = self._masks(chunk)
            X = np.where(masks[:, None, :], self.x[None, None, :], Z[None, :, :]).reshape(-1, self.n)
            preds = _predict_checked(self.model, X).reshape(len(chunk), len(Z))
            for b, row in zip(chunk, preds):
                self._memo[b] = self._mean(row) - self.baseline_mean
        return [self._memo[b] for b in bits_list]

    def __call__(self, S):
        return self.evaluate_many([as_bits(S, self.n)])[0]

    def to_game(self) -> Game:
        """Materialise ``v_x`` on all ``2^n`` coalitions as a :class:`Game`."""
        if self.n > MAX_EXACT_AGENTS:
            raise GameError(f"{self.n} features is beyond exact enumeration; use mode='sampled'")
        values = self.evaluate_many(list(range(1 << self.n)))
        return Game(self.n, values.__getitem__, exact=self.rational, name="v_x")

    def marginals(self, target: np.ndarray, present: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        m = present.shape[0]
        with_t = present | target[None, :]
        if self.mode == "exact":
            pow2 = [1 << i for i in range(self.n)]
            S = [sum(p for p, on in zip(pow2, row) if on) for row in present]
            ST = [sum(p for p, on in zip(pow2, row) if on) for row in with_t]
            vals = self.evaluate_many(S + ST)
            return np.array([float(a) - float(b) for a, b in zip(vals[m:], vals[:m])])
        Z = self.dataset.rows
        # one uniform per draw keeps the baseline stream independent of chunking
        idx = np.minimum((rng.random(m) * len(Z)).astype(np.int64), len(Z) - 1)
        base = Z[idx]
        X = np.concatenate([np.where(with_t, self.x, base), np.where(present, self.x, base)])
        preds = _predict_checked(self.model, X)
        return preds[:m] - preds[m:]


def build_value_function(model, dataset: Dataset, x, mode: str = "exact", rational: bool = False) -> ValueFunction:
    return ValueFunction(model, dataset, x, mode=mode, rational=rational)


def local_joint_shapley(model, dataset: Dataset, x, k: int, mode: str = "exact",
                        cfg: SamplerConfig | None = None, targets=None, rational: bool = False) -> IndexResult:
    """Joint Shapley values of ``v_x``: exact enumeration or the sampler."""
    vf = ValueFunction(model, dataset, x, mode=mode, rational=rational)
    if mode == "exact":
        return joint_shapley_exact(vf.to_game(), k, targets=targets)
    return sample_joint_shapley(vf, vf.n, k, targets, cfg or SamplerConfig())


@dataclass
class GlobalReport:
    n: int
    k: int
    n_instances: int
    mean_abs: dict[int, object]
    presence_adjusted: dict[int, object] | None = None
    presence_counts: dict[int, int] | None = None

    def coalitions(self) -> list[int]:
        return sorted(self.mean_abs, key=lambda b: (b.bit_count(), bits_to_agents(b)))

    def by_agents(self, which: str = "mean_abs") -> dict[tuple[int, ...], object]:
        vals = getattr(self, which)
        return {bits_to_agents(b): vals[b] for b in self.coalitions()}


def global_mean_abs(locals_: Sequence[IndexResult]) -> GlobalReport:
    """Per-coalition mean of absolute local values."""
    if not locals_:
        raise AttributionError("no local results to aggregate")
    n, k = locals_[0].n, locals_[0].k
    keys = list(locals_[0].values)
    for res in locals_:
        if (res.n, res.k) != (n, k) or set(res.values) != set(keys):
            raise AttributionError("local results disagree on (n, k) or coalitions")
    mean_abs = {}
    for T in keys:
        vals = [abs(res.values[T]) for res in locals_]
        zero = Fraction(0) if all(isinstance(v, Fraction) for v in vals) else 0.0
        mean_abs[T] = sum(vals, zero) / len(vals)
    return GlobalReport(n, k, len(locals_), mean_abs)


def _all_present(x: np.ndarray, T: int) -> bool:
    return all(x[i] == 1.0 for i in bits_to_agents(T))


def presence_adjusted_global(model, dataset: Dataset, k: int, cfg: SamplerConfig | None = None,
                             mode: str = "exact", rational: bool = True,
                             instances: np.ndarray | None = None) -> GlobalReport:
    """Average of local values signed +1 when all of ``T`` is present in ``x``, else -1.

    Binary data only. Instances default to the dataset rows; the report also
    carries the mean-absolute aggregate of the same locals.
    """
    if not dataset.is_binary:
        raise AttributionError("presence is only defined for binary (0/1) features")
    X = dataset.rows if instances is None else np.asarray(instances, dtype=float)
    if not np.isin(X, (0.0, 1.0)).all():
        raise AttributionError("instances must be binary")
    model = as_model(model)
    cache: dict[tuple, IndexResult] = {}
    locals_ = []
    for x in X:
        key = tuple(x)
        if key not in cache:
            cache[key] = local_joint_shapley(model, dataset, x, k, mode=mode, cfg=cfg,
                                             rational=rational and mode == "exact")
        locals_.append(cache[key])
    report = global_mean_abs(locals_)
    adjusted, counts = {}, {}
    for T in report.mean_abs:
        signs = [_all_present(x, T) for x in X]
        counts[T] = sum(signs)
        vals = [res.values[T] if s else -res.values[T] for res, s in zip(locals_, signs)]
        zero = Fraction(0) if all(isinstance(v, Fraction) for v in vals) else 0.0
        adjusted[T] = sum(vals, zero) / len(vals)
    report.presence_adjusted = adjusted
    report.presence_counts = counts
    return report


@dataclass
class DecompositionReport:
    feature: int
    measured: object
    predicted: dict[tuple[float, ...], object]
    predicted_mean: object
    residual: object
    tolerance: float
    accept: bool


def additive_decomposition_check(model, dataset: Dataset, feature: int, k: int | None = None,
                                 tolerance: float = 0.0) -> DecompositionReport:
    """Test whether ``f(x) = g(x_i) + h(rest)`` using the presence-adjusted value of ``{i}``.

    Under that hypothesis, with independent fair binary features, the value
    equals ``(g(1) - g(0)) / 2 * sum_s C(n-1, s) q_s`` and ``g(1) - g(0)``
    is the same for every setting of the other features. The prediction is
    formed for each setting found in the data; the residual is the largest
    gap to the measured value. ``predicted_mean`` uses the gap averaged over
    settings instead, which cannot detect interactions on its own.
    """
    if not dataset.is_binary:
        raise AttributionError("the decomposition check needs binary data")
    n = dataset.n_features
    if n > 12:
        raise AttributionError("the decomposition check enumerates the feature space; n <= 12")
    if not 0 <= feature < n:
        raise AttributionError(f"feature {feature} out of range")
    k = n if k is None else k
    model = as_model(model)
    report = presence_adjusted_global(model, dataset, k, rational=True)
    measured = report.presence_adjusted[1 << feature]
    q = compute_q(n, k)
    weight = sum((Fraction(binom(n - 1, s)) * q[s] for s in range(n)), Fraction(0))

    rest = np.unique(np.delete(dataset.rows, feature, axis=1), axis=0)
    hi = np.insert(rest, feature, 1.0, axis=1)
    lo = np.insert(rest, feature, 0.0, axis=1)
    gaps = _predict_checked(model, hi) - _predict_checked(model, lo)
    predicted = {}
    for r, gap in zip(rest, gaps):
        predicted[tuple(r)] = Fraction(float(gap)) / 2 * weight
    mean_gap = sum((Fraction(float(g)) for g in gaps), Fraction(0)) / len(gaps)
    residual = max(abs(p - measured) for p in predicted.values())
    return DecompositionReport(feature, measured, predicted, mean_gap / 2 * weight, residual,
                               tolerance, residual <= tolerance)
