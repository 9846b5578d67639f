"""scikit-learn style front end for local and global joint Shapley values."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from .attribution import Dataset, global_mean_abs, local_joint_shapley, presence_adjusted_global
from .coefficients import compute_q
from .game import as_bits, coalition_key, coalitions_up_to
from .indices import IndexResult
from .models import as_model
from .sampler import SamplerConfig


class JointShapleyExplainer(TransformerMixin, BaseEstimator):
    """Explain a fitted model's predictions with joint Shapley values.

    ``fit`` takes the background data used as baselines. ``transform`` maps
    each instance to its local joint Shapley values, one column per coalition
    in ``coalitions_`` (all non-empty coalitions of size at most ``k`` unless
    ``targets`` is given).

    Parameters
    ----------
    model : object with ``predict``, a vectorised callable, or a ModelHandle
    k : int, order of explanation
    method : ``"exact"`` (enumerate all coalitions and background rows) or
        ``"sampled"`` (Monte-Carlo; scales to many features)
    n_iter : int, samples per coalition when ``method="sampled"``
    random_state : int seed for the sampler
    targets : optional list of feature-index tuples to explain
    rational : bool, exact rational arithmetic in ``method="exact"``
    """

    def __init__(self, model=None, k=2, method="exact", n_iter=1000, random_state=0, targets=None,
                 rational=False):
        self.model = model
        self.k = k
        self.method = method
        self.n_iter = n_iter
        self.random_state = random_state
        self.targets = targets
        self.rational = rational

    def fit(self, X, y=None):
        if self.model is None:
            raise ValueError("JointShapleyExplainer needs a model")
        if self.method not in ("exact", "sampled"):
            raise ValueError(f"method must be 'exact' or 'sampled', got {self.method!r}")
        names = list(X.columns) if hasattr(X, "columns") else None
        X = check_array(X, dtype=float)
        n = X.shape[1]
        if not 1 <= self.k <= n:
            raise ValueError(f"k={self.k} outside 1..{n}")
        self.n_features_in_ = n
        if names is not None:
            self.feature_names_in_ = np.asarray(names, dtype=object)
        self.background_ = Dataset(X, [str(c) for c in names] if names else [])
        self.model_ = as_model(self.model)
        self.q_ = compute_q(n, self.k)
        if self.targets is None:
            self.coalitions_ = coalitions_up_to(n, self.k)
        else:
            self.coalitions_ = [as_bits(T, n) for T in self.targets]
        return self

    def _cfg(self) -> SamplerConfig:
        return SamplerConfig(iterations=self.n_iter, seed=self.random_state)

    def _instances(self, X) -> np.ndarray:
        check_is_fitted(self, "background_")
        X = check_array(X, dtype=float)
        if X.shape[1] != self.n_features_in_:
            raise ValueError(f"X has {X.shape[1]} features, expected {self.n_features_in_}")
        return X

    def explain(self, x) -> IndexResult:
        """Local joint Shapley values of one instance."""
        x = self._instances(np.asarray(x, dtype=float).reshape(1, -1))[0]
        return local_joint_shapley(self.model_, self.background_, x, self.k, mode=self.method,
                                   cfg=self._cfg(), targets=self.coalitions_,
                                   rational=self.rational and self.method == "exact")

    def explain_all(self, X) -> list[IndexResult]:
        return [self.explain(x) for x in self._instances(X)]

    def transform(self, X) -> np.ndarray:
        locals_ = self.explain_all(X)
        return np.array([[float(res.values[T]) for T in self.coalitions_] for res in locals_])

    def global_importance(self, X=None, how: str = "mean_abs") -> dict[str, object]:
        """Global values per coalition: ``"mean_abs"`` or ``"presence"`` (binary data)."""
        X = self.background_.rows if X is None else self._instances(X)
        if how == "mean_abs":
            report = global_mean_abs(self.explain_all(X))
            vals = report.mean_abs
        elif how == "presence":
            report = presence_adjusted_global(self.model_, self.background_, self.k, cfg=self._cfg(),
                                              mode=self.method, rational=self.rational, instances=X)
            vals = report.presence_adjusted
        else:
            raise ValueError(f"unknown aggregation {how!r}")
        return {self._name(T): vals[T] for T in self.coalitions_ if T in vals}

    def _name(self, T: int) -> str:
        return "|".join(self.background_.coalition_names(T))

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "background_")
        return np.array([self._name(T) for T in self.coalitions_], dtype=object)

    def coalition_keys(self) -> list[str]:
        check_is_fitted(self, "background_")
        return [coalition_key(T) for T in self.coalitions_]
