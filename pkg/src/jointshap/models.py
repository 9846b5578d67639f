"""Prediction functions: built-in analytic models, lookup tables and external processes.

Every handle exposes ``predict(X)`` on a 2-D float array and returns one
prediction per row.

External model protocol (newline-delimited JSON over stdin/stdout, UTF-8)::

    request : {"id": <u64>, "instance": [<float>, ...]}
    response: {"id": <u64>, "prediction": <float>}

Responses may arrive in any order and are matched by id. Right after the
process starts the handle sends one handshake request (id 0, an all-zero
instance) and waits for its response.
"""
from __future__ import annotations

import csv
import itertools
import json
import math
import queue
import shlex
import subprocess
import sys
import threading
from collections import deque
from pathlib import Path
from typing import Callable, Sequence

import numpy as np


class ModelError(RuntimeError):
    """A model could not be built or failed to predict."""


class ProtocolError(ModelError):
    """The external model broke the line protocol."""


class ModelHandle:
    kind = "builtin"
    parallel_safe = True

    def __init__(self, n_features: int | None = None, name: str = "model"):
        self.n_features = n_features
        self.name = name

    def predict(self, X) -> np.ndarray:
        X = self._check(X)
        return self._predict(X)

    def __call__(self, X) -> np.ndarray:
        return self.predict(X)

    def _predict(self, X: np.ndarray) -> np.ndarray:
        raise NotImplementedError

    def _check(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.ndim != 2:
            raise ModelError(f"expected a 2-D batch of instances, got shape {X.shape}")
        if self.n_features is not None and X.shape[1] != self.n_features:
            raise ModelError(f"{self.name} expects {self.n_features} features, got {X.shape[1]}")
        return X

    def close(self):
        pass

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()

    def __repr__(self):
        return f"<{type(self).__name__} {self.name}>"


class FunctionModel(ModelHandle):
    """Wraps a vectorised ``f(X) -> predictions`` callable."""

    def __init__(self, fn: Callable[[np.ndarray], np.ndarray], n_features: int | None = None,
                 name: str = "function", parallel_safe: bool = True):
        super().__init__(n_features, name)
        self._fn = fn
        self.parallel_safe = parallel_safe

    def _predict(self, X):
        out = np.asarray(self._fn(X), dtype=float).reshape(-1)
        if out.shape[0] != X.shape[0]:
            raise ModelError(f"{self.name} returned {out.shape[0]} predictions for {X.shape[0]} rows")
        return out


def _need_features(idx: Sequence[int]) -> int:
    return max(idx) + 1 if idx else 0


class BuiltinModel(FunctionModel):
    kind = "builtin"

    def __init__(self, expr: str, fn, min_features: int):
        super().__init__(fn, None, name=expr)
        self.min_features = min_features

    def _check(self, X):
        X = super()._check(X)
        if X.shape[1] < self.min_features:
            raise ModelError(f"{self.name} reads feature {self.min_features - 1}, got {X.shape[1]} features")
        return X


def builtin_model(expr: str, *params) -> BuiltinModel:
    """Analytic model by name.

    ``select(i)``, ``sum(i, j)``, ``diff(i, j)``, ``product(i, j)``,
    ``constant(c)`` and ``linear(w_0, ..., w_m)``.
    """
    if expr == "select":
        (i,) = _ints(params, 1, expr)
        return BuiltinModel(f"select({i})", lambda X: X[:, i], i + 1)
    if expr in ("sum", "diff", "product"):
        i, j = _ints(params, 2, expr)
        op = {"sum": np.add, "diff": np.subtract, "product": np.multiply}[expr]
        return BuiltinModel(f"{expr}({i},{j})", lambda X: op(X[:, i], X[:, j]), _need_features([i, j]))
    if expr == "constant":
        if len(params) != 1:
            raise ModelError("constant takes one value")
        c = float(params[0])
        return BuiltinModel(f"constant({c})", lambda X: np.full(X.shape[0], c), 0)
    if expr == "linear":
        w = np.asarray(params[0] if len(params) == 1 and np.ndim(params[0]) == 1 else params, dtype=float)
        if w.ndim != 1 or w.size == 0:
            raise ModelError("linear needs at least one weight")
        model = BuiltinModel(f"linear[{w.size}]", lambda X: X[:, : w.size] @ w, w.size)
        model.weights = w
        return model
    raise ModelError(f"unknown built-in model {expr!r}")


def _ints(params, count, expr) -> list[int]:
    if len(params) != count:
        raise ModelError(f"{expr} takes {count} feature index(es), got {len(params)}")
    try:
        out = [int(p) for p in params]
    except (TypeError, ValueError) as exc:
        raise ModelError(f"{expr}: feature indices must be integers") from exc
    if any(i < 0 for i in out):
        raise ModelError(f"{expr}: negative feature index")
    return out


class TableModel(ModelHandle):
    """Exact lookup of predictions by full instance row."""

    kind = "table"

    def __init__(self, lookup: dict[tuple[float, ...], float], n_features: int, name: str = "table"):
        super().__init__(n_features, name)
        self._lookup = lookup

    def _predict(self, X):
        out = np.empty(X.shape[0])
        for r, row in enumerate(X):
            key = tuple(float(v) for v in row)
            try:
                out[r] = self._lookup[key]
            except KeyError:
                raise ModelError(f"{self.name}: instance {list(key)} is not in the table") from None
        return out


def table_model(path, prediction_column: str = "prediction") -> TableModel:
    """Load a CSV whose header names the features and a prediction column.

    The prediction column is ``prediction`` if present, else the last column.
    Repeated rows must agree on the prediction.
    """
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise ModelError(f"{path}: empty prediction table") from None
        pcol = header.index(prediction_column) if prediction_column in header else len(header) - 1
        lookup: dict[tuple[float, ...], float] = {}
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise ModelError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
            try:
                vals = [float(x) for x in row]
            except ValueError as exc:
                raise ModelError(f"{path}:{lineno}: {exc}") from exc
            pred = vals.pop(pcol)
            key = tuple(vals)
            if key in lookup and lookup[key] != pred:
                raise ModelError(f"{path}:{lineno}: conflicting predictions for {list(key)}")
            lookup[key] = pred
    return TableModel(lookup, len(header) - 1, name=path.name)


_EOF = object()


class ExternalModel(ModelHandle):
    """A model living in a child process that speaks the JSON-lines protocol.

    Calls are serialised through a lock. Within one ``predict`` call all
    requests are written before any response is read (pipelined batching).
    """

    kind = "external"
    parallel_safe = False

    def __init__(self, command: Sequence[str] | str, n_features: int | None = None,
                 timeout: float = 30.0, name: str | None = None):
        if isinstance(command, str):
            command = shlex.split(command)
        command = list(command)
        if not command:
            raise ModelError("empty model command")
        super().__init__(n_features, name or " ".join(command))
        self.timeout = timeout
        self._lock = threading.Lock()
        self._ids = itertools.count(1)
        self._lines: queue.Queue = queue.Queue()
        self._stderr: deque[str] = deque(maxlen=20)
        self._last_line = ""
        try:
            self._proc = subprocess.Popen(
                command, stdin=subprocess.PIPE, stdout=subprocess.PIPE, stderr=subprocess.PIPE,
                text=True, encoding="utf-8", bufsize=1,
            )
        except OSError as exc:
            raise ModelError(f"cannot start model process {command!r}: {exc}") from exc
        threading.Thread(target=self._pump, args=(self._proc.stdout, self._lines), daemon=True).start()
        threading.Thread(target=self._drain_stderr, daemon=True).start()
        self._ready = False
        if n_features is not None:
            self._handshake(n_features)

    def _pump(self, stream, sink):
        for line in stream:
            sink.put(line)
        sink.put(_EOF)

    def _drain_stderr(self):
        for line in self._proc.stderr:
            self._stderr.append(line.rstrip("\n"))

    def _context(self) -> str:
        parts = []
        if self._last_line:
            parts.append(f"last line: {self._last_line!r}")
        if self._stderr:
            parts.append("stderr tail: " + " | ".join(self._stderr))
        return "; ".join(parts) or "no output"

    def _handshake(self, n_features: int):
        with self._lock:
            self._exchange({0: [0.0] * n_features})
        self._ready = True

    def _send(self, rid: int, instance) -> None:
        msg = json.dumps({"id": rid, "instance": [float(x) for x in instance]})
        try:
            self._proc.stdin.write(msg + "\n")
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise ModelError(f"model process {self.name!r} is not accepting input ({self._context()})") from exc

    def _exchange(self, requests: dict[int, Sequence[float]]) -> dict[int, float]:
        for rid, inst in requests.items():
            self._send(rid, inst)
        try:
            self._proc.stdin.flush()
        except (BrokenPipeError, OSError, ValueError) as exc:
            raise ModelError(f"model process {self.name!r} died ({self._context()})") from exc
        pending = set(requests)
        out: dict[int, float] = {}
        while pending:
            try:
                line = self._lines.get(timeout=self.timeout)
            except queue.Empty:
                raise ModelError(f"model {self.name!r} timed out after {self.timeout}s ({self._context()})") from None
            if line is _EOF:
                self._lines.put(_EOF)
                code = self._proc.poll()
                raise ModelError(f"model process {self.name!r} exited (code {code}) ({self._context()})")
            self._last_line = line.rstrip("\n")
            if not self._last_line.strip():
                continue
            try:
                msg = json.loads(line)
                rid = msg["id"]
                pred = float(msg["prediction"])
            except (ValueError, KeyError, TypeError) as exc:
                raise ProtocolError(f"malformed response from {self.name!r}: {self._last_line!r}") from exc
            if rid not in pending:
                raise ProtocolError(f"response with unknown id {rid!r} from {self.name!r}")
            pending.discard(rid)
            out[rid] = pred
        return out

    def _predict(self, X):
        if not self._ready:
            self._handshake(X.shape[1])
            if self.n_features is None:
                self.n_features = X.shape[1]
        with self._lock:
            ids = [next(self._ids) for _ in range(X.shape[0])]
            answers = self._exchange(dict(zip(ids, X)))
        return np.array([answers[i] for i in ids])

    def close(self):
        proc = getattr(self, "_proc", None)
        if proc is None or proc.poll() is not None:
            return
        try:
            proc.stdin.close()
            proc.wait(timeout=5)
        except (OSError, subprocess.TimeoutExpired):
            proc.kill()
            proc.wait()

    def __del__(self):
        try:
            self.close()
        except Exception:
            pass


def external_model(command, n_features: int | None = None, timeout: float = 30.0) -> ExternalModel:
    return ExternalModel(command, n_features=n_features, timeout=timeout)


def serve(predict: Callable[[np.ndarray], float], stdin=None, stdout=None) -> None:
    """Run a model process: answer protocol requests until stdin closes.

    ``predict`` receives one instance as a 1-D array.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    for line in stdin:
        if not line.strip():
            continue
        msg = json.loads(line)
        pred = float(predict(np.asarray(msg["instance"], dtype=float)))
        if not math.isfinite(pred):
            raise ValueError(f"non-finite prediction for request {msg['id']}")
        stdout.write(json.dumps({"id": msg["id"], "prediction": pred}) + "\n")
        stdout.flush()


def as_model(obj, n_features: int | None = None) -> ModelHandle:
    """Coerce a handle, an object with ``predict`` or a vectorised callable."""
    if isinstance(obj, ModelHandle):
        return obj
    if hasattr(obj, "predict"):
        return FunctionModel(obj.predict, n_features, name=type(obj).__name__)
    if callable(obj):
        return FunctionModel(obj, n_features, name=getattr(obj, "__name__", "function"))
    raise ModelError(f"cannot use {type(obj).__name__} as a model")


def parse_model_spec(spec: str, timeout: float = 30.0, n_features: int | None = None) -> ModelHandle:
    """``builtin:sum:0,1``, ``table:preds.csv`` or ``exec:python model.py --flag``."""
    kind, _, rest = spec.partition(":")
    if kind == "builtin":
        name, _, args = rest.partition(":")
        params = [a for a in args.split(",") if a.strip()] if args else []
        if name == "linear" and len(params) == 1 and params[0].startswith("@"):
            params = [np.loadtxt(params[0][1:], delimiter=",", ndmin=1)]
        return builtin_model(name, *params)
    if kind == "table":
        return table_model(rest)
    if kind == "exec":
        return ExternalModel(rest, n_features=n_features, timeout=timeout)
    raise ModelError(f"bad model spec {spec!r}; expected builtin:..., table:... or exec:...")
