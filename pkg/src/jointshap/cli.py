"""Command-line interface.

Exit codes: 0 success, 1 computation error, 2 usage error. Every command that
writes ``--out FILE`` also writes ``FILE.manifest.json`` describing the run.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import os
import platform
import sys
import time
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from . import __version__
from .attribution import (
    AttributionError,
    Dataset,
    ValueFunction,
    binary_feature_space,
    global_mean_abs,
    local_joint_shapley,
    presence_adjusted_global,
)
from .coefficients import CoefficientError, compute_q
from .game import Game, GameError, agents_to_bits, builtin_game, coalition_key, game_from_file
from .indices import (
    check_axioms,
    compute_index,
    generalised_shapley,
    joint_shapley_exact,
    shapley,
    shapley_interaction,
    shapley_taylor,
    added_value,
)
from .models import ModelError, parse_model_spec
from .sampler import SamplerConfig, SamplerError, convergence_trace, sample_joint_shapley

SCHEMA = 1


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    config: dict
    seed: int | None
    versions: dict = field(default_factory=dict)
    timing: dict = field(default_factory=dict)


def fmt(x, digits: int = 12, rational: bool = True) -> str:
    if isinstance(x, Fraction) and rational:
        return str(x)
    return f"{float(x):.{digits}g}"


def parse_game(spec: str) -> Game:
    """``builtin:NAME:N[:key=value...]`` or a path to a JSON game file."""
    if spec.startswith("builtin:"):
        parts = spec.split(":")
        if len(parts) < 3:
            raise UsageError(f"bad game spec {spec!r}; expected builtin:NAME:N[:key=value]")
        try:
            n = int(parts[2])
        except ValueError:
            raise UsageError(f"bad agent count in {spec!r}") from None
        params = {}
        for item in parts[3:]:
            key, sep, val = item.partition("=")
            if not sep:
                raise UsageError(f"bad parameter {item!r} in {spec!r}")
            params[key] = val
        return builtin_game(parts[1], n, **params)
    return game_from_file(spec)


def parse_targets(text: str, n: int) -> list[int]:
    out = []
    for chunk in text.split(";"):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            out.append(agents_to_bits((int(a) for a in chunk.split(",")), n))
        except ValueError as exc:
            raise UsageError(f"bad target {chunk!r}: {exc}") from None
    if not out:
        raise UsageError("no targets given")
    return out


def _check_k(k: int, n: int):
    if not 1 <= k <= n:
        raise UsageError(f"--k {k} outside 1..{n}")


def _emit(args, text: str):
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text)


def _json(doc) -> str:
    return json.dumps(doc, indent=2) + "\n"


def _csv(rows) -> str:
    buf = io.StringIO()
    csv.writer(buf, lineterminator="\n").writerows(rows)
    return buf.getvalue()


# ------------------------------------------------------------------ commands


def cmd_coeffs(args) -> int:
    if args.n < 1:
        raise UsageError("--n must be positive")
    _check_k(args.k, args.n)
    table = compute_q(args.n, args.k)
    if args.format == "json":
        _emit(args, _json({"schema": SCHEMA, "n": args.n, "k": args.k,
                           "q": [str(x) for x in table.q],
                           "q_float": [fmt(x, args.digits, False) for x in table.q]}))
    elif args.format == "csv":
        rows = [["s", "q", "q_float"]] + [[s, str(x), fmt(x, args.digits, False)] for s, x in enumerate(table.q)]
        _emit(args, _csv(rows))
    else:
        _emit(args, ",".join(str(x) for x in table.q) + "\n")
    return 0


def _result_doc(res, rational: bool, digits: int, names=None) -> dict:
    values = {}
    for T, v in res.sorted_items():
        key = ",".join(names[i] for i in _agents(T)) if names else coalition_key(T)
        values[key] = fmt(v, digits, rational) if rational and isinstance(v, Fraction) else float(fmt(v, digits, False))
    meta = {k: v for k, v in res.meta.items() if k != "sem"}
    if "sem" in res.meta:
        meta["sem"] = {coalition_key(T): float(fmt(s, digits, False)) for T, s in res.meta["sem"].items()}
    return {"schema": SCHEMA, "index": res.index_kind, "n": res.n, "k": res.k, "mode": res.mode,
            "values": values, "meta": meta}


def _agents(T):
    from .game import bits_to_agents

    return bits_to_agents(T)


def _result_csv(res, rational: bool, digits: int) -> str:
    rows = [["coalition", "value"]]
    for T, v in res.sorted_items():
        rows.append([coalition_key(T), fmt(v, digits, rational)])
    return _csv(rows)


def cmd_explain_game(args) -> int:
    game = parse_game(args.game)
    k = args.k or game.k_hint or game.n
    _check_k(k, game.n)
    res = compute_index(game, args.index, k)
    if args.format == "csv":
        _emit(args, _result_csv(res, args.exact_rationals, args.digits))
    else:
        _emit(args, _json(_result_doc(res, args.exact_rationals, args.digits)))
    return 0


def compare_table(game: Game, ks) -> list[list[str]]:
    """All six indices side by side; blank where an index does not cover a coalition."""
    n = game.n
    cols = [("shapley", shapley(game)), ("si", shapley_interaction(game)),
            ("gs", generalised_shapley(game)), ("av", added_value(game))]
    cols += [(f"st_k{k}", shapley_taylor(game, k)) for k in ks]
    cols += [(f"joint_k{k}", joint_shapley_exact(game, k)) for k in ks]
    rows = [["coalition", "v"] + [name for name, _ in cols]]
    order = sorted(range(1, 1 << n), key=lambda b: (b.bit_count(), _agents(b)))
    for T in order:
        row = [coalition_key(T), fmt(game(T))]
        for _, res in cols:
            row.append(fmt(res.values[T]) if T in res.values else "")
        rows.append(row)
    return rows


def cmd_compare(args) -> int:
    game = parse_game(args.game)
    ks = args.k or list(range(2, game.n + 1))
    for k in ks:
        _check_k(k, game.n)
    rows = compare_table(game, ks)
    if args.format == "json":
        header = rows[0]
        doc = {"schema": SCHEMA, "n": game.n, "k": ks,
               "rows": [dict(zip(header, r)) for r in rows[1:]]}
        _emit(args, _json(doc))
    else:
        _emit(args, _csv(rows))
    return 0


def cmd_verify_axioms(args) -> int:
    game = parse_game(args.game)
    k = args.k or game.k_hint or game.n
    _check_k(k, game.n)
    res = joint_shapley_exact(game, k)
    report = check_axioms(res, game, n_permutations=args.permutations, seed=args.seed)
    lines = [f"game {game.name} n={game.n} k={k}"]
    lines += report.lines()
    for T, v in res.sorted_items():
        lines.append(f"phi_J{{{coalition_key(T)}}} = {fmt(v, args.digits)}")
    _emit(args, "\n".join(lines) + "\n")
    return 0 if report.ok else 1


def _load_model_source(args):
    """Build (value source, n, dataset-or-None) for sample/trace."""
    if args.game:
        game = parse_game(args.game)
        return game, game.n, None
    if not (args.model and args.data):
        raise UsageError("give --game, or --model with --data")
    data = Dataset.from_csv(args.data)
    if args.x is None or not 0 <= args.x < len(data):
        raise UsageError(f"--x must be a row index in 0..{len(data) - 1}")
    model = parse_model_spec(args.model, timeout=args.timeout, n_features=data.n_features)
    vf = ValueFunction(model, data, data.rows[args.x], mode="sampled")
    return vf, data.n_features, data


def cmd_sample(args) -> int:
    source, n, data = _load_model_source(args)
    _check_k(args.k, n)
    targets = parse_targets(args.targets, n) if args.targets else None
    cfg = SamplerConfig(iterations=args.iters, seed=args.seed, batch=args.batch, threads=args.threads)
    res = sample_joint_shapley(source, n, args.k, targets, cfg)
    names = data.feature_names if data is not None else None
    if args.format == "csv":
        rows = [["coalition", "estimate", "sem"]]
        for T, v in res.sorted_items():
            rows.append([coalition_key(T), fmt(v, args.digits, False), fmt(res.meta["sem"][T], args.digits, False)])
        _emit(args, _csv(rows))
    else:
        _emit(args, _json(_result_doc(res, False, args.digits, names)))
    if args.trace:
        trace = convergence_trace(source, n, args.k, targets, cfg, checkpoint_every=args.checkpoint or args.batch)
        _write_trace(trace, args.trace, args.digits)
    return 0


def _write_trace(trace, path, digits):
    rows = [["iteration", "target", "estimate", "l2"]]
    for it, T, val, dist in trace.rows():
        rows.append([it, coalition_key(T), fmt(val, digits, False), "" if dist != dist else fmt(dist, digits, False)])
    Path(path).write_text(_csv(rows))


def cmd_trace(args) -> int:
    source, n, _ = _load_model_source(args)
    _check_k(args.k, n)
    targets = parse_targets(args.targets, n) if args.targets else None
    cfg = SamplerConfig(iterations=args.iters, seed=args.seed, batch=args.batch, threads=args.threads)
    reference = None
    if args.reference:
        if not isinstance(source, Game):
            raise UsageError("--reference needs --game")
        reference = joint_shapley_exact(source, args.k, targets)
    trace = convergence_trace(source, n, args.k, targets, cfg, reference=reference,
                              checkpoint_every=args.checkpoint or args.batch)
    rows = [["iteration", "target", "estimate", "l2"]]
    for it, T, val, dist in trace.rows():
        rows.append([it, coalition_key(T), fmt(val, args.digits, False),
                     "" if dist != dist else fmt(dist, args.digits, False)])
    _emit(args, _csv(rows))
    return 0


def cmd_explain_model(args) -> int:
    data = Dataset.from_csv(args.data)
    _check_k(args.k, data.n_features)
    names = data.feature_names
    background = binary_feature_space(data.n_features, names) if args.exact_enumerate_binary else data
    model = parse_model_spec(args.model, timeout=args.timeout, n_features=data.n_features)
    cfg = SamplerConfig(iterations=args.iters, seed=args.seed, batch=args.batch, threads=args.threads)
    rational = args.mode == "exact" and background.is_binary
    try:
        if args.x is not None:
            if not 0 <= args.x < len(data):
                raise UsageError(f"--x must be a row index in 0..{len(data) - 1}")
            res = local_joint_shapley(model, background, data.rows[args.x], args.k, mode=args.mode,
                                      cfg=cfg, rational=rational)
            doc = _result_doc(res, rational, args.digits, names)
            doc["instance"] = args.x
            if args.format == "csv":
                rows = [["coalition", "value"]] + [[k, v] for k, v in doc["values"].items()]
                _emit(args, _csv(rows))
            else:
                _emit(args, _json(doc))
            return 0
        instances = background.rows if args.exact_enumerate_binary else data.rows
        if args.global_ == "presence":
            report = presence_adjusted_global(model, background, args.k, cfg=cfg, mode=args.mode,
                                              rational=rational, instances=instances)
        else:
            locals_ = [local_joint_shapley(model, background, x, args.k, mode=args.mode, cfg=cfg,
                                           rational=rational) for x in instances]
            report = global_mean_abs(locals_)
        out = {}
        for T in report.coalitions():
            key = ",".join(names[i] for i in _agents(T))
            entry = {"mean_abs": fmt(report.mean_abs[T], args.digits, rational)}
            if report.presence_adjusted is not None:
                entry["presence_adjusted"] = fmt(report.presence_adjusted[T], args.digits, rational)
                entry["present"] = report.presence_counts[T]
            out[key] = entry
        if args.format == "csv":
            cols = ["mean_abs"] + (["presence_adjusted", "present"] if report.presence_adjusted is not None else [])
            rows = [["coalition"] + cols] + [[k] + [e[c] for c in cols] for k, e in out.items()]
            _emit(args, _csv(rows))
        else:
            _emit(args, _json({"schema": SCHEMA, "n": report.n, "k": report.k,
                               "instances": report.n_instances, "global": args.global_, "values": out}))
        return 0
    finally:
        model.close()


# -------------------------------------------------------------------- parser


def _common(p, seed=False, sampling=False):
    p.add_argument("--out", help="write output here instead of stdout")
    p.add_argument("--manifest", help="write the run manifest here (default: OUT.manifest.json)")
    p.add_argument("--digits", type=int, default=12, help="significant digits for floats")
    p.add_argument("--threads", type=int, default=os.cpu_count() or 1)
    if seed or sampling:
        p.add_argument("--seed", type=int, default=0)
    if sampling:
        p.add_argument("--iters", type=int, default=10_000)
        p.add_argument("--batch", type=int, default=1024, help="draws per chunk / checkpoint")


def _source_args(p):
    p.add_argument("--game", help="game file or builtin:NAME:N[:key=value]")
    p.add_argument("--model", help="builtin:..., table:FILE or exec:COMMAND")
    p.add_argument("--data", help="CSV with a header row of feature names")
    p.add_argument("--x", type=int, help="row of --data to explain")
    p.add_argument("--timeout", type=float, default=30.0, help="external model timeout (s)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="jointshap", description="Joint Shapley values")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("coeffs", help="arrival weights q_0..q_{n-1}")
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    g = p.add_mutually_exclusive_group()
    g.add_argument("--json", dest="format", action="store_const", const="json")
    g.add_argument("--csv", dest="format", action="store_const", const="csv")
    _common(p)
    p.set_defaults(func=cmd_coeffs, format="text")

    p = sub.add_parser("explain-game", help="one index over a game")
    p.add_argument("--game", required=True)
    p.add_argument("--index", default="joint", choices=["joint", "st", "si", "gs", "av", "shapley"])
    p.add_argument("--k", type=int)
    p.add_argument("--exact-rationals", action="store_true", help="print p/q instead of floats")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    _common(p)
    p.set_defaults(func=cmd_explain_game)

    p = sub.add_parser("compare", help="all six indices side by side")
    p.add_argument("--game", required=True)
    p.add_argument("--k", type=int, nargs="*", help="orders for the joint and Shapley-Taylor columns")
    p.add_argument("--format", choices=["csv", "json"], default="csv")
    _common(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("verify-axioms", help="check joint Shapley values against the axioms")
    p.add_argument("--game", required=True)
    p.add_argument("--k", type=int)
    p.add_argument("--permutations", type=int, default=3)
    _common(p, seed=True)
    p.set_defaults(func=cmd_verify_axioms)

    p = sub.add_parser("sample", help="Monte-Carlo joint Shapley values")
    _source_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--targets", help='coalitions such as "0;1;0,1"')
    p.add_argument("--trace", help="also write a convergence trace CSV here")
    p.add_argument("--checkpoint", type=int, help="iterations between trace checkpoints")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    _common(p, sampling=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("trace", help="convergence trace of the sampler")
    _source_args(p)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--targets")
    p.add_argument("--checkpoint", type=int)
    p.add_argument("--reference", action="store_true", help="distance to exact values (games only)")
    _common(p, sampling=True)
    p.set_defaults(func=cmd_trace)

    p = sub.add_parser("explain-model", help="local or global joint Shapley values of a model")
    p.add_argument("--data", required=True)
    p.add_argument("--model", required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--x", type=int, help="row of --data to explain")
    which.add_argument("--all", action="store_true", help="aggregate over all rows")
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--global", dest="global_", choices=["mean-abs", "presence"], default="mean-abs")
    p.add_argument("--exact-enumerate-binary", action="store_true",
                   help="use every point of {0,1}^n as background and instances")
    p.add_argument("--mode", choices=["exact", "sampled"], default="exact")
    p.add_argument("--format", choices=["json", "csv"], default="json")
    p.add_argument("--timeout", type=float, default=30.0)
    _common(p, sampling=True)
    p.set_defaults(func=cmd_explain_model)
    return parser


def _write_manifest(args, argv, started, elapsed):
    path = args.manifest or (f"{args.out}.manifest.json" if args.out else None)
    if not path:
        return
    config = {k: v for k, v in vars(args).items() if k != "func"}
    manifest = RunManifest(
        command=args.command,
        config=config,
        seed=getattr(args, "seed", None),
        versions={"jointshap": __version__, "python": platform.python_version(), "numpy": np.__version__},
        timing={"started": started, "elapsed_s": round(elapsed, 6)},
    )
    manifest.config["argv"] = list(argv)
    Path(path).write_text(json.dumps(asdict(manifest), indent=2, default=str) + "\n")


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    args = parser.parse_args(argv)
    started = time.strftime("%Y-%m-%dT%H:%M:%S%z")
    t0 = time.perf_counter()
    try:
        code = args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog}: error: {exc}", file=sys.stderr)
        return 2
    except (GameError, CoefficientError, SamplerError, AttributionError, ModelError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    _write_manifest(args, argv, started, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
