"""Command-line interface.

Exit codes: 0 success, 1 validation failure, 2 parse error, 3 infeasible,
4 solver failure, 5 usage error.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import math
import os
import sys
import time

import numpy as np

from . import __version__
from .benchmarks import BUILTINS, builtin, cell_id, fourroom10_spec
from .evaluation import DivergentEntropy, DivergentReward, instantiate_occupancy
from .model import (
    SINK, ValidationError, reduce_finite_horizon, split_time_state, validate_pomdp,
)
from .pmc import build_pmc, chain_memory_structure, check_well_defined
from .pomdp_io import ParseError, parse_document, document_to_pomdp, serialize_pomdp
from .synthesis import (
    AllRestartsFailed, SolverFailure, SynthesisConfig, controller_from_dict, format_gamma,
    gamma_sweep, horizon_sweep, max_entropy_mdp, max_entropy_mdp_constrained, memory_sweep,
    result_to_dict, synth_feasibility, synth_with_restarts,
)

EXIT_OK, EXIT_VALIDATION, EXIT_PARSE, EXIT_INFEASIBLE, EXIT_SOLVER, EXIT_USAGE = range(6)
SEED_ENV = "ENTROMAX_SEED"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _default_seed() -> int:
    raw = os.environ.get(SEED_ENV)
    if raw is None:
        return 0
    try:
        return int(raw)
    except ValueError:
        raise UsageError(f"{SEED_ENV} must be an integer, got {raw!r}") from None


def _load(spec: str):
    """Builtin name or file path -> (model, canonical text)."""
    if spec in BUILTINS:
        model = builtin(spec)
        return model, serialize_pomdp(model)
    try:
        with open(spec, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise UsageError(f"cannot read {spec!r}: {exc.strerror}") from None
    model = document_to_pomdp(parse_document(text))
    report = validate_pomdp(model)
    if not report.ok:
        raise ValidationError(report)
    return model, text


def _sha(text: str) -> str:
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _manifest(command: str, config: dict, model_text: str, seed, outputs) -> tuple[dict, str]:
    """Manifest dict and its hash; the hash covers everything but wall-clock."""
    core = {
        "command": command,
        "config": config,
        "input_sha256": _sha(model_text),
        "tool_version": __version__,
        "seed": seed,
    }
    digest = _sha(json.dumps(core, sort_keys=True, default=str))
    full = dict(core, manifest_sha256=digest,
                wall_clock=time.strftime("%Y-%m-%dT%H:%M:%S"), outputs=list(outputs))
    return full, digest


def _write(path, text: str) -> None:
    if path in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)


def _write_manifest(path, manifest: dict) -> None:
    if path not in (None, "-"):
        with open(path + ".manifest.json", "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True, default=str)
            fh.write("\n")


def _resolve_discount(args):
    """(model transform, beta) from --beta / --horizon."""
    if args.horizon is not None:
        if args.beta is not None and args.beta != 1.0:
            raise UsageError("--horizon implies beta = 1; do not combine it with --beta < 1")
        if args.horizon < 1:
            raise UsageError("--horizon must be positive")
        return (lambda m: reduce_finite_horizon(m, args.horizon)), 1.0
    beta = 0.9 if args.beta is None else args.beta
    if not 0.0 < beta <= 1.0:
        raise UsageError("--beta must lie in (0, 1]")
    return (lambda m: m), beta


def _config(args, beta, gamma) -> SynthesisConfig:
    try:
        return SynthesisConfig(beta=beta, gamma_threshold=gamma, restarts=args.restarts,
                               seed=args.seed, max_iterations=args.max_iterations,
                               epsilon=args.epsilon, reward_convention=args.reward_convention)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def _jobs(args) -> int:
    return args.jobs if args.jobs is not None else (os.cpu_count() or 1)


def cmd_validate(args) -> int:
    try:
        model, _ = _load(args.model)
    except ValidationError as exc:
        print(exc.report)
        return EXIT_VALIDATION
    print(validate_pomdp(model))
    return EXIT_OK


def cmd_gen(args) -> int:
    if args.name not in BUILTINS:
        raise UsageError(f"unknown builtin {args.name!r}; choose from {sorted(BUILTINS)}")
    _write(args.out, serialize_pomdp(builtin(args.name)))
    return EXIT_OK


def cmd_synth(args) -> int:
    model, text = _load(args.model)
    transform, beta = _resolve_discount(args)
    if args.k < 1:
        raise UsageError("--k must be positive")
    reduced = transform(model)
    cfg = _config(args, beta, args.gamma)
    pmc = build_pmc(reduced, chain_memory_structure(args.k), cfg.reward_convention)
    manifest, digest = _manifest(
        "synth", dict(model=args.model, k=args.k, horizon=args.horizon, baseline=args.baseline,
                      **cfg.__dict__), text, cfg.seed, [args.out, args.gamma_out])
    try:
        if args.baseline:
            res = synth_feasibility(pmc, cfg, jobs=_jobs(args))
        else:
            res = synth_with_restarts(pmc, cfg, jobs=_jobs(args))
    except AllRestartsFailed as exc:
        payload = {"error": "AllRestartsFailed", "manifest_sha256": digest,
                   "runs": [r.status if hasattr(r, "status") else f"solver_failure: {r}"
                            for r in exc.results]}
        print(json.dumps(payload, sort_keys=True))
        return EXIT_INFEASIBLE
    d = result_to_dict(res, reduced.actions, reduced.observations)
    d["manifest_sha256"] = digest
    _write(args.out, json.dumps(d, indent=2, sort_keys=True) + "\n")
    if args.gamma_out:
        _write(args.gamma_out, f"# manifest {digest}\n"
               + format_gamma(res.instantiation, res.successor, reduced.actions,
                              reduced.observations))
    _write_manifest(args.out, manifest)
    print(f"entropy_bits={res.entropy:.6f} reward={res.reward:.6f} status={res.status}",
          file=sys.stderr if args.out in (None, "-") else sys.stdout)
    return EXIT_OK


def cmd_bound(args) -> int:
    model, _ = _load(args.model)
    transform, beta = _resolve_discount(args)
    reduced = transform(model)
    if args.gamma is None:
        value = max_entropy_mdp(reduced, beta).value
    else:
        try:
            value = max_entropy_mdp_constrained(reduced, beta, args.gamma).entropy
        except AllRestartsFailed:
            print(json.dumps({"error": "AllRestartsFailed", "gamma": args.gamma}))
            return EXIT_INFEASIBLE
    note = " (reconstructed model; indicative only)" if args.model == "fig7" else ""
    print(f"{value:.6f}{note}")
    return EXIT_OK


def _frange(start, stop, step):
    if step <= 0:
        raise UsageError("--step must be positive")
    n = int(math.floor((stop - start) / step + 1e-9)) + 1
    if n < 1:
        raise UsageError("empty sweep range")
    return [round(start + i * step, 12) for i in range(n)]


def cmd_sweep(args) -> int:
    model, text = _load(args.model)
    if args.values:
        xs = [float(v) for v in args.values.split(",")]
    elif args.start is not None and args.stop is not None:
        xs = _frange(args.start, args.stop, args.step)
    else:
        raise UsageError("give --values or --start/--stop[/--step]")
    jobs = _jobs(args)
    rows = []
    if args.sweep == "gamma":
        transform, beta = _resolve_discount(args)
        cfg = _config(args, beta, 0.0)
        pmc = build_pmc(transform(model), chain_memory_structure(args.k), cfg.reward_convention)
        for p in gamma_sweep(pmc, cfg, xs, jobs=jobs, baseline=args.baseline):
            rows.append((p.x, p.entropy, p.reward, p.status, p.seed))
    elif args.sweep == "k":
        transform, beta = _resolve_discount(args)
        cfg = _config(args, beta, args.gamma)
        ks = [int(x) for x in xs]
        try:
            results = memory_sweep(transform(model), ks, cfg, stop_percent=args.stop_percent,
                                   jobs=jobs)
        except AllRestartsFailed:
            results = []
        for k in ks:
            match = [r for r in results if r.k == k]
            if match:
                r = match[0]
                rows.append((k, r.entropy, r.reward, r.status, cfg.seed))
            elif not results:
                rows.append((k, math.nan, math.nan, "infeasible", cfg.seed))
    else:
        if args.beta is not None and args.beta != 1.0:
            raise UsageError("horizon sweeps use beta = 1")
        cfg = _config(args, 1.0, args.gamma)
        for p in horizon_sweep(model, [int(x) for x in xs], cfg, k=args.k, jobs=jobs):
            rows.append((int(p.x), p.entropy, p.reward, p.status, p.seed))
    manifest, digest = _manifest(
        "sweep", dict(model=args.model, sweep=args.sweep, values=xs, k=args.k, gamma=args.gamma,
                      horizon=args.horizon, beta=args.beta, restarts=args.restarts,
                      max_iterations=args.max_iterations, epsilon=args.epsilon,
                      baseline=args.baseline, reward_convention=args.reward_convention),
        text, args.seed, [args.out])
    buf = io.StringIO()
    buf.write(f"# manifest {digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["x", "entropy_bits", "reward", "status", "seed"])
    for x, e, r, st, sd in rows:
        w.writerow([repr(float(x)) if args.sweep == "gamma" else int(x),
                    repr(float(e)), repr(float(r)), st, sd])
    _write(args.out, buf.getvalue())
    _write_manifest(args.out, manifest)
    return EXIT_OK


def cmd_occupancy(args) -> int:
    model, text = _load(args.model)
    transform, beta = _resolve_discount(args)
    reduced = transform(model)
    try:
        with open(args.controller, encoding="utf-8") as fh:
            ctrl = json.load(fh)
        u, structure = controller_from_dict(ctrl)
    except (OSError, ValueError, KeyError) as exc:
        raise UsageError(f"bad controller file: {exc}") from None
    pmc = build_pmc(reduced, structure, args.reward_convention)
    ok, _ = check_well_defined(u, structure, reduced.n_observations, reduced.n_actions)
    if not ok:
        raise UsageError("controller does not match the model or is not a distribution")
    table, chain = instantiate_occupancy(pmc, u, beta)
    values = {}
    for lab, v in zip(table.states, table.values):
        base, _t = split_time_state(lab) if args.horizon is not None else (lab, None)
        if base == SINK and args.horizon is not None:
            continue
        values[base] = values.get(base, 0.0) + float(v)
    _, digest = _manifest("occupancy", dict(model=args.model, controller=_sha(json.dumps(
        ctrl, sort_keys=True)), beta=beta, horizon=args.horizon), text, None, [args.out])
    buf = io.StringIO()
    buf.write(f"# manifest {digest}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state_id", "value"])
    for s in model.states:
        w.writerow([s, repr(values.get(s, 0.0))])
    _write(args.out, buf.getvalue())
    if args.model == "fourroom10" and args.horizon is None:
        from .evaluation import transition_flow

        for i, (a, b) in enumerate(fourroom10_spec().doors, start=1):
            flow = transition_flow(chain, table, cell_id(a), cell_id(b))
            print(f"door{i} {flow:.6f}", file=sys.stderr)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="entromax", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    v = sub.add_parser("validate", help="parse and validate a model file")
    v.add_argument("model")
    v.set_defaults(func=cmd_validate)

    g = sub.add_parser("gen", help="write a builtin model in the text format")
    g.add_argument("name")
    g.add_argument("--out", default="-")
    g.set_defaults(func=cmd_gen)

    def common(q, synth=True):
        q.add_argument("model", help="builtin name or model file")
        q.add_argument("--beta", type=float, help="discount factor in (0, 1] (default 0.9)")
        q.add_argument("--horizon", type=int,
                       help="finite horizon N; solves the reduced model with beta = 1")
        if synth:
            q.add_argument("--k", type=int, default=1, help="memory states (chain structure)")
            q.add_argument("--restarts", type=int, default=10, help="random CCP restarts")
            q.add_argument("--seed", type=int, default=None,
                           help=f"base seed (default ${SEED_ENV} or 0)")
            q.add_argument("--max-iterations", type=int, default=200,
                           help="CCP iterations per restart")
            q.add_argument("--epsilon", type=float, default=1e-4,
                           help="stop when the subproblem value changes less than this")
            q.add_argument("--jobs", type=int, default=None,
                           help="worker processes (default: CPU count)")
        q.add_argument("--reward-convention", choices=("current", "successor"),
                       default="current", help="state credited with R(s, a)")

    s = sub.add_parser("synth", help="synthesize a maximum-entropy controller")
    common(s)
    s.add_argument("--gamma", type=float, default=0.0, help="reward threshold")
    s.add_argument("--baseline", action="store_true", help="feasibility baseline")
    s.add_argument("--out", default="-")
    s.add_argument("--gamma-out")
    s.set_defaults(func=cmd_synth)

    b = sub.add_parser("bound", help="fully observable entropy upper bound")
    common(b, synth=False)
    b.add_argument("--gamma", type=float)
    b.set_defaults(func=cmd_bound)

    w = sub.add_parser("sweep", help="sweep threshold, memory size or horizon")
    common(w)
    w.add_argument("--sweep", choices=("gamma", "k", "horizon"), required=True)
    w.add_argument("--values", help="comma-separated sweep values")
    w.add_argument("--start", type=float)
    w.add_argument("--stop", type=float)
    w.add_argument("--step", type=float, default=1.0)
    w.add_argument("--gamma", type=float, default=0.0)
    w.add_argument("--stop-percent", type=float, default=0.0)
    w.add_argument("--baseline", action="store_true")
    w.add_argument("--out", default="-")
    w.set_defaults(func=cmd_sweep)

    o = sub.add_parser("occupancy", help="expected visits under a controller")
    common(o, synth=False)
    o.add_argument("--controller", required=True, help="synth JSON output")
    o.add_argument("--out", default="-")
    o.set_defaults(func=cmd_occupancy)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if getattr(args, "seed", 0) is None:
            args.seed = _default_seed()
        return args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ParseError as exc:
        print(f"parse error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except ValidationError as exc:
        print(exc.report, file=sys.stderr)
        return EXIT_VALIDATION
    except (SolverFailure, DivergentEntropy, DivergentReward) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    except ValueError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
