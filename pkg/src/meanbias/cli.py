"""Command-line entry point: ``meanbias <subcommand> [flags]``.

Traces are written as CSV, everything else as JSON lines.  Every subcommand
is deterministic given its flags.  Exit codes: 0 success, 1 a check failed,
2 bad input (including an unparsable process string), 3 the run could
overflow 64-bit arithmetic.
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import sys
from fractions import Fraction
from pathlib import Path
from typing import IO, Iterable, Sequence

from . import __version__
from .conditions import CLAIMS, audit, audit_claims
from .core import ContractViolation, format_rational
from .couplings import coupled_dominance_run
from .engine import InitialState, OverflowRisk, SimConfig, run, run_repetitions
from .kernels import BACKEND_NAME
from .metrics import MetricsRow, PotentialConfig
from .oracle import consistency_suite, counterexample_threshold, drift_suite
from .processes import Offset, SpecError, parse_spec
from .rng import derive_seed

TRACE_COLUMNS = (
    "t",
    "gap",
    "min_gap",
    "delta",
    "abs_potential",
    "quad_potential",
    "log_exp_potential",
    "log_weak_potential",
    "samples",
    "weight",
)
SCALED_COLUMNS = ("abs_potential_scaled", "quad_potential_scaled", "exp_potential_scaled", "weak_potential_scaled")
TABLE_PROCESSES = ("one-plus-beta:0.5", "twinning", "mean-thinning", "quantile:0.5", "two-choice")


class _ExitError(Exception):
    def __init__(self, code: int, message: str):
        super().__init__(message)
        self.code = code


def format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, int):
        return str(value)
    if isinstance(value, Fraction):
        return format_rational(value)
    if isinstance(value, float):
        return format(value, ".17g")
    return str(value)


def _jsonable(value):
    if isinstance(value, Fraction):
        return format_rational(value)
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def emit_json(out: IO[str], record: dict) -> None:
    out.write(json.dumps(_jsonable(record), separators=(",", ":")) + "\n")


def trace_rows(trace: Sequence[MetricsRow], scaled: bool = False) -> Iterable[list[str]]:
    yield list(TRACE_COLUMNS + (SCALED_COLUMNS if scaled else ()))
    if scaled and trace:
        top_abs = max(r.abs_potential for r in trace) or 1
        top_quad = max(r.quad_potential for r in trace) or 1
        top_exp = max(r.log_exp_potential for r in trace)
        top_weak = max(r.log_weak_potential for r in trace)
    for r in trace:
        row = [format_value(getattr(r, c)) for c in TRACE_COLUMNS]
        if scaled:
            row += [
                format_value(float(r.abs_potential / top_abs)),
                format_value(float(r.quad_potential / top_quad)),
                format_value(math.exp(r.log_exp_potential - top_exp)),
                format_value(math.exp(r.log_weak_potential - top_weak)),
            ]
        yield row


# argument parsing ------------------------------------------------------------


def _process(text: str):
    try:
        return parse_spec(text)
    except SpecError as exc:
        raise _ExitError(2, f"invalid process {text!r}: {exc} (bad token: {exc.token!r})") from None


def _snapshot(text: str) -> int | str:
    if text == "log":
        return "log"
    try:
        value = int(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"snapshot must be an integer or 'log', got {text!r}") from None
    if value <= 0:
        raise argparse.ArgumentTypeError("snapshot interval must be positive")
    return value


def _fraction(text: str) -> Fraction:
    try:
        return Fraction(text)
    except (ValueError, ZeroDivisionError):
        raise argparse.ArgumentTypeError(f"not a number: {text!r}") from None


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return value


def _seed(text: str) -> int:
    value = int(text, 0)
    if not 0 <= value < 1 << 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return value


def _add_run_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--process", required=True, help="process string, e.g. mean-thinning or one-plus-beta:0.5")
    p.add_argument("--n", type=_positive_int, required=True, help="number of bins")
    p.add_argument("--m", type=int, required=True, help="number of allocations")
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--snapshot", type=_snapshot, default="log", help="interval in rounds, or 'log'")
    p.add_argument("--init", default="empty", help="empty, two-level[:h], claim-b1 or file:<path>")
    p.add_argument("--alpha", type=float, help="smoothing parameter of the exponential potential")
    p.add_argument("--alpha-weak", type=float, help="smoothing of the weak potential (default 1/n)")
    p.add_argument("--epsilon", type=_fraction, default=Fraction(1, 10), help="good-round margin")
    p.add_argument("--debug", action="store_true", help="cross-check incremental statistics at snapshots")
    p.add_argument("--out", help="output path (default stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="meanbias", description="Balls-into-bins simulations and exact checks.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__} ({BACKEND_NAME} kernel)")
    parser.add_argument("--config", help="file of key=value lines mirroring the flags")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="run one simulation and write its trace as CSV")
    _add_run_flags(p)

    p = sub.add_parser("trace", help="like simulate, with max-normalized potential columns added")
    _add_run_flags(p)

    p = sub.add_parser("gap-table", help="gap histograms over repetitions, one JSON line per process")
    p.add_argument("--process", action="append", help="repeatable; default: the five table processes")
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--m", type=int, help="allocations per run (default 1000n)")
    p.add_argument("--reps", type=_positive_int, default=100)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--threads", type=_positive_int)
    p.add_argument("--out")

    p = sub.add_parser("efficiency", help="sample efficiency W/S over repetitions")
    p.add_argument("--process", action="append", required=True)
    p.add_argument("--n", type=_positive_int, default=1000)
    p.add_argument("--m", type=int, help="allocations per run (default 1000n)")
    p.add_argument("--reps", type=_positive_int, default=50)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--threads", type=_positive_int)
    p.add_argument("--out")

    p = sub.add_parser("audit-conditions", help="exhaustive condition audits for the registered claims")
    p.add_argument("--n-max", type=_positive_int, default=64)
    p.add_argument("--summary", action="store_true", help="only per-claim totals, no per-profile lines")
    p.add_argument("--out")

    p = sub.add_parser("oracle-check", help="exact one-step drift, marginal and counterexample checks")
    p.add_argument("--suite", choices=("drift", "consistency", "counterexample", "all"), default="all")
    p.add_argument("--alpha", type=_fraction, default=Fraction(1, 10), help="alpha for the counterexample")
    p.add_argument("--n-max", type=_positive_int, default=400, help="largest n for the counterexample scan")
    p.add_argument("--out")

    p = sub.add_parser("coupling-check", help="coupled Two-Thinning runs: dominance and shift identity")
    p.add_argument("--f", default="log_n", help="offset token (e.g. 0, 5, log_n, 3log_n); rounded up")
    p.add_argument("--n", type=_positive_int, default=100)
    p.add_argument("--m", type=int, default=100_000)
    p.add_argument("--seeds", type=_positive_int, default=20)
    p.add_argument("--seed", type=_seed, default=0)
    p.add_argument("--out")
    return parser


def _config_args(path: str) -> list[str]:
    """Turn ``key=value`` lines into flags; blank lines and ``#`` comments are skipped."""
    args: list[str] = []
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise _ExitError(2, f"cannot read config {path}: {exc}") from None
    for number, line in enumerate(lines, 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        if not sep:
            raise _ExitError(2, f"{path}:{number}: expected key=value")
        flag = "--" + key.strip().replace("_", "-")
        value = value.strip()
        if value.lower() == "true":
            args.append(flag)
        elif value.lower() != "false":
            args += [flag, value]
    return args


def _expand_config(argv: list[str]) -> list[str]:
    """Insert config-file flags right after the subcommand so explicit flags win."""
    if "--config" not in argv and not any(a.startswith("--config=") for a in argv):
        return argv
    rest: list[str] = []
    path = None
    it = iter(argv)
    for arg in it:
        if arg == "--config":
            path = next(it, None)
        elif arg.startswith("--config="):
            path = arg.split("=", 1)[1]
        else:
            rest.append(arg)
    if path is None:
        raise _ExitError(2, "--config needs a path")
    extra = _config_args(path)
    commands = {"simulate", "trace", "gap-table", "efficiency", "audit-conditions", "oracle-check", "coupling-check"}
    for i, arg in enumerate(rest):
        if arg in commands:
            return rest[: i + 1] + extra + rest[i + 1 :]
    raise _ExitError(2, "no subcommand given")


# subcommands -------------------------------------------------------------------


def _sim_config(args) -> SimConfig:
    spec = _process(args.process)
    if args.alpha is not None or args.alpha_weak is not None:
        potentials = PotentialConfig(
            alpha=args.alpha if args.alpha is not None else PotentialConfig.default(spec.weight_rule.w_minus).alpha,
            alpha_weak=args.alpha_weak,
        )
    else:
        potentials = None
    return SimConfig(
        process=spec,
        n=args.n,
        m=args.m,
        seed=args.seed,
        snapshot_every=args.snapshot,
        initial=InitialState.parse(args.init),
        potentials=potentials,
        epsilon=args.epsilon,
        debug=args.debug,
    )


def cmd_simulate(args, out: IO[str], scaled: bool = False) -> int:
    result = run(_sim_config(args))
    writer = csv.writer(out, lineterminator="\n")
    writer.writerows(trace_rows(result.trace, scaled=scaled))
    return 0


def cmd_trace(args, out: IO[str]) -> int:
    return cmd_simulate(args, out, scaled=True)


def _repetitions(args, text: str):
    spec = _process(text)
    m = args.m if args.m is not None else 1000 * args.n
    config = SimConfig(process=spec, n=args.n, m=m, seed=args.seed)
    return run_repetitions(config, args.reps, threads=args.threads)


def cmd_gap_table(args, out: IO[str]) -> int:
    for text in args.process or TABLE_PROCESSES:
        report = _repetitions(args, text)
        emit_json(
            out,
            {
                "process": report.config.process.text,
                "n": report.config.n,
                "m": report.config.m,
                "reps": len(report.summaries),
                "histogram": report.histogram,
                "mean_gap": report.mean_gap,
                "mean_eta": report.mean_efficiency,
            },
        )
    return 0


def cmd_efficiency(args, out: IO[str]) -> int:
    for text in args.process:
        report = _repetitions(args, text)
        etas = [s.efficiency for s in report.summaries]
        emit_json(
            out,
            {
                "process": report.config.process.text,
                "n": report.config.n,
                "m": report.config.m,
                "reps": len(etas),
                "eta_min": min(etas),
                "eta_max": max(etas),
                "eta_mean": report.mean_efficiency,
                "eta": etas,
            },
        )
    return 0


def cmd_audit_conditions(args, out: IO[str]) -> int:
    n_values = range(1, args.n_max + 1)
    if not args.summary:
        for claim in CLAIMS:
            for record in audit(claim, n_values):
                emit_json(out, {"check": "condition", **record.as_dict()})
    summaries = audit_claims(n_values=n_values)
    for s in summaries:
        emit_json(out, {"check": "condition-audit", **s.as_dict()})
    failures = sum(s.failures for s in summaries)
    emit_json(out, {"check": "condition-audit-total", "claims": len(summaries), "failures": failures})
    return 0 if failures == 0 else 1


def cmd_oracle_check(args, out: IO[str]) -> int:
    ok = True
    if args.suite in ("drift", "all"):
        for summary in drift_suite():
            emit_json(out, summary.as_dict())
            ok &= summary.passed
    if args.suite in ("consistency", "all"):
        summary = consistency_suite()
        emit_json(out, summary.as_dict())
        ok &= summary.passed
    if args.suite in ("counterexample", "all"):
        threshold, reports = counterexample_threshold(args.alpha, args.n_max)
        emit_json(
            out,
            {
                "check": "counterexample-threshold",
                "alpha": args.alpha,
                "n_max": args.n_max,
                "threshold": threshold,
                "delta_persists": all(r.delta_persists for r in reports),
                "reports": [r.as_dict() for r in reports if threshold is None or r.n >= threshold][:5],
            },
        )
        ok &= threshold is not None
    return 0 if ok else 1


def cmd_coupling_check(args, out: IO[str]) -> int:
    try:
        offset = Offset.parse(args.f)
    except SpecError as exc:
        raise _ExitError(2, f"invalid offset {args.f!r} (bad token: {exc.token!r})") from None
    f = math.ceil(offset.value(args.n))
    violations = 0
    for r in range(args.seeds):
        report = coupled_dominance_run(f, args.n, args.m, derive_seed(args.seed, r))
        emit_json(out, {"check": "coupling", "rep": r, **report.as_dict()})
        violations += not report.ok
    emit_json(out, {"check": "coupling-total", "f": f, "seeds": args.seeds, "violations": violations})
    return 0 if violations == 0 else 1


COMMANDS = {
    "simulate": cmd_simulate,
    "trace": cmd_trace,
    "gap-table": cmd_gap_table,
    "efficiency": cmd_efficiency,
    "audit-conditions": cmd_audit_conditions,
    "oracle-check": cmd_oracle_check,
    "coupling-check": cmd_coupling_check,
}


def main(argv: Sequence[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        argv = _expand_config(argv)
        args = build_parser().parse_args(argv)
        if getattr(args, "m", None) is not None and args.m < 0:
            raise _ExitError(2, "--m must be non-negative")
        handler = COMMANDS[args.command]
        if args.out:
            with open(args.out, "w", newline="") as fh:
                return handler(args, fh)
        return handler(args, sys.stdout)
    except _ExitError as exc:
        print(f"meanbias: {exc}", file=sys.stderr)
        return exc.code
    except OverflowRisk as exc:
        print(f"meanbias: overflow risk: {exc}", file=sys.stderr)
        return 3
    except SpecError as exc:
        print(f"meanbias: {exc} (bad token: {exc.token!r})", file=sys.stderr)
        return 2
    except ContractViolation as exc:
        print(f"meanbias: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
