"""Command-line front end: ``cpx run``, ``cpx sweep`` and ``cpx verify``.

Options may also come from ``--config FILE`` holding ``key = value`` lines
(keys are option names without the leading dashes); command-line flags
override the file.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

from . import algorithms as alg
from .algorithms import AlgoConfig
from .errors import CpxError
from .runtime import PROBLEM_KINDS, ProblemSpec, RunConfig, run_experiment, write_outputs

log = logging.getLogger("cpx")

SOFTMAX_ETA = 0.05
LS_ETA = 5e-5


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _bool(text):
    low = str(text).strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise argparse.ArgumentTypeError(f"not a boolean: {text!r}")


def _add_run_options(p, sweep=False):
    if sweep:
        p.add_argument("--method", required=False, help="comma-separated methods")
        p.add_argument("--K", help="comma-separated local step counts")
    else:
        p.add_argument("--method", help=f"one of {', '.join(alg.METHODS)}")
        p.add_argument("--K", type=int)
    p.add_argument("--problem", help=f"one of {', '.join(PROBLEM_KINDS)}")
    p.add_argument("--clients", type=int)
    p.add_argument("--rows", type=int)
    p.add_argument("--dim", type=int)
    p.add_argument("--rank", type=int)
    p.add_argument("--noise-std", type=float)
    p.add_argument("--regularizer", type=float)
    p.add_argument("--eta", type=float)
    p.add_argument("--eta-g", type=float)
    p.add_argument("--rho", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--rounds", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--init", choices=("z", "xs"))
    p.add_argument("--lambda-update", choices=("average", "recent"))
    p.add_argument("--batch", type=int)
    p.add_argument("--data-dir")
    p.add_argument("--metrics-every", type=int)
    p.add_argument("--theory-checks", type=_bool, nargs="?", const=True)
    p.add_argument("--theta", type=float)
    p.add_argument("--phi", type=float)
    p.add_argument("--out")
    p.add_argument("--config", help="file of key = value lines")


def make_parser():
    parser = _Parser(prog="cpx", description="Federated primal-dual optimisation simulator")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command")
    _add_run_options(sub.add_parser("run", help="run one experiment"))
    _add_run_options(sub.add_parser("sweep", help="cross product over methods and K"), sweep=True)
    sub.add_parser("verify", help="run the theory checks on synthetic problems")
    return parser


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = []
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from exc
    for n, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{n}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        out.append((key.replace("_", "-"), value))
    return out


def merged_options(parser, argv):
    """Namespace from ``argv`` layered over the optional config file."""
    args = parser.parse_args(argv)
    if getattr(args, "config", None):
        file_argv = [args.command]
        for key, value in read_config_file(args.config):
            if key == "config":
                raise UsageError("config files cannot include other config files")
            file_argv += [f"--{key}", value]
        base = parser.parse_args(file_argv)
        for name, value in vars(args).items():
            if value is not None:
                setattr(base, name, value)
        args = base
    return args


def _default_eta(kind):
    return LS_ETA if kind == "synth-ls" else SOFTMAX_ETA


def build_config(args, method, K) -> RunConfig:
    """Map parsed options onto a :class:`RunConfig`; defaults fill the gaps."""
    kind = args.problem or "synth-ls"
    problem_kw = {"kind": kind}
    if kind in ("mnist", "fashion-mnist"):
        problem_kw["clients"] = 10
    for opt, name in (("clients", "clients"), ("rows", "rows"), ("dim", "dim"), ("rank", "rank"),
                      ("noise_std", "noise_std"), ("regularizer", "regularizer"), ("batch", "batch"),
                      ("data_dir", "data_dir")):
        value = getattr(args, opt)
        if value is not None:
            problem_kw[name] = value
    algo = AlgoConfig(
        method=method,
        eta=args.eta if args.eta is not None else _default_eta(kind),
        K=K,
        rho=args.rho,
        gamma=args.gamma,
        eta_g=args.eta_g if args.eta_g is not None else 1.0,
        inexact_init=args.init or "z",
        lambda_update=args.lambda_update or "average",
    ).resolved()
    run_kw = {}
    for name in ("rounds", "seed", "metrics_every", "theory_checks", "theta", "phi"):
        value = getattr(args, name)
        if value is not None:
            run_kw[name] = value
    return RunConfig(algo=algo, problem=ProblemSpec(**problem_kw), **run_kw)


def _split(text, conv, what):
    try:
        return [conv(t.strip()) for t in text.split(",") if t.strip()]
    except ValueError as exc:
        raise UsageError(f"bad {what} list {text!r}") from exc


def cmd_run(args):
    if not args.method:
        raise UsageError("--method is required")
    if not args.out:
        raise UsageError("--out is required")
    config = build_config(args, args.method, args.K if args.K is not None else 5)
    result = run_experiment(config)
    write_outputs(result, args.out)
    s = result.summary
    print(f"{config.algo.method}: {config.rounds} rounds, final gap {s['final_gap']}, "
          f"accuracy {s['final_accuracy']}, wrote {args.out}")
    return 0


def cmd_sweep(args):
    if not args.method or not args.out:
        raise UsageError("--method and --out are required")
    methods = _split(args.method, str, "method")
    Ks = _split(args.K, int, "K") if args.K else [5]
    configs = {f"{m}_K{k}": build_config(args, m, k) for m in methods for k in Ks}
    out = Path(args.out)
    columns = {}
    for name, config in configs.items():
        result = run_experiment(config)
        write_outputs(result, out / name)
        columns[name] = {t.round: t.gap for t in result.traces}
        print(f"{name}: final gap {result.summary['final_gap']}")
    rounds = sorted({r for col in columns.values() for r in col})
    with open(out / "comparison.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["round", *columns])
        for r in rounds:
            w.writerow([r, *("" if col.get(r) is None else repr(col[r]) for col in columns.values())])
    return 0


def cmd_verify(args):
    from .verify import run_all

    results = run_all()
    for check in results:
        print(check.line())
    failed = [c.name for c in results if not c.passed]
    if failed:
        print(f"verification failed: {', '.join(failed)}")
        return 1
    return 0


def run_cli(argv=None):
    parser = make_parser()
    try:
        args = merged_options(parser, argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        if args.command is None:
            raise UsageError("choose a subcommand: run, sweep or verify")
        handler = {"run": cmd_run, "sweep": cmd_sweep, "verify": cmd_verify}[args.command]
        if args.command != "verify":
            # reject bad names before any computation
            methods = _split(args.method or "", str, "method")
            for m in methods:
                if m not in alg.METHODS:
                    raise UsageError(f"unknown method {m!r}")
            if args.problem is not None and args.problem not in PROBLEM_KINDS:
                raise UsageError(f"unknown problem {args.problem!r}")
        return handler(args)
    except UsageError as exc:
        print(f"cpx: error: {exc}", file=sys.stderr)
        return 2
    except (CpxError, ValueError) as exc:
        print(f"cpx: error: {exc}", file=sys.stderr)
        return 2


def main():
    sys.exit(run_cli())
