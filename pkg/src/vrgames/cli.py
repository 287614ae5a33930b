"""Command-line front end.

Exit codes: 0 success (gap <= eps), 1 invalid configuration, 2 I/O or parse
failure, 3 budget exhausted or gap above eps.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from typing import Sequence

from pydantic import BaseModel, ValidationError

from .analysis import Instance, duality_gap, run_benchmark
from .estimators import VARIANT_CODES
from .geometry import CompositeTerm, InfeasiblePointError, Point, Setup, check_feasible
from .matrix import MatrixMarketError, VALUE_DISTRIBUTIONS, generate_random, load_matrix_market, save_matrix_market
from .solvers import BudgetError, SolveOptions, solve

EXIT_OK, EXIT_CONFIG, EXIT_IO, EXIT_BUDGET = 0, 1, 2, 3


class ConfigError(Exception):
    pass


class InputError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


class PointFile(BaseModel):
    x: list[float]
    y: list[float]


def _positive(kind):
    def parse(text):
        try:
            v = kind(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"expected a {kind.__name__}, got '{text}'") from None
        if not v > 0:
            raise argparse.ArgumentTypeError(f"must be positive, got {text}")
        return v
    return parse


def _nonneg_float(text):
    try:
        v = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{text}'") from None
    if not v >= 0:
        raise argparse.ArgumentTypeError(f"must be nonnegative, got {text}")
    return v


def _int_list(text):
    try:
        vals = [int(t) for t in text.split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got '{text}'") from None
    if not vals:
        raise argparse.ArgumentTypeError("empty list")
    return vals


def _default_seed() -> int:
    env = os.environ.get("VRGAMES_SEED")
    if env is None:
        return 0
    try:
        return int(env)
    except ValueError:
        raise ConfigError(f"VRGAMES_SEED must be an integer, got '{env}'") from None


def _load_matrix(path):
    try:
        with open(path, "rb") as fh:
            return load_matrix_market(fh)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror or e}") from None
    except MatrixMarketError as e:
        raise InputError(f"{path}: {e}") from None


def _load_point(path, setup: Setup) -> Point:
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except OSError as e:
        raise InputError(f"cannot read {path}: {e.strerror or e}") from None
    except json.JSONDecodeError as e:
        raise InputError(f"{path}: invalid JSON: {e}") from None
    try:
        pf = PointFile.model_validate(raw)
    except ValidationError as e:
        raise ConfigError(f"{path}: point file must hold numeric arrays 'x' and 'y': {e.errors()[0]['msg']}") from None
    z = Point(pf.x, pf.y, setup.kind)
    try:
        check_feasible(setup, z)
    except InfeasiblePointError as e:
        raise ConfigError(f"{path}: infeasible point: {e}") from None
    return z


def _composite(args) -> CompositeTerm | None:
    if args.mu_x is None and args.mu_y is None:
        return None
    return CompositeTerm(args.mu_x or 0.0, args.mu_y or 0.0)


def _write(path, text):
    try:
        with open(path, "w", newline="") as fh:
            fh.write(text)
    except OSError as e:
        raise InputError(f"cannot write {path}: {e.strerror or e}") from None


def cmd_solve(args) -> int:
    A = _load_matrix(args.input)
    setup = Setup(args.setup, A.n, A.m)
    overrides = {k: getattr(args, k) for k in ("alpha", "eta", "T", "K", "tau", "N") if getattr(args, k) is not None}
    if args.theorem_mode and overrides:
        raise ConfigError(f"--theorem-mode fixes parameters; remove {', '.join('--' + k for k in overrides)}")
    if args.variant and args.variant != "exact" and not args.variant.startswith(args.setup):
        raise ConfigError(f"variant '{args.variant}' does not match setup '{args.setup}'")
    composite = _composite(args)
    strong = composite is not None and composite.lambda_x > 0 and composite.lambda_y > 0
    opts = SolveOptions(variant=args.variant, theorem_mode=args.theorem_mode, oracle=args.oracle,
                        seed=args.seed, gap_check_every=args.gap_every, composite=composite,
                        strongly_monotone=strong, max_inner_steps=args.max_inner_steps, **overrides)
    try:
        report = solve(A, setup, args.eps, opts)
    except BudgetError as e:
        print(f"budget exhausted: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as e:
        raise ConfigError(str(e)) from None
    out = args.out or os.path.splitext(args.input)[0] + ".report.json"
    trace = args.trace or os.path.splitext(args.input)[0] + ".trace.csv"
    _write(out, json.dumps(report.to_dict(), indent=2))
    lines = ["k,work,gap"] + [f"{r.k},{r.work},{r.gap!r}" for r in report.trace]
    _write(trace, "\n".join(lines) + "\n")
    print(f"gap={report.measured_gap:.6g} work={report.total_work} K={report.outer_iterations}")
    return EXIT_OK if report.measured_gap <= args.eps else EXIT_BUDGET


def cmd_bench(args) -> int:
    instances = []
    for path in args.inputs:
        A = _load_matrix(path)
        instances.append(Instance(os.path.basename(path), A, Setup(args.setup, A.n, A.m)))
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    vr = {"theorem_mode": args.theorem_mode}
    if args.variant:
        vr["variant"] = args.variant
    try:
        res = run_benchmark(instances, methods, args.budgets, args.seeds, args.eps,
                            workers=args.workers, vr_options=vr)
    except BudgetError as e:
        print(f"budget exhausted: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as e:
        raise ConfigError(str(e)) from None
    for note in res.notices:
        print(f"notice: {note}", file=sys.stderr)
    _write(args.out, json.dumps(res.to_dict(), indent=2))
    if args.csv:
        try:
            res.write_csv(args.csv)
        except OSError as e:
            raise InputError(f"cannot write {args.csv}: {e.strerror or e}") from None
    for inst, per in res.summary().items():
        for meth, stats in per.items():
            print(f"{inst} {meth} median_work_to_eps={stats['median_work_to_epsilon']:.6g}")
    return EXIT_OK


def cmd_gen(args) -> int:
    try:
        A = generate_random(args.m, args.n, args.density, args.dist, args.seed)
    except ValueError as e:
        raise ConfigError(str(e)) from None
    try:
        with open(args.out, "w") as fh:
            save_matrix_market(A, fh)
    except OSError as e:
        raise InputError(f"cannot write {args.out}: {e.strerror or e}") from None
    print(f"wrote {args.out} m={A.m} n={A.n} nnz={A.nnz}")
    return EXIT_OK


def cmd_gap(args) -> int:
    A = _load_matrix(args.input)
    setup = Setup(args.setup, A.n, A.m)
    z = _load_point(args.point, setup)
    print(f"{duality_gap(setup, A, z, _composite(args)):.12f}")
    return EXIT_OK


def build_parser(default_seed: int = 0) -> argparse.ArgumentParser:
    p = _Parser(prog="vrgames", description="Variance-reduced solvers for bilinear saddle-point problems.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)
    setups = ["l1l1", "l2l1", "l2l2"]

    s = sub.add_parser("solve", help="solve one instance")
    s.add_argument("input", help="Matrix Market file")
    s.add_argument("--setup", choices=setups, default="l1l1")
    s.add_argument("--eps", type=_positive(float), required=True)
    s.add_argument("--variant", choices=sorted(VARIANT_CODES))
    s.add_argument("--theorem-mode", action="store_true", help="theorem parameters, no early stop")
    s.add_argument("--oracle", choices=["inner", "restarted"], default="inner")
    s.add_argument("--seed", type=int, default=default_seed)
    s.add_argument("--out", help="report JSON (default <input>.report.json)")
    s.add_argument("--trace", help="trace CSV (default <input>.trace.csv)")
    s.add_argument("--gap-every", type=int, default=None, help="gap check cadence in outer steps")
    s.add_argument("--max-inner-steps", type=_positive(int), default=10 ** 7)
    for name, kind in (("alpha", float), ("eta", float), ("T", int), ("K", int), ("tau", float), ("N", int)):
        s.add_argument(f"--{name}", type=_positive(kind), default=None)
    s.add_argument("--mu-x", type=_nonneg_float, default=None, help="composite weight on r(x)")
    s.add_argument("--mu-y", type=_nonneg_float, default=None, help="composite weight on r(y)")
    s.set_defaults(func=cmd_solve)

    b = sub.add_parser("bench", help="work-normalized comparison of methods")
    b.add_argument("inputs", nargs="+", help="Matrix Market files")
    b.add_argument("--setup", choices=setups, default="l1l1")
    b.add_argument("--eps", type=_positive(float), required=True)
    b.add_argument("--methods", default="vr,mirror-prox")
    b.add_argument("--budgets", type=_int_list, required=True)
    b.add_argument("--seeds", type=_int_list, default=[default_seed])
    b.add_argument("--variant", choices=sorted(VARIANT_CODES))
    b.add_argument("--theorem-mode", action="store_true")
    b.add_argument("--workers", type=_positive(int), default=1)
    b.add_argument("--out", required=True, help="result JSON")
    b.add_argument("--csv", help="per-budget CSV")
    b.set_defaults(func=cmd_bench)

    g = sub.add_parser("gen", help="generate a random instance")
    g.add_argument("--m", type=_positive(int), required=True)
    g.add_argument("--n", type=_positive(int), required=True)
    g.add_argument("--density", type=float, default=1.0)
    g.add_argument("--dist", choices=VALUE_DISTRIBUTIONS, default="uniform")
    g.add_argument("--seed", type=int, default=default_seed)
    g.add_argument("--out", required=True)
    g.set_defaults(func=cmd_gen)

    q = sub.add_parser("gap", help="duality gap of a point")
    q.add_argument("input", help="Matrix Market file")
    q.add_argument("point", help='JSON file {"x": [...], "y": [...]}')
    q.add_argument("--setup", choices=setups, default="l1l1")
    q.add_argument("--mu-x", type=_nonneg_float, default=None)
    q.add_argument("--mu-y", type=_nonneg_float, default=None)
    q.set_defaults(func=cmd_gap)
    return p


def main(argv: Sequence[str] | None = None) -> int:
    try:
        seed = _default_seed()
    except ConfigError as e:
        print(f"vrgames: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    args = build_parser(seed).parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        print(f"vrgames: error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except InputError as e:
        print(f"vrgames: error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
