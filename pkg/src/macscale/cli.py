"""Command-line front end.

Every command prints a JSON report (or CSV with ``--format csv``) and
exits with 0 on success, 1 when the model or arguments are invalid, 2 on
numerical failure and 3 on bad usage.
"""
from __future__ import annotations

import argparse
import csv
import io
import json
import sys
import time
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from . import exit as ex
from . import fundamental as fu
from . import oracle
from .errors import MacError, ValidationError
from .model import MacModel, drift, require_valid, validate
from .scale import w_sequence
from .verify import run_checks

EXIT_OK, EXIT_INVALID, EXIT_NUMERIC, EXIT_USAGE = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _matrix(name, A, **params) -> dict:
    A = np.atleast_2d(np.asarray(A, dtype=float))
    clean = {k: v for k, v in params.items() if v is not None}
    return {"name": name, "rows": A.shape[0], "cols": A.shape[1], "params": clean,
            "data": A.tolist()}


class Report:
    """Accumulates the pieces of a run report."""

    def __init__(self, argv, model: MacModel | None):
        self.command = list(argv)
        self.model = model
        self.outputs: list[dict] = []
        self.diagnostics: dict = {}
        self.start = time.perf_counter()

    def add(self, name, A, **params):
        self.outputs.append(_matrix(name, A, **params))

    def to_dict(self) -> dict:
        return {
            "tool": "macscale",
            "version": __version__,
            "command": self.command,
            "model_hash": None if self.model is None else self.model.fingerprint(),
            "outputs": self.outputs,
            "diagnostics": self.diagnostics,
            "timing": {"seconds": time.perf_counter() - self.start},
        }


def report_to_json(rep: dict) -> str:
    # float repr is the shortest string that parses back to the same double
    return json.dumps(rep, indent=2, allow_nan=True)


def report_to_csv(rep: dict) -> str:
    buf = io.StringIO()
    w = csv.writer(buf)
    w.writerow(["name", "row", "col", "value", "params"])
    for out in rep["outputs"]:
        params = ";".join(f"{k}={v}" for k, v in out["params"].items())
        for i, row in enumerate(out["data"]):
            for j, val in enumerate(row):
                w.writerow([out["name"], i, j, repr(float(val)), params])
    return buf.getvalue()


def matrices_from_report(text: str) -> dict:
    """Parse a JSON report back into ``{name: ndarray}`` (last one wins on clashes)."""
    rep = json.loads(text)
    return {o["name"]: np.array(o["data"], dtype=float) for o in rep["outputs"]}


# ------------------------------------------------------------- commands
def _load(args) -> MacModel:
    try:
        model = MacModel.load(args.model)
    except OSError as err:
        raise ValidationError(f"cannot read model file: {err}") from None
    kill = getattr(args, "v", None)
    if args.command == "regulators":
        kill = args.kill
    if kill is not None:
        model = model.with_kill(kill)
    return model


def _table(model, need):
    return w_sequence(model, max(need, 1), guard=False)


def cmd_validate(args, rep: Report):
    rep_v = validate(rep.model)
    rep.diagnostics.update(ok=rep_v.ok, violations=rep_v.violations, notes=rep_v.notes)
    if rep_v.ok:
        kp, cls = drift(rep.model)
        rep.diagnostics.update(drift=kp, classification=cls.value)
    return EXIT_OK if rep_v.ok else EXIT_INVALID


def cmd_solve_g(args, rep: Report):
    res = fu.solve_G(rep.model)
    rep.add("G", res.result, v=rep.model.kill_v)
    rep.diagnostics.update(iterations=res.iterations, residual=res.residual,
                           monotone=res.monotone)
    try:
        rep.add("L", fu.occupation_L(rep.model), v=rep.model.kill_v)
    except fu.NullRecurrentError as err:
        rep.diagnostics["L"] = str(err)
    return EXIT_OK


def cmd_scale(args, rep: Report):
    table = w_sequence(rep.model, args.nmax)
    for n in range(args.nmax + 1):
        rep.add("W", table.w[n], n=n, v=rep.model.kill_v)
    return EXIT_OK


def cmd_exit(args, rep: Report):
    m = rep.model
    if args.kind == "two-up":
        _need(args, "a", "b")
        out = ex.two_sided_up(_table(m, args.a + args.b + 1), args.a, args.b, method=args.method)
        rep.add("two_sided_up", out, a=args.a, b=args.b, v=m.kill_v)
    elif args.kind == "two-down":
        _need(args, "a", "b")
        out = ex.two_sided_down(_table(m, args.a + args.b + 1), args.a, args.b, args.z,
                                method=args.method)
        rep.add("two_sided_down", out, a=args.a, b=args.b, z=args.z, v=m.kill_v)
    else:
        _need(args, "b")
        method = "auto" if args.method == "ratio" else "closed"
        out = ex.one_sided_down(_table(m, args.b + 1), args.b, args.z, method=method)
        rep.add("one_sided_down", out, b=args.b, z=args.z, v=m.kill_v)
    return EXIT_OK


def cmd_reflect(args, rep: Report):
    m = rep.model
    if args.kind == "one":
        _need(args, "a", "b")
        out = ex.one_sided_reflected_up(_table(m, args.a + args.b + 1), args.a, args.b, args.z,
                                        method=args.method)
        rep.add("one_sided_reflected_up", out, a=args.a, b=args.b, z=args.z, v=m.kill_v)
    else:
        _need(args, "d")
        x = 0 if args.x is None else args.x
        out = ex.two_sided_reflection_pgf(_table(m, args.d + 2), args.d, x, args.z,
                                          method=args.method)
        rep.add("two_sided_reflection_pgf", out, d=args.d, x=x, z=args.z, v=m.kill_v)
        out = ex.f_star(_table(m, args.d + 2), args.d + 1, args.z, method=args.method)
        rep.add("f_star", out, width=args.d + 1, z=args.z, v=m.kill_v)
    return EXIT_OK


def cmd_regulators(args, rep: Report):
    m = rep.model
    out = ex.regulator_joint_transform(_table(m, args.d + 2), args.d, args.x, args.z,
                                       args.mark, method=args.method)
    rep.add("regulator_joint_transform", out, d=args.d, x=args.x, z=args.z, u=args.mark,
            v=m.kill_v)
    return EXIT_OK


_PAYOFFS = ("indicator-up", "indicator-down", "zpow", "vpow-up", "vpow-down", "joint")


def _payoff(args):
    p = args.payoff
    if p == "indicator-up":
        return oracle.Indicator("up")
    if p == "indicator-down":
        return oracle.Indicator("down")
    if p == "zpow":
        return oracle.ZPowerNegX(args.z)
    if p == "vpow-up":
        return oracle.VPowerTime(args.time_v, "up")
    if p == "vpow-down":
        return oracle.VPowerTime(args.time_v, "down")
    return oracle.Joint(args.z, args.time_v)


def _functional(args):
    f = args.functional
    if f == "strip":
        return oracle.StripSpec(args.lower, args.upper, _payoff(args), args.start)
    if f == "occupation":
        return oracle.OccupationCount(args.level, args.upper, args.lower)
    if f == "hit":
        return oracle.HitLevel(args.level, args.upper, args.lower)
    if f == "lower-reflected":
        _need(args, "a", "b")
        return oracle.LowerReflected(args.a, args.b, args.z)
    if f == "strip-reflected":
        _need(args, "d")
        return oracle.StripReflected(args.d, args.z, args.x or 0)
    _need(args, "d")
    return oracle.RegulatorJoint(args.z, args.mark, args.d, args.x or 0)


def cmd_oracle(args, rep: Report):
    m = rep.model
    if args.kind == "strip":
        spec = oracle.StripSpec(args.lower, args.upper, _payoff(args), args.start)
        sol = oracle.solve_strip_full(m, spec)
        params = dict(lower=args.lower, upper=args.upper, start=args.start, payoff=args.payoff,
                      z=args.z, v=m.kill_v)
        rep.add("strip_up", sol.up, **params)
        rep.add("strip_down", sol.down, **params)
        rep.diagnostics["mass_up"] = sol.mass_up
        return EXIT_OK
    cfg = oracle.PathConfig(n_paths=args.n_paths, seed=args.seed, max_steps=args.max_steps)
    fn = _functional(args)
    est = oracle.simulate(m, cfg, fn)
    params = {k: v for k, v in vars(fn).items() if not k.startswith("_")}
    if isinstance(fn, oracle.StripSpec):
        params["payoff"] = args.payoff
    params.update(seed=args.seed, n_paths=args.n_paths, v=m.kill_v)
    rep.add("mean", est.mean, **params)
    rep.add("std_err", est.std_err, **params)
    rep.diagnostics.update(n_effective=est.n_effective, censored_fraction=est.censored_fraction,
                           censoring_warning=est.censoring_warning, seed=est.seed)
    return EXIT_OK


def cmd_verify(args, rep: Report):
    results = run_checks(rep.model, width=args.width, mc=args.mc, n_paths=args.n_paths,
                         seed=args.seed)
    rep.diagnostics["checks"] = [r.to_dict() for r in results]
    rep.diagnostics["passed"] = all(r.passed for r in results)
    if not args.quiet:
        for r in results:
            tag = "SKIP" if r.skipped else ("PASS" if r.passed else "FAIL")
            print(f"{tag:4s} {r.name:20s} {r.description}", file=sys.stderr)
    return EXIT_OK if rep.diagnostics["passed"] else EXIT_NUMERIC


def _need(args, *names):
    miss = [n for n in names if getattr(args, n, None) is None]
    if miss:
        raise UsageError("missing " + ", ".join(f"--{n}" for n in miss))


# --------------------------------------------------------------- parser
def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="macscale", description="Exit and reflection transforms of "
                "upward skip-free Markov additive chains.")
    p.add_argument("--version", action="version", version=f"macscale {__version__}")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def common(sp, kill=True, kinds=None):
        if kinds:
            sp.add_argument("kind", choices=kinds)
        sp.add_argument("model", help="model JSON file")
        if kill:
            sp.add_argument("--v", type=float, help="override the model's survival probability")
        sp.add_argument("--out", help="write the report here instead of stdout")
        sp.add_argument("--format", choices=("json", "csv"), default="json")
        return sp

    def method(sp):
        sp.add_argument("--method", choices=("ratio", "direct"), default="ratio")

    sp = common(sub.add_parser("validate", help="check a model file"), kill=False)
    sp.set_defaults(fn=cmd_validate)

    sp = common(sub.add_parser("solve-g", help="first-passage matrix G and occupation L"))
    sp.set_defaults(fn=cmd_solve_g)

    sp = common(sub.add_parser("scale", help="scale matrices W(0..nmax)"))
    sp.add_argument("--nmax", type=int, required=True)
    sp.set_defaults(fn=cmd_scale)

    sp = common(sub.add_parser("exit", help="one- and two-sided exit transforms"),
                kinds=("two-up", "two-down", "one-down"))
    sp.add_argument("--a", type=int)
    sp.add_argument("--b", type=int)
    sp.add_argument("--z", type=float, default=1.0)
    method(sp)
    sp.set_defaults(fn=cmd_exit)

    sp = common(sub.add_parser("reflect", help="reflected passage transforms"),
                kinds=("one", "two"))
    sp.add_argument("--a", type=int)
    sp.add_argument("--b", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--x", type=int)
    sp.add_argument("--z", type=float, default=1.0)
    method(sp)
    sp.set_defaults(fn=cmd_reflect)

    sp = common(sub.add_parser("regulators", help="joint transform of both regulators"),
                kill=False)
    sp.add_argument("--d", type=int, required=True)
    sp.add_argument("--x", type=int, default=0)
    sp.add_argument("--z", type=float, required=True)
    sp.add_argument("--v", dest="mark", type=float, required=True,
                    help="weight per push at the upper barrier")
    sp.add_argument("--kill", type=float, help="override the model's survival probability")
    method(sp)
    sp.set_defaults(fn=cmd_regulators)

    sp = common(sub.add_parser("oracle", help="exact strip solver or Monte Carlo"),
                kinds=("strip", "simulate"))
    sp.add_argument("--functional", default="strip",
                    choices=("strip", "occupation", "hit", "lower-reflected",
                             "strip-reflected", "regulator-joint"))
    sp.add_argument("--lower", type=int, default=-(1 << 40))
    sp.add_argument("--upper", type=int, default=200)
    sp.add_argument("--start", type=int, default=0)
    sp.add_argument("--level", type=int, default=0)
    sp.add_argument("--payoff", choices=_PAYOFFS, default="indicator-up")
    sp.add_argument("--z", type=float, default=1.0)
    sp.add_argument("--time-v", type=float, default=1.0, help="extra discount per step")
    sp.add_argument("--mark", type=float, default=1.0)
    sp.add_argument("--a", type=int)
    sp.add_argument("--b", type=int)
    sp.add_argument("--d", type=int)
    sp.add_argument("--x", type=int)
    sp.add_argument("--n-paths", type=int, default=100_000)
    sp.add_argument("--max-steps", type=int, default=1_000_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.set_defaults(fn=cmd_oracle)

    sp = common(sub.add_parser("verify", help="run the self-check suite"))
    sp.add_argument("--width", type=int, default=4)
    sp.add_argument("--mc", action="store_true", help="include Monte Carlo checks")
    sp.add_argument("--n-paths", type=int, default=20_000)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--quiet", action="store_true")
    sp.set_defaults(fn=cmd_verify)
    return p


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return EXIT_USAGE
    rep = Report(["macscale"] + argv, None)
    code = EXIT_OK
    caught = []
    try:
        rep.model = _load(args)
        if args.command != "validate":
            require_valid(rep.model)
        with warnings.catch_warnings(record=True) as caught:
            warnings.simplefilter("always")
            code = args.fn(args, rep)
    except UsageError as err:
        print(str(err), file=sys.stderr)
        return EXIT_USAGE
    except MacError as err:
        rep.diagnostics["error"] = str(err)
        rep.diagnostics["error_type"] = type(err).__name__
        print(f"error: {err}", file=sys.stderr)
        code = err.exit_code
    if caught:
        rep.diagnostics["warnings"] = [f"{w.category.__name__}: {w.message}" for w in caught]
    out = rep.to_dict()
    text = report_to_csv(out) if args.format == "csv" else report_to_json(out)
    if args.out:
        Path(args.out).write_text(text)
    else:
        sys.stdout.write(text if text.endswith("\n") else text + "\n")
    return code


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
