"""Self-check suite run by ``macscale verify``.

Each check compares two independent routes to the same quantity (closed
formula against exact strip solve, recursion against probabilistic
identity, killed against unkilled) and reports the worst discrepancy.
"""
from __future__ import annotations

import time
import warnings
from dataclasses import asdict, dataclass

import numpy as np

from . import exit as ex
from . import oracle
from .errors import MacError
from .fundamental import (fundamental_G, g_defect, hitting_down_sequence, occupation_L,
                          solve_G)
from .model import Drift, MacModel, drift, validate
from .scale import gamma_radius, transform_residual, w_sequence


@dataclass
class CheckResult:
    name: str
    description: str
    passed: bool
    value: float
    tol: float
    skipped: bool = False
    detail: str = ""

    def to_dict(self) -> dict:
        return asdict(self)


def _maxabs(a, b) -> float:
    return float(np.abs(np.asarray(a) - np.asarray(b)).max())


def _finite_occupation(model: MacModel) -> bool:
    return not (model.kill_v == 1.0 and drift(model)[1] == Drift.OSCILLATES)


def _check_validate(model, ctx):
    rep = validate(model)
    return (0.0 if rep.ok else 1.0), 0.5, "; ".join(rep.violations)


def _check_g_defect(model, ctx):
    return g_defect(model, fundamental_G(model)), 1e-12, ""


def _check_g_rows(model, ctx):
    rows = fundamental_G(model).sum(axis=1)
    if model.kill_v < 1.0:
        return float(max(0.0, rows.max() - (1 - 1e-15))), 0.0, "rows below one"
    if ctx["drift"] != Drift.DOWN:
        return float(np.abs(rows - 1).max()), 1e-9, "rows equal one"
    return float(max(0.0, rows.min() - (1 - 1e-12))), 0.0, "some row below one"


def _check_g_strip(model, ctx):
    if model.kill_v == 1.0 and ctx["drift"] == Drift.OSCILLATES:
        return None
    depth = ctx["depth"]
    est = oracle.solve_strip(model, oracle.StripSpec(-depth, 1))
    return _maxabs(est, fundamental_G(model)), 1e-6, f"lower truncation at -{depth}"


def _check_hitting_identity(model, ctx):
    if not ctx["finite"]:
        return None
    n_max = 10
    table = ctx["table"]
    G = fundamental_G(model)
    L = occupation_L(model)
    H = hitting_down_sequence(model, n_max)
    worst = 0.0
    Gn = np.eye(model.n_phases)
    for n in range(1, n_max + 1):
        Gn = Gn @ G
        lhs = np.linalg.solve(L.T, table.w[n].T).T @ Gn
        rhs = np.eye(model.n_phases) - H[n] @ Gn
        worst = max(worst, _maxabs(lhs, rhs) / max(1.0, np.abs(lhs).max()))
    return worst, 1e-8, "n = 1..10, relative"


def _check_occupation(model, ctx):
    if not ctx["finite"]:
        return None
    L = occupation_L(model)
    return float(max(0.0, 1.0 - np.diag(L).min())), 0.0, "diagonal at least one"


def _check_transform(model, ctx):
    gamma = gamma_radius(model)
    z = 0.5 * gamma
    for n_max in (200, 120, 60):
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                table = w_sequence(model, n_max)
            return transform_residual(table, z, n_max), 1e-8, f"z = {z:.6g}, n_max = {n_max}"
        except MacError:
            continue
    return None


def _grid(ctx):
    return ctx["width"], ctx["zs"]


def _check_two_up(model, ctx):
    w, _ = _grid(ctx)
    table = ctx["table"]
    worst = 0.0
    for a in range(1, w + 1):
        for b in range(1, w + 1):
            exact = oracle.solve_strip(model, oracle.StripSpec(-b, a))
            worst = max(worst, _maxabs(ex.two_sided_up(table, a, b), exact))
    return worst, 1e-8, f"a, b <= {w}"


def _check_two_down(model, ctx):
    w, zs = _grid(ctx)
    table = ctx["table"]
    worst = 0.0
    for z in zs:
        for a in range(1, w + 1):
            for b in range(1, w + 1):
                exact = oracle.solve_strip(model, oracle.StripSpec(-b, a, oracle.ZPowerNegX(z)))
                worst = max(worst, _maxabs(ex.two_sided_down(table, a, b, z), exact))
    return worst, 1e-8, f"a, b <= {w}"


def _check_reflection(model, ctx):
    w, zs = _grid(ctx)
    table = ctx["table"]
    worst = 0.0
    for z in zs:
        for d in range(0, w + 1):
            for x in range(-d, 1):
                exact = oracle.solve_reflected(model, -d, 0, x, z)
                worst = max(worst, _maxabs(ex.two_sided_reflection_pgf(table, d, x, z), exact))
    return worst, 1e-8, f"d <= {w}"


def _check_lower_reflected(model, ctx):
    w, zs = _grid(ctx)
    table = ctx["table"]
    worst = 0.0
    for z in zs:
        for a in range(1, w + 1):
            for b in range(0, w + 1):
                exact = oracle.solve_reflected(model, -b, a - 1, 0, z)
                worst = max(worst, _maxabs(ex.one_sided_reflected_up(table, a, b, z), exact))
    return worst, 1e-8, f"a, b <= {w}"


def _check_joint(model, ctx):
    w, zs = _grid(ctx)
    table = ctx["table"]
    worst = 0.0
    for z in zs:
        for v in (0.5, 1.0):
            for d in range(0, w + 1):
                for x in range(-d, 1):
                    exact = oracle.solve_regulator_joint(model, d, x, z, v)
                    got = ex.regulator_joint_transform(table, d, x, z, v)
                    worst = max(worst, _maxabs(got, exact))
    return worst, 1e-8, f"d <= {w}, v in (0.5, 1)"


def _check_one_down(model, ctx):
    if not ctx["finite"]:
        return None
    w, zs = _grid(ctx)
    table = ctx["table"]
    worst = 0.0
    slack = 0.0
    for z in zs:
        for b in range(1, w + 1):
            sol = oracle.solve_strip_full(model, oracle.StripSpec(-b, ctx["depth"],
                                                                  oracle.ZPowerNegX(z)))
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                got = ex.one_sided_down(table, b, z)
            worst = max(worst, _maxabs(got, sol.down) - sol.mass_up)
            slack = max(slack, sol.mass_up)
    return max(worst, 0.0), 1e-8, f"beyond truncation bound {slack:.2e}"


def _check_complement(model, ctx):
    if model.kill_v != 1.0:
        return None
    w, _ = _grid(ctx)
    table = ctx["table"]
    e = np.ones(model.n_phases)
    worst = 0.0
    for a in range(1, w + 1):
        for b in range(1, w + 1):
            tot = ex.two_sided_up(table, a, b) @ e + ex.two_sided_down(table, a, b, 1.0) @ e
            worst = max(worst, float(np.abs(tot - 1).max()))
    return worst, 1e-9, f"a, b <= {w}"


def _check_killing(model, ctx):
    v = 0.95 * model.kill_v
    killed = model.with_kill(v)
    tk = w_sequence(killed, ctx["table"].n_max, guard=False)
    t1 = ctx["table"]
    w, zs = _grid(ctx)
    worst = float((solve_G(killed).result - fundamental_G(model)).max())
    for z in zs:
        for a in range(1, w + 1):
            for b in range(1, w + 1):
                worst = max(worst, float((ex.two_sided_up(tk, a, b) - ex.two_sided_up(t1, a, b)).max()))
                worst = max(worst, float((ex.two_sided_down(tk, a, b, z)
                                          - ex.two_sided_down(t1, a, b, z)).max()))
            worst = max(worst, float((ex.two_sided_reflection_pgf(tk, a, 0, z)
                                      - ex.two_sided_reflection_pgf(t1, a, 0, z)).max()))
    return max(worst, 0.0), 1e-12, f"v = {v:g} against v = {model.kill_v:g}"


def _check_mc_hit(model, ctx):
    if not ctx["mc"] or (model.kill_v == 1.0 and ctx["drift"] == Drift.OSCILLATES):
        return None
    cfg = oracle.PathConfig(n_paths=ctx["n_paths"], seed=ctx["seed"], max_steps=100_000)
    est = oracle.simulate(model, cfg, oracle.StripSpec(-ctx["depth"], 1))
    return float(est.zscore(fundamental_G(model)).max()), 4.0, "standard errors"


def _check_mc_drift(model, ctx):
    if not ctx["mc"] or ctx["drift"] == Drift.OSCILLATES:
        return None
    mean, se = oracle.simulate_level_average(model, 100_000, 16, ctx["seed"])
    agree = np.sign(mean) == -np.sign(ctx["kappa"])
    return (0.0 if agree else 1.0), 0.5, f"X_n/n = {mean:.4g} +- {se:.2g}"


CHECKS = [
    ("validate", "blocks are substochastic and the killing parameter is in range", _check_validate),
    ("g_fixed_point", "G solves its fixed-point equation", _check_g_defect),
    ("g_row_sums", "row sums of G match the drift and killing regime", _check_g_rows),
    ("g_vs_strip", "G equals the up-exit law of a deep strip", _check_g_strip),
    ("hitting_identity", "scale matrices agree with downward hitting laws", _check_hitting_identity),
    ("occupation_diagonal", "expected visits to the start level are at least one", _check_occupation),
    ("transform_identity", "generating function of the scale sequence inverts F(z) - I", _check_transform),
    ("two_sided_up", "two-sided upward exit agrees with the strip solver", _check_two_up),
    ("two_sided_down", "two-sided downward exit agrees with the strip solver", _check_two_down),
    ("one_sided_down", "one-sided downward exit agrees with a truncated strip", _check_one_down),
    ("reflection_pgf", "two-sided reflection transform agrees with the exact solver", _check_reflection),
    ("lower_reflected_up", "reflected upward passage agrees with the exact solver", _check_lower_reflected),
    ("regulator_joint", "joint regulator transform agrees with the exact solver", _check_joint),
    ("complementarity", "up and down exit probabilities add to one", _check_complement),
    ("killing_dominance", "extra killing never increases a transform", _check_killing),
    ("mc_hit_phase", "simulated phase at the first visit of +1 matches G", _check_mc_hit),
    ("mc_drift_sign", "simulated X_n / n has the sign of the drift", _check_mc_drift),
]


def run_checks(model: MacModel, width: int = 4, zs=(0.6, 1.0), mc: bool = False,
               n_paths: int = 20_000, seed: int = 0, only=None) -> list[CheckResult]:
    """Run the self-check suite and return one result per check.

    Parameters
    ----------
    width : int
        Largest ``a``, ``b`` and ``d`` in the exit grids.
    zs : sequence of float
    mc : bool
        Also run the Monte Carlo checks.
    only : iterable of str, optional
        Restrict to these check names.
    """
    rep = validate(model)
    out = []
    if not rep.ok:
        return [CheckResult("validate", CHECKS[0][1], False, 1.0, 0.5, detail="; ".join(rep.violations))]
    kappa, cls = drift(model)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        table = w_sequence(model, 2 * width + 4, guard=False)
    ctx = {"drift": cls, "kappa": kappa, "finite": _finite_occupation(model), "table": table,
           "width": width, "zs": tuple(zs), "depth": 200, "mc": mc, "n_paths": n_paths,
           "seed": seed}
    for name, desc, fn in CHECKS:
        if only is not None and name not in only:
            continue
        t0 = time.perf_counter()
        try:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                res = fn(model, ctx)
        except MacError as err:
            out.append(CheckResult(name, desc, False, float("nan"), 0.0, detail=str(err)))
            continue
        if res is None:
            out.append(CheckResult(name, desc, True, 0.0, 0.0, skipped=True, detail="not applicable"))
            continue
        value, tol, detail = res
        dt = time.perf_counter() - t0
        out.append(CheckResult(name, desc, bool(value <= tol), float(value), float(tol),
                               detail=f"{detail} ({dt:.2f}s)".strip()))
    return out
