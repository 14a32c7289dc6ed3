"""Independent ground truth for the exit identities.

Two kinds of oracle are offered:

* exact first-step linear systems on a finite range of levels
  (:func:`solve_strip`, :func:`solve_reflected`, :func:`solve_regulator_joint`);
* seeded Monte Carlo (:func:`simulate`), where path ``k`` of a run draws
  its uniforms from a counter-based hash of ``(seed, k)``. Results do not
  depend on thread count or on the numba/numpy backend.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels as K
from ._accel import configure_threads
from ._nonneg import eliminate, one_minus_pow
from .errors import ValidationError
from .model import MacModel, require_valid

MAX_STATES = 1_000_000
_DENSE_LIMIT = 1500
_FAR = 1 << 40


# ------------------------------------------------------------- payoffs
@dataclass(frozen=True)
class Indicator:
    """Phase at absorption on one side: ``side`` is ``"up"`` or ``"down"``."""

    side: str = "up"


@dataclass(frozen=True)
class ZPowerNegX:
    """``z**(-X_tau)`` on downward absorption."""

    z: float


@dataclass(frozen=True)
class VPowerTime:
    """``v**tau`` on absorption at ``side`` (on top of the model's killing)."""

    v: float
    side: str = "up"


@dataclass(frozen=True)
class Joint:
    """``v**tau * z**(-X_tau)`` on downward absorption."""

    z: float
    v: float


def _payoff_parts(payoff):
    """Return (side, z, v) for a strip payoff."""
    if isinstance(payoff, Indicator):
        side, z, v = payoff.side, 1.0, 1.0
    elif isinstance(payoff, ZPowerNegX):
        side, z, v = "down", payoff.z, 1.0
    elif isinstance(payoff, VPowerTime):
        side, z, v = payoff.side, 1.0, payoff.v
    elif isinstance(payoff, Joint):
        side, z, v = "down", payoff.z, payoff.v
    else:
        raise ValidationError(f"unknown payoff {payoff!r}")
    if side not in ("up", "down"):
        raise ValidationError("side must be 'up' or 'down'")
    if not (0.0 < z <= 1.0) or not (0.0 < v <= 1.0):
        raise ValidationError("payoff parameters must lie in (0, 1]")
    return side, float(z), float(v)


@dataclass(frozen=True)
class StripSpec:
    """Strip with absorption at or below ``lower`` and at ``upper``.

    The chain starts at level ``start`` (default 0). Upward absorption
    happens exactly at ``upper`` because the chain climbs one level at a
    time.
    """

    lower: int
    upper: int
    payoff: object = field(default_factory=Indicator)
    start: int = 0

    def __post_init__(self):
        if not (self.lower < self.start < self.upper):
            raise ValidationError("need lower < start < upper")


# ---------------------------------------------------------- exact solvers
def _solve(Q, rhs, leak):
    n = Q.shape[0]
    if n <= _DENSE_LIMIT:
        return eliminate(Q.toarray() if sp.issparse(Q) else Q, rhs, leak)
    A = sp.identity(n, format="csc") - sp.csc_matrix(Q)
    return spla.splu(A).solve(rhs)


@dataclass(frozen=True)
class StripSolution:
    """Absorption transforms of a strip solve.

    ``up`` and ``down`` hold the two sides, measured from ``start``.
    ``mass_up`` is the largest row sum of ``up`` computed with the same
    time discount and no ``z`` weight. When ``upper`` is only a truncation of a one-sided
    downward problem, it bounds the error of every entry of ``down``
    because each discarded path would have scored at most one.
    """

    up: np.ndarray
    down: np.ndarray
    mass_up: float


def solve_strip_full(model: MacModel, spec: StripSpec) -> StripSolution:
    """First-step linear system on levels ``lower+1 .. upper-1``.

    Unknowns are the transforms started from each (level, phase). Rows
    of ``Q`` move between interior levels; jumps reaching ``upper`` feed
    the up-absorption column block and jumps at or below ``lower`` feed
    the down block with weight ``z**(start - level)``.
    """
    require_valid(model)
    side, z, v_extra = _payoff_parts(spec.payoff)
    N = model.n_phases
    M = model.max_down_jump
    levels = spec.upper - spec.lower - 1
    n = levels * N
    if (spec.upper - spec.lower + M) * N > MAX_STATES:
        raise ValidationError("strip too large for the exact solver")
    blocks = model.kill_v * model.blocks
    rows, cols, vals = [], [], []
    up = np.zeros((n, N))
    dn = np.zeros((n, N))
    leak = np.full(n, 1.0 - model.kill_v)
    ii = np.arange(N)
    rr, cc = np.meshgrid(ii, ii, indexing="ij")
    for li in range(levels):
        lvl = spec.lower + 1 + li
        r0 = li * N
        for k in range(M + 2):
            t = lvl + 1 - k
            blk = blocks[k]
            if not blk.any():
                continue
            if t >= spec.upper:
                up[r0:r0 + N] += blk
                leak[r0:r0 + N] += blk.sum(axis=1)
            elif t <= spec.lower:
                dn[r0:r0 + N] += blk * z ** (spec.start - t)
                leak[r0:r0 + N] += blk.sum(axis=1)
            else:
                c0 = (t - spec.lower - 1) * N
                rows.append((r0 + rr).ravel())
                cols.append((c0 + cc).ravel())
                vals.append(blk.ravel())
    if rows:
        Q = sp.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))),
                          shape=(n, n)).tocsr()
    else:
        Q = sp.csr_matrix((n, n))
    s = (spec.start - spec.lower - 1) * N
    X = _solve(v_extra * Q, v_extra * np.hstack([up, dn]), v_extra * leak + (1.0 - v_extra))
    block = X[s:s + N]
    mass = float(block[:, :N].sum(axis=1).max())
    return StripSolution(block[:, :N], block[:, N:], mass)


def solve_strip(model: MacModel, spec: StripSpec) -> np.ndarray:
    """Exact strip transform for the side selected by ``spec.payoff``."""
    side, _, _ = _payoff_parts(spec.payoff)
    sol = solve_strip_full(model, spec)
    return sol.up if side == "up" else sol.down


def solve_reflected(model: MacModel, lower: int, upper: int, start: int, z: float) -> np.ndarray:
    """Chain pushed up at ``lower``, stopped on its first jump above ``upper``.

    Returns ``E_start(z^R; J)`` at the stopping time, where ``R`` is the
    total push at the lower barrier. With ``[lower, upper] = [-d, 0]``
    this is the two-sided reflection transform at the first upward
    regulation; with ``[-b, a-1]`` it is the one-sided reflected passage
    above ``a``.
    """
    require_valid(model)
    if not (lower <= start <= upper):
        raise ValidationError("need lower <= start <= upper")
    N = model.n_phases
    M = model.max_down_jump
    L = upper - lower + 1
    n = L * N
    blocks = model.kill_v * model.blocks
    Q = np.zeros((n, n))
    R = np.zeros((n, N))
    leak = np.full(n, 1.0 - model.kill_v)
    for li in range(L):
        lvl = lower + li
        r = slice(li * N, li * N + N)
        for k in range(M + 2):
            t = lvl + 1 - k
            if t > upper:
                R[r] += blocks[k]
                leak[r] += blocks[k].sum(axis=1)
            elif t < lower:
                Q[r, 0:N] += blocks[k] * z ** (lower - t)
                leak[r] += blocks[k].sum(axis=1) * one_minus_pow(z, lower - t)
            else:
                c = (t - lower) * N
                Q[r, c:c + N] += blocks[k]
    X = eliminate(Q, R, leak)
    s = (start - lower) * N
    return X[s:s + N]


def solve_regulator_joint(model: MacModel, d: int, x: int, z: float, v: float) -> np.ndarray:
    """Chain pushed down at 0, stopped on its first jump below ``-d``.

    Returns ``E_x(v^{R+} z^{R-}; J)`` where ``R+`` counts pushes at 0 and
    ``R-`` is the final overshoot below ``-d``.
    """
    require_valid(model)
    if not (-d <= x <= 0):
        raise ValidationError("need -d <= x <= 0")
    N = model.n_phases
    M = model.max_down_jump
    L = d + 1
    n = L * N
    blocks = model.kill_v * model.blocks
    Q = np.zeros((n, n))
    R = np.zeros((n, N))
    leak = np.full(n, 1.0 - model.kill_v)
    top = (L - 1) * N
    for li in range(L):
        lvl = -d + li
        r = slice(li * N, li * N + N)
        for k in range(M + 2):
            t = lvl + 1 - k
            if t > 0:
                Q[r, top:top + N] += v * blocks[k]
                leak[r] += (1.0 - v) * blocks[k].sum(axis=1)
            elif t < -d:
                R[r] += blocks[k] * z ** (-d - t)
                leak[r] += blocks[k].sum(axis=1)
            else:
                c = (t + d) * N
                Q[r, c:c + N] += blocks[k]
    X = eliminate(Q, R, leak)
    s = (x + d) * N
    return X[s:s + N]


# ---------------------------------------------------------- Monte Carlo
@dataclass(frozen=True)
class PathConfig:
    """Simulation settings.

    ``n_paths`` paths are run from each initial phase. ``kill_v`` overrides
    the model's survival probability when given.
    """

    n_paths: int = 100_000
    seed: int = 0
    max_steps: int = 1_000_000
    kill_v: float | None = None

    def __post_init__(self):
        if self.n_paths < 1:
            raise ValidationError("n_paths must be >= 1")
        if self.max_steps < 1:
            raise ValidationError("max_steps must be >= 1")


@dataclass(frozen=True)
class OccupationCount:
    """Visits to ``level`` before reaching ``upper`` or going to/below ``lower``."""

    level: int = 0
    upper: int = 200
    lower: int = -_FAR


@dataclass(frozen=True)
class HitLevel:
    """Phase at the first visit of ``level``; paths leaving ``(lower, upper)`` score 0."""

    level: int
    upper: int = 200
    lower: int = -_FAR


@dataclass(frozen=True)
class LowerReflected:
    """``z^R`` at the first passage above ``a`` for the chain reflected at ``-b``."""

    a: int
    b: int
    z: float


@dataclass(frozen=True)
class StripReflected:
    """``z^{R-}`` at the first upward regulation of the chain reflected in ``[-d, 0]``."""

    d: int
    z: float
    x: int = 0


@dataclass(frozen=True)
class RegulatorJoint:
    """``v^{R+} z^{R-}`` at the first jump below ``-d`` of the chain pushed down at 0."""

    z: float
    v: float
    d: int
    x: int = 0


@dataclass
class Estimate:
    """Monte Carlo estimate of a phase matrix.

    ``mean[i, j]`` averages the path functional times ``1(J_end = j)`` over
    paths started in phase ``i``; ``std_err`` is the matching standard error.
    """

    mean: np.ndarray
    std_err: np.ndarray
    n_effective: int
    censored_fraction: float
    seed: int
    censoring_warning: bool = False

    def zscore(self, exact) -> np.ndarray:
        diff = np.abs(self.mean - np.asarray(exact))
        se = np.where(self.std_err > 0, self.std_err, np.inf)
        z = diff / se
        return np.where((self.std_err == 0) & (diff > 1e-12), np.inf, np.where(self.std_err == 0, 0.0, z))

    def within(self, exact, k: float = 3.0) -> bool:
        return bool(np.all(self.zscore(exact) <= k))


def _cumulative_table(model: MacModel) -> np.ndarray:
    B = model.blocks
    N = model.n_phases
    flat = np.transpose(B, (1, 0, 2)).reshape(N, -1)
    cum = np.cumsum(flat, axis=1)
    cum /= cum[:, -1:]
    cum[:, -1] = 1.0
    return cum


_CHUNK = 1 << 18


def _plan(functional):
    """Map a functional to (mode, start_level, lower, upper, target)."""
    f = functional
    if isinstance(f, StripSpec):
        return K.MODE_STRIP, f.start, f.lower, f.upper, 0
    if isinstance(f, OccupationCount):
        return K.MODE_OCCUPATION, 0, f.lower, f.upper, f.level
    if isinstance(f, HitLevel):
        return K.MODE_HIT, 0, f.lower, f.upper, f.level
    if isinstance(f, LowerReflected):
        return K.MODE_LOWER_REFLECT, 0, -f.b, f.a, 0
    if isinstance(f, StripReflected):
        return K.MODE_STRIP_REFLECT, f.x, -f.d, 0, 0
    if isinstance(f, RegulatorJoint):
        return K.MODE_UPPER_REFLECT, f.x, -f.d, 0, 0
    raise ValidationError(f"unsupported functional {f!r}")


def _path_values(functional, rec):
    """Per-path payoff (zero for killed or censored paths)."""
    f = functional
    ev, lev, steps, reg = rec["event"], rec["level"], rec["steps"], rec["reg"]
    val = np.zeros(ev.shape[0])
    if isinstance(f, StripSpec):
        side, z, v = _payoff_parts(f.payoff)
        if side == "up":
            ok = ev == K.EV_UP
            val[ok] = 1.0
        else:
            ok = ev == K.EV_DOWN
            val[ok] = z ** (-(lev[ok] - f.start).astype(float))
        if v != 1.0:
            val[ok] *= v ** steps[ok].astype(float)
    elif isinstance(f, HitLevel):
        val[ev == K.EV_HIT] = 1.0
    elif isinstance(f, (LowerReflected, StripReflected)):
        ok = ev == K.EV_UP
        val[ok] = f.z ** reg[ok].astype(float)
    elif isinstance(f, RegulatorJoint):
        ok = ev == K.EV_DOWN
        val[ok] = f.v ** reg[ok].astype(float) * f.z ** (-f.d - lev[ok]).astype(float)
    return val


def simulate(model: MacModel, cfg: PathConfig, functional) -> Estimate:
    """Monte Carlo estimate of a phase-matrix functional.

    Parameters
    ----------
    model : MacModel
    cfg : PathConfig
    functional
        A :class:`StripSpec` (with its payoff) or one of
        :class:`OccupationCount`, :class:`HitLevel`, :class:`LowerReflected`,
        :class:`StripReflected`, :class:`RegulatorJoint`.

    Returns
    -------
    Estimate
        Identical on every call with the same inputs.
    """
    require_valid(model)
    configure_threads()
    kill = model.kill_v if cfg.kill_v is None else float(cfg.kill_v)
    if not (0.0 < kill <= 1.0):
        raise ValidationError("kill_v must lie in (0, 1]")
    mode, start_level, lower, upper, target = _plan(functional)
    N = model.n_phases
    cum = _cumulative_table(model)
    key = K.seed_key(cfg.seed)
    n = cfg.n_paths
    s1 = np.zeros((N, N))
    s2 = np.zeros((N, N))
    censored = 0
    occ = mode == K.MODE_OCCUPATION
    for i in range(N):
        for lo in range(0, n, _CHUNK):
            m = min(_CHUNK, n - lo)
            rec = K.simulate_paths(cum, N, kill, mode, np.full(m, i, dtype=np.int64), start_level,
                                   lower, upper, target, cfg.max_steps, key, i * n + lo,
                                   want_counts=occ)
            censored += int(np.count_nonzero(rec["event"] == K.EV_CENSORED))
            if occ:
                c = rec["counts"]
                s1[i] += c.sum(axis=0)
                s2[i] += (c * c).sum(axis=0)
            else:
                val = _path_values(functional, rec)
                s1[i] += np.bincount(rec["phase"], weights=val, minlength=N)
                s2[i] += np.bincount(rec["phase"], weights=val * val, minlength=N)
    mean = s1 / n
    if n > 1:
        var = np.maximum(s2 / n - mean * mean, 0.0) * n / (n - 1)
    else:
        var = np.zeros_like(mean)
    se = np.sqrt(var / n)
    frac = censored / (n * N)
    return Estimate(mean, se, n, frac, int(cfg.seed), frac > 0.01)


def simulate_level_average(model: MacModel, n_steps: int, n_paths: int = 64, seed: int = 0,
                           start_phase: int = 0) -> tuple[float, float]:
    """Mean and standard error of ``X_n / n`` over independent paths (no killing)."""
    require_valid(model)
    configure_threads()
    cum = _cumulative_table(model)
    rec = K.simulate_paths(cum, model.n_phases, 1.0, K.MODE_HORIZON,
                           np.full(n_paths, start_phase, dtype=np.int64), 0, -_FAR, _FAR, 0,
                           int(n_steps), K.seed_key(seed), 0)
    x = rec["level"] / float(n_steps)
    se = x.std(ddof=1) / np.sqrt(n_paths) if n_paths > 1 else 0.0
    return float(x.mean()), float(se)


# ----------------------------------------------------- single trajectories
def _draws(seed: int, path_index: int, n: int) -> np.ndarray:
    key = K.path_keys(K.seed_key(seed), np.array([path_index], dtype=np.uint64))[0]
    return K.uniforms(np.full(n, key, dtype=np.uint64), np.arange(n, dtype=np.uint64))


def sample_path(model: MacModel, n_steps: int, seed: int = 0, path_index: int = 0,
                start_phase: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """One unkilled trajectory ``(X_0..X_n, J_0..J_n)``, same stream as :func:`simulate`."""
    cum = _cumulative_table(model)
    N = model.n_phases
    u = _draws(seed, path_index, n_steps)
    X = np.zeros(n_steps + 1, dtype=np.int64)
    J = np.zeros(n_steps + 1, dtype=np.int64)
    J[0] = start_phase
    last = cum.shape[1] - 1
    for k in range(n_steps):
        o = min(int(np.searchsorted(cum[J[k]], u[k], side="right")), last)
        X[k + 1] = X[k] + 1 - o // N
        J[k + 1] = o % N
    return X, J


def sample_reflected_path(model: MacModel, d: int, n_steps: int, seed: int = 0,
                          path_index: int = 0, start: int = 0, start_phase: int = 0) -> dict:
    """Free path together with its two-sided reflection in ``[-d, 0]``.

    Returns arrays ``X`` (free level), ``H`` (reflected level), ``R_plus``,
    ``R_minus`` and ``J``. ``H`` is kept in the strip by the minimal pushes.
    """
    if not (-d <= start <= 0):
        raise ValidationError("start must lie in [-d, 0]")
    X, J = sample_path(model, n_steps, seed, path_index, start_phase)
    X = X + start
    H = np.empty_like(X)
    Rp = np.zeros_like(X)
    Rm = np.zeros_like(X)
    H[0] = start
    for k in range(n_steps):
        h = H[k] + (X[k + 1] - X[k])
        up = max(h, 0)
        h -= up
        dn = -d - h if h < -d else 0
        h += dn
        H[k + 1] = h
        Rp[k + 1] = Rp[k] + up
        Rm[k + 1] = Rm[k] + dn
    return {"X": X, "H": H, "R_plus": Rp, "R_minus": Rm, "J": J}


def occupation_counts(X: np.ndarray, J: np.ndarray, n_phases: int) -> dict:
    """Visit counts ``{level: array over phases}`` along a trajectory."""
    out = {}
    for x, j in zip(X.tolist(), J.tolist()):
        out.setdefault(x, np.zeros(n_phases, dtype=np.int64))[j] += 1
    return out
