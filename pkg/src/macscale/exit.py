"""Exit and reflection transforms.

Conventions: the chain starts at level 0 (or at ``x`` inside a
reflection strip). ``a`` is the upper level, ``-b`` the lower barrier,
``z`` marks the undershoot or lower regulator and the model's ``kill_v``
discounts time.

Every operation takes ``method="ratio"`` (default) or ``"direct"``.
The ratio form multiplies bounded matrices ``R(n)`` and ``S_z(n)`` and
solves one-level exit problems with nonnegative right-hand sides. It stays
accurate when ``W(a+b)`` is far too ill-conditioned to invert. The direct
form evaluates the closed matrix expressions in ``W``, ``Z``, ``G`` and
``L`` with LU solves and is kept for cross-checking at small widths.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from ._nonneg import solve_mmatrix
from .errors import ConditioningWarning, DomainWarning, NumericalError, ValidationError
from .fundamental import fundamental_G, occupation_L
from .model import eval_F
from .scale import (ScaleTable, ensure_table, ratio_product, ratio_step, z_matrix,
                    z_matrix_shifted, z_ratios)

COND_ERROR = 1e14
SERIES_SWITCH_COND = 1e8


@dataclass(frozen=True)
class ExitQuery:
    """Parameters of an exit question; ``v`` overrides the table's killing."""

    a: int = 1
    b: int = 1
    z: float = 1.0
    v: float | None = None

    def __post_init__(self):
        if self.a < 0 or self.b < 0:
            raise ValidationError("levels a and b must be nonnegative")
        _check_z(self.z)
        if self.v is not None and not (0.0 < self.v <= 1.0):
            raise ValidationError("v must lie in (0, 1]")


def _check_z(z):
    z = float(z)
    if not (0.0 < z <= 1.0):
        raise ValidationError(f"z must lie in (0, 1], got {z}")
    return z


def _retable(table: ScaleTable, need: int, kill_v: float | None) -> ScaleTable:
    if kill_v is not None and float(kill_v) != table.kill_v:
        return ensure_table(table.model.with_kill(float(kill_v)), max(need, table.n_max))
    if need > table.n_max:
        raise ValidationError(f"level {need} exceeds table n_max={table.n_max}; extend table")
    return table


def _solve_right(X, A, what):
    """``X A^-1`` by LU with a conditioning check."""
    c = np.linalg.cond(A)
    if not np.isfinite(c) or c > COND_ERROR:
        raise NumericalError(f"{what} is ill-conditioned (condition number {c:.3e})")
    if c > 1e12:
        warnings.warn(f"{what} has condition number {c:.3e}", ConditioningWarning, stacklevel=3)
    return lu_solve(lu_factor(A.T), X.T).T


def _check_method(method):
    if method not in ("ratio", "direct"):
        raise ValidationError(f"unknown method {method!r}")


# ------------------------------------------------------------ upward exit
def two_sided_up(table: ScaleTable, a: int, b: int, method: str = "ratio",
                 kill_v: float | None = None) -> np.ndarray:
    """Phase law at the first passage above ``a`` before going below ``-b``.

    Equals ``W(b) W(a+b)^-1``; ``b = 0`` gives the zero matrix because the
    start already lies at the lower barrier.
    """
    _check_method(method)
    a, b = int(a), int(b)
    if a < 0 or b < 0:
        raise ValidationError("a and b must be nonnegative")
    table = _retable(table, a + b, kill_v)
    N = table.model.n_phases
    if b == 0:
        return np.zeros((N, N))
    if a == 0:
        return np.eye(N)
    if method == "ratio":
        return ratio_product(table.ratios, b, a + b)
    return _solve_right(table.w[b], table.w[a + b], f"W({a + b})")


# -------------------------------------------------------- reflected exits
def f_star(table: ScaleTable, width: int, z: float, method: str = "ratio",
           kill_v: float | None = None) -> np.ndarray:
    """Lower-regulator transform over one unit of upper local time.

    For the chain doubly reflected in ``[-d, 0]`` with ``width = d + 1``,
    returns ``E_0(z^{R-}; J)`` at the first upward regulation.
    """
    _check_method(method)
    z = _check_z(z)
    width = int(width)
    if width < 1:
        raise ValidationError("width must be >= 1")
    table = _retable(table, width, kill_v)
    if method == "ratio":
        return z_ratios(table, z, width)[width]
    N = table.model.n_phases
    I = np.eye(N)
    T = table.w[width] @ (I - eval_F(table.model, z))
    inner = I + _solve_right(T, z_matrix_shifted(table, z, width), "Z(z, width)")
    return _solve_right(z * I, inner, "F* bracket")


def two_sided_reflection_pgf(table: ScaleTable, d: int, x: int, z: float, method: str = "ratio",
                             kill_v: float | None = None) -> np.ndarray:
    """``E_x(z^{R-}; J)`` at the first upward regulation, strip ``[-d, 0]``."""
    _check_method(method)
    z = _check_z(z)
    d, x = int(d), int(x)
    if d < 0 or not (-d <= x <= 0):
        raise ValidationError("need d >= 0 and -d <= x <= 0")
    table = _retable(table, d + 1, kill_v)
    if method == "ratio":
        S = z_ratios(table, z, d + 1)
        return ratio_product(S, d + x + 1, d + 2)
    Fs = f_star(table, d + 1, z, method="direct")
    num = z_matrix_shifted(table, z, d + 1 + x)
    return _solve_right(num, z_matrix_shifted(table, z, d + 1), "Z(z, d+1)") @ Fs


def one_sided_reflected_up(table: ScaleTable, a: int, b: int, z: float, method: str = "ratio",
                           kill_v: float | None = None) -> np.ndarray:
    """``E(z^{R}; J)`` at the first passage above ``a`` for the chain reflected at ``-b``.

    ``R`` is the total push applied at the lower barrier.
    """
    _check_method(method)
    z = _check_z(z)
    a, b = int(a), int(b)
    if a < 1 or b < 0:
        raise ValidationError("need a >= 1 and b >= 0")
    table = _retable(table, a + b, kill_v)
    if method == "ratio":
        S = z_ratios(table, z, a + b)
        return ratio_product(S, b + 1, a + b + 1)
    Fs = f_star(table, a + b, z, method="direct")
    num = z_matrix_shifted(table, z, b + 1)
    return _solve_right(num, z_matrix_shifted(table, z, a + b), "Z(z, a+b)") @ Fs


# ------------------------------------------------------- downward exit
def _exit_below_sweep(table: ScaleTable, z: float, c: int, keep=()):
    """Downward exit transforms on a strip with floor 0 and ceiling ``c``.

    Levels are shifted so the floor sits at 0. Returns ``V`` with
    ``V[y] = E_y(z^{-X_tau}; floor crossed before c is reached)`` for
    ``1 <= y < c``. ``keep`` lists intermediate ceilings whose ``V`` should
    also be returned, as a dict.

    The sweep raises the ceiling one level at a time. With ceiling ``k``
    the new level ``k`` needs ``D(k)``: exit below before climbing to
    ``k + 1``, started at ``k``. A first-step argument gives
    ``B(k) D(k) = sum_m v A-m V_k(k - m)`` with the bracket ``B(k)`` from
    the ratio recursion, where ``V_k(y) = z^-y I`` for ``y <= 0``. Raising
    the ceiling then adds ``R(y) ... R(k-1) D(k)`` to every ``V(y)``.
    """
    B = table.model.kill_v * table.model.blocks
    N = B.shape[1]
    M = B.shape[0] - 2
    R = table.ratios
    V = np.zeros((c + 1, N, N))
    P = np.zeros((c + 1, N, N))
    snaps = {}
    for k in range(1, c):
        rhs = np.zeros((N, N))
        for m in range(1, M + 1):
            y = k - m
            rhs += B[m + 1] * z ** (-y) if y <= 0 else B[m + 1] @ V[y]
        D = solve_mmatrix(table.brackets[k], rhs, table.excess[k])
        P[k] = np.eye(N)
        V[1:k + 1] += P[1:k + 1] @ D
        P[1:k + 1] = P[1:k + 1] @ R[k]
        if k + 1 in keep:
            snaps[k + 1] = V.copy()
    return V, snaps


def two_sided_down(table: ScaleTable, a: int, b: int, z: float, method: str = "ratio",
                   kill_v: float | None = None) -> np.ndarray:
    """``E(v^tau z^{-X_tau}; J_tau)`` for the first passage below ``-b`` before reaching ``a``."""
    _check_method(method)
    z = _check_z(z)
    a, b = int(a), int(b)
    if a < 1 or b < 1:
        raise ValidationError("need a >= 1 and b >= 1")
    table = _retable(table, a + b, kill_v)
    if method == "ratio":
        V, _ = _exit_below_sweep(table, z, a + b)
        return z ** b * V[b]
    I = np.eye(table.model.n_phases)
    w = a + b - 1
    Zw = z_matrix_shifted(table, z, w)
    Fs_inv = (I + _solve_right(table.w[w] @ (I - eval_F(table.model, z)), Zw, "Z(z, a+b-1)")) / z
    up = _solve_right(table.w[b], table.w[a + b], f"W({a + b})")
    inner = z_matrix_shifted(table, z, b) - up @ Fs_inv @ Zw
    return z ** (b - 1) * _solve_right(inner, z_matrix_shifted(table, z, 1), "Z(z, 1)")


def _one_sided_series(table: ScaleTable, b: int, z: float, tol: float = 1e-16,
                      max_levels: int = 200_000) -> np.ndarray:
    """Raise the ceiling of the downward sweep to infinity, keeping only a window."""
    B = table.model.kill_v * table.model.blocks
    N = B.shape[1]
    M = B.shape[0] - 2
    I = np.eye(N)
    R_hist = {}
    d_hist = {}
    win = {}
    Vb = np.zeros((N, N))
    Pb = I.copy()
    quiet = 0
    v = table.model.kill_v
    for k in range(1, max_levels + 1):
        if k <= table.n_max:
            Bk, ex_k, Rk = table.brackets[k], table.excess[k], table.ratios[k]
            dk = table.deficits[k]
        else:
            Rk, dk, Bk, ex_k = ratio_step(B, v, k, R_hist, d_hist)
        d_hist[k] = dk
        d_hist.pop(k - M - 1, None)
        R_hist[k] = Rk
        R_hist.pop(k - M - 1, None)
        rhs = np.zeros((N, N))
        for m in range(1, M + 1):
            y = k - m
            rhs += B[m + 1] * z ** (-y) if y <= 0 else B[m + 1] @ win[y][0]
        D = solve_mmatrix(Bk, rhs, ex_k)
        for y, (Vy, Py) in win.items():
            win[y] = (Vy + Py @ D, Py @ Rk)
        win[k] = (D, Rk.copy())
        win.pop(k - M, None)
        if k >= b:
            term = Pb @ D
            Vb = Vb + term
            Pb = Pb @ Rk
            small = np.abs(term).max() <= tol * max(np.abs(Vb).max(), 1e-300)
            quiet = quiet + 1 if small else 0
            if quiet >= 10 or (np.abs(Pb).max() < 1e-300 and k > b + M):
                return z ** b * Vb
    raise NumericalError(f"downward series did not settle within {max_levels} levels")


def one_sided_down(table: ScaleTable, b: int, z: float, method: str = "auto",
                   kill_v: float | None = None) -> np.ndarray:
    """``E(v^tau z^{-X_tau}; J_tau)`` at the first passage below ``-b`` (no upper barrier).

    Parameters
    ----------
    method : {"auto", "closed", "series"}
        ``"closed"`` evaluates
        ``z^b [Z(z,b) - z W(b) L^-1 (G - zI)^-1 L (v F(z) - I)]``, which
        is singular when ``z`` is an eigenvalue of ``G``. ``"series"`` pushes
        the ceiling of the two-sided problem to infinity and has no such
        singularity. ``"auto"`` uses the closed form unless ``G - zI`` is
        badly conditioned.

    Raises
    ------
    NullRecurrentError
        Unkilled oscillating model.
    """
    z = _check_z(z)
    b = int(b)
    if b < 1:
        raise ValidationError("b must be >= 1")
    table = _retable(table, b, kill_v)
    model = table.model
    L = occupation_L(model)
    G = fundamental_G(model)
    if method not in ("auto", "closed", "series"):
        raise ValidationError(f"unknown method {method!r}")
    gamma = float(np.abs(np.linalg.eigvals(G)).min())
    if z >= gamma and method != "series":
        warnings.warn(f"z={z} is outside (0, gamma={gamma:.6g}); relying on analytic continuation",
                      DomainWarning, stacklevel=2)
    N = model.n_phases
    I = np.eye(N)
    shifted = G - z * I
    cond = np.linalg.cond(shifted)
    if method == "series" or (method == "auto" and cond > SERIES_SWITCH_COND):
        return _one_sided_series(table, b, z)
    if not np.isfinite(cond) or cond > COND_ERROR:
        raise NumericalError(f"z={z} hits an eigenvalue of G (condition number {cond:.3e})")
    T = L @ (eval_F(model, z) - I)
    T = np.linalg.solve(shifted, T)
    T = np.linalg.solve(L, T)
    return z ** b * (z_matrix(table, z, b) - z * table.w[b] @ T)


# -------------------------------------------------------- regulators
def first_increase_transform(F0, Fz, v: float) -> np.ndarray:
    """Transform of the first strict increase of a chain with nonnegative jumps.

    For a Markov additive chain whose level never decreases, with
    generating matrices ``F0 = E(0^{X_1}; J_1)`` (no move) and
    ``Fz = E(z^{X_1}; J_1)``, returns ``E(v^eta z^{X_eta}; J_eta)`` where
    ``eta >= 1`` is the first step with a positive jump:
    ``v (I - v F0)^-1 (Fz - F0)``.

    Raises
    ------
    ValidationError
        ``F0`` or ``Fz`` singular, or ``I - v F0`` singular.
    """
    F0 = np.atleast_2d(np.asarray(F0, dtype=float))
    Fz = np.atleast_2d(np.asarray(Fz, dtype=float))
    v = float(v)
    if F0.shape != Fz.shape or F0.shape[0] != F0.shape[1]:
        raise ValidationError("F0 and Fz must be square matrices of equal size")
    if not (0.0 < v <= 1.0):
        raise ValidationError("v must lie in (0, 1]")
    for A in (F0, Fz):
        if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e14:
            raise ValidationError("the first-increase transform requires invertible generating matrices")
    I = np.eye(F0.shape[0])
    K = I - v * F0
    if np.linalg.cond(K) > 1e14:
        raise ValidationError("I - v F0 is singular: the level never increases")
    return v * np.linalg.solve(K, Fz - F0)


def regulator_joint_transform(table: ScaleTable, d: int, x: int, z: float, v: float,
                              method: str = "ratio") -> np.ndarray:
    """Joint transform of both regulators when the lower barrier is first crossed.

    The chain starts at ``x`` in ``[-d, 0]`` and is pushed down at the
    ceiling 0; the push count is ``R+``. At the first step that would
    take it below ``-d`` the overshoot is ``R-``. Returns
    ``E_x(v^{R+} z^{R-}; J)``. The time discount comes from the table's
    ``kill_v``; ``v`` here only marks ``R+``.
    """
    _check_method(method)
    z = _check_z(z)
    v = float(v)
    if not (0.0 < v <= 1.0):
        raise ValidationError("v must lie in (0, 1]")
    d, x = int(d), int(x)
    if d < 0 or not (-d <= x <= 0):
        raise ValidationError("need d >= 0 and -d <= x <= 0")
    table = _retable(table, d + 2, None)
    N = table.model.n_phases
    I = np.eye(N)
    Lam = table.ratios[d + 1]
    K = I - v * Lam
    if np.linalg.cond(K) > COND_ERROR:
        raise NumericalError("v equals the reciprocal of an eigenvalue of the level-up matrix "
                             "W(d+1) W(d+2)^-1")
    Ux = ratio_product(table.ratios, d + 1 + x, d + 1)
    if method == "ratio":
        V, snaps = _exit_below_sweep(table, z, d + 2, keep=(d + 1,))
        top = np.linalg.solve(K, z * V[d + 1])
        out = Ux @ top
        if x < 0:
            out = out + z * snaps[d + 1][d + 1 + x]
        return out
    Fs = f_star(table, d + 1, z, method="direct")
    X1 = np.linalg.solve(K, Fs - Lam)
    Zd1 = z_matrix_shifted(table, z, d + 1)
    refl = _solve_right(z_matrix_shifted(table, z, d + 1 + x), Zd1, "Z(z, d+1)") @ Fs
    core = Ux @ (X1 - Fs) + refl
    core = _solve_right(core, Fs, "F*(z)") @ Zd1
    return _solve_right(core, z_matrix_shifted(table, z, 1), "Z(z, 1)")
