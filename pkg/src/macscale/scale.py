"""Scale matrices ``W(n)`` and ``Z(z, n)`` and their ratio sequences.

``W`` is defined by its generating function
``sum_n z^n W(n) = (v F(z) - I)^-1`` and computed by coefficient
recursion. ``W(n)`` grows like ``gamma**-n``, so exit quantities are
assembled from the bounded ratios

* ``R(n) = W(n) W(n+1)^-1`` (probability of climbing one level before
  leaving a strip of depth ``n``), and
* ``S_z(n) = Z(z, n-1) Z(z, n)^-1``,

which obey their own first-step recursions with nonnegative terms.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._nonneg import eliminate, one_minus_pow
from .errors import ConditioningWarning, NumericalError, ValidationError
from .model import MacModel, eval_F, require_valid

COND_WARN = 1e12
BLOWUP = 1e300


@dataclass(frozen=True, eq=False)
class ScaleTable:
    """Scale sequence ``W(0..n_max)`` with the bounded ratios ``R(0..n_max)``.

    Attributes
    ----------
    model : MacModel
        Source model; its ``kill_v`` is baked into every entry.
    n_max : int
    w : ndarray, shape (n_max + 1, N, N)
    ratios : ndarray, shape (n_max + 1, N, N)
        ``ratios[n] = W(n) W(n+1)^-1``; ``ratios[0]`` is zero.
    brackets : ndarray, shape (n_max + 1, N, N)
        Matrices ``B(n)`` with ``ratios[n] = B(n)^-1 v A1``.
    excess : ndarray, shape (n_max + 1, N)
        Row sums ``B(n) e``, computed without cancellation.
    deficits : ndarray, shape (n_max + 1, N)
        Row deficits ``e - ratios[n] e``: the killed or absorbed mass.
    """

    model: MacModel
    n_max: int
    w: np.ndarray
    ratios: np.ndarray
    brackets: np.ndarray
    excess: np.ndarray
    deficits: np.ndarray

    @property
    def kill_v(self) -> float:
        return self.model.kill_v

    @property
    def model_id(self) -> str:
        return self.model.fingerprint()


def ratio_step(B, v, n, ratios, deficits, z=None):
    """One step of the first-step recursion for level ``n``.

    From level ``n`` above a floor at 0 the chain climbs one level with
    ``v A1``, stays with ``v A0``, or drops ``m`` levels and then has to
    climb back through ``ratios[n-m] ... ratios[n-1]``. With ``z=None``
    the floor absorbs (the ratios are ``R(n) = W(n) W(n+1)^-1``);
    otherwise the chain is pushed back to level 1 with weight
    ``z**overshoot`` (the ratios are ``S_z(n)``).

    ``ratios`` and ``deficits`` map lower levels to their matrices and row
    deficits ``e - ratio e``. Returns ``(ratio, deficit, bracket, excess)``
    where ``bracket @ ratio = v A1`` and ``excess = bracket @ e``.
    """
    N = B.shape[1]
    M = B.shape[0] - 2
    ones = np.ones(N)
    T = B[1].copy()
    rest = np.full(N, 1.0 - v)
    P = np.eye(N)
    dP = np.zeros(N)
    for m in range(1, M + 1):
        k = n - m
        if k >= 1:
            dP = deficits[k] + ratios[k] @ dP
            P = ratios[k] @ P
            T += B[m + 1] @ P
            rest += B[m + 1] @ dP
        elif z is None:
            rest += B[m + 1] @ ones
        else:
            c = z ** (m + 1 - n)
            T += c * (B[m + 1] @ P)
            rest += B[m + 1] @ (one_minus_pow(z, m + 1 - n) * ones + c * dP)
    excess = B[0] @ ones + rest
    X = eliminate(T, np.column_stack([B[0], rest]), excess)
    return X[:, :N], X[:, N], np.eye(N) - T, excess


def _ratio_recursion(B, v, n_max, z=None):
    """Ratios, deficits, brackets and bracket excesses for levels ``0..n_max``."""
    N = B.shape[1]
    out = np.zeros((n_max + 1, N, N))
    deficits = np.zeros((n_max + 1, N))
    brackets = np.zeros((n_max + 1, N, N))
    excess = np.zeros((n_max + 1, N))
    for n in range(1, n_max + 1):
        out[n], deficits[n], brackets[n], excess[n] = ratio_step(B, v, n, out, deficits, z)
    return out, deficits, brackets, excess


def w_sequence(model: MacModel, n_max: int, guard: bool = True) -> ScaleTable:
    """Build the scale table up to ``n_max``.

    Parameters
    ----------
    model : MacModel
    n_max : int
    guard : bool
        When true, entries above ``1e300`` raise. When false the table is
        silently truncated before the first such index.

    Raises
    ------
    NumericalError
        ``A1`` is singular, or the sequence blows up.
    """
    require_valid(model)
    n_max = int(n_max)
    if n_max < 0:
        raise ValidationError("n_max must be >= 0")
    B = model.kill_v * model.blocks
    if np.linalg.cond(B[0]) > 1e14:
        raise NumericalError("A1 is singular; the scale sequence is undefined")
    inv_up = np.linalg.inv(B[0])
    W, bad = _kernels.w_recursion(B, inv_up, max(n_max, 1))
    W = W[: n_max + 1]
    if bad >= 0 and bad <= n_max:
        if guard:
            raise NumericalError(f"scale blow-up at n={bad}; reduce n_max")
        n_max = bad - 1
        W = W[: n_max + 1]
    R, Dr, Bk, Ex = _ratio_recursion(B, model.kill_v, n_max)
    if n_max >= 1:
        conds = np.linalg.cond(W[1:])
        big = np.nonzero(conds > COND_WARN)[0]
        if big.size:
            warnings.warn(f"W(n) condition number exceeds {COND_WARN:.0e} from n={big[0] + 1}; "
                          "direct formulas lose accuracy there", ConditioningWarning, stacklevel=2)
    for arr in (W, R, Bk, Ex, Dr):
        arr.setflags(write=False)
    return ScaleTable(model, n_max, W, R, Bk, Ex, Dr)


def ensure_table(model_or_table, n_needed: int) -> ScaleTable:
    if isinstance(model_or_table, ScaleTable):
        if model_or_table.n_max >= n_needed:
            return model_or_table
        model_or_table = model_or_table.model
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", ConditioningWarning)
        return w_sequence(model_or_table, n_needed)


def z_matrix(table: ScaleTable, z: float, n: int) -> np.ndarray:
    """Second scale matrix ``z^-n [I + sum_{k=0}^n z^k W(k) (I - v F(z))]``."""
    n = int(n)
    if n < 0:
        raise ValidationError("n must be >= 0")
    if n > table.n_max:
        raise ValidationError(f"n={n} exceeds table n_max={table.n_max}; extend table")
    z = float(z)
    if not z > 0:
        raise ValidationError("z must be positive")
    N = table.model.n_phases
    if n == 0:
        return np.eye(N)
    coef = z ** (np.arange(n + 1) - n)
    S = np.tensordot(coef, table.w[: n + 1], axes=1)
    return S @ (np.eye(N) - eval_F(table.model, z)) + z ** (-n) * np.eye(N)


def z_matrix_shifted(table: ScaleTable, z: float, n: int) -> np.ndarray:
    """``z^-1 Z(z, n-1)`` for ``n >= 1`` and ``I`` for ``n = 0``.

    This is the partial sum stopped one term earlier. The reflection
    and exit identities in their usual matrix form are stated with it.
    """
    n = int(n)
    if n == 0:
        return np.eye(table.model.n_phases)
    return z_matrix(table, z, n - 1) / float(z)


def z_ratios(table: ScaleTable, z: float, n: int) -> np.ndarray:
    """``S_z(k) = Z(z, k-1) Z(z, k)^-1`` for ``k = 0..n`` (index 0 unused)."""
    B = table.model.kill_v * table.model.blocks
    return _ratio_recursion(B, table.model.kill_v, int(n), float(z))[0]


def ratio_product(R: np.ndarray, lo: int, hi: int) -> np.ndarray:
    """``R[lo] R[lo+1] ... R[hi-1]``; identity when ``lo == hi``."""
    P = np.eye(R.shape[1])
    for k in range(lo, hi):
        P = P @ R[k]
    return P


def gamma_radius(model: MacModel) -> float:
    """Smallest eigenvalue modulus of ``G`` (the killed one when ``v < 1``)."""
    from .fundamental import fundamental_G

    return float(np.abs(np.linalg.eigvals(fundamental_G(model))).min())


def scaled_w_sequence(model: MacModel, z: float, n_max: int) -> np.ndarray:
    """``z**n W(n)`` for ``n = 0..n_max`` without forming ``W(n)``.

    Runs the coefficient recursion with every block rescaled by the
    matching power of ``z``, so terms stay bounded for ``z`` below the
    radius of convergence even when ``W(n)`` itself would overflow.
    """
    z = float(z)
    if z <= 0.0:
        raise ValidationError("z must be positive")
    B = model.kill_v * model.blocks
    Bz = B * z ** np.maximum(np.arange(B.shape[0]) - 1, 0)[:, None, None]
    inv_up = z * np.linalg.inv(B[0])
    U, bad = _kernels.w_recursion(Bz, inv_up, max(int(n_max), 1))
    if 0 <= bad <= n_max:
        raise NumericalError(f"scaled scale sequence blows up at n={bad}; z is too large")
    return U[: int(n_max) + 1]


def transform_partial_sum(table: ScaleTable, z: float, n_max: int | None = None) -> np.ndarray:
    """``sum_{n <= n_max} z^n W(n)``, accumulated from the scaled recursion.

    ``n_max`` defaults to the table's and may exceed it.
    """
    n = table.n_max if n_max is None else int(n_max)
    return scaled_w_sequence(table.model, z, n).sum(axis=0)


def transform_residual(table: ScaleTable, z: float, n_max: int | None = None,
                       side: str = "left") -> float:
    """Infinity norm of ``(v F(z) - I) sum_{n<=n_max} z^n W(n) - I``.

    ``side="right"`` multiplies the partial sum from the other side.
    """
    S = transform_partial_sum(table, z, n_max)
    N = table.model.n_phases
    T = eval_F(table.model, z) - np.eye(N)
    prod = T @ S if side == "left" else S @ T
    return float(np.abs(prod - np.eye(N)).sum(axis=1).max())
