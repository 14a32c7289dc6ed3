"""First-passage matrices of the level process.

* ``G``: phase distribution (with killing weight) at the first visit of
  level ``+1`` from level ``0``.
* descending ladder matrices ``K[k]``: phase at the first strict descent
  below the start, landing ``k`` levels down.
* ``hitting_down(n)``: phase at the first visit of level ``-n``.
* ``L``: expected visits to the start level, infinite horizon.
* ``L(n)``: expected visits to the start level before level ``n`` is hit.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.linalg import lu_factor, lu_solve

from . import _kernels
from .errors import NumericalError, ValidationError
from .model import Drift, MacModel, drift, require_valid

DEFAULT_TOL = 1e-13
DEFAULT_MAX_ITER = 1_000_000
_NEWTON_MAX_PHASES = 24


class NullRecurrentError(NumericalError):
    """Raised when an unkilled, oscillating model makes occupation infinite."""

    def __init__(self, what: str = "L"):
        super().__init__(f"{what} infinite (null-recurrent level process)")


@dataclass(frozen=True)
class SolveReport:
    """Result of an iterative matrix solve."""

    result: np.ndarray
    iterations: int
    residual: float
    monotone: bool = True


def killed_blocks(model: MacModel, v: float | None = None) -> np.ndarray:
    v = model.kill_v if v is None else float(v)
    return v * model.blocks


def _poly(B, G):
    S = B[-1].copy()
    for j in range(B.shape[0] - 2, -1, -1):
        S = B[j] + S @ G
    return S


def g_defect(model: MacModel, G: np.ndarray) -> float:
    """Infinity norm of ``G - v sum_m A_m G^(m+1)``."""
    return float(np.abs(G - _poly(killed_blocks(model), G)).sum(axis=1).max())


def _newton_polish(B, G, stochastic, steps=30):
    """Newton steps on ``sum_j B[j] G^j - G = 0``.

    When ``stochastic`` the row-sum constraint ``G e = e`` is appended,
    which removes the rank defect of the Jacobian at a critical model.
    """
    n = G.shape[0]
    eye = np.eye(n * n)
    best = G
    best_res = np.abs(_poly(B, G) - G).max()
    for _ in range(steps):
        pw = [np.eye(n)]
        for _j in range(B.shape[0]):
            pw.append(pw[-1] @ G)
        J = -eye.copy()
        for j in range(1, B.shape[0]):
            for i in range(j):
                J += np.kron(B[j] @ pw[i], pw[j - 1 - i].T)
        r = _poly(B, G) - G
        rhs = -r.ravel()
        if stochastic:
            C = np.kron(np.eye(n), np.ones((1, n)))
            J = np.vstack([J, C])
            rhs = np.concatenate([rhs, 1.0 - G.sum(axis=1)])
        H = np.linalg.lstsq(J, rhs, rcond=None)[0].reshape(n, n)
        Gn = G + H
        res = np.abs(_poly(B, Gn) - Gn).max()
        if not np.all(np.isfinite(Gn)):
            break
        if res <= best_res:
            best, best_res = Gn, res
        G = Gn
        if np.abs(H).max() < 1e-16:
            break
    return best


def solve_G(model: MacModel, tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
            polish: bool = True) -> SolveReport:
    """Minimal nonnegative solution of ``G = v sum_m A_m G^(m+1)``.

    Fixed-point iteration from ``G = 0``; iterates increase entrywise to
    the minimal solution. For slowly mixing models the iteration is
    stopped once steps fall below ``1e-9`` and finished with a few Newton
    steps. For unkilled models that drift up or oscillate the rows of ``G``
    sum to one, and that constraint is imposed in the Newton steps.

    Parameters
    ----------
    model : MacModel
    tol : float
        Target for the infinity norm of the fixed-point defect.
    max_iter : int
    polish : bool
        Disable to get the bare iteration.

    Returns
    -------
    SolveReport
    """
    require_valid(model)
    B = killed_blocks(model)
    stochastic = False
    if model.kill_v == 1.0:
        stochastic = drift(model)[1] != Drift.DOWN
    use_newton = polish and model.n_phases <= _NEWTON_MAX_PHASES
    stop = 1e-9 if use_newton else 0.0
    G, its, step, mono = _kernels.neuts_iteration(B, tol, max_iter, stop)
    if use_newton:
        G = _newton_polish(B, G, stochastic)
        G = np.maximum(G, 0.0)
    res = float(np.abs(G - _poly(B, G)).sum(axis=1).max())
    if not np.all(np.isfinite(G)) or res > max(tol, 1e-12) * 10:
        raise NumericalError(f"G iteration did not converge after {its} iterations "
                             f"(residual {res:.3e})")
    return SolveReport(G, int(its), res, bool(mono))


_memo: dict = {}


def _memoize(model: MacModel, kind: str, fn):
    key = (id(model), model.fingerprint(), kind)
    hit = _memo.get(key)
    if hit is not None and hit[0] is model:
        return hit[1]
    val = fn()
    if len(_memo) > 512:
        _memo.clear()
    _memo[key] = (model, val)
    return val


def fundamental_G(model: MacModel) -> np.ndarray:
    """``solve_G(model).result`` memoized per model object."""
    return _memoize(model, "G", lambda: solve_G(model).result)


def ladder_matrices(model: MacModel, tol: float = 1e-15, max_iter: int = DEFAULT_MAX_ITER) -> np.ndarray:
    """Descending ladder law ``K[k]``, ``k = 1..M`` (``K[0]`` is zero).

    ``K[k]`` is the phase distribution, weighted by killing, at the first
    time the level drops strictly below its start, restricted to landing
    exactly ``k`` levels down. It solves
    ``K[k] = v (A-k + A0 K[k] + A1 K[1] K[k] + A1 K[k+1])`` and is found
    by the monotone iteration from zero.
    """
    def run():
        B = killed_blocks(model)
        n = model.n_phases
        M = model.max_down_jump
        K = np.zeros((M + 2, n, n))
        eye = np.eye(n)
        for it in range(max_iter):
            lu = lu_factor(eye - B[1] - B[0] @ K[1])
            Kn = np.zeros_like(K)
            for k in range(1, M + 1):
                Kn[k] = lu_solve(lu, B[k + 1] + B[0] @ K[k + 1])
            step = np.abs(Kn - K).max()
            K = Kn
            if step < tol:
                break
        else:
            raise NumericalError(f"ladder iteration did not converge (last step {step:.3e})")
        return K
    return _memoize(model, "K", run)


def hitting_down_sequence(model: MacModel, n_max: int, method: str = "ladder") -> np.ndarray:
    """``hitting_down(n)`` for ``n = 0..n_max`` stacked along axis 0."""
    if method != "ladder":
        return np.stack([hitting_down(model, n, method=method) for n in range(n_max + 1)])
    G = fundamental_G(model)
    K = ladder_matrices(model)
    M = model.max_down_jump
    n = model.n_phases
    Gp = [np.eye(n)]
    for _ in range(M):
        Gp.append(Gp[-1] @ G)
    H = np.zeros((n_max + 1, n, n))
    H[0] = np.eye(n)
    for m in range(1, n_max + 1):
        acc = np.zeros((n, n))
        for k in range(1, M + 1):
            acc += K[k] @ (H[m - k] if k <= m else Gp[k - m])
        H[m] = acc
    return H


def hitting_down(model: MacModel, n: int, method: str = "ladder") -> np.ndarray:
    """Phase distribution, weighted by ``v**tau``, at the first visit of level ``-n``.

    Parameters
    ----------
    n : int
        Depth, ``n >= 0``. ``n = 0`` gives the identity.
    method : {"ladder", "scale"}
        ``"ladder"`` (default) decomposes at strict descents, which only
        adds nonnegative terms. ``"scale"`` evaluates
        ``G^-n - W(n) L^-1`` with an LU factorization of ``G``; it is exact
        in theory but loses digits like ``cond(G)**n``.
    """
    n = int(n)
    if n < 0:
        raise ValidationError("n must be >= 0")
    _require_finite_occupation(model)
    if method == "ladder":
        return hitting_down_sequence(model, n)[n]
    if method != "scale":
        raise ValidationError(f"unknown method {method!r}")
    from .scale import w_sequence

    G = fundamental_G(model)
    lu = _lu_checked(G, "G is singular (A1 must be invertible)")
    X = np.eye(model.n_phases)
    for _ in range(n):
        X = lu_solve(lu, X)
    W = w_sequence(model, max(n, 1)).w[n]
    L = occupation_L(model)
    return X - np.linalg.solve(L.T, W.T).T


def _lu_checked(A, message):
    if not np.all(np.isfinite(A)) or np.linalg.cond(A) > 1e15:
        raise NumericalError(message)
    return lu_factor(A)


def _require_finite_occupation(model: MacModel):
    require_valid(model)
    if model.kill_v == 1.0 and drift(model)[1] == Drift.OSCILLATES:
        raise NullRecurrentError("L")


def return_matrix(model: MacModel, n: int | None = None) -> np.ndarray:
    """Phase law of the first return to the start level.

    With ``n`` given, returns that happen after level ``n`` has been
    visited are excluded.
    """
    G = fundamental_G(model)
    B = killed_blocks(model)
    M = model.max_down_jump
    N = model.n_phases
    acc = B[1].copy()
    Gm = np.eye(N)
    for m in range(1, M + 1):
        Gm = Gm @ G
        acc += B[m + 1] @ Gm
    if n is None:
        H1 = hitting_down_sequence(model, 1)[1]
        back = H1
    else:
        if n == 1:
            return acc
        from .scale import ensure_table

        H = hitting_down_sequence(model, n)
        # only the bounded ratios are used, so the conditioning of W(n) is irrelevant
        R = ensure_table(model, n).ratios
        prod = np.eye(N)
        for k in range(1, n):
            prod = prod @ R[k]
        back = H[1] - prod @ H[n]
    return acc + B[0] @ back


def occupation_L(model: MacModel, tol: float = 1e-12, method: str = "return") -> np.ndarray:
    """Expected number of visits to the start level over an infinite horizon.

    Parameters
    ----------
    model : MacModel
        Must not be both unkilled and oscillating.
    tol : float
        Stopping tolerance for ``method="limit"``.
    method : {"return", "limit"}
        ``"return"`` (default) inverts ``I - Pi`` where ``Pi`` is the
        first-return law. ``"limit"`` iterates ``G^n W(n)`` until
        successive terms differ by less than ``tol``. That limit loses
        accuracy like ``|lambda_min(G)|**-n`` and often stalls for
        multi-phase models, so it raises when progress stops.
    """
    _require_finite_occupation(model)
    if method == "return":
        def run():
            Pi = return_matrix(model)
            L = np.linalg.solve(np.eye(model.n_phases) - Pi, np.eye(model.n_phases))
            if not np.all(np.isfinite(L)) or L.min() < -1e-12:
                raise NumericalError("occupation matrix is not finite")
            return np.maximum(L, 0.0)
        return _memoize(model, "L", run)
    if method != "limit":
        raise ValidationError(f"unknown method {method!r}")
    from .scale import w_sequence

    G = fundamental_G(model)
    chunk = 50
    table = w_sequence(model, chunk, guard=False)
    prev = None
    Gn = np.eye(model.n_phases)
    best = np.inf
    for n in range(1, 10_000):
        if n > table.n_max:
            table = w_sequence(model, table.n_max + chunk, guard=False)
        Gn = Gn @ G
        cur = Gn @ table.w[n]
        if not np.all(np.isfinite(cur)):
            break
        if prev is not None:
            d = np.abs(cur - prev).sum(axis=1).max()
            if d < tol:
                return cur
            best = min(best, d)
        prev = cur
    raise NumericalError(f"limit G^n W(n) did not settle (best step {best:.3e})")


def occupation_Ln(model: MacModel, n: int, method: str = "return") -> np.ndarray:
    """Expected visits to the start level before level ``n`` is first visited.

    Parameters
    ----------
    n : int
        ``n >= 1``.
    method : {"return", "scale"}
        ``"return"`` inverts the restricted first-return law (stable for
        all ``n``). ``"scale"`` forms ``G^n W(n)`` directly, which is fine
        for small ``n`` but cancels badly when ``G`` has small eigenvalues.
    """
    n = int(n)
    if n < 1:
        raise ValidationError("n must be >= 1")
    require_valid(model)
    N = model.n_phases
    if method == "scale":
        from .scale import w_sequence

        return np.linalg.matrix_power(fundamental_G(model), n) @ w_sequence(model, n).w[n]
    if method != "return":
        raise ValidationError(f"unknown method {method!r}")
    if n > 1 and model.kill_v == 1.0 and drift(model)[1] == Drift.OSCILLATES:
        # ladder iteration crawls at criticality; L(n) itself stays finite
        return occupation_Ln(model, n, method="scale")
    Pi = return_matrix(model, n)
    return np.linalg.solve(np.eye(N) - Pi, np.eye(N))
