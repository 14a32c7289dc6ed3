"""Subtraction-free solves for systems ``(I - Q) X = R`` with ``Q >= 0``.

Exit and first-passage problems lead to matrices ``I - Q`` whose rows
have a small positive excess (the probability of leaving the set of
states considered). Forming the diagonal ``1 - Q[i, i]`` cancels that
excess away. When the excess is supplied separately, states can be
eliminated one by one with only additions, multiplications and divisions
of nonnegative numbers, which gives small relative errors in every entry
of ``X``.
"""
import numpy as np

from .errors import NumericalError


def eliminate(Q, R, leak) -> np.ndarray:
    """Solve ``(I - Q) X = R`` given the row excess ``leak = 1 - Q e``.

    Only the off-diagonal entries of ``Q`` are read. Pivots are rebuilt
    from outflows, so ``leak`` must be computed without cancellation.
    """
    Q = np.array(Q, dtype=float)
    R = np.array(R, dtype=float)
    one_col = R.ndim == 1
    if one_col:
        R = R[:, None]
    leak = np.array(leak, dtype=float)
    n = Q.shape[0]
    out = np.zeros(n)
    for k in range(n - 1, -1, -1):
        o = Q[k, :k].sum() + leak[k]
        if not o > 0.0:
            raise NumericalError("singular first-passage system: some state never exits")
        out[k] = o
        if k == 0:
            break
        w = Q[:k, k] / o
        Q[:k, :k] += np.outer(w, Q[k, :k])
        R[:k] += np.outer(w, R[k])
        leak[:k] += w * leak[k]
    X = np.zeros_like(R)
    for k in range(n):
        X[k] = (R[k] + Q[k, :k] @ X[:k]) / out[k]
    return X[:, 0] if one_col else X


def solve_mmatrix(A, R, excess) -> np.ndarray:
    """Solve ``A X = R`` for ``A = I - Q`` with row excess ``excess = A e``."""
    return eliminate(-np.asarray(A), R, excess)


def one_minus_pow(z: float, k) -> float:
    """``1 - z**k`` without cancellation for ``z`` near one."""
    return -np.expm1(k * np.log(z)) if k > 0 else 0.0
