"""Markov additive chains that move up by at most one level per step.

A model is a finite list of nonnegative phase-transition blocks
``A1, A0, A-1, ..., A-M``. Block ``A1`` carries the level jump ``+1`` and
block ``A-m`` the jump ``-m``. The blocks add up to a stochastic matrix
``P`` (the phase chain). Geometric killing with survival probability
``kill_v`` per step is kept as a scalar and applied analytically.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.sparse.csgraph import connected_components

from .errors import NumericalError, ValidationError

ROW_SUM_TOL = 1e-12
DRIFT_TIE_TOL = 1e-12


class Drift(str, enum.Enum):
    """Long-run direction of the level process."""

    UP = "DriftsUp"
    DOWN = "DriftsDown"
    OSCILLATES = "Oscillates"


@dataclass(frozen=True, eq=False)
class MacModel:
    """Transition law of an upward skip-free Markov additive chain.

    Parameters
    ----------
    a_up : array_like, shape (N, N)
        Block for the level jump ``+1``.
    a_down : sequence of array_like
        Blocks ``[A0, A-1, ..., A-M]`` for level jumps ``0, -1, ..., -M``.
    kill_v : float, default 1.0
        Per-step survival probability, in ``(0, 1]``.

    Notes
    -----
    The constructor only checks shapes. Use :func:`validate` for the
    probabilistic requirements.
    """

    a_up: np.ndarray
    a_down: tuple
    kill_v: float = 1.0
    blocks: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        up = np.array(self.a_up, dtype=float)
        if up.ndim != 2 or up.shape[0] != up.shape[1] or up.shape[0] == 0:
            raise ValidationError("A1 must be a nonempty square matrix")
        n = up.shape[0]
        if len(self.a_down) == 0:
            raise ValidationError("at least the A0 block is required")
        downs = []
        for m, b in enumerate(self.a_down):
            arr = np.array(b, dtype=float)
            if arr.shape != (n, n):
                raise ValidationError(f"block A{-m} has shape {arr.shape}, expected {(n, n)}")
            downs.append(arr)
        stacked = np.stack([up] + downs)
        stacked.setflags(write=False)
        up.setflags(write=False)
        for arr in downs:
            arr.setflags(write=False)
        object.__setattr__(self, "a_up", up)
        object.__setattr__(self, "a_down", tuple(downs))
        object.__setattr__(self, "kill_v", float(self.kill_v))
        object.__setattr__(self, "blocks", stacked)

    @property
    def n_phases(self) -> int:
        return self.a_up.shape[0]

    @property
    def max_down_jump(self) -> int:
        return len(self.a_down) - 1

    def block(self, jump: int) -> np.ndarray:
        """Return the block for level change ``jump`` (zero outside the support)."""
        if jump == 1:
            return self.a_up
        if -self.max_down_jump <= jump <= 0:
            return self.a_down[-jump]
        return np.zeros((self.n_phases, self.n_phases))

    @property
    def P(self) -> np.ndarray:
        """Unkilled phase transition matrix."""
        return self.blocks.sum(axis=0)

    def with_kill(self, kill_v: float) -> "MacModel":
        return MacModel(self.a_up, self.a_down, kill_v)

    # serialization -------------------------------------------------------
    def to_dict(self) -> dict:
        blocks = {"A1": self.a_up.tolist()}
        for m, b in enumerate(self.a_down):
            blocks["A0" if m == 0 else f"A-{m}"] = b.tolist()
        return {
            "n_phases": self.n_phases,
            "max_down_jump": self.max_down_jump,
            "kill_v": self.kill_v,
            "blocks": blocks,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "MacModel":
        try:
            n = int(data["n_phases"])
            M = int(data["max_down_jump"])
            kill_v = float(data.get("kill_v", 1.0))
            blocks = data["blocks"]
        except (KeyError, TypeError, ValueError) as exc:
            raise ValidationError(f"malformed model description: {exc}") from None
        if M < 0:
            raise ValidationError("max_down_jump must be >= 0")
        names = ["A1", "A0"] + [f"A-{m}" for m in range(1, M + 1)]
        missing = [k for k in names if k not in blocks]
        if missing:
            raise ValidationError(f"missing blocks: {', '.join(missing)}")
        extra = sorted(set(blocks) - set(names))
        if extra:
            raise ValidationError(f"unexpected blocks: {', '.join(extra)}")
        model = cls(blocks["A1"], [blocks[k] for k in names[1:]], kill_v)
        if model.n_phases != n:
            raise ValidationError(f"n_phases={n} but blocks are {model.n_phases}x{model.n_phases}")
        return model

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text: str) -> "MacModel":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"model file is not valid JSON: {exc}") from None
        return cls.from_dict(data)

    @classmethod
    def load(cls, path) -> "MacModel":
        return cls.from_json(Path(path).read_text())

    def fingerprint(self) -> str:
        """Stable SHA-256 digest of the model content."""
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()


def scalar_model(p: float, q: float | None = None, kill_v: float = 1.0) -> MacModel:
    """Simple random walk: up with probability ``p``, down one with ``q``."""
    if q is None:
        q = 1.0 - p
    return MacModel([[p]], [[[1.0 - p - q]], [[q]]], kill_v)


@dataclass
class ValidationReport:
    ok: bool
    violations: list
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {"ok": self.ok, "violations": list(self.violations), "notes": list(self.notes)}


def _block_name(k: int) -> str:
    return "A1" if k == 0 else ("A0" if k == 1 else f"A-{k - 1}")


def validate(model: MacModel) -> ValidationReport:
    """Check the structural requirements on a model.

    Returns
    -------
    ValidationReport
        ``ok`` is true iff no violation was found. Each violation names the
        block, the row where relevant and the rule that failed.
    """
    viol = []
    notes = []
    B = model.blocks
    for k in range(B.shape[0]):
        name = _block_name(k)
        if not np.all(np.isfinite(B[k])):
            viol.append(f"{name}: non-finite entry")
            continue
        rows, cols = np.nonzero(B[k] < 0)
        for r, c in zip(rows, cols):
            viol.append(f"{name} row {r}: negative entry {B[k][r, c]!r} in column {c}")
    if all(np.all(np.isfinite(b)) for b in B):
        sums = B.sum(axis=(0, 2))
        for r, s in enumerate(sums):
            if abs(s - 1.0) > ROW_SUM_TOL:
                viol.append(f"P row {r}: row sum != 1 (got {s:.17g})")
    if not (0.0 < model.kill_v <= 1.0) or not np.isfinite(model.kill_v):
        viol.append(f"kill_v: must lie in (0, 1], got {model.kill_v!r}")
    if model.n_phases > 1 and not np.any(B[1:]):
        viol.append("blocks: only A1 is nonzero (no down or level moves)")
    if not viol and not is_irreducible(model):
        notes.append("phase chain not irreducible")
    return ValidationReport(not viol, viol, notes)


def require_valid(model: MacModel) -> None:
    rep = validate(model)
    if not rep.ok:
        raise ValidationError("invalid model: " + "; ".join(rep.violations))


def is_irreducible(model: MacModel) -> bool:
    """Strong connectivity of the nonzero pattern of ``P``."""
    n, _ = connected_components(model.P > 0, directed=True, connection="strong")
    return n == 1


def eval_F(model: MacModel, z: float) -> np.ndarray:
    """Killed generating matrix ``v (z^-1 A1 + A0 + z A-1 + ... + z^M A-M)``.

    Parameters
    ----------
    model : MacModel
    z : float
        Positive evaluation point.
    """
    z = float(z)
    if not z > 0:
        raise ValidationError(f"z must be positive, got {z}")
    powers = z ** np.arange(-1, model.max_down_jump + 1)
    return model.kill_v * np.tensordot(powers, model.blocks, axes=1)


def stationary(model: MacModel) -> np.ndarray:
    """Stationary distribution of the unkilled phase chain."""
    if not is_irreducible(model):
        raise ValidationError("phase chain not irreducible")
    P = model.P
    n = P.shape[0]
    A = P.T - np.eye(n)
    A[-1, :] = 1.0
    rhs = np.zeros(n)
    rhs[-1] = 1.0
    pi = np.linalg.solve(A, rhs)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


def drift(model: MacModel) -> tuple[float, Drift]:
    """Asymptotic drift data of the unkilled level process.

    Returns
    -------
    kappa_prime_1 : float
        Derivative of the Perron eigenvalue at ``z = 1``. The level moves
        at the long-run speed ``-kappa_prime_1``.
    classification : Drift
    """
    pi = stationary(model)
    weights = np.arange(-1, model.max_down_jump + 1, dtype=float)
    mean_jump_matrix = np.tensordot(weights, model.blocks, axes=1)
    kp = float(pi @ mean_jump_matrix.sum(axis=1))
    if kp < -DRIFT_TIE_TOL:
        cls = Drift.UP
    elif kp > DRIFT_TIE_TOL:
        cls = Drift.DOWN
    else:
        cls = Drift.OSCILLATES
    return kp, cls


@dataclass(frozen=True)
class SpectralData:
    """Perron eigenvalue and eigenvectors of the unkilled ``F(z)``.

    ``right`` is scaled so that ``pi @ right == 1`` and ``left`` so that
    ``left @ right == 1``. The killed eigenvalue is ``kill_v * kappa``.
    """

    z: float
    kappa: float
    left: np.ndarray
    right: np.ndarray


def perron(model: MacModel, z: float, tol: float = 1e-12, max_iter: int = 100_000) -> SpectralData:
    """Perron-Frobenius data of the unkilled generating matrix at ``z``.

    Power iteration on ``F(z) + I`` (the shift removes periodicity); falls
    back to a dense eigendecomposition when iteration stalls.
    """
    F = eval_F(model, z) / model.kill_v
    n = F.shape[0]
    pi = stationary(model)

    def power(mat):
        x = np.full(n, 1.0 / n)
        shifted = mat + np.eye(n)
        lam = 0.0
        for _ in range(max_iter):
            y = shifted @ x
            lam_new = y.sum() / x.sum()
            y /= y.sum()
            if np.abs(y - x).max() < tol and abs(lam_new - lam) < tol * max(1.0, abs(lam_new)):
                return lam_new - 1.0, y
            x, lam = y, lam_new
        return None

    def dense(mat):
        w, V = np.linalg.eig(mat)
        k = int(np.argmax(w.real))
        vec = np.abs(V[:, k].real)
        return float(w[k].real), vec

    res_r = power(F) or dense(F)
    res_l = power(F.T) or dense(F.T)
    kappa, h = res_r
    _, lv = res_l
    h = h / (pi @ h)
    lv = lv / (lv @ h)
    resid = max(np.abs(F @ h - kappa * h).max(), np.abs(lv @ F - kappa * lv).max())
    if resid > 1e-10:
        kappa, h = dense(F)
        _, lv = dense(F.T)
        h = h / (pi @ h)
        lv = lv / (lv @ h)
        resid = max(np.abs(F @ h - kappa * h).max(), np.abs(lv @ F - kappa * lv).max())
        if resid > 1e-10:
            raise NumericalError(f"Perron eigen-solver did not converge (residual {resid:.3e})")
    return SpectralData(float(z), float(kappa), lv, h)
