"""Hot loops: fixed-point solve, scale recursion and path simulation.

Every kernel has a numba version and a numpy version with identical
results. The path simulator draws its uniforms from a counter-based
hash of ``(seed, path index, draw index)``, so both versions and every
thread layout produce the same bits.
"""
import numpy as np

from ._accel import njit, prange, use_numba

# ---------------------------------------------------------------- rng
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_S30 = np.uint64(30)
_S27 = np.uint64(27)
_S31 = np.uint64(31)
_S11 = np.uint64(11)
_INV53 = 1.0 / 9007199254740992.0


@njit(cache=True)
def _mix_nb(x):
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


@njit(cache=True)
def _path_key_nb(seed_mixed, path):
    return _mix_nb(seed_mixed + np.uint64(path) * _GOLDEN)


@njit(cache=True)
def _uniform_nb(key, counter):
    h = _mix_nb(key + np.uint64(counter + 1) * _GOLDEN)
    return np.float64(h >> _S11) * _INV53


def _mix_np(x):
    x = (x ^ (x >> _S30)) * _M1
    x = (x ^ (x >> _S27)) * _M2
    return x ^ (x >> _S31)


def seed_key(seed: int) -> np.uint64:
    """Mix a user seed (any int, reduced mod 2**64) into a stream key."""
    arr = np.array([seed % (1 << 64)], dtype=np.uint64)
    return _mix_np(arr)[0]


def path_keys(seed_mixed, paths) -> np.ndarray:
    paths = np.asarray(paths, dtype=np.uint64)
    with np.errstate(over="ignore"):
        return _mix_np(np.uint64(seed_mixed) + paths * _GOLDEN)


def uniforms(keys, counters) -> np.ndarray:
    """Uniforms in [0, 1) for paired arrays of path keys and draw counters."""
    keys = np.asarray(keys, dtype=np.uint64)
    c = np.asarray(counters, dtype=np.uint64) + np.uint64(1)
    with np.errstate(over="ignore"):
        h = _mix_np(keys + c * _GOLDEN)
    return (h >> _S11).astype(np.float64) * _INV53


# ---------------------------------------------------------- fixed point
@njit(cache=True)
def _neuts_nb(B, tol, max_iter, stop_diff):
    n = B.shape[1]
    K = B.shape[0]
    G = np.zeros((n, n))
    monotone = True
    diff = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        S = B[K - 1].copy()
        for j in range(K - 2, -1, -1):
            S = B[j] + S @ G
        diff = 0.0
        for r in range(n):
            rs = 0.0
            for c in range(n):
                d = S[r, c] - G[r, c]
                if d < -1e-15:
                    monotone = False
                rs += abs(d)
            if rs > diff:
                diff = rs
        G = S
        if diff < tol or diff < stop_diff:
            break
    return G, it, diff, monotone


def _neuts_np(B, tol, max_iter, stop_diff):
    n = B.shape[1]
    G = np.zeros((n, n))
    monotone = True
    diff = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        S = B[-1].copy()
        for j in range(B.shape[0] - 2, -1, -1):
            S = B[j] + S @ G
        D = S - G
        if D.min() < -1e-15:
            monotone = False
        diff = np.abs(D).sum(axis=1).max()
        G = S
        if diff < tol or diff < stop_diff:
            break
    return G, it, diff, monotone


def neuts_iteration(B, tol, max_iter, stop_diff=0.0):
    """Iterate ``G <- sum_j B[j] G^j`` from zero.

    ``B`` holds the killed blocks in the order ``A1, A0, A-1, ...``.
    Returns ``(G, iterations, last_step_norm, monotone)``.
    """
    B = np.ascontiguousarray(B, dtype=np.float64)
    if use_numba():
        return _neuts_nb(B, float(tol), int(max_iter), float(stop_diff))
    return _neuts_np(B, float(tol), int(max_iter), float(stop_diff))


# ------------------------------------------------------------ W recursion
@njit(cache=True)
def _w_rec_nb(B, inv_up, n_max, limit):
    n = B.shape[1]
    M = B.shape[0] - 2
    W = np.zeros((n_max + 1, n, n))
    if n_max >= 1:
        W[1] = inv_up
    eye = np.eye(n)
    for k in range(2, n_max + 1):
        acc = (eye - B[1]) @ W[k - 1]
        top = min(k, M + 1)
        for j in range(2, top + 1):
            acc = acc - B[j] @ W[k - j]
        W[k] = inv_up @ acc
        if np.abs(W[k]).max() > limit or not np.isfinite(W[k]).all():
            return W, k
    return W, -1


def _w_rec_np(B, inv_up, n_max, limit):
    n = B.shape[1]
    M = B.shape[0] - 2
    W = np.zeros((n_max + 1, n, n))
    if n_max >= 1:
        W[1] = inv_up
    eye = np.eye(n)
    for k in range(2, n_max + 1):
        acc = (eye - B[1]) @ W[k - 1]
        for j in range(2, min(k, M + 1) + 1):
            acc -= B[j] @ W[k - j]
        W[k] = inv_up @ acc
        if not np.isfinite(W[k]).all() or np.abs(W[k]).max() > limit:
            return W, k
    return W, -1


def w_recursion(B, inv_up, n_max, limit=1e300):
    """Coefficient recursion for the scale sequence.

    Returns ``(W, k_bad)`` where ``k_bad`` is the first index whose entries
    exceeded ``limit`` (or -1 when none did).
    """
    B = np.ascontiguousarray(B, dtype=np.float64)
    inv_up = np.ascontiguousarray(inv_up, dtype=np.float64)
    if use_numba():
        return _w_rec_nb(B, inv_up, int(n_max), float(limit))
    return _w_rec_np(B, inv_up, int(n_max), float(limit))


# ------------------------------------------------------------ simulation
MODE_STRIP = 0
MODE_LOWER_REFLECT = 1
MODE_STRIP_REFLECT = 2
MODE_UPPER_REFLECT = 3
MODE_HIT = 4
MODE_OCCUPATION = 5
MODE_HORIZON = 6

EV_CENSORED = 0
EV_UP = 1
EV_DOWN = 2
EV_KILLED = 3
EV_HIT = 4
EV_DONE = 5


@njit(cache=True)
def _search(row, u):
    k = 0
    last = row.shape[0] - 1
    while k < last and u >= row[k]:
        k += 1
    return k


@njit(parallel=True, cache=True)
def _simulate_nb(cum, n_phases, kill_v, mode, start_phase, start_level, lower, upper,
                 target, max_steps, seed_mixed, path_offset,
                 ev, lev, steps_out, ph, reg_out, counts):
    n_paths = start_phase.shape[0]
    for p in prange(n_paths):
        key = _path_key_nb(seed_mixed, path_offset + p)
        ctr = 0
        level = start_level
        phase = start_phase[p]
        reg = 0
        steps = 0
        event = EV_CENSORED
        while steps < max_steps:
            if mode == MODE_OCCUPATION and level == target:
                counts[p, phase] += 1.0
            if kill_v < 1.0:
                if _uniform_nb(key, ctr) >= kill_v:
                    ctr += 1
                    event = EV_KILLED
                    break
                ctr += 1
            u = _uniform_nb(key, ctr)
            ctr += 1
            o = _search(cum[phase], u)
            jump = 1 - o // n_phases
            phase = o % n_phases
            nl = level + jump
            steps += 1
            if mode == MODE_STRIP or mode == MODE_OCCUPATION:
                level = nl
                if nl >= upper:
                    event = EV_UP
                    break
                if nl <= lower:
                    event = EV_DOWN
                    break
            elif mode == MODE_LOWER_REFLECT:
                if nl < lower:
                    reg += lower - nl
                    nl = lower
                level = nl
                if level >= upper:
                    event = EV_UP
                    break
            elif mode == MODE_STRIP_REFLECT:
                if nl > upper:
                    level = upper
                    event = EV_UP
                    break
                if nl < lower:
                    reg += lower - nl
                    nl = lower
                level = nl
            elif mode == MODE_UPPER_REFLECT:
                if nl > upper:
                    reg += nl - upper
                    nl = upper
                level = nl
                if nl < lower:
                    event = EV_DOWN
                    break
            elif mode == MODE_HIT:
                level = nl
                if nl == target:
                    event = EV_HIT
                    break
                if nl >= upper or nl <= lower:
                    event = EV_DONE
                    break
            else:
                level = nl
                if steps == max_steps:
                    event = EV_DONE
        ev[p] = event
        lev[p] = level
        steps_out[p] = steps
        ph[p] = phase
        reg_out[p] = reg


def _simulate_np(cum, n_phases, kill_v, mode, start_phase, start_level, lower, upper,
                 target, max_steps, seed_mixed, path_offset,
                 ev, lev, steps_out, ph, reg_out, counts):
    n_paths = start_phase.shape[0]
    keys = path_keys(seed_mixed, np.arange(path_offset, path_offset + n_paths, dtype=np.uint64))
    ctr = np.zeros(n_paths, dtype=np.uint64)
    level = np.full(n_paths, start_level, dtype=np.int64)
    phase = start_phase.astype(np.int64).copy()
    reg = np.zeros(n_paths, dtype=np.int64)
    steps = np.zeros(n_paths, dtype=np.int64)
    event = np.full(n_paths, EV_CENSORED, dtype=np.int64)
    active = np.arange(n_paths)
    last = cum.shape[1] - 1
    while active.size:
        a = active
        if mode == MODE_OCCUPATION:
            at = a[level[a] == target]
            np.add.at(counts, (at, phase[at]), 1.0)
        if kill_v < 1.0:
            dead = uniforms(keys[a], ctr[a]) >= kill_v
            ctr[a] += np.uint64(1)
            event[a[dead]] = EV_KILLED
            a = a[~dead]
        u = uniforms(keys[a], ctr[a])
        ctr[a] += np.uint64(1)
        rows = cum[phase[a]]
        o = np.minimum((u[:, None] >= rows).sum(axis=1), last)
        jump = 1 - o // n_phases
        phase[a] = o % n_phases
        nl = level[a] + jump
        steps[a] += 1
        stop = np.zeros(a.size, dtype=bool)
        if mode in (MODE_STRIP, MODE_OCCUPATION):
            up = nl >= upper
            dn = (nl <= lower) & ~up
            event[a[up]] = EV_UP
            event[a[dn]] = EV_DOWN
            stop = up | dn
        elif mode == MODE_LOWER_REFLECT:
            below = nl < lower
            reg[a[below]] += lower - nl[below]
            nl = np.where(below, lower, nl)
            stop = nl >= upper
            event[a[stop]] = EV_UP
        elif mode == MODE_STRIP_REFLECT:
            stop = nl > upper
            nl = np.where(stop, upper, nl)
            event[a[stop]] = EV_UP
            below = (nl < lower) & ~stop
            reg[a[below]] += lower - nl[below]
            nl = np.where(below, lower, nl)
        elif mode == MODE_UPPER_REFLECT:
            above = nl > upper
            reg[a[above]] += nl[above] - upper
            nl = np.where(above, upper, nl)
            stop = nl < lower
            event[a[stop]] = EV_DOWN
        elif mode == MODE_HIT:
            hit = nl == target
            out = ((nl >= upper) | (nl <= lower)) & ~hit
            event[a[hit]] = EV_HIT
            event[a[out]] = EV_DONE
            stop = hit | out
        else:
            stop = steps[a] >= max_steps
            event[a[stop]] = EV_DONE
        level[a] = nl
        alive = event == EV_CENSORED
        alive[a[stop]] = False
        active = np.nonzero(alive & (steps < max_steps))[0]
    ev[:] = event
    lev[:] = level
    steps_out[:] = steps
    ph[:] = phase
    reg_out[:] = reg


def simulate_paths(cum, n_phases, kill_v, mode, start_phase, start_level, lower, upper,
                   target, max_steps, seed_mixed, path_offset, want_counts=False):
    """Run independent paths and return per-path records.

    Returns a dict with ``event``, ``level``, ``steps``, ``phase``, ``reg``
    and, when ``want_counts``, an ``(n_paths, n_phases)`` array of visit
    counts to ``target``.
    """
    n = start_phase.shape[0]
    ev = np.zeros(n, dtype=np.int64)
    lev = np.zeros(n, dtype=np.int64)
    st = np.zeros(n, dtype=np.int64)
    ph = np.zeros(n, dtype=np.int64)
    rg = np.zeros(n, dtype=np.int64)
    counts = np.zeros((n, n_phases) if want_counts else (n, 0))
    if want_counts and mode != MODE_OCCUPATION:
        raise ValueError("visit counts are only collected in occupation mode")
    args = (np.ascontiguousarray(cum, dtype=np.float64), int(n_phases), float(kill_v), int(mode),
            np.ascontiguousarray(start_phase, dtype=np.int64), int(start_level), int(lower),
            int(upper), int(target), int(max_steps), np.uint64(seed_mixed), int(path_offset),
            ev, lev, st, ph, rg, counts)
    if use_numba():
        _simulate_nb(*args)
    else:
        _simulate_np(*args)
    return {"event": ev, "level": lev, "steps": st, "phase": ph, "reg": rg, "counts": counts}
