"""Path engine: simulation of (X_n, S_n, M_n) and detection of exit times.

Kernels are compiled per law *shape* (how a step's pair is drawn, and how many
atoms each marginal has) so that the draw is branch-free inside hot loops.
Every kernel takes an ``(R, 4)`` array of xoshiro states, one row per replica,
and writes the advanced states back.

Replica ``i`` of batch ``b`` is always seeded from ``(seed, tag, b, i)``; the
batch size is fixed, so estimates are identical whatever the thread count.
"""

from __future__ import annotations

import csv
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from types import SimpleNamespace

import numpy as np
from numba import njit

from .errors import InvalidArgumentError, MissingDrawsError
from .model import SHAPE_DISCRETE_B, SHAPE_GAUSSIAN_B, SHAPE_JOINT, SHAPE_UNIFORM_B, PairLaw
from .rng import BATCH_SIZE, Stream, batch_key, batch_states, hi32, lo32, next_word, u53

# lanes advanced in lockstep by the fixed-horizon kernel
_LANES = 1024

# ---- kernels --------------------------------------------------------------------


def _make_draw(shape: int, na: int, nb: int):
    pick = na > 1 or (shape == SHAPE_DISCRETE_B and nb > 1)
    pick_a = na > 1
    pick_b = shape == SHAPE_DISCRETE_B and nb > 1
    joint = shape == SHAPE_JOINT
    uniform_b = shape == SHAPE_UNIFORM_B
    gauss_b = shape == SHAPE_GAUSSIAN_B

    # select chains rather than indexed loads keep lane loops vectorizable
    @njit(inline="always")
    def draw(t0, t1, t2, t3, av, acdf, bv, bcdf, bpar):
        a = av[0]
        b = bv[0]
        if pick:
            w, t0, t1, t2, t3 = next_word(t0, t1, t2, t3)
            ua = hi32(w)
            ub = lo32(w)
            if pick_a:
                for q in range(1, na):
                    hit = ua >= acdf[q - 1]
                    a = av[q] if hit else a
                    if joint:
                        b = bv[q] if hit else b
            if pick_b:
                for q in range(1, nb):
                    b = bv[q] if ub >= bcdf[q - 1] else b
        if uniform_b:
            w, t0, t1, t2, t3 = next_word(t0, t1, t2, t3)
            b = bpar[0] + (bpar[1] - bpar[0]) * u53(w)
        elif gauss_b:
            w, t0, t1, t2, t3 = next_word(t0, t1, t2, t3)
            v, t0, t1, t2, t3 = next_word(t0, t1, t2, t3)
            b = bpar[0] * math.sqrt(-2.0 * math.log(1.0 - u53(w))) * math.cos(2.0 * math.pi * u53(v))
        return a, b, t0, t1, t2, t3

    return draw


@lru_cache(maxsize=None)
def kernels(shape: tuple) -> SimpleNamespace:
    """Compiled kernels for one law shape ``(code, n_a_atoms, n_b_atoms)``."""
    draw = _make_draw(*shape)

    @njit(nogil=True)
    def draws(av, acdf, bv, bcdf, bpar, states, n):
        r = states.shape[0]
        A = np.empty((r, n))
        B = np.empty((r, n))
        for j in range(r):
            t0, t1, t2, t3 = states[j, 0], states[j, 1], states[j, 2], states[j, 3]
            for k in range(n):
                a, b, t0, t1, t2, t3 = draw(t0, t1, t2, t3, av, acdf, bv, bcdf, bpar)
                A[j, k] = a
                B[j, k] = b
            states[j, 0], states[j, 1], states[j, 2], states[j, 3] = t0, t1, t2, t3
        return A, B

    @njit(nogil=True)
    def exit_times(av, acdf, bv, bcdf, bpar, states, x0, y, rho, cap, track_T):
        # tau/T = 0 marks censoring; terminal values are then those at the cap
        r = states.shape[0]
        tau = np.zeros(r, dtype=np.int64)
        T = np.zeros(r, dtype=np.int64)
        m_tau = np.empty(r)
        x_tau = np.empty(r)
        s_tau = np.empty(r)
        m_T = np.full(r, np.nan)
        for j in range(r):
            t0, t1, t2, t3 = states[j, 0], states[j, 1], states[j, 2], states[j, 3]
            x = x0
            s = 0.0
            if not track_T:
                k = 0
                while k < cap:
                    k += 1
                    a, b, t0, t1, t2, t3 = draw(t0, t1, t2, t3, av, acdf, bv, bcdf, bpar)
                    x = a * x + b
                    s += x
                    if y + s <= 0.0:
                        tau[j] = k
                        break
                m_tau[j] = s + rho * (x - x0)
                x_tau[j] = x
                s_tau[j] = s
            else:
                got_tau = False
                got_T = False
                k = 0
                while k < cap:
                    k += 1
                    a, b, t0, t1, t2, t3 = draw(t0, t1, t2, t3, av, acdf, bv, bcdf, bpar)
                    x = a * x + b
                    s += x
                    if not got_tau and y + s <= 0.0:
                        got_tau = True
                        tau[j] = k
                        m_tau[j] = s + rho * (x - x0)
                        x_tau[j] = x
                        s_tau[j] = s
                    # y + rho x0 + M_k = y + S_k + rho X_k
                    if not got_T and y + s + rho * x <= 0.0:
                        got_T = True
                        T[j] = k
                        m_T[j] = s + rho * (x - x0)
                    if got_tau and got_T:
                        break
                if not got_tau:
                    m_tau[j] = s + rho * (x - x0)
                    x_tau[j] = x
                    s_tau[j] = s
                if not got_T:
                    m_T[j] = s + rho * (x - x0)
            states[j, 0], states[j, 1], states[j, 2], states[j, 3] = t0, t1, t2, t3
        return tau, T, m_tau, x_tau, s_tau, m_T

    def make_endpoint(with_delta):
        @njit(nogil=True)
        def endpoint(av, acdf, bv, bcdf, bpar, states, x0, n, mean_a):
            r = states.shape[0]
            S = np.empty(r)
            X = np.empty(r)
            D = np.zeros(r)
            s0 = np.empty(_LANES, dtype=np.uint64)
            s1 = np.empty(_LANES, dtype=np.uint64)
            s2 = np.empty(_LANES, dtype=np.uint64)
            s3 = np.empty(_LANES, dtype=np.uint64)
            xs = np.empty(_LANES)
            ss = np.empty(_LANES)
            ps = np.empty(_LANES)
            ds = np.empty(_LANES)
            for lo in range(0, r, _LANES):
                m = min(_LANES, r - lo)
                for i in range(m):
                    s0[i] = states[lo + i, 0]
                    s1[i] = states[lo + i, 1]
                    s2[i] = states[lo + i, 2]
                    s3[i] = states[lo + i, 3]
                    xs[i] = x0
                    ss[i] = 0.0
                    ps[i] = 1.0
                    ds[i] = 0.0
                for _ in range(n):
                    for i in range(m):
                        a, b, t0, t1, t2, t3 = draw(s0[i], s1[i], s2[i], s3[i], av, acdf, bv, bcdf, bpar)
                        s0[i] = t0
                        s1[i] = t1
                        s2[i] = t2
                        s3[i] = t3
                        xn = a * xs[i] + b
                        xs[i] = xn
                        ss[i] += xn
                        if with_delta:
                            ds[i] += ps[i] * (a - mean_a)
                            ps[i] *= a
                for i in range(m):
                    states[lo + i, 0] = s0[i]
                    states[lo + i, 1] = s1[i]
                    states[lo + i, 2] = s2[i]
                    states[lo + i, 3] = s3[i]
                    S[lo + i] = ss[i]
                    X[lo + i] = xs[i]
                    if with_delta:
                        D[lo + i] = ds[i] / (1.0 - mean_a)
            return S, X, D

        return endpoint

    @njit(nogil=True)
    def killed(av, acdf, bv, bcdf, bpar, states, x0, y, grid):
        # (y + S_n) 1{tau > n} at each grid point; grid sorted ascending
        r = states.shape[0]
        g = grid.shape[0]
        out = np.zeros((r, g))
        nmax = grid[g - 1]
        for j in range(r):
            t0, t1, t2, t3 = states[j, 0], states[j, 1], states[j, 2], states[j, 3]
            x = x0
            s = 0.0
            gi = 0
            while gi < g and grid[gi] == 0:
                out[j, gi] = y
                gi += 1
            for k in range(1, nmax + 1):
                a, b, t0, t1, t2, t3 = draw(t0, t1, t2, t3, av, acdf, bv, bcdf, bpar)
                x = a * x + b
                s += x
                if y + s <= 0.0:
                    break
                while gi < g and grid[gi] == k:
                    out[j, gi] = y + s
                    gi += 1
            states[j, 0], states[j, 1], states[j, 2], states[j, 3] = t0, t1, t2, t3
        return out

    @njit(nogil=True)
    def kset_hits(av, acdf, bv, bcdf, bpar, states, x0, y, p0, c, n_max):
        # first n <= n_max with tau > n and y + S_n >= c (1 + |X_n|^p0); 0 if none
        r = states.shape[0]
        hit = np.zeros(r, dtype=np.int64)
        for j in range(r):
            t0, t1, t2, t3 = states[j, 0], states[j, 1], states[j, 2], states[j, 3]
            x = x0
            s = 0.0
            for k in range(1, n_max + 1):
                a, b, t0, t1, t2, t3 = draw(t0, t1, t2, t3, av, acdf, bv, bcdf, bpar)
                x = a * x + b
                s += x
                if y + s <= 0.0:
                    break
                if y + s >= c * (1.0 + abs(x) ** p0):
                    hit[j] = k
                    break
            states[j, 0], states[j, 1], states[j, 2], states[j, 3] = t0, t1, t2, t3
        return hit

    @njit(nogil=True)
    def crossings(av, acdf, bv, bcdf, bpar, states, x0, y, rho, n, threshold, on_M):
        r = states.shape[0]
        first = np.zeros(r, dtype=np.int64)
        for j in range(r):
            t0, t1, t2, t3 = states[j, 0], states[j, 1], states[j, 2], states[j, 3]
            x = x0
            s = 0.0
            for k in range(1, n + 1):
                a, b, t0, t1, t2, t3 = draw(t0, t1, t2, t3, av, acdf, bv, bcdf, bpar)
                x = a * x + b
                s += x
                v = y + s + rho * x if on_M else y + s
                if abs(v) > threshold:
                    first[j] = k
                    break
            states[j, 0], states[j, 1], states[j, 2], states[j, 3] = t0, t1, t2, t3
        return first

    return SimpleNamespace(
        draws=draws,
        exit_times=exit_times,
        endpoint=make_endpoint(False),
        endpoint_delta=make_endpoint(True),
        killed=killed,
        kset_hits=kset_hits,
        crossings=crossings,
    )


def _k(law: PairLaw) -> SimpleNamespace:
    return kernels(law.shape)


# ---- batching -------------------------------------------------------------------


def replica_states(seed: int, tag: str, batch_id: int, count: int) -> np.ndarray:
    return batch_states(np.uint64(batch_key(seed, tag, batch_id)), 0, int(count))


def map_batches(work, replicas: int, seed: int, tag: str, threads: int = 1) -> list:
    """Run ``work(states)`` over fixed-size batches; results come back in batch order."""
    replicas = int(replicas)
    if replicas < 1:
        raise InvalidArgumentError("replicas must be >= 1")
    if int(threads) < 1:
        raise InvalidArgumentError("threads must be >= 1")
    jobs = [(b, min(BATCH_SIZE, replicas - b * BATCH_SIZE)) for b in range(-(-replicas // BATCH_SIZE))]

    def run(spec):
        b, count = spec
        return work(replica_states(seed, tag, b, count))

    if threads <= 1 or len(jobs) == 1:
        return [run(s) for s in jobs]
    with ThreadPoolExecutor(max_workers=int(threads)) as pool:
        return list(pool.map(run, jobs))


@dataclass
class Accumulator:
    """Order-independent (count, sum, sum of squares, censored) accumulator.

    Partial sums are kept per batch and merged with ``math.fsum``, which is
    exactly rounded, so merging order cannot change the result.
    """

    count: int = 0
    censored: int = 0
    sum_parts: list = field(default_factory=list)
    sq_parts: list = field(default_factory=list)

    def add(self, values, censored: int = 0) -> "Accumulator":
        values = np.asarray(values, dtype=float)
        self.count += values.size
        self.censored += int(censored)
        if values.size:
            self.sum_parts.append(math.fsum(values))
            self.sq_parts.append(math.fsum(values * values))
        return self

    def merge(self, other: "Accumulator") -> "Accumulator":
        return Accumulator(
            self.count + other.count,
            self.censored + other.censored,
            self.sum_parts + other.sum_parts,
            self.sq_parts + other.sq_parts,
        )

    @property
    def total(self) -> int:
        return self.count + self.censored

    @property
    def mean(self) -> float:
        return math.fsum(self.sum_parts) / self.count if self.count else math.nan

    @property
    def variance(self) -> float:
        if self.count < 2:
            return math.nan
        m = self.mean
        v = (math.fsum(self.sq_parts) - self.count * m * m) / (self.count - 1)
        return max(v, 0.0)

    @property
    def stderr(self) -> float:
        return math.sqrt(self.variance / self.count) if self.count >= 2 else math.nan

    @property
    def censor_rate(self) -> float:
        return self.censored / self.total if self.total else 0.0


# ---- paths ----------------------------------------------------------------------


@dataclass
class WalkPath:
    x0: float
    X: np.ndarray
    S: np.ndarray
    M: np.ndarray
    rho: float
    mean_a: float
    a: np.ndarray | None = None
    b: np.ndarray | None = None
    M0: np.ndarray | None = None
    Delta: np.ndarray | None = None

    @property
    def n(self) -> int:
        return len(self.X)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["k", "X", "S", "M"])
            for k in range(self.n):
                w.writerow([k + 1, repr(float(self.X[k])), repr(float(self.S[k])), repr(float(self.M[k]))])


def _path_from_draws(law: PairLaw, x0: float, a: np.ndarray, b: np.ndarray) -> WalkPath:
    X = np.empty(len(a))
    x = x0
    for k in range(len(a)):
        x = a[k] * x + b[k]
        X[k] = x
    S = np.cumsum(X)
    rho = law.rho
    M = S + rho * (X - x0)
    return WalkPath(x0=x0, X=X, S=S, M=M, rho=rho, mean_a=law.mean_a, a=np.asarray(a, float), b=np.asarray(b, float))


def simulate_path(law: PairLaw, x0: float, n: int, rng: Stream | None = None, draws=None) -> WalkPath:
    """Simulate n steps from X_0 = x0.

    Either ``rng`` or explicit ``draws = (a, b)`` sequences must be given. The
    draws are kept on the path so that :func:`decompose` can rebuild M^0 and
    Delta.
    """
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    if draws is not None:
        a, b = (np.asarray(d, dtype=float) for d in draws)
        if len(a) < n or len(b) < n:
            raise InvalidArgumentError("not enough draws for the requested length")
        return _path_from_draws(law, float(x0), a[:n], b[:n])
    if rng is None:
        raise InvalidArgumentError("simulate_path needs rng or draws")
    st = rng.state_array()
    A, B = _k(law).draws(*law.arrays, st, int(n))
    rng.set_state_array(st, int(n) * law.words_per_step)
    return _path_from_draws(law, float(x0), A[0], B[0])


def path_draws(law: PairLaw, n: int, replicas: int, seed: int, tag: str = "path"):
    """Yield per-batch (A, B) draw matrices of shape (count, n)."""
    k = _k(law)
    for b in range(-(-int(replicas) // BATCH_SIZE)):
        count = min(BATCH_SIZE, int(replicas) - b * BATCH_SIZE)
        yield k.draws(*law.arrays, replica_states(seed, tag, b, count), int(n))


def decompose(path: WalkPath) -> WalkPath:
    """Fill M^0 (walk restarted at 0 on the same draws) and Delta, with M = M^0 + Delta x0."""
    if path.a is None or path.b is None:
        raise MissingDrawsError("path was built without its (a, b) draws")
    ea = path.mean_a
    inv = 1.0 / (1.0 - ea)
    a, b = path.a, path.b
    X0 = np.empty(path.n)
    x = 0.0
    for k in range(path.n):
        x = a[k] * x + b[k]
        X0[k] = x
    prev = np.concatenate(([0.0], X0[:-1]))
    M0 = np.cumsum((X0 - ea * prev) * inv)
    prods = np.concatenate(([1.0], np.cumprod(a)[:-1]))
    Delta = np.cumsum(prods * (a - ea) * inv)
    path.M0 = M0
    path.Delta = Delta
    return path


@dataclass
class PathBatch:
    """Many paths at once; every array has shape (replicas, n), x0 has shape (replicas,)."""

    x0: np.ndarray
    X: np.ndarray
    S: np.ndarray
    M: np.ndarray
    M0: np.ndarray
    Delta: np.ndarray
    rho: float


def path_batch(law: PairLaw, x0, A: np.ndarray, B: np.ndarray) -> PathBatch:
    """Vectorised counterpart of simulate_path + decompose over draw matrices.

    M is built as S + rho (X - x0); M0 and Delta are built from their own
    recursions, so M - (M0 + Delta x0) is a genuine consistency check.
    """
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    if A.shape != B.shape or A.ndim != 2 or A.shape[1] < 1:
        raise InvalidArgumentError("A and B must be matching (replicas, n) matrices")
    r, n = A.shape
    x0 = np.broadcast_to(np.asarray(x0, dtype=float), (r,)).copy()
    ea = law.mean_a
    X = np.empty((r, n))
    X0 = np.empty((r, n))
    x, z = x0.copy(), np.zeros(r)
    for k in range(n):
        x = A[:, k] * x + B[:, k]
        z = A[:, k] * z + B[:, k]
        X[:, k] = x
        X0[:, k] = z
    S = np.cumsum(X, axis=1)
    rho = law.rho
    M = S + rho * (X - x0[:, None])
    inv = 1.0 / (1.0 - ea)
    prev = np.concatenate((np.zeros((r, 1)), X0[:, :-1]), axis=1)
    M0 = np.cumsum((X0 - ea * prev) * inv, axis=1)
    prods = np.concatenate((np.ones((r, 1)), np.cumprod(A, axis=1)[:, :-1]), axis=1)
    Delta = np.cumsum(prods * (A - ea) * inv, axis=1)
    return PathBatch(x0=x0, X=X, S=S, M=M, M0=M0, Delta=Delta, rho=rho)


def first_crossing(path: WalkPath, y: float, threshold: float, coordinate: str = "S") -> int | None:
    """First k >= 1 with |y + S_k| > threshold (or |y + rho x0 + M_k| for coordinate='M')."""
    if not threshold > 0:
        raise InvalidArgumentError("threshold must be positive")
    if coordinate == "S":
        vals = y + path.S
    elif coordinate == "M":
        vals = y + path.rho * path.x0 + path.M
    else:
        raise InvalidArgumentError(f"unknown coordinate {coordinate!r}")
    idx = np.flatnonzero(np.abs(vals) > threshold)
    return int(idx[0]) + 1 if idx.size else None


# ---- exit times -----------------------------------------------------------------


@dataclass
class StopRecord:
    y: float
    tau: int | None
    T: int | None
    terminal_M: float
    terminal_X: float
    terminal_S: float
    terminal_M_T: float | None = None
    censored_at: int | None = None

    @property
    def censored(self) -> bool:
        return self.censored_at is not None


def _rho_or_zero(law: PairLaw) -> float:
    return law.rho if law.mean_a != 1.0 else 0.0


def run_to_exit(law: PairLaw, x0: float, y: float, cap: int, rng: Stream, track_T: bool = False) -> StopRecord:
    """Run one replica until tau_y (and T_y when ``track_T``) or the cap."""
    if cap < 1:
        raise InvalidArgumentError("cap must be >= 1")
    st = rng.state_array()
    tau, T, m_tau, x_tau, s_tau, m_T = _k(law).exit_times(
        *law.arrays, st, float(x0), float(y), _rho_or_zero(law), int(cap), bool(track_T)
    )
    t = int(tau[0]) or None
    TT = (int(T[0]) or None) if track_T else None
    done = t is not None and (TT is not None or not track_T)
    steps = max(t or 0, TT or 0) if done else int(cap)
    rng.set_state_array(st, steps * law.words_per_step)
    return StopRecord(
        y=float(y),
        tau=t,
        T=TT,
        terminal_M=float(m_tau[0]),
        terminal_X=float(x_tau[0]),
        terminal_S=float(s_tau[0]),
        terminal_M_T=float(m_T[0]) if track_T else None,
        censored_at=None if done else int(cap),
    )


def exit_batches(law: PairLaw, x0: float, y: float, cap: int, replicas: int, seed: int,
                 track_T: bool = False, tag: str = "exit", threads: int = 1, reduce=None) -> list:
    """Run the exit kernel over all replicas, optionally reducing each batch.

    ``reduce(tau, T, m_tau, x_tau, s_tau, m_T)`` maps raw batch arrays to a
    compact summary; without it the raw tuples are returned.
    """
    if cap < 1:
        raise InvalidArgumentError("cap must be >= 1")
    k, arrs, rho = _k(law), law.arrays, _rho_or_zero(law)

    def work(states):
        out = k.exit_times(*arrs, states, float(x0), float(y), rho, int(cap), bool(track_T))
        return reduce(*out) if reduce is not None else out

    return map_batches(work, replicas, seed, tag, threads)


def endpoint_batches(law: PairLaw, x0: float, n: int, replicas: int, seed: int, tag: str = "endpoint",
                     threads: int = 1, reduce=None, with_delta: bool = False) -> list:
    """(S_n, X_n, Delta_n) per replica, batched; Delta is zero unless requested."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    k, arrs, ea = _k(law), law.arrays, law.mean_a
    kern = k.endpoint_delta if with_delta else k.endpoint

    def work(states):
        out = kern(*arrs, states, float(x0), int(n), ea)
        return reduce(*out) if reduce is not None else out

    return map_batches(work, replicas, seed, tag, threads)


def killed_batches(law: PairLaw, x0: float, y: float, grid, replicas: int, seed: int,
                   tag: str = "killed", threads: int = 1) -> list:
    """Per batch: (sums, sums of squares, count) of (y + S_n) 1{tau > n} over the grid."""
    k, arrs = _k(law), law.arrays
    grid = np.asarray(sorted(int(g) for g in grid), dtype=np.int64)
    if grid.size == 0 or grid[0] < 0:
        raise InvalidArgumentError("grid must be non-empty and non-negative")

    def work(states):
        vals = k.killed(*arrs, states, float(x0), float(y), grid)
        return (
            [math.fsum(vals[:, i]) for i in range(len(grid))],
            [math.fsum(vals[:, i] ** 2) for i in range(len(grid))],
            vals.shape[0],
        )

    return map_batches(work, replicas, seed, tag, threads)


def kset_hits(law: PairLaw, x0: float, y: float, p0: float, c: float, n_max: int, replicas: int,
              seed: int, threads: int = 1) -> np.ndarray:
    """First entrance time into K_{p0,c} before exit, per replica (0: none by n_max)."""
    k, arrs = _k(law), law.arrays

    def work(states):
        return k.kset_hits(*arrs, states, float(x0), float(y), float(p0), float(c), int(n_max))

    return np.concatenate(map_batches(work, replicas, seed, "kset", threads))


def crossing_frequency(law: PairLaw, x0: float, y: float, n: int, threshold: float, replicas: int,
                       seed: int, coordinate: str = "S", threads: int = 1) -> float:
    """Fraction of replicas whose chosen coordinate leaves [-threshold, threshold] by step n."""
    if coordinate not in ("S", "M"):
        raise InvalidArgumentError(f"unknown coordinate {coordinate!r}")
    k, arrs, rho = _k(law), law.arrays, _rho_or_zero(law)

    def work(states):
        first = k.crossings(*arrs, states, float(x0), float(y), rho, int(n), float(threshold), coordinate == "M")
        return int(np.count_nonzero(first))

    return sum(map_batches(work, replicas, seed, "crossing", threads)) / int(replicas)
