"""Monte Carlo estimation of V(x, y) = -E_x[M_tau_y] and W(x, y) = -E_x[M_T_y].

Censored replicas (no exit by the cap) are excluded by default and counted in
``censor_rate``. In ``biased`` mode they contribute -M_cap instead. All
estimates on the same (seed, tag) share replica streams, which is what makes
paired comparisons (V against W, V at neighbouring y) low-variance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .conditions import in_dminus
from .errors import DomainError, InvalidArgumentError
from .model import PairLaw
from .rng import BATCH_SIZE, batch_key
from .walk import Accumulator, exit_batches, killed_batches, path_draws

CENSOR_THRESHOLD = 0.01
EXIT_TAG = "exit"
MODES = ("exclude", "biased")


@dataclass
class Estimate:
    mean: float
    stderr: float
    replicas: int
    censor_rate: float
    seed: int
    trusted: bool = True
    lower_bound: bool = False
    notes: list = field(default_factory=list)

    @property
    def ci95(self) -> tuple[float, float]:
        return (self.mean - 1.96 * self.stderr, self.mean + 1.96 * self.stderr)

    def to_dict(self) -> dict:
        return {
            "mean": self.mean,
            "stderr": self.stderr,
            "ci95": list(self.ci95),
            "replicas": self.replicas,
            "censor_rate": self.censor_rate,
            "seed": self.seed,
            "trusted": self.trusted,
            "lower_bound": self.lower_bound,
            "notes": list(self.notes),
        }


@dataclass
class HarmonicPoint:
    x: float
    y: float
    v: Estimate
    w: Estimate | None = None
    paired_stderr: float | None = None  # stderr of V(y_i) - V(y_{i-1}) on shared replicas


def _from_acc(acc: Accumulator, seed: int, threshold: float, lower_bound: bool = False) -> Estimate:
    rate = acc.censor_rate
    est = Estimate(
        mean=acc.mean,
        stderr=acc.stderr if acc.count >= 2 else math.nan,
        replicas=acc.total,
        censor_rate=rate,
        seed=int(seed),
        lower_bound=lower_bound,
    )
    if acc.count == 0:
        est.trusted = False
        est.notes.append("every replica was censored")
    elif rate >= threshold:
        est.trusted = False
        est.notes.append(f"censor rate {rate:.4g} >= {threshold:g}")
    return est


def check_domain(law: PairLaw, x: float, y: float) -> None:
    if y <= 0 and not in_dminus(law, x, y):
        raise DomainError(f"(x, y) = ({x}, {y}) is outside D^-: one step cannot re-enter y > 0")


def _exit_estimate(law, x, y, replicas, cap, seed, mode, threads, threshold, use_T):
    if mode not in MODES:
        raise InvalidArgumentError(f"mode must be one of {MODES}")
    law.require_valid()

    def reduce(tau, T, m_tau, x_tau, s_tau, m_T):
        stop, m = (T, m_T) if use_T else (tau, m_tau)
        done = stop > 0
        return Accumulator().add(-m if mode == "biased" else -m[done]), int(np.count_nonzero(~done))

    parts = exit_batches(law, x, y, cap, replicas, seed, track_T=use_T, tag=EXIT_TAG,
                         threads=threads, reduce=reduce)
    acc = Accumulator()
    censored = 0
    for part, cens in parts:
        acc = acc.merge(part)
        censored += cens
    if mode == "exclude":
        acc.censored = censored
        return _from_acc(acc, seed, threshold)
    est = _from_acc(acc, seed, threshold)
    est.censor_rate = censored / acc.count
    est.notes.append("biased mode: censored replicas contribute -M at the cap")
    if est.censor_rate >= threshold:
        est.trusted = False
    return est


def estimate_v(law: PairLaw, x: float, y: float, replicas: int, cap: int, seed: int = 0,
               mode: str = "exclude", threads: int = 1, threshold: float = CENSOR_THRESHOLD) -> Estimate:
    """V(x, y) = -E_x[M_tau_y]; y <= 0 is allowed on D^-."""
    check_domain(law, x, y)
    return _exit_estimate(law, x, y, replicas, cap, seed, mode, threads, threshold, use_T=False)


def estimate_w(law: PairLaw, x: float, y: float, replicas: int, cap: int, seed: int = 0,
               mode: str = "exclude", threads: int = 1, threshold: float = CENSOR_THRESHOLD) -> Estimate:
    """W(x, y) = -E_x[M_T_y], defined for every real y."""
    return _exit_estimate(law, x, y, replicas, cap, seed, mode, threads, threshold, use_T=True)


def compare_v_w(law: PairLaw, x: float, y: float, replicas: int, cap: int, seed: int = 0,
                threads: int = 1) -> dict:
    """V, W and the paired difference W - V on replicas where both stopped."""
    law.require_valid()
    check_domain(law, x, y)

    def reduce(tau, T, m_tau, x_tau, s_tau, m_T):
        both = (tau > 0) & (T > 0)
        order_ok = bool(np.all(tau[both] <= T[both]))
        return (
            Accumulator().add(-m_tau[tau > 0], censored=int(np.count_nonzero(tau == 0))),
            Accumulator().add(-m_T[T > 0], censored=int(np.count_nonzero(T == 0))),
            Accumulator().add(m_tau[both] - m_T[both], censored=int(np.count_nonzero(~both))),
            order_ok,
        )

    parts = exit_batches(law, x, y, cap, replicas, seed, track_T=True, tag=EXIT_TAG,
                         threads=threads, reduce=reduce)
    accs = [Accumulator(), Accumulator(), Accumulator()]
    order_ok = True
    for p in parts:
        accs = [a.merge(b) for a, b in zip(accs, p[:3])]
        order_ok &= p[3]
    v, w, d = (_from_acc(a, seed, CENSOR_THRESHOLD) for a in accs)
    return {"v": v, "w": w, "w_minus_v": d, "tau_le_T": order_ok}


def harmonicity_residual(law: PairLaw, x: float, y: float, n_grid, replicas: int, seed: int = 0,
                         v: Estimate | None = None, cap: int = 1_000_000,
                         threads: int = 1) -> list[tuple[int, Estimate, float | None]]:
    """u_n = E_x[(y + S_n); tau_y > n] on the grid, with residuals u_n - V."""
    law.require_valid()
    check_domain(law, x, y)
    grid = sorted(int(n) for n in n_grid)
    if not grid or grid[0] < 0:
        raise InvalidArgumentError("n_grid must be non-empty and non-negative")
    if v is None:
        v = estimate_v(law, x, y, replicas, cap, seed, threads=threads)
    parts = killed_batches(law, x, y, grid, replicas, seed, threads=threads)
    total = sum(p[2] for p in parts)
    out = []
    for i, n in enumerate(grid):
        acc = Accumulator(total, 0, [p[0][i] for p in parts], [p[1][i] for p in parts])
        u = _from_acc(acc, seed, CENSOR_THRESHOLD)
        resid = u.mean - v.mean if v.trusted else None
        out.append((n, u, resid))
    return out


def one_step_harmonicity(law: PairLaw, x: float, y: float, outer_replicas: int,
                         inner_replicas: int | None = None, seed: int = 0, cap: int = 100_000,
                         ref_replicas: int | None = None, threads: int = 1) -> Estimate:
    """E_x[V(X_1, y + S_1); tau_y > 1] - V(x, y) by nested simulation.

    Each outer replica gets its own inner seed, derived from (seed, replica id).
    """
    law.require_valid()
    check_domain(law, x, y)
    outer_replicas = int(outer_replicas)
    if inner_replicas is None:
        inner_replicas = max(2, math.isqrt(outer_replicas))
    if ref_replicas is None:
        ref_replicas = min(outer_replicas * inner_replicas, 1_000_000)
    if not 2 <= outer_replicas <= BATCH_SIZE:
        raise InvalidArgumentError(f"outer_replicas must lie in [2, {BATCH_SIZE}]")
    A, B = next(path_draws(law, 1, outer_replicas, seed, tag="outer"))
    terms = np.zeros(outer_replicas)
    untrusted = 0
    for i in range(outer_replicas):
        x1 = A[i, 0] * x + B[i, 0]
        y1 = y + x1
        if y1 <= 0:
            continue
        inner_seed = batch_key(seed, "inner", i)
        est = estimate_v(law, x1, y1, inner_replicas, cap, inner_seed, threads=threads)
        untrusted += not est.trusted
        terms[i] = est.mean if math.isfinite(est.mean) else 0.0
    ref = estimate_v(law, x, y, ref_replicas, cap, seed, threads=threads)
    mean_outer = math.fsum(terms) / outer_replicas
    se_outer = float(np.std(terms, ddof=1)) / math.sqrt(outer_replicas)
    res = Estimate(
        mean=mean_outer - ref.mean,
        stderr=math.hypot(se_outer, ref.stderr),
        replicas=outer_replicas,
        censor_rate=ref.censor_rate,
        seed=int(seed),
        trusted=ref.trusted and untrusted == 0,
    )
    if untrusted:
        res.notes.append(f"{untrusted} inner estimates untrusted")
    return res


def monotonicity_scan(law: PairLaw, x: float, y_grid, replicas: int, cap: int, seed: int = 0,
                      threads: int = 1, with_w: bool = False) -> list[HarmonicPoint]:
    """V(x, .) on an ascending grid with shared replica streams."""
    ys = [float(v) for v in y_grid]
    if ys != sorted(ys):
        raise InvalidArgumentError("y_grid must be ascending")
    law.require_valid()
    for y in ys:
        check_domain(law, x, y)
    points = []
    prev = None
    for y in ys:
        parts = exit_batches(law, x, y, cap, replicas, seed, tag=EXIT_TAG, threads=threads,
                             reduce=lambda tau, T, m, *_: (tau > 0, -m))
        done = np.concatenate([p[0] for p in parts])
        vals = np.concatenate([p[1] for p in parts])
        acc = Accumulator()
        for p in parts:
            acc.add(p[1][p[0]], censored=int(np.count_nonzero(~p[0])))
        pt = HarmonicPoint(x=float(x), y=y, v=_from_acc(acc, seed, CENSOR_THRESHOLD))
        if with_w:
            pt.w = estimate_w(law, x, y, replicas, cap, seed, threads=threads)
        if prev is not None:
            both = done & prev[0]
            diff = vals[both] - prev[1][both]
            pt.paired_stderr = float(np.std(diff, ddof=1) / math.sqrt(diff.size)) if diff.size > 1 else math.nan
        prev = (done, vals)
        points.append(pt)
    return points
