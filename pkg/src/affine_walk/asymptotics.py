"""Survival tails, the survivor-conditioned law, exit-time moments and CLT distance."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from collections import OrderedDict

import numpy as np
from scipy.special import ndtr
from scipy.stats import kstwobign

from .errors import InsufficientSurvivorsError, InvalidArgumentError
from .harmonic import Estimate, check_domain, estimate_v
from .model import PairLaw, derived_constants
from .walk import Accumulator, endpoint_batches, exit_batches

SURVIVAL_TAG = "survival"
TAU_TAG = "tau"
CLT_TAG = "clt"
MIN_SURVIVORS = 10_000


def rayleigh_cdf(t):
    """1 - exp(-t^2 / 2) for t > 0, else 0; accepts scalars or arrays."""
    t = np.asarray(t, dtype=float)
    out = np.where(t > 0, -np.expm1(-0.5 * t * t), 0.0)
    return float(out) if out.ndim == 0 else out


def default_t_grid() -> np.ndarray:
    # 64 points in (0, 4], geometric near 0 where the Rayleigh CDF is flat
    return np.concatenate([np.geomspace(0.02, 0.5, 16), np.linspace(0.5, 4.0, 49)[1:]])


def ks_statistic(samples, cdf) -> float:
    """sup_t |F_n(t) - F(t)| for sorted samples and a continuous CDF."""
    x = np.asarray(samples, dtype=float)
    n = x.size
    if n < 2:
        raise InvalidArgumentError("KS needs at least 2 samples")
    if np.any(np.diff(x) < 0):
        raise InvalidArgumentError("samples must be sorted")
    f = np.asarray(cdf(x), dtype=float)
    i = np.arange(1, n + 1)
    return float(max(np.max(i / n - f), np.max(f - (i - 1) / n)))


def ks_pvalue(stat: float, n: int) -> float:
    """Asymptotic Kolmogorov p-value."""
    return float(kstwobign.sf(math.sqrt(n) * stat))


def loglog_fit(pairs, stderrs=None) -> tuple[float, float]:
    """Slope of log p on log n; weighted by 1/var(log p) when stderrs are given."""
    pairs = list(pairs)
    if len(pairs) < 3:
        raise InvalidArgumentError("need at least 3 (n, p) pairs")
    n = np.array([float(a) for a, _ in pairs])
    p = np.array([float(b) for _, b in pairs])
    if np.any(n <= 0) or np.any(p <= 0) or not np.all(np.isfinite(p)):
        raise InvalidArgumentError("n and p must be positive and finite")
    if np.unique(n).size < 2:
        raise InvalidArgumentError("need at least two distinct n")
    lx, ly = np.log(n), np.log(p)
    if stderrs is None:
        w = np.ones_like(lx)
    else:
        se = np.asarray(stderrs, dtype=float) / p
        if np.any(se <= 0):
            raise InvalidArgumentError("stderrs must be positive")
        w = 1.0 / se**2
    xm = np.sum(w * lx) / np.sum(w)
    ym = np.sum(w * ly) / np.sum(w)
    sxx = np.sum(w * (lx - xm) ** 2)
    slope = float(np.sum(w * (lx - xm) * (ly - ym)) / sxx)
    if stderrs is None:
        resid = ly - ym - slope * (lx - xm)
        dof = len(pairs) - 2
        s2 = float(np.sum(resid**2) / dof) if dof > 0 else 0.0
        return slope, math.sqrt(s2 / sxx)
    return slope, math.sqrt(1.0 / sxx)


# ---- survival pass -----------------------------------------------------------------


@dataclass(frozen=True)
class _SurvivalRun:
    replicas: int
    cap: int
    exit_times: np.ndarray  # sorted tau of replicas that exited by the cap
    survivors: np.ndarray  # y + S_cap of replicas with tau > cap

    def survival_count(self, n: int) -> int:
        return self.replicas - int(np.searchsorted(self.exit_times, n, side="right"))


# last few survival passes, keyed by everything that determines them
_RUNS: OrderedDict = OrderedDict()
_RUNS_KEEP = 2


def survival_run(law: PairLaw, x: float, y: float, cap: int, replicas: int, seed: int,
                 threads: int = 1) -> _SurvivalRun:
    """One pass to the cap; shared by tail_curve and conditional_law (memoized)."""
    law.require_valid()
    check_domain(law, x, y)
    if cap < 1 or replicas < 1:
        raise InvalidArgumentError("cap and replicas must be >= 1")
    key = (law.digest(), float(x), float(y), int(cap), int(replicas), int(seed))
    if key in _RUNS:
        _RUNS.move_to_end(key)
        return _RUNS[key]

    def reduce(tau, T, m_tau, x_tau, s_tau, m_T):
        done = tau > 0
        return tau[done].astype(np.int32), y + s_tau[~done]

    parts = exit_batches(law, x, y, cap, replicas, seed, tag=SURVIVAL_TAG, threads=threads, reduce=reduce)
    run = _SurvivalRun(
        int(replicas), int(cap),
        np.sort(np.concatenate([p[0] for p in parts])),
        np.concatenate([p[1] for p in parts]),
    )
    _RUNS[key] = run
    while len(_RUNS) > _RUNS_KEEP:
        _RUNS.popitem(last=False)
    return run


# ---- tail --------------------------------------------------------------------------


@dataclass
class TailCurve:
    n_grid: list
    p_hat: list
    ratios: list | None
    ratio_stderr: list | None
    fitted_exponent: float
    fit_stderr: float
    v: Estimate | None
    sigma: float
    warnings: list = field(default_factory=list)


def tail_curve(law: PairLaw, x: float, y: float, n_grid, replicas: int, seed: int = 0,
               v: Estimate | None = None, v_replicas: int = 1_000_000, v_cap: int = 1_000_000,
               threads: int = 1) -> TailCurve:
    """P_x(tau_y > n) on the grid from one pass, with ratios to 2V / (sqrt(2 pi n) sigma)."""
    grid = sorted(int(n) for n in n_grid)
    if not grid or grid[0] < 1 or len(set(grid)) != len(grid):
        raise InvalidArgumentError("n_grid must hold distinct integers >= 1")
    sigma = derived_constants(law).sigma
    run = survival_run(law, x, y, grid[-1], replicas, seed, threads)
    p_hat = []
    for n in grid:
        k = run.survival_count(n)
        p = k / replicas
        p_hat.append(Estimate(mean=p, stderr=math.sqrt(p * (1 - p) / replicas), replicas=int(replicas),
                              censor_rate=0.0, seed=int(seed)))
    notes = []
    if v is None:
        v = estimate_v(law, x, y, v_replicas, v_cap, seed, threads=threads)
    ratios = ratio_se = None
    if v.trusted and v.mean > 0:
        ratios, ratio_se = [], []
        for n, est in zip(grid, p_hat):
            r = est.mean * math.sqrt(2 * math.pi * n) * sigma / (2 * v.mean)
            rel_p = est.stderr / est.mean if est.mean > 0 else math.inf
            ratios.append(r)
            ratio_se.append(r * math.hypot(rel_p, v.stderr / v.mean))
    else:
        notes.append("V estimate untrusted; ratios omitted")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    # p = 0 or 1 carries no slope information and has zero binomial variance
    usable = [(n, e) for n, e in zip(grid, p_hat) if e.stderr > 0]
    slope = se = math.nan
    if len(usable) >= 3:
        slope, se = loglog_fit([(n, e.mean) for n, e in usable], [e.stderr for _, e in usable])
    return TailCurve(grid, p_hat, ratios, ratio_se, slope, se, v, sigma, notes)


# ---- conditional law ----------------------------------------------------------------


@dataclass
class ConditionalLawReport:
    n: int
    survivors: int
    t_grid: list
    empirical_cdf: list
    rayleigh: list
    ks_stat: float
    ks_pvalue_approx: float
    warnings: list = field(default_factory=list)


def conditional_law(law: PairLaw, x: float, y: float, n: int, replicas: int, t_grid=None,
                    seed: int = 0, threads: int = 1) -> ConditionalLawReport:
    """Law of (y + S_n) / (sigma sqrt n) given tau_y > n, against the Rayleigh CDF."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    grid = default_t_grid() if t_grid is None else np.asarray(t_grid, dtype=float)
    sigma = derived_constants(law).sigma
    run = survival_run(law, x, y, n, replicas, seed, threads)
    z = np.sort(run.survivors / (sigma * math.sqrt(n)))
    if z.size == 0:
        raise InsufficientSurvivorsError(f"no replica survived to n = {n}")
    notes = []
    if z.size < MIN_SURVIVORS:
        notes.append(f"only {z.size} survivors; KS asymptotics are rough")
        warnings.warn(notes[-1], RuntimeWarning, stacklevel=2)
    emp = np.searchsorted(z, grid, side="right") / z.size
    stat = ks_statistic(z, rayleigh_cdf) if z.size >= 2 else math.nan
    return ConditionalLawReport(
        n=int(n), survivors=int(z.size), t_grid=grid.tolist(), empirical_cdf=emp.tolist(),
        rayleigh=np.atleast_1d(rayleigh_cdf(grid)).tolist(), ks_stat=stat,
        ks_pvalue_approx=ks_pvalue(stat, z.size) if z.size >= 2 else math.nan, warnings=notes,
    )


# ---- moments of tau --------------------------------------------------------------------


def tau_moment(law: PairLaw, x: float, y: float, gamma: float, replicas: int, cap: int, seed: int = 0,
               threads: int = 1) -> Estimate:
    """Sample mean of min(tau_y, cap)^gamma; a lower bound for E tau^gamma when censored."""
    if not 0 < gamma < 1:
        raise InvalidArgumentError("gamma must lie in (0, 1)")
    law.require_valid()
    check_domain(law, x, y)

    def reduce(tau, *_):
        t = np.where(tau > 0, tau, cap).astype(float)
        return Accumulator().add(t**gamma), int(np.count_nonzero(tau == 0))

    parts = exit_batches(law, x, y, cap, replicas, seed, tag=TAU_TAG, threads=threads, reduce=reduce)
    acc = Accumulator()
    censored = 0
    for a, c in parts:
        acc = acc.merge(a)
        censored += c
    est = Estimate(mean=acc.mean, stderr=acc.stderr, replicas=acc.count, censor_rate=censored / acc.count,
                   seed=int(seed), lower_bound=censored > 0)
    if censored:
        est.notes.append("censored replicas enter at the cap: strict lower bound")
    return est


# ---- CLT distance -------------------------------------------------------------------------


def clt_distance(law: PairLaw, x: float, n: int, replicas: int, seed: int = 0, threads: int = 1,
                 grid_points: int = 1024) -> float:
    """max over a grid on [-4 sigma, 4 sigma] of |P(S_n / sqrt n <= u) - Phi(u / sigma)|."""
    if n < 1:
        raise InvalidArgumentError("n must be >= 1")
    law.require_valid()
    sigma = derived_constants(law).sigma
    parts = endpoint_batches(law, x, n, replicas, seed, tag=CLT_TAG, threads=threads,
                             reduce=lambda S, X, D: S / math.sqrt(n))
    z = np.sort(np.concatenate(parts))
    u = np.linspace(-4 * sigma, 4 * sigma, grid_points)
    emp = np.searchsorted(z, u, side="right") / z.size
    return float(np.max(np.abs(emp - ndtr(u / sigma))))
