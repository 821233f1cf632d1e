"""Laws of the pair (a, b), exact moments and the derived walk constants."""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Union

import numpy as np
from scipy.special import gammaln, ndtr

from .errors import (
    InvalidArgumentError,
    InvalidLawError,
    MomentConditionError,
    UnsupportedLawError,
)
from .rng import Stream

PROB_TOL = 1e-12
CENTER_TOL = 1e-10
DEFAULT_ALPHA_GRID = (2.1, 2.5, 3.0, 4.0, 6.0)

# kernel shape codes: how a step's (a, b) is drawn
SHAPE_JOINT, SHAPE_DISCRETE_B, SHAPE_UNIFORM_B, SHAPE_GAUSSIAN_B = 0, 1, 2, 3


def _check_probs(probs) -> None:
    if len(probs) == 0:
        raise InvalidLawError("law has no atoms")
    if any(not math.isfinite(p) or p < 0 for p in probs):
        raise InvalidLawError("probabilities must be finite and non-negative")
    if abs(math.fsum(probs) - 1.0) > PROB_TOL:
        raise InvalidLawError(f"probabilities sum to {math.fsum(probs)!r}, not 1")


def _in_interval(v: float, lo: float, hi: float, lo_closed: bool, hi_closed: bool) -> bool:
    above = v >= lo if lo_closed else v > lo
    below = v <= hi if hi_closed else v < hi
    return above and below


@dataclass(frozen=True)
class Discrete:
    values: tuple
    probs: tuple

    def __post_init__(self):
        object.__setattr__(self, "values", tuple(float(v) for v in self.values))
        object.__setattr__(self, "probs", tuple(float(p) for p in self.probs))
        if len(self.values) != len(self.probs):
            raise InvalidLawError("values and probs differ in length")
        if any(not math.isfinite(v) for v in self.values):
            raise InvalidLawError("atom values must be finite")
        _check_probs(self.probs)

    def abs_moment(self, s: float) -> float:
        return math.fsum(p * abs(v) ** s for v, p in zip(self.values, self.probs) if p > 0)

    def raw_moment(self, k: int) -> float:
        return math.fsum(p * v**k for v, p in zip(self.values, self.probs))

    def prob_interval(self, lo, hi, lo_closed=True, hi_closed=True) -> float:
        return math.fsum(
            p for v, p in zip(self.values, self.probs) if _in_interval(v, lo, hi, lo_closed, hi_closed)
        )

    @property
    def support_sup(self) -> float:
        return max(v for v, p in zip(self.values, self.probs) if p > 0)

    def to_dict(self) -> dict:
        return {"discrete": [[v, p] for v, p in zip(self.values, self.probs)]}


@dataclass(frozen=True)
class Uniform:
    lo: float
    hi: float

    def __post_init__(self):
        if not (math.isfinite(self.lo) and math.isfinite(self.hi) and self.lo < self.hi):
            raise InvalidLawError(f"uniform law needs finite lo < hi, got ({self.lo}, {self.hi})")

    def abs_moment(self, s: float) -> float:
        # antiderivative of |t|^s is sign(t)|t|^(s+1)/(s+1)
        def prim(t):
            return math.copysign(abs(t) ** (s + 1), t) / (s + 1)

        return (prim(self.hi) - prim(self.lo)) / (self.hi - self.lo)

    def raw_moment(self, k: int) -> float:
        return (self.hi ** (k + 1) - self.lo ** (k + 1)) / ((k + 1) * (self.hi - self.lo))

    def prob_interval(self, lo, hi, lo_closed=True, hi_closed=True) -> float:
        left, right = max(lo, self.lo), min(hi, self.hi)
        return max(0.0, right - left) / (self.hi - self.lo)

    @property
    def support_sup(self) -> float:
        return self.hi

    def to_dict(self) -> dict:
        return {"uniform": [self.lo, self.hi]}


@dataclass(frozen=True)
class Gaussian:
    """Centred normal law; only allowed for b."""

    sd: float

    def __post_init__(self):
        if not (math.isfinite(self.sd) and self.sd > 0):
            raise InvalidLawError("gaussian sd must be positive and finite")

    def abs_moment(self, s: float) -> float:
        log_m = s * math.log(self.sd) + 0.5 * s * math.log(2.0) + gammaln((s + 1) / 2) - 0.5 * math.log(math.pi)
        return math.exp(log_m)

    def raw_moment(self, k: int) -> float:
        if k % 2:
            return 0.0
        return self.abs_moment(k)

    def prob_interval(self, lo, hi, lo_closed=True, hi_closed=True) -> float:
        if hi <= lo:
            return 0.0
        return float(ndtr(hi / self.sd) - ndtr(lo / self.sd))

    @property
    def support_sup(self) -> float:
        return math.inf

    def to_dict(self) -> dict:
        return {"gaussian": {"sd": self.sd}}


MarginalLaw = Union[Discrete, Uniform, Gaussian]


@dataclass(frozen=True)
class Moments:
    E_abs_a_s: float
    E_abs_b_s: float
    E_a: float
    E_a2: float
    E_b2: float


@dataclass(frozen=True)
class DerivedConstants:
    rho: float
    mu: float
    sigma2: float
    alpha_used: float

    @property
    def sigma(self) -> float:
        return math.sqrt(self.sigma2)


@dataclass
class ConditionReport:
    """Outcome of a hypothesis check.

    ``satisfied`` is None when the check is undecided (Monte Carlo could not
    settle it either way).
    """

    name: str
    satisfied: bool | None
    method: str
    alpha_witness: float | None = None
    witness: dict | None = None
    details: list = field(default_factory=list)

    @property
    def status(self) -> str:
        if self.satisfied is None:
            return "undecided"
        return "satisfied" if self.satisfied else "not-satisfied"

    def to_dict(self) -> dict:
        out = {"status": self.status, "method": self.method, "witness": self.witness}
        if self.alpha_witness is not None:
            out["alpha_witness"] = self.alpha_witness
        out["details"] = [[str(k), v] for k, v in self.details]
        return out


class PairLaw:
    """Law of the i.i.d. pair (a, b) driving X_{n+1} = a X_n + b.

    Two shapes are supported: a finite joint law on atoms (a_i, b_i), or an
    independent product of a discrete law for a and a discrete, uniform or
    centred Gaussian law for b.

    ``strict=False`` skips the centring and non-degeneracy checks on b. It
    exists for deterministic test paths only; estimators refuse such laws.
    """

    def __init__(self, kind: str, *, atoms=None, a_law=None, b_law=None, strict: bool = True):
        self.kind = kind
        self.strict = strict
        if kind == "joint_discrete":
            if not atoms:
                raise InvalidLawError("joint law needs at least one atom")
            norm = []
            for atom in atoms:
                (a, b), p = atom
                a, b, p = float(a), float(b), float(p)
                if not (math.isfinite(a) and math.isfinite(b)):
                    raise InvalidLawError("atom coordinates must be finite")
                norm.append((a, b, p))
            _check_probs([p for _, _, p in norm])
            self.atoms = tuple(norm)
            self.a_law = self.b_law = None
        elif kind == "independent":
            if not isinstance(a_law, Discrete):
                raise UnsupportedLawError("the law of a must be discrete")
            if not isinstance(b_law, (Discrete, Uniform, Gaussian)):
                raise UnsupportedLawError(f"unsupported law for b: {type(b_law).__name__}")
            self.a_law, self.b_law = a_law, b_law
            self.atoms = None
        else:
            raise InvalidLawError(f"unknown law kind {kind!r}")

        if strict:
            if abs(self.mean_b) > CENTER_TOL:
                raise InvalidLawError(f"b is not centred: E(b) = {self.mean_b!r}")
            if self.prob_b_nonzero <= 0:
                raise InvalidLawError("b vanishes almost surely")

    @classmethod
    def joint_discrete(cls, atoms, strict: bool = True) -> "PairLaw":
        return cls("joint_discrete", atoms=atoms, strict=strict)

    @classmethod
    def independent(cls, a_law: MarginalLaw, b_law: MarginalLaw, strict: bool = True) -> "PairLaw":
        return cls("independent", a_law=a_law, b_law=b_law, strict=strict)

    # ---- exact moments -------------------------------------------------

    def _expect_a(self, f) -> float:
        if self.atoms is not None:
            return math.fsum(p * f(a) for a, _, p in self.atoms)
        return math.fsum(p * f(v) for v, p in zip(self.a_law.values, self.a_law.probs))

    def abs_moment_a(self, s: float) -> float:
        if self.atoms is not None:
            return math.fsum(p * abs(a) ** s for a, _, p in self.atoms if p > 0)
        return self.a_law.abs_moment(s)

    def abs_moment_b(self, s: float) -> float:
        if self.atoms is not None:
            return math.fsum(p * abs(b) ** s for _, b, p in self.atoms if p > 0)
        return self.b_law.abs_moment(s)

    @cached_property
    def mean_a(self) -> float:
        return self._expect_a(lambda a: a)

    @cached_property
    def mean_a2(self) -> float:
        return self._expect_a(lambda a: a * a)

    @cached_property
    def mean_b(self) -> float:
        if self.atoms is not None:
            return math.fsum(p * b for _, b, p in self.atoms)
        return self.b_law.raw_moment(1)

    @cached_property
    def mean_b2(self) -> float:
        if self.atoms is not None:
            return math.fsum(p * b * b for _, b, p in self.atoms)
        return self.b_law.raw_moment(2)

    @cached_property
    def prob_b_nonzero(self) -> float:
        if self.atoms is not None:
            return math.fsum(p for _, b, p in self.atoms if b != 0)
        if isinstance(self.b_law, Discrete):
            return 1.0 - self.b_law.prob_interval(0.0, 0.0)
        return 1.0

    @property
    def rho(self) -> float:
        if self.mean_a == 1.0:
            raise MomentConditionError("E(a) = 1: the martingale correction is undefined")
        return self.mean_a / (1.0 - self.mean_a)

    @property
    def words_per_step(self) -> int:
        """64-bit generator words consumed per (a, b) draw; fixed for a law."""
        shape, na, nb = self.shape
        words = 1 if self.needs_pick else 0
        if shape == SHAPE_UNIFORM_B:
            words += 1
        elif shape == SHAPE_GAUSSIAN_B:
            words += 2
        return words

    @property
    def needs_pick(self) -> bool:
        shape, na, nb = self.shape
        return na > 1 or (shape == SHAPE_DISCRETE_B and nb > 1)

    @property
    def centered(self) -> bool:
        return abs(self.mean_b) <= CENTER_TOL and self.prob_b_nonzero > 0

    def require_valid(self) -> None:
        """Estimators call this: Condition 1 part 2 must hold."""
        if not self.centered:
            raise InvalidLawError("estimators need a centred, non-degenerate b")

    # ---- probabilities used by the condition checkers ------------------

    def a_atoms(self) -> list[tuple[float, float]]:
        if self.atoms is not None:
            return [(a, p) for a, _, p in self.atoms]
        return list(zip(self.a_law.values, self.a_law.probs))

    def prob(self, pred_a, b_lo, b_hi, b_lo_closed=True, b_hi_closed=True) -> float:
        """P(pred_a(a) and b in the interval with ends (b_lo, b_hi)).

        ``b_lo``/``b_hi`` may be callables of a for conditional intervals.
        """

        def bounds(a):
            lo = b_lo(a) if callable(b_lo) else b_lo
            hi = b_hi(a) if callable(b_hi) else b_hi
            return lo, hi

        if self.atoms is not None:
            tot = []
            for a, b, p in self.atoms:
                if p > 0 and pred_a(a):
                    lo, hi = bounds(a)
                    if _in_interval(b, lo, hi, b_lo_closed, b_hi_closed):
                        tot.append(p)
            return math.fsum(tot)
        tot = []
        for a, p in zip(self.a_law.values, self.a_law.probs):
            if p > 0 and pred_a(a):
                lo, hi = bounds(a)
                tot.append(p * self.b_law.prob_interval(lo, hi, b_lo_closed, b_hi_closed))
        return math.fsum(tot)

    # ---- serialization -------------------------------------------------

    def to_dict(self) -> dict:
        if self.atoms is not None:
            return {"kind": "joint_discrete", "atoms": [[[a, b], p] for a, b, p in self.atoms]}
        return {"kind": "independent", "a": self.a_law.to_dict(), "b": self.b_law.to_dict()}

    def digest(self) -> str:
        canon = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode()).hexdigest()

    def __repr__(self) -> str:
        return f"PairLaw({self.to_dict()!r})"

    # ---- kernel representation -----------------------------------------

    @cached_property
    def shape(self) -> tuple[int, int, int]:
        """(shape code, number of a atoms, number of b atoms) for the kernels."""
        if self.atoms is not None:
            return SHAPE_JOINT, len(self.atoms), len(self.atoms)
        na = len(self.a_law.values)
        b = self.b_law
        if isinstance(b, Discrete):
            return SHAPE_DISCRETE_B, na, len(b.values)
        if isinstance(b, Uniform):
            return SHAPE_UNIFORM_B, na, 0
        return SHAPE_GAUSSIAN_B, na, 0

    @cached_property
    def arrays(self):
        """(av, acdf, bv, bcdf, bpar) float arrays consumed by the kernels."""

        def cdf(probs):
            c = np.cumsum(probs)
            c[-1] = 1.0
            return c

        one = np.zeros(1)
        if self.atoms is not None:
            av = np.array([a for a, _, _ in self.atoms])
            bv = np.array([b for _, b, _ in self.atoms])
            acdf = cdf([p for _, _, p in self.atoms])
            return av, acdf, bv, acdf.copy(), np.zeros(2)
        av = np.array(self.a_law.values)
        acdf = cdf(self.a_law.probs)
        b = self.b_law
        if isinstance(b, Discrete):
            return av, acdf, np.array(b.values), cdf(b.probs), np.zeros(2)
        if isinstance(b, Uniform):
            return av, acdf, one, one, np.array([b.lo, b.hi])
        return av, acdf, one, one, np.array([b.sd, 0.0])


# ---- parsing -----------------------------------------------------------------


def _parse_pairs(obj, what: str) -> list:
    if not isinstance(obj, list) or not obj:
        raise InvalidLawError(f"{what}: expected a non-empty list of [value, prob]")
    out = []
    for item in obj:
        if not (isinstance(item, list) and len(item) == 2):
            raise InvalidLawError(f"{what}: bad entry {item!r}")
        out.append(item)
    return out


def _parse_marginal(obj, what: str) -> MarginalLaw:
    if not isinstance(obj, dict) or len(obj) != 1:
        raise InvalidLawError(f"{what}: expected exactly one of discrete/uniform/gaussian")
    (key, val), = obj.items()
    if key == "discrete":
        pairs = _parse_pairs(val, what)
        return Discrete(tuple(v for v, _ in pairs), tuple(p for _, p in pairs))
    if key == "uniform":
        if not (isinstance(val, list) and len(val) == 2):
            raise InvalidLawError(f"{what}: uniform needs [lo, hi]")
        return Uniform(float(val[0]), float(val[1]))
    if key == "gaussian":
        if not isinstance(val, dict) or set(val) != {"sd"}:
            raise InvalidLawError(f"{what}: gaussian needs exactly {{'sd': s}}")
        return Gaussian(float(val["sd"]))
    raise InvalidLawError(f"{what}: unknown marginal kind {key!r}")


def law_from_dict(doc: dict) -> PairLaw:
    if not isinstance(doc, dict):
        raise InvalidLawError("model document must be a JSON object")
    kind = doc.get("kind")
    if kind == "joint_discrete":
        extra = set(doc) - {"kind", "atoms"}
        if extra:
            raise InvalidLawError(f"unknown keys {sorted(extra)}")
        atoms = doc.get("atoms")
        if not isinstance(atoms, list) or not atoms:
            raise InvalidLawError("joint_discrete needs a non-empty 'atoms' list")
        for atom in atoms:
            if not (isinstance(atom, list) and len(atom) == 2 and isinstance(atom[0], list) and len(atom[0]) == 2):
                raise InvalidLawError(f"bad atom {atom!r}; expected [[a, b], p]")
        return PairLaw.joint_discrete(atoms)
    if kind == "independent":
        extra = set(doc) - {"kind", "a", "b"}
        if extra:
            raise InvalidLawError(f"unknown keys {sorted(extra)}")
        if "a" not in doc or "b" not in doc:
            raise InvalidLawError("independent law needs 'a' and 'b'")
        a_law = _parse_marginal(doc["a"], "a")
        b_law = _parse_marginal(doc["b"], "b")
        if isinstance(a_law, Gaussian):
            raise UnsupportedLawError("gaussian is permitted for b only")
        return PairLaw.independent(a_law, b_law)
    raise InvalidLawError(f"unknown model kind {kind!r}")


def load_law(path: str | Path) -> PairLaw:
    with open(path, encoding="utf-8") as fh:
        return law_from_dict(json.load(fh))


# ---- operations ----------------------------------------------------------------


def moments(law: PairLaw, s: float) -> Moments:
    if not s >= 1:
        raise InvalidArgumentError("moment order must be >= 1")
    return Moments(
        E_abs_a_s=law.abs_moment_a(s),
        E_abs_b_s=law.abs_moment_b(s),
        E_a=law.mean_a,
        E_a2=law.mean_a2,
        E_b2=law.mean_b2,
    )


def check_moment_condition(law: PairLaw, alpha_grid=DEFAULT_ALPHA_GRID) -> ConditionReport:
    grid = list(alpha_grid)
    if not grid:
        raise InvalidArgumentError("alpha grid is empty")
    if any(not alpha > 2 for alpha in grid):
        raise InvalidArgumentError("every probed alpha must exceed 2")
    details = []
    witness = None
    for alpha in grid:
        ea = law.abs_moment_a(alpha)
        eb = law.abs_moment_b(alpha)
        details.append((f"E|a|^{alpha:g}", ea))
        if witness is None and ea < 1 and math.isfinite(eb):
            witness = alpha
    return ConditionReport(
        name="C1",
        satisfied=witness is not None,
        method="exact",
        alpha_witness=witness,
        witness=None if witness is None else {"alpha": witness, "E_abs_a_alpha": law.abs_moment_a(witness)},
        details=details,
    )


def derived_constants(law: PairLaw, alpha_used: float | None = None) -> DerivedConstants:
    if alpha_used is None:
        rep = check_moment_condition(law)
        if not rep.satisfied:
            raise MomentConditionError("no alpha on the default grid has E|a|^alpha < 1")
        alpha_used = rep.alpha_witness
    if not alpha_used > 2:
        raise InvalidArgumentError("alpha must exceed 2")
    ea, ea2 = law.mean_a, law.mean_a2
    if ea2 >= 1:
        raise MomentConditionError(f"E(a^2) = {ea2} >= 1")
    if not law.abs_moment_a(alpha_used) < 1:
        raise MomentConditionError(f"E|a|^{alpha_used} >= 1")
    rho = ea / (1.0 - ea)
    mu = law.mean_b / (1.0 - ea)
    sigma2 = law.mean_b2 / (1.0 - ea2) * (1.0 + ea) / (1.0 - ea)
    if not sigma2 > 0:
        raise MomentConditionError("sigma^2 is not positive")
    return DerivedConstants(rho=rho, mu=mu, sigma2=sigma2, alpha_used=alpha_used)


def _pick(cdf, u: float) -> int:
    return sum(1 for c in cdf[:-1] if u >= c)


def sample_pair(law: PairLaw, rng: Stream) -> tuple[float, float]:
    """One draw of (a, b); consumes the stream exactly like the kernels do."""
    shape, na, nb = law.shape
    av, acdf, bv, bcdf, bpar = law.arrays
    ua = ub = 0.0
    if law.needs_pick:
        ua, ub = rng.split32()
    i = _pick(acdf, ua) if na > 1 else 0
    a = float(av[i])
    if shape == SHAPE_JOINT:
        return a, float(bv[i])
    if shape == SHAPE_DISCRETE_B:
        return a, float(bv[_pick(bcdf, ub) if nb > 1 else 0])
    if shape == SHAPE_UNIFORM_B:
        return a, float(bpar[0] + (bpar[1] - bpar[0]) * rng.uniform())
    u1 = rng.uniform()
    u2 = rng.uniform()
    return a, float(bpar[0] * math.sqrt(-2.0 * math.log(1.0 - u1)) * math.cos(2.0 * math.pi * u2))


# ---- fixture laws ----------------------------------------------------------------


def ssrw() -> PairLaw:
    """a = 0, b = +-1: the simple symmetric random walk."""
    return PairLaw.independent(Discrete((0.0,), (1.0,)), Discrete((-1.0, 1.0), (0.5, 0.5)))


def symmetric_half() -> PairLaw:
    """a = +-1/2 independent of b = +-1."""
    return PairLaw.independent(Discrete((-0.5, 0.5), (0.5, 0.5)), Discrete((-1.0, 1.0), (0.5, 0.5)))


def drifting_half() -> PairLaw:
    """a = 1/2, b = +-1."""
    return PairLaw.independent(Discrete((0.5,), (1.0,)), Discrete((-1.0, 1.0), (0.5, 0.5)))


def negative_mean() -> PairLaw:
    """a in {-0.9, 0.3} independent of b = +-0.2; E(a) < 0."""
    return PairLaw.independent(Discrete((-0.9, 0.3), (0.5, 0.5)), Discrete((0.2, -0.2), (0.5, 0.5)))


FIXTURES = {
    "ssrw": ssrw,
    "symmetric-half": symmetric_half,
    "drifting-half": drifting_half,
    "negative-mean": negative_mean,
}
