"""Positivity hypotheses on the law of (a, b) and the set D^-.

All checkers are exact for the supported laws: a is discrete, so every event
below is a finite union over the atoms of a of an interval event for b.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

from .errors import CertificateNotFound, InvalidArgumentError
from .model import ConditionReport, Discrete, Gaussian, PairLaw, Uniform
from . import walk

DEFAULT_C_PROBES = (0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 100.0, 1e6)
MC_REPLICAS = 100_000


@dataclass(frozen=True)
class KSet:
    """K_{p0,c} = {(x, y): y > 0, y >= c (1 + |x|^p0)}."""

    p0: float
    c: float

    def __post_init__(self):
        if not self.p0 > 2:
            raise InvalidArgumentError("p0 must exceed 2")
        if not self.c > 0:
            raise InvalidArgumentError("c must be positive")

    def contains(self, x: float, y: float) -> bool:
        return y > 0 and y >= self.c * (1.0 + abs(x) ** self.p0)


@dataclass
class Certificate:
    kind: str  # exact-atom | appendix-construction | monte-carlo
    n0: int | None
    delta: float | None = None
    C: float | None = None
    C_x: float | None = None
    witness_path: list | None = None
    hits: int | None = None
    replicas: int | None = None
    notes: list = field(default_factory=list)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "n0": self.n0}
        for key in ("delta", "C", "C_x", "hits", "replicas"):
            val = getattr(self, key)
            if val is not None:
                out[key] = val
        if self.witness_path is not None:
            out["witness_path"] = [list(p) for p in self.witness_path]
        if self.notes:
            out["notes"] = list(self.notes)
        return out


# ---- support geometry ----------------------------------------------------------


def _branches(law: PairLaw):
    """(a, p_a, b_law_given_a) with p_a > 0; b_law is a Discrete/Uniform/Gaussian."""
    if law.atoms is not None:
        by_a: dict[float, list] = {}
        for a, b, p in law.atoms:
            if p > 0:
                by_a.setdefault(a, []).append((b, p))
        out = []
        for a, bs in by_a.items():
            tot = math.fsum(p for _, p in bs)
            out.append((a, tot, Discrete(tuple(b for b, _ in bs), tuple(p / tot for _, p in bs))))
        return out
    return [(a, p, law.b_law) for a, p in zip(law.a_law.values, law.a_law.probs) if p > 0]


def _b_atoms(blaw) -> list[float]:
    return [v for v, p in zip(blaw.values, blaw.probs) if p > 0]


def _mass_above(blaw, t: float, strict: bool) -> bool:
    """P(b > t) > 0 (strict) or P(b >= t) > 0."""
    if isinstance(blaw, Gaussian):
        return True
    if isinstance(blaw, Uniform):
        return blaw.hi > t
    return any(v > t if strict else v >= t for v in _b_atoms(blaw))


def _b_sup(blaw) -> float:
    if isinstance(blaw, Gaussian):
        return math.inf
    if isinstance(blaw, Uniform):
        return blaw.hi
    return max(_b_atoms(blaw))


def _step_witness(law: PairLaw, x: float, y: float):
    """An (a, b-region) with a x + b > -y and positive mass, or None."""
    for a, _, blaw in _branches(law):
        t = -y - a * x
        if _mass_above(blaw, t, strict=True):
            if isinstance(blaw, Discrete):
                b = max(_b_atoms(blaw))
                return {"a": a, "b": b, "value": a * x + b}
            return {"a": a, "b_region": [t, _b_sup(blaw)]}
    return None


# ---- Condition 2 ------------------------------------------------------------------


def check_c2(law: PairLaw, x: float, y: float) -> ConditionReport:
    """P(a x + b > -y) > 0 at one point (x, y > 0)."""
    if not y > 0:
        raise InvalidArgumentError("Condition 2 is stated for y > 0; use in_dminus for y <= 0")
    w = _step_witness(law, float(x), float(y))
    return ConditionReport(
        name="C2", satisfied=w is not None, method="exact", witness=w,
        details=[("x", float(x)), ("y", float(y))],
    )


def check_c2_global(law: PairLaw) -> ConditionReport:
    """Condition 2 for every x and every y > 0.

    It holds iff inf_x max_i (a_i x + sup b | a_i) >= 0; the map is convex and
    piecewise linear, so its infimum is found among finitely many breakpoints.
    """
    lines = [(a, _b_sup(blaw)) for a, _, blaw in _branches(law)]
    if any(math.isinf(s) for _, s in lines):
        return ConditionReport("C2", True, "exact", witness={"reason": "b unbounded above"})
    slopes = [a for a, _ in lines]

    def f(t):
        return max(a * t + s for a, s in lines)

    if max(slopes) > 0 and min(slopes) < 0:
        cands = [0.0]
        for (a1, s1), (a2, s2) in itertools.combinations(lines, 2):
            if a1 != a2:
                cands.append(-(s1 - s2) / (a1 - a2))
        x_star = min(cands, key=f)
        inf = f(x_star)
    else:
        flat = [s for a, s in lines if a == 0]
        x_star = None
        inf = max(flat) if flat else -math.inf
    if inf >= 0:
        return ConditionReport("C2", True, "exact", witness={"inf_over_x": inf, "argmin_x": x_star})
    # concrete counterexample: a point (x, y > 0) with P(ax + b > -y) = 0
    if x_star is None:
        pos = max(slopes) > 0
        x_bad = 1.0
        while f(x_bad if not pos else -x_bad) >= 0:
            x_bad *= 2
        x_star = -x_bad if pos else x_bad
    val = f(x_star)
    y_bad = -val / 2
    return ConditionReport(
        "C2", False, "exact",
        witness={"counterexample": {"x": x_star, "y": y_bad, "max_ax_plus_b": val}},
    )


def in_dminus(law: PairLaw, x: float, y: float) -> bool:
    """(x, y <= 0) belongs to D^- iff P(a x + b > -y) > 0 (strict inequality)."""
    if y > 0:
        raise InvalidArgumentError("D^- membership is defined for y <= 0")
    return _step_witness(law, float(x), float(y)) is not None


# ---- Condition 2' -----------------------------------------------------------------


def _prob_b_ge_c_abs_a(law: PairLaw, C: float) -> float:
    return law.prob(lambda a: True, lambda a: C * abs(a), math.inf)


def check_cs1(law: PairLaw, C_probes=DEFAULT_C_PROBES) -> ConditionReport:
    """P(b >= C |a|) > 0 for every C > 0, decided from the support structure."""
    probes = [float(c) for c in C_probes]
    if not probes:
        raise InvalidArgumentError("C_probes is empty")
    if any(not c > 0 for c in probes) or probes != sorted(probes):
        raise InvalidArgumentError("C_probes must be positive and increasing")
    details = [(f"P(b >= {c:g}|a|)", _prob_b_ge_c_abs_a(law, c)) for c in probes]
    witness = None
    for a, _, blaw in _branches(law):
        if isinstance(blaw, Gaussian):
            witness = {"a": a, "reason": "b unbounded above"}
            break
        if a == 0 and _mass_above(blaw, 0.0, strict=False):
            witness = {"a": 0.0, "b": _b_sup(blaw)}
            break
    if witness is not None:
        return ConditionReport("C2'", True, "exact", witness=witness, details=details)
    # every branch has a != 0 and bounded b: mass vanishes beyond this C
    c_break = max(
        (_b_sup(blaw) / abs(a) for a, _, blaw in _branches(law) if a != 0),
        default=0.0,
    )
    return ConditionReport(
        "C2'", False, "exact",
        witness={"fails_for_C_above": max(c_break, 0.0)},
        details=details,
    )


# ---- Condition 3' -----------------------------------------------------------------


def _smallest_positive_b(blaw) -> float | None:
    """Smallest C with P(b in (0, C]) > 0 (any positive value for continuous b)."""
    if isinstance(blaw, Gaussian):
        return blaw.sd
    if isinstance(blaw, Uniform):
        return blaw.hi if blaw.hi > 0 else None
    pos = [v for v in _b_atoms(blaw) if v > 0]
    return min(pos) if pos else None


def check_cs2(law: PairLaw) -> ConditionReport:
    """Exists C > 0 with mass in (-1,0) x (0,C] and in (0,1) x (0,C]."""
    neg, pos = [], []
    for a, _, blaw in _branches(law):
        c = _smallest_positive_b(blaw)
        if c is None:
            continue
        if -1 < a < 0:
            neg.append((c, a))
        elif 0 < a < 1:
            pos.append((c, a))
    details = [("branches with a in (-1,0), b > 0", len(neg)), ("branches with a in (0,1), b > 0", len(pos))]
    if not neg or not pos:
        return ConditionReport("C3'", False, "exact", details=details,
                               witness={"empty": "(-1,0)" if not neg else "(0,1)"})
    cn, an = min(neg)
    cp, ap = min(pos)
    C = max(cn, cp)
    return ConditionReport("C3'", True, "exact", details=details,
                           witness={"C": C, "negative_a": an, "positive_a": ap})


# ---- Condition 3 certificates ------------------------------------------------------


def _rectangle_options(law: PairLaw, negative: bool):
    """(delta cap from a, b-interval options) for branches usable in one rectangle."""
    out = []
    for a, _, blaw in _branches(law):
        if negative and not -1 < a <= 0:
            continue
        if not negative and not 0 <= a < 1:
            continue
        room = 1.0 - abs(a)
        if isinstance(blaw, Discrete):
            for b in _b_atoms(blaw):
                if b > 0:
                    out.append((a, min(room, b), b, b))
        elif isinstance(blaw, Uniform):
            if blaw.hi > 0:
                # [delta, C] must meet (lo, hi) in positive length
                d = min(room, blaw.hi / 2)
                out.append((a, d, blaw.hi, None))
        else:
            d = room
            out.append((a, d, 2 * d, None))
    return out


def _n0(y: float, delta: float, c: float, p0: float, Cx: float) -> int:
    need = c * (1.0 + Cx**p0) - y
    return max(1, math.ceil(need / delta)) if need > 0 else 1


def _witness_path(x, y, n0, delta, C, neg, pos):
    """Deterministic atom path realising the construction; checks each link."""
    path, xs, s = [], x, 0.0
    cx = max(abs(x), C / delta)
    for k in range(1, n0 + 1):
        a, _, _, b = neg if xs < 0 else pos
        c_prev = max(abs(xs), C / delta)
        xs = a * xs + b
        s += xs
        if not (delta <= xs <= c_prev and y + s >= y + k * delta and abs(xs) <= cx):
            return None
        path.append((a, b))
    return path


def find_c3_certificate(law: PairLaw, x: float, y: float, k: KSet, n_max: int,
                        seed: int = 0, mc_replicas: int = MC_REPLICAS, threads: int = 1) -> Certificate:
    """Certify P_x((X_n0, y + S_n0) in K, tau_y > n0) > 0 for the given c.

    Uses the rectangle construction when Condition 3' holds (yielding n0
    deterministically), otherwise searches by simulation.
    """
    if not y > 0:
        raise InvalidArgumentError("y must be positive")
    if n_max < 1:
        raise InvalidArgumentError("n_max must be >= 1")
    x, y = float(x), float(y)
    if check_cs2(law).satisfied:
        best = None
        for neg, pos in itertools.product(_rectangle_options(law, True), _rectangle_options(law, False)):
            delta = min(neg[1], pos[1])
            C = max(neg[2], pos[2])
            if not delta > 0:
                continue
            Cx = max(abs(x), C / delta)
            n0 = _n0(y, delta, k.c, k.p0, Cx)
            if best is None or n0 < best[0]:
                best = (n0, delta, C, Cx, neg, pos)
        if best is not None:
            n0, delta, C, Cx, neg, pos = best
            if n0 > n_max:
                raise CertificateNotFound(
                    f"rectangle construction needs n0 = {n0} > n_max = {n_max} "
                    f"(delta={delta}, C={C}, C_x={Cx})"
                )
            wp = None
            if neg[3] is not None and pos[3] is not None:
                wp = _witness_path(x, y, n0, delta, C, neg, pos)
            return Certificate(
                kind="appendix-construction", n0=n0, delta=delta, C=C, C_x=Cx, witness_path=wp,
                notes=["the construction gives an n0 for every c > 0"],
            )
    hits = walk.kset_hits(law, x, y, k.p0, k.c, int(n_max), int(mc_replicas), seed, threads=threads)
    found = hits[hits > 0]
    if found.size == 0:
        raise CertificateNotFound(f"no replica reached K before exit within n_max = {n_max}")
    return Certificate(
        kind="monte-carlo", n0=int(found.min()), hits=int(found.size), replicas=int(mc_replicas),
        notes=["positive empirical frequency certifies positive probability for this c only"],
    )


def check_c3(law: PairLaw, alpha: float, x: float = 0.0, y: float = 1.0, c: float = 1.0,
             n_max: int = 10_000, seed: int = 0) -> ConditionReport:
    """Condition 3: certified for all (x, y, c) through Condition 3', else probed at one point."""
    p0 = 2.0 + (alpha - 2.0) / 2.0
    cs2 = check_cs2(law)
    k = KSet(p0, c)
    try:
        cert = find_c3_certificate(law, x, y, k, n_max, seed=seed)
    except CertificateNotFound as exc:
        return ConditionReport("C3", None, "certificate", details=[("search", str(exc))])
    if cs2.satisfied:
        return ConditionReport("C3", True, "certificate", witness=cert.to_dict(),
                               details=[("via", "C3'"), ("p0", p0)])
    # one point does not settle a statement about every (x, y)
    return ConditionReport("C3", None, "monte-carlo-lower-bound", witness=cert.to_dict(),
                           details=[("point", [x, y, c]), ("p0", p0)])
