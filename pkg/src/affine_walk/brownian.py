"""Closed-form exit probabilities for y + sigma B_t used as reference values."""

from __future__ import annotations

import math
from dataclasses import dataclass

from scipy.special import erf, ndtr

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class BmQuery:
    y: float
    n: float
    sigma: float = 1.0
    window: tuple[float, float] | None = None

    def __post_init__(self):
        if not (self.y >= 0 and math.isfinite(self.y)):
            raise InvalidArgumentError("y must be finite and >= 0")
        if not (self.n > 0 and math.isfinite(self.n)):
            raise InvalidArgumentError("n must be positive")
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise InvalidArgumentError("sigma must be positive")
        if self.window is not None:
            lo, hi = self.window
            if not 0 <= lo <= hi:
                raise InvalidArgumentError("window needs 0 <= lo <= hi")

    @property
    def scale(self) -> float:
        return self.sigma * math.sqrt(self.n)

    @property
    def theta(self) -> float:
        return self.y / self.scale


def bm_tail(q: BmQuery) -> float:
    """P(y + sigma B_t > 0 for all t <= n) = 2 Phi(y / (sigma sqrt n)) - 1."""
    return float(erf(q.y / (q.scale * math.sqrt(2.0))))


def bm_tail_with_position(q: BmQuery) -> float:
    """P(no exit by n, y + sigma B_n in [lo, hi]) by the reflection principle."""
    if q.window is None:
        raise InvalidArgumentError("query has no window")
    lo, hi = q.window
    if lo == hi:
        return 0.0
    s, y = q.scale, q.y

    def phi(t):
        return float(ndtr(t)) if math.isfinite(t) else (1.0 if t > 0 else 0.0)

    return phi((hi - y) / s) - phi((lo - y) / s) - phi((hi + y) / s) + phi((lo + y) / s)


def bm_small_y_expansion(q: BmQuery) -> dict:
    """First-order term 2y / (sqrt(2 pi n) sigma) and the ratio tail / linear.

    At y = 0 the ratio is 1 by continuity.
    """
    linear = 2.0 * q.y / (math.sqrt(2.0 * math.pi * q.n) * q.sigma)
    if q.y == 0:
        return {"linear": 0.0, "ratio": 1.0, "theta": 0.0}
    return {"linear": linear, "ratio": bm_tail(q) / linear, "theta": q.theta}


def bm_two_sided_exit(level: float, n: float, sigma: float = 1.0, terms: int = 50) -> float:
    """P(sup_{t <= n} |sigma B_t| > level), alternating image series."""
    if not level > 0:
        raise InvalidArgumentError("level must be positive")
    c = level / (sigma * math.sqrt(n))
    inside = math.fsum(
        (-1) ** k * (float(ndtr((2 * k + 1) * c)) - float(ndtr((2 * k - 1) * c)))
        for k in range(-terms, terms + 1)
    )
    return 1.0 - inside
