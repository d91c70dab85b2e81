"""Learnability rewards for teacher proposals.

All teacher rewards are instances of one normalized family::

    R(p; a, b) = [ (p / a) * ((1 - p) / (1 - a)) ** ((1 - a) / a) ] ** b

which peaks at ``p = a`` with value exactly 1. ``a`` sets the target pass
rate and ``b`` the sharpness of the peak. The classic learnability score
``p * (1 - p) ** alpha`` is the same curve up to scale, with
``alpha = (1 - a) / a`` (so ``alpha = 1`` is ``a = 0.5``).

Instances used by the curriculum:

=================  =====  ===  ============
reward             a      b    band
=================  =====  ===  ============
lemma              0.5    5    [0.3, 0.7]
lift               0.1    1    [0.1, 0.5]
one-step medium    0.3    5    [0.1, 0.5]
one-step hard      0.1    1    [0.1, 0.5]
=================  =====  ===  ============

Outside its band a proposal earns ``OUT_OF_BAND_PENALTY``; a proposal that
fails validation earns ``FORMAT_PENALTY`` regardless of any pass rate.
Band edges are inclusive.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

OUT_OF_BAND_PENALTY = -0.5
FORMAT_PENALTY = -1.0


class RewardDomainError(ValueError):
    """Raised when a reward is evaluated outside its domain."""


class Region(str, Enum):
    IN_BAND = "in_band"
    OUT_OF_BAND = "out_of_band"
    FORMAT_ERROR = "format_error"


@dataclass(frozen=True)
class RewardSpec:
    a: float
    b: float
    band_lo: float
    band_hi: float
    out_of_band_penalty: float = OUT_OF_BAND_PENALTY
    format_penalty: float = FORMAT_PENALTY

    def __post_init__(self) -> None:
        if not 0.0 < self.a < 1.0:
            raise RewardDomainError(f"peak location a={self.a} must lie in (0, 1)")
        if not 0.0 <= self.band_lo < self.band_hi <= 1.0:
            raise RewardDomainError(
                f"band [{self.band_lo}, {self.band_hi}] must satisfy 0 <= lo < hi <= 1"
            )

    def in_band(self, p: float) -> bool:
        return self.band_lo <= p <= self.band_hi

    def __call__(self, p: float) -> "RewardOutcome":
        return banded_reward(p, self)


@dataclass(frozen=True)
class RewardOutcome:
    value: float
    region: Region

    def to_dict(self) -> dict:
        return {"value": self.value, "region": self.region.value}


LEMMA = RewardSpec(a=0.5, b=5.0, band_lo=0.3, band_hi=0.7)
LIFT = RewardSpec(a=0.1, b=1.0, band_lo=0.1, band_hi=0.5)
ONE_STEP_MEDIUM = RewardSpec(a=0.3, b=5.0, band_lo=0.1, band_hi=0.5)
ONE_STEP_HARD = RewardSpec(a=0.1, b=1.0, band_lo=0.1, band_hi=0.5)

ONE_STEP_VARIANTS = {"medium": ONE_STEP_MEDIUM, "hard": ONE_STEP_HARD}


def _check_p(p: float) -> None:
    if not (0.0 <= p <= 1.0):
        raise RewardDomainError(f"pass rate p={p} must lie in [0, 1]")


def generalized_reward(p: float, a: float, b: float) -> float:
    """Evaluate ``R(p; a, b)``.

    Computed in log space so non-integer exponents stay accurate; the peak
    ``p == a`` returns exactly 1.0 and the endpoints exactly 0.0 (for b > 0).
    """
    if not 0.0 < a < 1.0:
        raise RewardDomainError(f"peak location a={a} must lie in (0, 1)")
    _check_p(p)
    if p == a:
        return 1.0
    if p == 0.0 or p == 1.0:
        if b <= 0:
            raise RewardDomainError(f"R(p={p}; a, b={b}) is undefined for b <= 0")
        return 0.0
    alpha = (1.0 - a) / a
    log_inner = math.log(p / a) + alpha * math.log((1.0 - p) / (1.0 - a))
    return math.exp(b * log_inner)


def banded_reward(p: float, spec: RewardSpec) -> RewardOutcome:
    _check_p(p)
    if spec.in_band(p):
        return RewardOutcome(generalized_reward(p, spec.a, spec.b), Region.IN_BAND)
    return RewardOutcome(spec.out_of_band_penalty, Region.OUT_OF_BAND)


def lemma_reward(p: float) -> RewardOutcome:
    return banded_reward(p, LEMMA)


def lift_reward(p: float) -> RewardOutcome:
    return banded_reward(p, LIFT)


def one_step_reward(p: float, variant: str) -> RewardOutcome:
    try:
        spec = ONE_STEP_VARIANTS[variant]
    except KeyError:
        raise ValueError(
            f"unknown one-step variant {variant!r}; expected one of {sorted(ONE_STEP_VARIANTS)}"
        ) from None
    return banded_reward(p, spec)


def apply_format_penalty(
    valid: bool, p: float | None = None, spec: RewardSpec = LEMMA
) -> RewardOutcome:
    """Reward for a proposal given its validity.

    An invalid proposal always gets the format penalty and ``p`` is ignored.
    A valid one falls through to the banded reward of ``spec``.
    """
    if not valid:
        return RewardOutcome(spec.format_penalty, Region.FORMAT_ERROR)
    if p is None:
        raise ValueError("a valid proposal needs a pass rate to be scored")
    return banded_reward(p, spec)
