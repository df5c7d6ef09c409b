"""Correlation coefficients and the CHSH statistic for eavesdropping detection.

Direction set follows the E91 construction: Alice draws from
{0, pi/4, pi/2} and Bob from {pi/4, pi/2, 3pi/4}.  The equal-angle
combinations (pi/4, pi/4) and (pi/2, pi/2) are reserved for key bits; the
four mixed combinations enter the signed CHSH sum

    S = E(a1,b1) - E(a1,b3) + E(a3,b1) + E(a3,b3)

with a1=0, a3=pi/2, b1=pi/4, b3=3pi/4.  For singlet pairs E(a,b) = -cos(a-b),
so S = -2*sqrt(2); any intercept/resend channel keeps |S| <= sqrt(2).
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Mapping, Sequence

import numpy as np

from .errors import EmptyRecords, InvalidThreshold, MissingPair
from .quantum import MeasurementDirection

SQRT2 = math.sqrt(2.0)

ALICE_ANGLES = (0.0, math.pi / 4, math.pi / 2)
BOB_ANGLES = (math.pi / 4, math.pi / 2, 3 * math.pi / 4)

A1, A3 = ALICE_ANGLES[0], ALICE_ANGLES[2]
B1, B3 = BOB_ANGLES[0], BOB_ANGLES[2]

#: the four (alice, bob) angle pairs entering S, in sign order +, -, +, +
CHSH_PAIRS = ((A1, B1), (A1, B3), (A3, B1), (A3, B3))
CHSH_SIGNS = (1.0, -1.0, 1.0, 1.0)

#: equal-angle pairs used for key generation, never for S
KEY_PAIRS = ((math.pi / 4, math.pi / 4), (math.pi / 2, math.pi / 2))


@dataclass(frozen=True)
class PairRecord:
    """One joint measurement: directions and the two +-1 outcomes."""

    alice_dir: MeasurementDirection
    bob_dir: MeasurementDirection
    alice_value: int
    bob_value: int

    def __post_init__(self):
        if self.alice_value not in (+1, -1) or self.bob_value not in (+1, -1):
            raise ValueError("outcome values must be +1 or -1")


@dataclass
class BellEstimate:
    """Estimated E per direction pair plus the combined statistic."""

    e_values: dict = field(default_factory=dict)   # (alice_angle, bob_angle) -> E
    counts: dict = field(default_factory=dict)     # same keys -> sample count
    s: float = 0.0


def correlation_coefficient(records: Sequence[PairRecord]) -> float:
    """(N++ + N-- - N+- - N-+) / N for records sharing one direction pair."""
    if len(records) == 0:
        raise EmptyRecords("no records for this direction pair")
    total = sum(r.alice_value * r.bob_value for r in records)
    return total / len(records)


def correlation_from_values(alice_values: np.ndarray, bob_values: np.ndarray) -> float:
    """Array fast path for the same estimator."""
    if alice_values.size == 0:
        raise EmptyRecords("no records for this direction pair")
    return float(np.mean(alice_values * bob_values))


def chsh_s(e_values: Mapping[tuple[float, float], float]) -> float:
    """Signed CHSH combination over the four non-key E91 pairs."""
    total = 0.0
    for sign, pair in zip(CHSH_SIGNS, CHSH_PAIRS):
        if pair not in e_values:
            raise MissingPair(f"no estimate for direction pair {pair}")
        total += sign * e_values[pair]
    return total


def estimate_bell(records: Iterable[PairRecord]) -> BellEstimate:
    """Group records by direction pair, estimate each E, and combine into S."""
    grouped: dict[tuple[float, float], list[PairRecord]] = {}
    for r in records:
        grouped.setdefault((r.alice_dir.angle, r.bob_dir.angle), []).append(r)
    est = BellEstimate()
    for pair, recs in grouped.items():
        est.e_values[pair] = correlation_coefficient(recs)
        est.counts[pair] = len(recs)
    est.s = chsh_s(est.e_values)
    return est


def detect_eavesdropping(s: float, threshold: float = 2.0) -> str:
    """'clean' iff |s| strictly exceeds the threshold, else 'compromised'.

    The threshold must sit strictly between the eavesdropped bound sqrt(2)
    and the quantum value 2*sqrt(2); the default 2.0 is the classical CHSH
    bound, maximizing margin on both sides.
    """
    if not SQRT2 < threshold < 2 * SQRT2:
        raise InvalidThreshold(
            f"threshold must lie in (sqrt(2), 2*sqrt(2)), got {threshold}"
        )
    return "clean" if abs(s) > threshold else "compromised"
