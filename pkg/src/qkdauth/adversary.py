"""Attack strategies installed on the quantum/classical channels.

Two families: intercept/resend (Eve measures in-flight qubits in bases of
her choosing and forwards fresh eigenstates of what she saw) and full
man-in-the-middle impersonation (Eve completes a separate protocol instance
with each legitimate party).  Strategies only ever touch channel traffic;
they have no access to party-internal state.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .quantum import (
    MeasurementDirection,
    StateVector,
    collapse_angle,
    measure_spin,
    plus_probability,
)


class AttackKind(str, Enum):
    NONE = "none"
    INTERCEPT_RESEND = "intercept_resend"
    MITM_IMPERSONATION = "mitm_impersonation"


class BasisPolicy(str, Enum):
    #: uniform over the two conjugate bases {0, pi/2}; yields 25% QBER
    RANDOM_CONJUGATE = "random_conjugate"
    #: uniform over [0, pi); pins |S| inside the eavesdropped sqrt(2) range
    RANDOM_ANGLE = "random_angle"


@dataclass
class AttackStrategy:
    """Adversary configuration for one session."""

    kind: AttackKind = AttackKind.NONE
    fraction: float = 1.0
    policy: BasisPolicy = BasisPolicy.RANDOM_CONJUGATE
    # mitm_impersonation only: which legitimate role Eve plays
    impersonate: str = "bob"
    # optional replayed ciphertext for replay attacks (bits, positions)
    replay_y: Optional[np.ndarray] = None
    replay_positions: Optional[np.ndarray] = None

    def __post_init__(self):
        self.kind = AttackKind(self.kind)
        self.policy = BasisPolicy(self.policy)
        if not 0.0 <= self.fraction <= 1.0:
            raise ValueError(f"interception fraction must be in [0,1], got {self.fraction}")
        if self.impersonate not in ("alice", "bob"):
            raise ValueError("impersonate must be 'alice' or 'bob'")

    @property
    def active(self) -> bool:
        return self.kind is not AttackKind.NONE


@dataclass
class EveView:
    """Everything the adversary learned during one session."""

    observed_positions: list = field(default_factory=list)
    observed_values: list = field(default_factory=list)
    k_ae: Optional[str] = None  # Eve's copy of the Alice-side final key
    k_eb: Optional[str] = None  # Eve's copy of the Bob-side final key

    def record(self, positions: np.ndarray, values: np.ndarray):
        self.observed_positions.extend(int(p) for p in positions)
        self.observed_values.extend(int(v) for v in values)


def _draw_policy_angles(policy: BasisPolicy, n: int, rng: np.random.Generator):
    if policy is BasisPolicy.RANDOM_CONJUGATE:
        return rng.integers(0, 2, size=n) * (math.pi / 2.0)
    return rng.random(n) * math.pi


def apply_intercept_resend(
    attack: AttackStrategy,
    state: StateVector,
    qubit: int,
    rng: np.random.Generator,
    eve_view: Optional[EveView] = None,
    round_index: int = 0,
) -> StateVector:
    """Exact-path intercept/resend on one (possibly entangled) qubit.

    Measuring collapses the qubit to the eigenstate Eve detected, which is
    exactly the fresh state she forwards.
    """
    if attack.kind is not AttackKind.INTERCEPT_RESEND:
        return state
    if rng.random() >= attack.fraction:
        return state
    angle = float(_draw_policy_angles(attack.policy, 1, rng)[0])
    outcome, state = measure_spin(state, qubit, MeasurementDirection(angle), rng)
    if eve_view is not None:
        eve_view.record(np.array([round_index]), np.array([outcome.value]))
    return state


def apply_intercept_resend_batch(
    attack: AttackStrategy,
    angles: np.ndarray,
    delivered: np.ndarray,
    rng: np.random.Generator,
    eve_view: Optional[EveView] = None,
) -> np.ndarray:
    """Vectorized intercept/resend over n in-flight plane qubits."""
    if attack.kind is not AttackKind.INTERCEPT_RESEND:
        return angles
    n = angles.size
    u_pick = rng.random(n)
    eve_angles = _draw_policy_angles(attack.policy, n, rng)
    u_meas = rng.random(n)

    mask = delivered & (u_pick < attack.fraction)
    p_plus = plus_probability(eve_angles, angles)
    values = np.where(u_meas < p_plus, 1, -1)
    out = angles.copy()
    out[mask] = collapse_angle(eve_angles, values)[mask]
    if eve_view is not None:
        eve_view.record(np.flatnonzero(mask), values[mask])
    return out


def run_mitm(config) -> "MitmOutcome":
    """Run Eve in the middle of a full protocol instance.

    For the plain EPR target Eve simply executes the legitimate peer code on
    each segment, so both sub-sessions complete and she holds both final
    keys.  For the authenticated target she lacks the authentication key and
    substitutes a uniform guess; verification then fails on at least one side.
    """
    from . import protocols  # late import: protocols depends on this module

    return protocols.run_mitm_session(config)


@dataclass
class MitmOutcome:
    eve_view: EveView
    report_alice_side: object
    report_bob_side: object
