"""Pure-state simulator for 1-4 spin-1/2 particles.

Measurement directions live in the x-z plane, so a single angle theta
describes the unit vector n = (sin theta, 0, cos theta).  The spin operator
along n has eigenvectors

    |+>_theta = (cos(theta/2), sin(theta/2))
    |->_theta = (-sin(theta/2), cos(theta/2)) = |+>_(theta+pi)

which means every x-z plane pure qubit is |+> along some angle.  Amplitudes
are indexed big-endian: qubit 0 is the most significant bit, so the singlet
(|01> - |10>)/sqrt(2) has amplitudes (0, 1/sqrt(2), -1/sqrt(2), 0).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import QubitOutOfRange, SameQubit, TooManyQubits

MAX_QUBITS = 4
NORM_TOL = 1e-12
PHASE_TOL = 1e-9

RECTILINEAR = 0.0          # the "circle with slash" basis
DIAGONAL = math.pi / 2     # the "circle with dot" basis, conjugate to it

_INV_SQRT2 = 1.0 / math.sqrt(2.0)


@dataclass(frozen=True)
class MeasurementDirection:
    """Spin measurement direction n = (sin angle, 0, cos angle)."""

    angle: float

    def __post_init__(self):
        object.__setattr__(self, "angle", float(self.angle) % (2.0 * math.pi))


@dataclass(frozen=True)
class MeasurementOutcome:
    """Projective outcome: value in {+1, -1}, bit = (1 - value) / 2."""

    value: int

    def __post_init__(self):
        if self.value not in (+1, -1):
            raise ValueError(f"outcome value must be +1 or -1, got {self.value})")

    @property
    def bit(self) -> int:
        return (1 - self.value) // 2


@dataclass(frozen=True)
class TotalSpinResult:
    """Singlet (s=0) vs triplet (s=1) projection result."""

    s: int

    def __post_init__(self):
        if self.s not in (0, 1):
            raise ValueError(f"total spin must be 0 or 1, got {self.s}")


class StateVector:
    """Immutable pure state of 1..4 qubits."""

    __slots__ = ("num_qubits", "amplitudes")

    def __init__(self, num_qubits: int, amplitudes):
        amps = np.asarray(amplitudes, dtype=np.complex128)
        if not 1 <= num_qubits <= MAX_QUBITS:
            raise TooManyQubits(f"num_qubits must be 1..{MAX_QUBITS}, got {num_qubits}")
        if amps.shape != (2**num_qubits,):
            raise ValueError(
                f"expected {2**num_qubits} amplitudes, got shape {amps.shape}"
            )
        norm = np.sum(np.abs(amps) ** 2)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"state not normalized: |psi|^2 = {norm}")
        amps = amps / math.sqrt(norm)  # absorb rounding drift
        amps.setflags(write=False)
        object.__setattr__(self, "num_qubits", num_qubits)
        object.__setattr__(self, "amplitudes", amps)

    def __setattr__(self, name, value):
        raise AttributeError("StateVector is immutable")

    def __repr__(self):
        return f"StateVector({self.num_qubits}, {np.round(self.amplitudes, 6)!r})"

    def norm(self) -> float:
        return float(np.sum(np.abs(self.amplitudes) ** 2))

    def equals_up_to_phase(self, other: "StateVector", tol: float = PHASE_TOL) -> bool:
        if self.num_qubits != other.num_qubits:
            return False
        overlap = np.vdot(self.amplitudes, other.amplitudes)
        return abs(abs(overlap) - 1.0) <= tol


def ket(bits: str) -> StateVector:
    """Computational basis state, e.g. ket('01')."""
    n = len(bits)
    amps = np.zeros(2**n, dtype=np.complex128)
    amps[int(bits, 2)] = 1.0
    return StateVector(n, amps)


def make_singlet() -> StateVector:
    """Two-qubit singlet (|01> - |10>)/sqrt(2)."""
    return StateVector(2, [0.0, _INV_SQRT2, -_INV_SQRT2, 0.0])


def eigenvector(direction: MeasurementDirection, value: int) -> np.ndarray:
    """Spin eigenvector along the direction, for value +1 or -1."""
    half = direction.angle / 2.0
    if value == +1:
        return np.array([math.cos(half), math.sin(half)], dtype=np.complex128)
    if value == -1:
        return np.array([-math.sin(half), math.cos(half)], dtype=np.complex128)
    raise ValueError(f"value must be +1 or -1, got {value}")


def eigenstate(direction: MeasurementDirection, value: int) -> StateVector:
    """Single-qubit pure state |value>_direction (used for resend attacks)."""
    return StateVector(1, eigenvector(direction, value))


def plus_state(angle: float) -> StateVector:
    """|+> along the given x-z plane angle; |-> along angle is |+> along angle+pi."""
    return eigenstate(MeasurementDirection(angle), +1)


def tensor(a: StateVector, b: StateVector) -> StateVector:
    """Kronecker product; a's qubits come first (stay most significant)."""
    n = a.num_qubits + b.num_qubits
    if n > MAX_QUBITS:
        raise TooManyQubits(f"{a.num_qubits}+{b.num_qubits} qubits exceed {MAX_QUBITS}")
    return StateVector(n, np.kron(a.amplitudes, b.amplitudes))


def _check_qubit(state: StateVector, qubit: int):
    if not 0 <= qubit < state.num_qubits:
        raise QubitOutOfRange(f"qubit {qubit} outside state of {state.num_qubits}")


def _axis_front(state: StateVector, qubit: int) -> np.ndarray:
    """View amplitudes as (2, rest) with the target qubit as the leading axis."""
    psi = state.amplitudes.reshape([2] * state.num_qubits)
    return np.moveaxis(psi, qubit, 0).reshape(2, -1)


def born_probability(
    state: StateVector, qubit: int, direction: MeasurementDirection, value: int
) -> float:
    """Exact probability <psi|P|psi> of the given spin outcome."""
    _check_qubit(state, qubit)
    m = _axis_front(state, qubit)
    v = eigenvector(direction, value)
    coeffs = v.conj() @ m
    return float(np.sum(np.abs(coeffs) ** 2))


def measure_spin(
    state: StateVector,
    qubit: int,
    direction: MeasurementDirection,
    rng: np.random.Generator,
) -> tuple[MeasurementOutcome, StateVector]:
    """Projective spin measurement along an x-z direction.

    Samples the Born rule with one uniform draw from ``rng`` and returns the
    renormalized post-measurement state.
    """
    _check_qubit(state, qubit)
    n = state.num_qubits
    psi = state.amplitudes.reshape([2] * n)
    m = np.moveaxis(psi, qubit, 0).reshape(2, -1)

    v_plus = eigenvector(direction, +1)
    v_minus = eigenvector(direction, -1)
    c_plus = v_plus.conj() @ m
    p_plus = float(np.sum(np.abs(c_plus) ** 2))

    if rng.random() < p_plus:
        value, v, coeffs, p = +1, v_plus, c_plus, p_plus
    else:
        value, v = -1, v_minus
        coeffs = v_minus.conj() @ m
        p = 1.0 - p_plus

    post = np.outer(v, coeffs) / math.sqrt(p)
    post = np.moveaxis(post.reshape([2] * n), 0, qubit).reshape(-1)
    return MeasurementOutcome(value), StateVector(n, post)


def _pair_front(state: StateVector, q1: int, q2: int) -> np.ndarray:
    psi = state.amplitudes.reshape([2] * state.num_qubits)
    return np.moveaxis(psi, (q1, q2), (0, 1)).reshape(2, 2, -1)


def singlet_probability(state: StateVector, q1: int, q2: int) -> float:
    """Exact probability that total-spin measurement of (q1, q2) gives s=0."""
    _check_qubit(state, q1)
    _check_qubit(state, q2)
    if q1 == q2:
        raise SameQubit(f"need distinct qubits, got {q1} twice")
    m = _pair_front(state, q1, q2)
    s_amp = (m[0, 1, :] - m[1, 0, :]) * _INV_SQRT2
    return float(np.sum(np.abs(s_amp) ** 2))


def measure_total_spin(
    state: StateVector, q1: int, q2: int, rng: np.random.Generator
) -> tuple[TotalSpinResult, StateVector]:
    """Project the (q1, q2) pair onto the singlet (s=0) or triplet (s=1) subspace."""
    p0 = singlet_probability(state, q1, q2)  # validates indices
    n = state.num_qubits
    m = _pair_front(state, q1, q2)
    s_amp = (m[0, 1, :] - m[1, 0, :]) * _INV_SQRT2

    if rng.random() < p0:
        s = 0
        post = np.zeros_like(m)
        post[0, 1, :] = s_amp * _INV_SQRT2
        post[1, 0, :] = -s_amp * _INV_SQRT2
        post /= math.sqrt(p0)
    else:
        s = 1
        post = m.copy()
        post[0, 1, :] -= s_amp * _INV_SQRT2
        post[1, 0, :] += s_amp * _INV_SQRT2
        post /= math.sqrt(1.0 - p0)

    post = np.moveaxis(post.reshape([2] * n), (0, 1), (q1, q2)).reshape(-1)
    return TotalSpinResult(s), StateVector(n, post)


def apply_single_qubit(state: StateVector, qubit: int, matrix: np.ndarray) -> StateVector:
    """Apply a 2x2 unitary to one qubit (channel noise plumbing)."""
    _check_qubit(state, qubit)
    n = state.num_qubits
    m = _axis_front(state, qubit)
    out = np.asarray(matrix, dtype=np.complex128) @ m
    out = np.moveaxis(out.reshape([2] * n), 0, qubit).reshape(-1)
    return StateVector(n, out)


def replace_with_plus(state: StateVector, qubit: int, angle: float,
                      rng: np.random.Generator) -> StateVector:
    """Replace one qubit by the fresh pure state |+>_angle.

    Implemented as a projective measurement along ``angle`` (discarding the
    outcome) followed by a flip to |+> when the collapse landed on |->, so the
    qubit factorizes out in the new direction.  Used by the depolarizing
    channel.
    """
    outcome, collapsed = measure_spin(state, qubit, MeasurementDirection(angle), rng)
    if outcome.value == +1:
        return collapsed
    # |+><-| + |-><+| along angle: swaps the two eigenstates
    flip = np.array(
        [[-math.sin(angle), math.cos(angle)], [math.cos(angle), math.sin(angle)]],
        dtype=np.complex128,
    )
    return apply_single_qubit(collapsed, qubit, flip)


# --- closed-form helpers for the vectorized protocol engines -----------------
#
# A qubit flying through the channel is always an x-z plane pure state, i.e.
# |+> along some angle phi.  These formulas are the Born rule specialized to
# that case; tests pin them against born_probability/measure_spin.

def plus_probability(measure_angle, state_angle):
    """P(outcome +1) when measuring |+>_state_angle along measure_angle."""
    return np.cos((np.asarray(measure_angle) - np.asarray(state_angle)) / 2.0) ** 2


def collapse_angle(measure_angle, value):
    """Post-measurement state angle: theta for +1, theta + pi for -1."""
    return np.where(np.asarray(value) == 1, measure_angle,
                    np.asarray(measure_angle) + math.pi)
