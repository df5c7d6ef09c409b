"""Simulated channels and the replayable session transcript.

Randomness discipline: a 64-bit master seed fans out into named,
independent sub-streams (one per party, one for the channel, one for the
public coins), derived by hashing ``master:name``.  Honest parties'
streams never depend on whether an adversary is installed, and every
channel operation draws a fixed number of variates per round, so a
(config, seed) pair replays to an identical transcript byte for byte.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Optional

import numpy as np

from .errors import UnknownTag
from .quantum import MeasurementDirection, StateVector, measure_spin, replace_with_plus

# full per-round quantum event logging is capped; past this many rounds a
# session logs one batch summary event instead (determinism is unaffected)
QUANTUM_EVENT_LIMIT = 4096


def rng_stream(master_seed: int, name: str) -> np.random.Generator:
    """Named deterministic sub-stream of the master seed."""
    digest = hashlib.sha256(f"{master_seed}:{name}".encode()).digest()
    return np.random.Generator(np.random.PCG64(int.from_bytes(digest[:8], "little")))


class RngStreams:
    """Lazy registry of named sub-streams for one session."""

    def __init__(self, master_seed: int):
        self.master_seed = int(master_seed)
        self._streams: dict[str, np.random.Generator] = {}

    def get(self, name: str) -> np.random.Generator:
        if name not in self._streams:
            self._streams[name] = rng_stream(self.master_seed, name)
        return self._streams[name]


class MessageTag(str, Enum):
    """Closed enumeration of classical message types."""

    ID_REGISTER = "id-register"
    BASES = "bases"
    PRESENT_POSITIONS = "present-positions"
    KEY_POSITIONS = "key-positions"
    BELL_VALUES = "bell-values"
    BELL_VERDICT = "bell-verdict"
    SAMPLE_POSITIONS = "sample-positions"
    SAMPLE_BITS = "sample-bits"
    ERROR_RATE = "error-rate"
    PARITY = "parity"
    PARITY_VERDICT = "parity-verdict"
    TOEPLITZ_SEED = "toeplitz-seed"
    KEY_LENGTH = "key-length"
    TOTAL_SPIN = "total-spin"
    CHECK_POSITIONS = "check-positions"
    CHECK_VALUES = "check-values"
    AUTH_POSITIONS = "auth-positions"
    AUTH_CIPHERTEXT = "auth-ciphertext"
    AUTH_ECHO = "auth-echo"
    VERDICT = "verdict"
    ABORT = "abort"
    # quantum-event tags (the send/lose/deliver log shares the sequence)
    Q_SEND = "q-send"
    Q_LOSE = "q-lose"
    Q_DELIVER = "q-deliver"
    Q_BATCH = "q-batch"


_CLASSICAL_TAGS = {
    t for t in MessageTag if not t.value.startswith("q-")
}


@dataclass(frozen=True)
class ClassicalMessage:
    seq: int
    sender: str
    tag: MessageTag
    payload: bytes


class Transcript:
    """Append-only, replayable log of classical messages and quantum events."""

    def __init__(self):
        self.events: list[ClassicalMessage] = []
        self._cursors: dict[str, int] = {}
        self._quantum_counts = {"send": 0, "lose": 0, "deliver": 0}

    def _append(self, sender: str, tag: MessageTag, payload: bytes) -> ClassicalMessage:
        msg = ClassicalMessage(len(self.events), sender, tag, payload)
        self.events.append(msg)
        return msg

    def post(self, sender: str, tag, payload: bytes = b"") -> ClassicalMessage:
        """Post a classical message; any party (Eve included) may read it."""
        if not isinstance(tag, MessageTag) or tag not in _CLASSICAL_TAGS:
            raise UnknownTag(f"not a classical message tag: {tag!r}")
        return self._append(sender, tag, payload)

    def quantum_event(self, sender: str, kind: str, round_index: int):
        """Log one send/lose/deliver event for a qubit round."""
        tag = {"send": MessageTag.Q_SEND, "lose": MessageTag.Q_LOSE,
               "deliver": MessageTag.Q_DELIVER}[kind]
        self._quantum_counts[kind] += 1
        self._append(sender, tag, str(round_index).encode())

    def quantum_batch(self, sender: str, sent: int, lost: int, delivered: int):
        """Aggregate quantum log for large vectorized rounds."""
        self._quantum_counts["send"] += sent
        self._quantum_counts["lose"] += lost
        self._quantum_counts["deliver"] += delivered
        payload = json.dumps(
            {"sent": sent, "lost": lost, "delivered": delivered},
            separators=(",", ":"),
        ).encode()
        self._append(sender, MessageTag.Q_BATCH, payload)

    @property
    def messages(self) -> list[ClassicalMessage]:
        """Classical messages only (what the parties and Eve can read)."""
        return [e for e in self.events if e.tag in _CLASSICAL_TAGS]

    def read_next(self, reader: str) -> Optional[ClassicalMessage]:
        """Next unread classical message for this reader, else None."""
        pos = self._cursors.get(reader, 0)
        while pos < len(self.events):
            event = self.events[pos]
            pos += 1
            if event.tag in _CLASSICAL_TAGS:
                self._cursors[reader] = pos
                return event
        self._cursors[reader] = pos
        return None

    def to_jsonl(self) -> str:
        """One event per line, field order fixed: seq, sender, tag, payload-hex."""
        lines = []
        for e in self.events:
            lines.append(json.dumps(
                {"seq": e.seq, "sender": e.sender, "tag": e.tag.value,
                 "payload": e.payload.hex()},
                separators=(",", ":"),
            ))
        return "\n".join(lines) + ("\n" if lines else "")


@dataclass
class QuantumChannelConfig:
    """Loss/noise model plus the attack hook for one quantum link."""

    loss_probability: float = 0.0
    depolarize_probability: float = 0.0
    attack: object = None  # adversary.AttackStrategy or None

    def __post_init__(self):
        for name in ("loss_probability", "depolarize_probability"):
            p = getattr(self, name)
            if not 0.0 <= p <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {p}")


def transmit_qubit(
    state: StateVector,
    qubit: int,
    config: QuantumChannelConfig,
    channel_rng: np.random.Generator,
    eve_rng: Optional[np.random.Generator] = None,
    eve_view=None,
    round_index: int = 0,
    transcript: Optional[Transcript] = None,
) -> tuple[bool, StateVector]:
    """Send one (possibly entangled) qubit through the channel.

    Returns (delivered, state).  The channel stream is consumed a fixed
    three draws per call regardless of outcome so replays stay aligned.
    """
    u_loss = channel_rng.random()
    u_dep = channel_rng.random()
    dep_angle = channel_rng.random() * 2.0 * math.pi
    if transcript is not None:
        transcript.quantum_event("channel", "send", round_index)

    if u_loss < config.loss_probability:
        if transcript is not None:
            transcript.quantum_event("channel", "lose", round_index)
        return False, state

    if u_dep < config.depolarize_probability:
        state = replace_with_plus(state, qubit, dep_angle, channel_rng)

    attack = config.attack
    if attack is not None and getattr(attack, "kind", None) is not None:
        from .adversary import apply_intercept_resend  # late import: no cycle

        state = apply_intercept_resend(
            attack, state, qubit, eve_rng, eve_view, round_index
        )

    if transcript is not None:
        transcript.quantum_event("channel", "deliver", round_index)
    return True, state


def transmit_batch(
    angles: np.ndarray,
    config: QuantumChannelConfig,
    channel_rng: np.random.Generator,
    eve_rng: Optional[np.random.Generator] = None,
    eve_view=None,
    transcript: Optional[Transcript] = None,
    sender: str = "channel",
):
    """Vectorized channel for n independent in-flight plane qubits.

    ``angles`` holds each qubit's |+> angle.  Returns (delivered_mask,
    out_angles).  Draw counts per round are fixed (loss, depolarize choice,
    depolarize angle) so adversary presence never shifts honest streams.
    """
    angles = np.asarray(angles, dtype=np.float64)
    n = angles.size
    u_loss = channel_rng.random(n)
    u_dep = channel_rng.random(n)
    dep_angles = channel_rng.random(n) * 2.0 * math.pi

    delivered = u_loss >= config.loss_probability
    out = angles.copy()
    dep_mask = delivered & (u_dep < config.depolarize_probability)
    out[dep_mask] = dep_angles[dep_mask]

    attack = config.attack
    if attack is not None and getattr(attack, "kind", None) is not None:
        from .adversary import apply_intercept_resend_batch

        out = apply_intercept_resend_batch(attack, out, delivered, eve_rng, eve_view)

    if transcript is not None:
        lost = int(n - delivered.sum())
        if n <= QUANTUM_EVENT_LIMIT:
            for i in range(n):
                transcript.quantum_event(sender, "send", i)
                transcript.quantum_event(
                    sender, "deliver" if delivered[i] else "lose", i
                )
        else:
            transcript.quantum_batch(sender, n, lost, n - lost)

    return delivered, out


def json_payload(obj) -> bytes:
    """Canonical JSON payload bytes for transcript messages."""
    return json.dumps(obj, separators=(",", ":"), sort_keys=True).encode()
