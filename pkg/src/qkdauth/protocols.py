"""The three protocol families: baseline BB84, baseline EPR, and the
authenticated scheme (initial phase at the information center plus mutually
authenticated key-distribution sessions).

Session mechanics
-----------------
BB84/EPR quantum phases run vectorized: after the source-side measurement,
every in-flight qubit is an x-z plane pure state, so the whole round reduces
to angle/outcome arrays sampled with the exact Born formulas from
``quantum`` (tests pin the equivalence against the state-vector machinery).
The initial phase keeps the full 4-qubit state vectors because the center's
total-spin measurement acts on entangled halves.

Authenticated sessions map authentication-key bits to measurement bases
(bit 0 -> rectilinear by default; a convention flag reproduces the inverted
worked example).  Alice draws every round's direction from {0, pi/2}, so
roughly half of the authentication rounds land in the key-derived basis and
give deterministic anticorrelation checks; Bob's key-partition rounds use
the E91 direction set, whose four mixed combinations feed the CHSH gate and
whose (pi/2, pi/2) coincidences become key bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from . import bell
from .adversary import AttackKind, AttackStrategy, EveView, MitmOutcome
from .channel import (
    MessageTag,
    QuantumChannelConfig,
    RngStreams,
    Transcript,
    json_payload,
    rng_stream,
    transmit_batch,
    transmit_qubit,
)
from .errors import (
    AbortSession,
    IndexOutOfRange,
    InsufficientBellRounds,
    InsufficientEvidence,
    KeyReuse,
    KeyTooShort,
    UnregisteredParty,
)
from .postprocessing import (
    KeyMaterial,
    ReconciliationParams,
    estimate_error_rate,
    leak_budget,
    privacy_amplify,
    random_toeplitz_seed,
    reconcile,
)
from .quantum import (
    DIAGONAL,
    RECTILINEAR,
    MeasurementDirection,
    collapse_angle,
    make_singlet,
    measure_spin,
    measure_total_spin,
    plus_probability,
    tensor,
)
from .reports import SessionReport, transcript_records

RECT_SYMBOL = "⊘"  # circled slash, rectilinear
DIAG_SYMBOL = "⊙"  # circled dot, diagonal

#: Alice's per-round direction set in authenticated sessions
AUTH_ALICE_ANGLES = (RECTILINEAR, DIAGONAL)


# --- basis mapping and the one-time pad --------------------------------------

@dataclass(frozen=True)
class BasisSequence:
    """Measurement bases derived from key bits."""

    bits: np.ndarray
    angles: np.ndarray
    convention: str

    def symbols(self) -> str:
        return "".join(
            RECT_SYMBOL if a == RECTILINEAR else DIAG_SYMBOL for a in self.angles
        )

    def __len__(self):
        return int(self.bits.size)


def key_to_bases(key_bits, convention: str = "stated") -> BasisSequence:
    """Map key bits to measurement bases.

    ``stated``: 0 -> rectilinear, 1 -> diagonal (the rule as written).
    ``example``: the inverse mapping, which is what the worked example
    001101 -> diag,diag,rect,rect,diag,rect actually uses.
    """
    bits = np.asarray(
        [int(b) for b in key_bits] if isinstance(key_bits, str) else key_bits,
        dtype=np.uint8,
    )
    if convention == "stated":
        angles = bits.astype(np.float64) * DIAGONAL
    elif convention == "example":
        angles = (1 - bits).astype(np.float64) * DIAGONAL
    else:
        raise ValueError(f"unknown basis convention {convention!r}")
    return BasisSequence(bits, angles, convention)


@dataclass
class AuthKey:
    """Single-use authentication key."""

    bits: np.ndarray
    used: bool = False

    def __post_init__(self):
        self.bits = np.ascontiguousarray(self.bits, dtype=np.uint8)

    def __len__(self):
        return int(self.bits.size)

    def consume(self):
        if self.used:
            raise KeyReuse("authentication key already consumed")
        self.used = True

    def as_string(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def otp_encrypt(message_bits, key: AuthKey) -> np.ndarray:
    """Vernam encryption with the key prefix; consumes the key."""
    m = np.asarray(message_bits, dtype=np.uint8)
    if len(key) < m.size:
        raise KeyTooShort(f"key of {len(key)} bits cannot pad {m.size} bits")
    key.consume()
    return m ^ key.bits[: m.size]


def otp_decrypt(ciphertext_bits, key: AuthKey) -> np.ndarray:
    """Vernam decryption (the receiving side; does not re-consume)."""
    y = np.asarray(ciphertext_bits, dtype=np.uint8)
    if len(key) < y.size:
        raise KeyTooShort(f"key of {len(key)} bits cannot pad {y.size} bits")
    return y ^ key.bits[: y.size]


def verify_peer(m_received, own_outcomes, matching_positions, tolerance: float) -> bool:
    """Accept the peer iff anticorrelation holds on the matching positions."""
    m = np.asarray(m_received, dtype=np.uint8)
    own = np.asarray(own_outcomes, dtype=np.uint8)
    pos = np.asarray(matching_positions, dtype=np.int64)
    if pos.size == 0:
        raise InsufficientEvidence("no basis-matching positions to verify with")
    if pos.size and (pos.min() < 0 or pos.max() >= min(m.size, own.size)):
        raise IndexOutOfRange("matching positions outside the outcome record")
    rate = float(np.mean(m[pos] != own[pos]))
    return rate >= 1.0 - tolerance


# --- configuration dataclasses ------------------------------------------------

@dataclass
class PipelineParams:
    """Classical post-processing knobs shared by every protocol."""

    r_max: float = 0.11
    sample_fraction: float = 0.25
    s: int = 16
    reconciliation: ReconciliationParams = field(default_factory=ReconciliationParams)

    def __post_init__(self):
        if self.s < 0:
            raise ValueError("privacy-amplification parameter s must be >= 0")


@dataclass
class Bb84Config:
    num_pulses: int
    seed: int = 0
    pipeline: PipelineParams = field(default_factory=PipelineParams)

    def __post_init__(self):
        if self.num_pulses < 64:
            raise ValueError("num_pulses must be >= 64")


@dataclass
class EprConfig:
    num_pairs: int
    seed: int = 0
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    bell_threshold: float = 2.0
    bell_rounds: Optional[int] = None  # None = use every CHSH-usable round

    def __post_init__(self):
        if self.num_pairs < 256:
            raise ValueError("num_pairs must be >= 256")
        if self.bell_rounds is not None and self.bell_rounds <= 0:
            raise InsufficientBellRounds("bell_rounds must be positive when set")


@dataclass
class AuthInitConfig:
    num_rounds: int
    seed: int = 0
    check_rounds: int = 64
    readout_angle: float = RECTILINEAR  # basis for reading out kept rounds
    check_tolerance: float = 0.0
    pipeline: PipelineParams = field(default_factory=PipelineParams)
    alice_id: str = "alice"
    bob_id: str = "bob"

    def __post_init__(self):
        if self.num_rounds < 4 * self.check_rounds:
            raise ValueError("num_rounds must be at least 4x check_rounds")


@dataclass
class AuthSessionConfig:
    num_rounds: int
    seed: int = 0
    auth_fraction: float = 0.25
    min_auth_rounds: int = 64
    verify_tolerance: float = 0.0
    bell_threshold: float = 2.0
    convention: str = "stated"
    pipeline: PipelineParams = field(default_factory=PipelineParams)

    def __post_init__(self):
        if self.num_rounds < 64:
            raise ValueError("num_rounds must be >= 64")


@dataclass
class MitmConfig:
    target: str  # "epr_plain" or "auth_session"
    seed: int = 0
    num_rounds: int = 2048
    auth_key_length: int = 128
    pipeline: PipelineParams = field(default_factory=PipelineParams)

    def __post_init__(self):
        if self.target not in ("epr_plain", "auth_session"):
            raise ValueError(f"unknown MITM target {self.target!r}")


@dataclass
class CenterState:
    """The information center: IDs, held qubit halves, and what it observed."""

    registered_ids: set = field(default_factory=set)
    stored_halves: dict = field(default_factory=dict)
    view: list = field(default_factory=list)

    def register(self, party_id: str):
        self.registered_ids.add(party_id)
        self.view.append({"kind": "id", "party": party_id})

    def receive_half(self, party_id: str):
        self.stored_halves[party_id] = self.stored_halves.get(party_id, 0) + 1

    def observe(self, kind: str, **data):
        self.view.append({"kind": kind, **data})


# --- shared quantum/classical machinery ---------------------------------------

def _pm1(rng: np.random.Generator, n: int) -> np.ndarray:
    """n uniform +-1 values."""
    return np.where(rng.random(n) < 0.5, 1, -1).astype(np.int8)


def _measure_plane(rng: np.random.Generator, measure_angles, state_angles) -> np.ndarray:
    """Born-rule sample of +-1 outcomes for plane qubits."""
    p_plus = plus_probability(measure_angles, state_angles)
    return np.where(rng.random(np.asarray(state_angles).size) < p_plus, 1, -1).astype(
        np.int8
    )


def _bits(values: np.ndarray) -> np.ndarray:
    """Outcome values to bits: +1 -> 0, -1 -> 1."""
    return ((1 - values) // 2).astype(np.uint8)


def _packed(bits_or_mask) -> bytes:
    return np.packbits(np.asarray(bits_or_mask, dtype=np.uint8)).tobytes()


def _key_string(bits: np.ndarray) -> str:
    return "".join("1" if b else "0" for b in bits)


@dataclass
class _PipelineOutcome:
    qber: float
    aborted: bool
    reason: Optional[str]
    final_alice: Optional[KeyMaterial]
    final_bob: Optional[KeyMaterial]
    leaked_bits: int
    t: int = 0
    s_used: int = 0
    reconciled_len: int = 0
    corrected: int = 0


def _run_pipeline(
    alice_bits: np.ndarray,
    bob_bits: np.ndarray,
    pipeline: PipelineParams,
    public: np.random.Generator,
    transcript: Transcript,
    alice_id: str = "alice",
    bob_id: str = "bob",
) -> _PipelineOutcome:
    """Error estimation, reconciliation, and privacy amplification.

    ``public`` supplies the coins both parties agree on over the public
    channel (sample positions, permutations, subset draws, hash seed).
    """
    if alice_bits.size == 0:
        transcript.post(alice_id, MessageTag.ABORT, b"empty-sifted-key")
        return _PipelineOutcome(0.0, True, "empty-sifted-key", None, None, 0)

    est = estimate_error_rate(
        alice_bits, bob_bits, pipeline.sample_fraction, pipeline.r_max, public
    )
    transcript.post(
        alice_id,
        MessageTag.SAMPLE_POSITIONS,
        est.sample_positions.astype(np.uint32).tobytes(),
    )
    transcript.post(
        alice_id, MessageTag.SAMPLE_BITS, _packed(alice_bits[est.sample_positions])
    )
    transcript.post(
        bob_id, MessageTag.SAMPLE_BITS, _packed(bob_bits[est.sample_positions])
    )
    transcript.post(
        alice_id, MessageTag.ERROR_RATE, json_payload({"rate": est.error_rate})
    )
    if est.aborted:
        transcript.post(alice_id, MessageTag.ABORT, b"error-rate-exceeded")
        return _PipelineOutcome(est.error_rate, True, "error-rate-exceeded", None, None, 0)
    if est.remaining_alice.size < 2:
        transcript.post(alice_id, MessageTag.ABORT, b"key-exhausted-by-sampling")
        return _PipelineOutcome(
            est.error_rate, True, "key-exhausted-by-sampling", None, None, 0
        )

    rec = reconcile(
        est.remaining_alice,
        est.remaining_bob,
        est.error_rate,
        pipeline.reconciliation,
        public,
        transcript,
        alice_id,
        bob_id,
    )
    n = int(rec.alice_key.size)
    if n == 0:
        transcript.post(alice_id, MessageTag.ABORT, b"key-exhausted-by-reconciliation")
        return _PipelineOutcome(
            est.error_rate, True, "key-exhausted-by-reconciliation", None, None,
            rec.leaked_bits,
        )

    t = leak_budget(est.error_rate, n, rec.leaked_bits)
    s_used = min(pipeline.s, max(0, n - t - 1))
    r = n - t - s_used
    seed = random_toeplitz_seed(n, r, public)
    transcript.post(alice_id, MessageTag.TOEPLITZ_SEED, _packed(seed.bits))

    km_alice = KeyMaterial(rec.alice_key, "reconciled", rec.leaked_bits)
    km_bob = KeyMaterial(rec.bob_key, "reconciled", rec.leaked_bits)
    final_alice = privacy_amplify(km_alice, t, s_used, seed)
    final_bob = privacy_amplify(km_bob, t, s_used, seed)
    transcript.post(
        alice_id,
        MessageTag.KEY_LENGTH,
        json_payload({"n": n, "t": t, "s": s_used, "r": r}),
    )
    return _PipelineOutcome(
        est.error_rate, False, None, final_alice, final_bob,
        rec.leaked_bits, t, s_used, n, rec.corrected_errors,
    )


def _channel_with_attack(
    channel: Optional[QuantumChannelConfig], adversary: Optional[AttackStrategy]
) -> QuantumChannelConfig:
    cfg = channel if channel is not None else QuantumChannelConfig()
    if adversary is not None and adversary.active:
        cfg = QuantumChannelConfig(
            cfg.loss_probability, cfg.depolarize_probability, adversary
        )
    return cfg


def _estimate_chsh(a_angles, b_angles, a_vals, b_vals, usable, cap=None):
    """E per CHSH direction pair and the combined S over usable rounds."""
    e_values, counts, used_mask = {}, {}, np.zeros(usable.size, dtype=bool)
    for pair in bell.CHSH_PAIRS:
        m = usable & (a_angles == pair[0]) & (b_angles == pair[1])
        idx = np.flatnonzero(m)
        if cap is not None:
            idx = idx[:cap]
        if idx.size:
            e_values[pair] = bell.correlation_from_values(
                a_vals[idx].astype(np.float64), b_vals[idx].astype(np.float64)
            )
            counts[pair] = int(idx.size)
            used_mask[idx] = True
    s = bell.chsh_s(e_values)  # raises MissingPair if a pair has no rounds
    return s, e_values, counts, used_mask


# --- BB84 ---------------------------------------------------------------------

def run_bb84(
    config: Bb84Config,
    channel: Optional[QuantumChannelConfig] = None,
    adversary: Optional[AttackStrategy] = None,
) -> SessionReport:
    """Prepare-and-measure baseline with the full classical pipeline."""
    n = config.num_pulses
    cfg = _channel_with_attack(channel, adversary)
    streams = RngStreams(config.seed)
    transcript = Transcript()
    eve_view = EveView()

    alice_rng, bob_rng = streams.get("alice"), streams.get("bob")
    bits = alice_rng.integers(0, 2, size=n, dtype=np.uint8)
    a_basis = alice_rng.integers(0, 2, size=n, dtype=np.uint8)
    a_angles = a_basis.astype(np.float64) * DIAGONAL
    prepared = a_angles + math.pi * bits  # bit 1 rides the -1 eigenstate

    delivered, arriving = transmit_batch(
        prepared, cfg, streams.get("channel"), streams.get("eve"), eve_view,
        transcript, sender="alice",
    )
    b_basis = bob_rng.integers(0, 2, size=n, dtype=np.uint8)
    b_angles = b_basis.astype(np.float64) * DIAGONAL
    b_vals = _measure_plane(bob_rng, b_angles, arriving)
    bob_bits = _bits(b_vals)

    transcript.post("bob", MessageTag.PRESENT_POSITIONS, _packed(delivered))
    transcript.post("bob", MessageTag.BASES, b_basis.tobytes())
    transcript.post("alice", MessageTag.BASES, a_basis.tobytes())

    keep = delivered & (a_basis == b_basis)
    sifted_a, sifted_b = bits[keep], bob_bits[keep]

    out = _run_pipeline(sifted_a, sifted_b, config.pipeline, streams.get("public"),
                        transcript)
    return _finish_report(
        "bb84", config.seed, n, out, transcript,
        stats={
            "sifted_len": float(sifted_a.size),
            "delivered_fraction": float(delivered.mean()),
            "eve_intercepted": float(len(eve_view.observed_positions)),
        },
    )


# --- EPR (E91) ------------------------------------------------------------------

def run_epr(
    config: EprConfig,
    channel: Optional[QuantumChannelConfig] = None,
    adversary: Optional[AttackStrategy] = None,
) -> SessionReport:
    """Entanglement-based baseline with the Bell-statistic eavesdropping gate."""
    n = config.num_pairs
    cfg = _channel_with_attack(channel, adversary)
    streams = RngStreams(config.seed)
    transcript = Transcript()
    eve_view = EveView()

    alice_rng, bob_rng = streams.get("alice"), streams.get("bob")
    a_idx = alice_rng.integers(0, 3, size=n)
    b_idx = bob_rng.integers(0, 3, size=n)
    a_angles = np.array(bell.ALICE_ANGLES)[a_idx]
    b_angles = np.array(bell.BOB_ANGLES)[b_idx]

    a_vals = _pm1(alice_rng, n)
    flying = collapse_angle(a_angles, -a_vals)  # the partner qubit, anticorrelated
    delivered, arriving = transmit_batch(
        flying, cfg, streams.get("channel"), streams.get("eve"), eve_view,
        transcript, sender="alice",
    )
    b_vals = _measure_plane(bob_rng, b_angles, arriving)

    transcript.post("bob", MessageTag.PRESENT_POSITIONS, _packed(delivered))
    transcript.post("alice", MessageTag.BASES, a_idx.astype(np.uint8).tobytes())
    transcript.post("bob", MessageTag.BASES, b_idx.astype(np.uint8).tobytes())

    s, _e, counts, bell_mask = _estimate_chsh(
        a_angles, b_angles, a_vals, b_vals, delivered, cap=config.bell_rounds
    )
    transcript.post("bob", MessageTag.BELL_VALUES, _packed(_bits(b_vals[bell_mask])))
    transcript.post("alice", MessageTag.BELL_VALUES, _packed(_bits(a_vals[bell_mask])))
    verdict = bell.detect_eavesdropping(s, config.bell_threshold)
    transcript.post(
        "alice", MessageTag.BELL_VERDICT, json_payload({"s": s, "verdict": verdict})
    )
    base_stats = {
        "bell_rounds": float(sum(counts.values())),
        "eve_intercepted": float(len(eve_view.observed_positions)),
    }
    if verdict == "compromised":
        transcript.post("alice", MessageTag.ABORT, b"bell-test-failed")
        return _finish_report(
            "epr", config.seed, n,
            _PipelineOutcome(0.0, True, "bell-test-failed", None, None, 0),
            transcript, bell_s=s, stats=base_stats, qber=None,
        )

    keep = delivered & (a_angles == b_angles)
    sifted_a = _bits(a_vals[keep])
    sifted_b = 1 - _bits(b_vals[keep])  # Bob flips so honest keys agree
    base_stats["sifted_len"] = float(sifted_a.size)

    out = _run_pipeline(sifted_a, sifted_b, config.pipeline, streams.get("public"),
                        transcript)
    return _finish_report("epr", config.seed, n, out, transcript, bell_s=s,
                          stats=base_stats)


def _finish_report(
    protocol: str,
    seed: int,
    num_rounds: int,
    out: _PipelineOutcome,
    transcript: Transcript,
    bell_s: Optional[float] = None,
    stats: Optional[dict] = None,
    qber: str | float | None = "pipeline",
    alice_verified: Optional[bool] = None,
    bob_verified: Optional[bool] = None,
    final_override: Optional[tuple[str, str]] = None,
) -> SessionReport:
    all_stats = dict(stats or {})
    all_stats.update(
        {
            "t_budget": float(out.t),
            "s_used": float(out.s_used),
            "reconciled_len": float(out.reconciled_len),
            "corrected_errors": float(out.corrected),
        }
    )
    if final_override is not None:
        key_a, key_b = final_override
    else:
        key_a = out.final_alice.as_string() if out.final_alice else ""
        key_b = out.final_bob.as_string() if out.final_bob else ""
    if out.aborted:
        key_a = key_b = ""
    all_stats["final_len"] = float(len(key_a))
    return SessionReport(
        protocol=protocol,
        seed=seed,
        num_rounds=num_rounds,
        qber=out.qber if qber == "pipeline" else qber,
        bell_s=bell_s,
        alice_verified=alice_verified,
        bob_verified=bob_verified,
        final_key_alice=key_a,
        final_key_bob=key_b,
        leaked_bits=out.leaked_bits,
        aborted=out.aborted,
        abort_reason=out.reason,
        stats=all_stats,
        transcript=transcript_records(transcript),
    )


# --- initial phase (authentication-key bootstrap at the center) ----------------

@dataclass
class InitResult:
    alice_key: AuthKey
    bob_key: AuthKey
    report: SessionReport


def run_auth_init(
    config: AuthInitConfig,
    center: CenterState,
    channel_alice: Optional[QuantumChannelConfig] = None,
    channel_bob: Optional[QuantumChannelConfig] = None,
) -> InitResult:
    """Bootstrap a shared authentication key through the information center.

    Each round both parties send the center one half of a fresh singlet.  A
    random subset per link is spent on anticorrelation spot checks; on the
    rest the center measures the total spin of the received pair and the
    parties keep the rounds that projected onto the singlet (s=0), which
    leaves their retained halves perfectly anticorrelated.  Raises
    AbortSession when a spot check exposes an eavesdropper.
    """
    for pid in (config.alice_id, config.bob_id):
        if pid not in center.registered_ids:
            raise UnregisteredParty(f"{pid!r} is not registered with the center")

    cfg_a = channel_alice if channel_alice is not None else QuantumChannelConfig()
    cfg_b = channel_bob if channel_bob is not None else QuantumChannelConfig()
    streams = RngStreams(config.seed)
    transcript = Transcript()
    eve_a, eve_b = EveView(), EveView()
    alice_rng, bob_rng = streams.get("alice"), streams.get("bob")
    center_rng = streams.get("center")
    chan_a, chan_b = streams.get("channel-alice"), streams.get("channel-bob")
    eva_rng, evb_rng = streams.get("eve-alice"), streams.get("eve-bob")

    transcript.post(config.alice_id, MessageTag.ID_REGISTER, config.alice_id.encode())
    transcript.post(config.bob_id, MessageTag.ID_REGISTER, config.bob_id.encode())

    log_events = config.num_rounds <= 4096
    pairs = {}
    for r in range(config.num_rounds):
        state_a = make_singlet()
        state_b = make_singlet()
        ok_a, state_a = transmit_qubit(
            state_a, 1, cfg_a, chan_a, eva_rng, eve_a, r,
            transcript if log_events else None,
        )
        ok_b, state_b = transmit_qubit(
            state_b, 1, cfg_b, chan_b, evb_rng, eve_b, r,
            transcript if log_events else None,
        )
        if ok_a and ok_b:
            center.receive_half(config.alice_id)
            center.receive_half(config.bob_id)
            pairs[r] = (state_a, state_b)

    arrived = np.array(sorted(pairs), dtype=np.int64)
    if arrived.size < 2 * config.check_rounds + 4:
        raise AbortSession("too-few-delivered-rounds")

    order = center_rng.permutation(arrived.size)
    checks_a = np.sort(arrived[order[: config.check_rounds]])
    checks_b = np.sort(arrived[order[config.check_rounds : 2 * config.check_rounds]])
    transcript.post(
        "center",
        MessageTag.CHECK_POSITIONS,
        json_payload({"alice": checks_a.tolist(), "bob": checks_b.tolist()}),
    )

    def spot_check(rounds, party_rng, party_id, eve_label):
        violations = 0
        for r in rounds:
            sa, sb = pairs[r]
            state = sa if party_id == config.alice_id else sb
            d = MeasurementDirection(
                float(center_rng.integers(0, 2)) * DIAGONAL
            )
            c_out, state = measure_spin(state, 1, d, center_rng)
            center.observe("check", round=int(r), party=party_id,
                           angle=d.angle, value=c_out.value)
            transcript.post(
                "center", MessageTag.CHECK_VALUES,
                json_payload({"round": int(r), "angle": d.angle, "value": c_out.value}),
            )
            p_out, _ = measure_spin(state, 0, d, party_rng)
            transcript.post(
                party_id, MessageTag.CHECK_VALUES,
                json_payload({"round": int(r), "value": p_out.value}),
            )
            if p_out.value == c_out.value:  # must be anticorrelated
                violations += 1
        rate = violations / len(rounds) if len(rounds) else 0.0
        if rate > config.check_tolerance:
            transcript.post(party_id, MessageTag.ABORT, eve_label.encode())
            raise AbortSession(eve_label)

    spot_check(checks_a, alice_rng, config.alice_id, "eavesdropping-alice-center")
    spot_check(checks_b, bob_rng, config.bob_id, "eavesdropping-bob-center")

    spent = set(checks_a.tolist()) | set(checks_b.tolist())
    data_rounds = [r for r in sorted(pairs) if r not in spent]

    alice_bits, bob_bits = [], []
    readout = MeasurementDirection(config.readout_angle)
    s0_count = 0
    for r in data_rounds:
        sa, sb = pairs[r]
        joint = tensor(sa, sb)  # qubits: A-kept, A-sent, B-kept, B-sent
        result, joint = measure_total_spin(joint, 1, 3, center_rng)
        center.observe("total-spin", round=int(r), s=result.s)
        transcript.post("center", MessageTag.TOTAL_SPIN,
                        json_payload({"round": int(r), "s": result.s}))
        if result.s == 1:
            continue
        s0_count += 1
        out_a, joint = measure_spin(joint, 0, readout, alice_rng)
        out_b, joint = measure_spin(joint, 2, readout, bob_rng)
        alice_bits.append(out_a.bit)
        bob_bits.append(1 - out_b.bit)  # flip: anticorrelation -> agreement

    raw_a = np.array(alice_bits, dtype=np.uint8)
    raw_b = np.array(bob_bits, dtype=np.uint8)
    out = _run_pipeline(
        raw_a, raw_b, config.pipeline, streams.get("public"), transcript,
        config.alice_id, config.bob_id,
    )
    if out.aborted:
        raise AbortSession(out.reason or "pipeline-aborted")

    kept_fraction = s0_count / len(data_rounds) if data_rounds else 0.0
    report = _finish_report(
        "auth_init", config.seed, config.num_rounds, out, transcript,
        stats={
            "kept_fraction": float(kept_fraction),
            "spin_rounds": float(len(data_rounds)),
            "raw_key_len": float(raw_a.size),
            "check_rounds": float(config.check_rounds),
        },
    )
    return InitResult(
        AuthKey(out.final_alice.bits.copy()),
        AuthKey(out.final_bob.bits.copy()),
        report,
    )


# --- authenticated session ------------------------------------------------------

@dataclass
class AuthSessionResult:
    report: SessionReport
    fresh_alice: Optional[AuthKey]
    fresh_bob: Optional[AuthKey]


def run_auth_session(
    config: AuthSessionConfig,
    k1_alice: Optional[AuthKey],
    k1_bob: Optional[AuthKey],
    channel: Optional[QuantumChannelConfig] = None,
    adversary: Optional[AttackStrategy] = None,
) -> AuthSessionResult:
    """Mutually authenticated EPR session.

    With a mitm_impersonation adversary one legitimate role is played by Eve,
    who lacks the authentication key and substitutes a uniform random guess
    (or a replayed ciphertext); whichever real party remains then rejects the
    impostor with overwhelming probability.
    """
    mitm = adversary is not None and adversary.kind is AttackKind.MITM_IMPERSONATION
    alice_is_eve = mitm and adversary.impersonate == "alice"
    bob_is_eve = mitm and adversary.impersonate == "bob"
    replaying = mitm and adversary.replay_y is not None

    if not alice_is_eve and k1_alice is None:
        raise ValueError("honest Alice needs her authentication key")
    if not bob_is_eve and k1_bob is None:
        raise ValueError("honest Bob needs his authentication key")
    if not alice_is_eve and k1_alice.used:
        raise KeyReuse("Alice's authentication key already consumed")
    if not bob_is_eve and k1_bob is not None and k1_bob.used:
        raise KeyReuse("Bob's authentication key already consumed")

    key_len = len(k1_alice) if not alice_is_eve else len(k1_bob)
    if key_len < config.min_auth_rounds:
        raise KeyTooShort(
            f"authentication key of {key_len} bits < min_auth_rounds "
            f"{config.min_auth_rounds}"
        )

    n = config.num_rounds
    cfg = _channel_with_attack(channel, adversary if not mitm else None)
    streams = RngStreams(config.seed)
    transcript = Transcript()
    eve_view = EveView()
    a_rng = streams.get("eve" if alice_is_eve else "alice")
    b_rng = streams.get("eve" if bob_is_eve else "bob")
    alice_label = "eve" if alice_is_eve else "alice"
    bob_label = "eve" if bob_is_eve else "bob"

    # Bob-side key material: the real key, or Eve's uniform guess
    if bob_is_eve:
        bob_key_bits = b_rng.integers(0, 2, size=key_len, dtype=np.uint8)
    else:
        bob_key_bits = k1_bob.bits

    n_auth = int(min(max(config.min_auth_rounds, round(config.auth_fraction * n)),
                     key_len))

    # quantum phase
    a_angles = a_rng.integers(0, 2, size=n).astype(np.float64) * DIAGONAL
    auth_positions = np.sort(b_rng.choice(n, size=n_auth, replace=False))
    b_idx = b_rng.integers(0, 3, size=n)
    b_angles = np.array(bell.BOB_ANGLES)[b_idx]
    bob_bases = key_to_bases(bob_key_bits[:n_auth], config.convention)
    b_angles[auth_positions] = bob_bases.angles

    a_vals = _pm1(a_rng, n)
    flying = collapse_angle(a_angles, -a_vals)
    delivered, arriving = transmit_batch(
        flying, cfg, streams.get("channel"), streams.get("eve-channel"), eve_view,
        transcript, sender=alice_label,
    )
    b_vals = _measure_plane(b_rng, b_angles, arriving)
    a_bits, b_bits = _bits(a_vals), _bits(b_vals)

    transcript.post(bob_label, MessageTag.PRESENT_POSITIONS, _packed(delivered))
    transcript.post(alice_label, MessageTag.BASES,
                    (a_angles == DIAGONAL).astype(np.uint8).tobytes())

    in_auth = np.zeros(n, dtype=bool)
    in_auth[auth_positions] = True
    key_partition = delivered & ~in_auth
    transcript.post(bob_label, MessageTag.KEY_POSITIONS, _packed(key_partition))
    transcript.post(bob_label, MessageTag.BASES,
                    b_idx[key_partition].astype(np.uint8).tobytes())

    # Step 4: Bell gate on the key partition
    s, _e, counts, bell_mask = _estimate_chsh(
        a_angles, b_angles, a_vals, b_vals, key_partition
    )
    transcript.post(bob_label, MessageTag.BELL_VALUES, _packed(b_bits[bell_mask]))
    transcript.post(alice_label, MessageTag.BELL_VALUES, _packed(a_bits[bell_mask]))
    verdict = bell.detect_eavesdropping(s, config.bell_threshold)
    transcript.post(alice_label, MessageTag.BELL_VERDICT,
                    json_payload({"s": s, "verdict": verdict}))

    stats = {
        "auth_rounds": float(n_auth),
        "bell_rounds": float(sum(counts.values())),
        "eve_intercepted": float(len(eve_view.observed_positions)),
    }
    if verdict == "compromised":
        transcript.post(alice_label, MessageTag.ABORT, b"bell-test-failed")
        report = _finish_report(
            "auth_session", config.seed, n,
            _PipelineOutcome(0.0, True, "bell-test-failed", None, None, 0),
            transcript, bell_s=s, stats=stats, qber=None,
        )
        return AuthSessionResult(report, None, None)

    # Step 5a: Bob proves his identity with the encrypted auth-round outcomes
    alive_auth = auth_positions[delivered[auth_positions]]
    alive_j = np.flatnonzero(delivered[auth_positions])  # key-bit index per round
    if replaying:
        claimed_positions = np.asarray(adversary.replay_positions, dtype=np.int64)
        claimed_j = np.arange(claimed_positions.size)
        y = np.asarray(adversary.replay_y, dtype=np.uint8)
    else:
        claimed_positions, claimed_j = alive_auth, alive_j
        m_bob = b_bits[alive_auth]
        if not bob_is_eve:
            k1_bob.consume()
        y = m_bob ^ bob_key_bits[alive_j]
    transcript.post(bob_label, MessageTag.AUTH_POSITIONS,
                    json_payload(claimed_positions.tolist()))
    transcript.post(bob_label, MessageTag.AUTH_CIPHERTEXT, _packed(y))

    # Step 5b: Alice verifies Bob on the basis-matching positions
    bob_verified: Optional[bool] = None
    if not alice_is_eve:
        alice_bases = key_to_bases(k1_alice.bits, config.convention)
        k1_alice.consume()
        pad = k1_alice.bits[claimed_j]
        m_hat = y ^ pad
        expected_angles = alice_bases.angles[claimed_j]
        matching = np.flatnonzero(a_angles[claimed_positions] == expected_angles)
        stats["matching_checks"] = float(matching.size)
        bob_verified = verify_peer(
            m_hat, a_bits[claimed_positions], matching, config.verify_tolerance
        )
        if not bob_verified:
            transcript.post("alice", MessageTag.ABORT, b"verification-failed-bob")
            report = _finish_report(
                "auth_session", config.seed, n,
                _PipelineOutcome(0.0, True, "verification-failed-bob", None, None, 0),
                transcript, bell_s=s, stats=stats, qber=None,
                bob_verified=False,
            )
            return AuthSessionResult(report, None, None)
        m_prime = m_hat
    else:
        # Eve cannot decrypt; she echoes her best guess
        guess_pad = a_rng.integers(0, 2, size=y.size, dtype=np.uint8)
        m_prime = y ^ guess_pad
        stats["matching_checks"] = 0.0

    # Step 6: Alice's echo proves her identity to Bob
    transcript.post(alice_label, MessageTag.AUTH_ECHO, _packed(m_prime))
    alice_verified: Optional[bool] = None
    if not bob_is_eve and not replaying:
        alice_verified = bool(np.array_equal(m_prime, m_bob))
        if not alice_verified:
            transcript.post("bob", MessageTag.ABORT, b"verification-failed-alice")
            report = _finish_report(
                "auth_session", config.seed, n,
                _PipelineOutcome(0.0, True, "verification-failed-alice", None, None, 0),
                transcript, bell_s=s, stats=stats, qber=None,
                alice_verified=False, bob_verified=bob_verified,
            )
            return AuthSessionResult(report, None, None)

    # Step 7: remaining equal-angle rounds become the session key
    keep = key_partition & (a_angles == b_angles)
    sifted_a = a_bits[keep]
    sifted_b = 1 - b_bits[keep]
    stats["sifted_len"] = float(sifted_a.size)
    out = _run_pipeline(
        sifted_a, sifted_b, config.pipeline, streams.get("public"), transcript,
        alice_label, bob_label,
    )

    # Step 8: both K1 copies are spent; carve replacement keys from the output
    fresh_alice = fresh_bob = None
    final_override = None
    if not out.aborted:
        carve = min(key_len, len(out.final_alice))
        fresh_alice = AuthKey(out.final_alice.bits[:carve].copy())
        fresh_bob = AuthKey(out.final_bob.bits[:carve].copy())
        final_override = (
            _key_string(out.final_alice.bits[carve:]),
            _key_string(out.final_bob.bits[carve:]),
        )
        stats["fresh_key_len"] = float(carve)

    report = _finish_report(
        "auth_session", config.seed, n, out, transcript, bell_s=s, stats=stats,
        alice_verified=alice_verified, bob_verified=bob_verified,
        final_override=final_override,
    )
    return AuthSessionResult(report, fresh_alice, fresh_bob)


# --- man in the middle -----------------------------------------------------------

def run_mitm_session(config: MitmConfig) -> MitmOutcome:
    """Eve completes one protocol instance with each party.

    Against plain EPR both segments are indistinguishable from honest
    sessions, so Eve ends up holding both final keys.  Against the
    authenticated session she lacks K1 and at least one verification fails.
    """
    seed_ae = rng_stream(config.seed, "segment-ae").integers(0, 2**63)
    seed_eb = rng_stream(config.seed, "segment-eb").integers(0, 2**63)

    if config.target == "epr_plain":
        r1 = run_epr(EprConfig(config.num_rounds, seed=int(seed_ae),
                               pipeline=config.pipeline))
        r2 = run_epr(EprConfig(config.num_rounds, seed=int(seed_eb),
                               pipeline=config.pipeline))
        eve = EveView(k_ae=r1.final_key_bob, k_eb=r2.final_key_alice)
        return MitmOutcome(eve, r1, r2)

    k1_bits = rng_stream(config.seed, "k1").integers(
        0, 2, size=config.auth_key_length, dtype=np.uint8
    )
    k1_alice, k1_bob = AuthKey(k1_bits.copy()), AuthKey(k1_bits.copy())
    session_cfg = AuthSessionConfig(
        config.num_rounds, pipeline=config.pipeline
    )
    res1 = run_auth_session(
        replace(session_cfg, seed=int(seed_ae)), k1_alice, None,
        adversary=AttackStrategy(AttackKind.MITM_IMPERSONATION, impersonate="bob"),
    )
    res2 = run_auth_session(
        replace(session_cfg, seed=int(seed_eb)), None, k1_bob,
        adversary=AttackStrategy(AttackKind.MITM_IMPERSONATION, impersonate="alice"),
    )
    return MitmOutcome(EveView(), res1.report, res2.report)
