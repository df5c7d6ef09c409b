"""Classical key pipeline: sifting, error estimation, reconciliation, privacy
amplification, with exact accounting of publicly disclosed parity bits.

Keys are numpy uint8 arrays of 0/1.  Reconciliation follows the two-stage
interactive scheme: stage 1 permutes the key and bisects parity-mismatched
blocks; stage 2 draws random half-key subsets until a fixed number of
consecutive rounds come back clean.  Every parity comparison leaks one bit
and every *agreeing* comparison costs the last bit of the compared set;
located errors are deleted outright.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .errors import (
    BudgetExceeded,
    EmptyKey,
    LengthMismatch,
    SeedLengthMismatch,
)

STAGES = ("raw", "sifted", "reconciled", "final")

# hard safety cap on stage-2 rounds; reached only on pathological inputs
_STAGE2_ROUND_CAP = 100_000


@dataclass(frozen=True)
class KeyMaterial:
    """A key at some pipeline stage plus the public-leak tally for it."""

    bits: np.ndarray
    stage: str = "raw"
    leaked_bits: int = 0

    def __post_init__(self):
        object.__setattr__(
            self, "bits", np.ascontiguousarray(self.bits, dtype=np.uint8)
        )
        if self.stage not in STAGES:
            raise ValueError(f"unknown stage {self.stage!r}")
        if self.leaked_bits < 0:
            raise ValueError("leaked_bits must be >= 0")

    def __len__(self):
        return int(self.bits.size)

    def derive(self, bits, stage: str, extra_leak: int = 0) -> "KeyMaterial":
        """Forward stage transition; going backwards is a bug."""
        if STAGES.index(stage) < STAGES.index(self.stage):
            raise ValueError(f"stage cannot move back from {self.stage} to {stage}")
        return KeyMaterial(bits, stage, self.leaked_bits + extra_leak)

    def as_string(self) -> str:
        return "".join("1" if b else "0" for b in self.bits)


def default_block_length(error_rate: float, key_length: int) -> int:
    """max(2, round(0.73 / R)), clamped to the key length."""
    if error_rate <= 0:
        return max(2, key_length)
    return max(2, min(key_length, int(round(0.73 / error_rate))))


@dataclass
class ReconciliationParams:
    block_length_rule: Callable[[float, int], int] = default_block_length
    passes: int = 2
    stage2_rounds: int = 20

    def __post_init__(self):
        if self.passes < 1 or self.stage2_rounds < 1:
            raise ValueError("passes and stage2_rounds must be >= 1")


@dataclass(frozen=True)
class ToeplitzSeed:
    """n + r - 1 bits defining the n -> r Toeplitz hash T[i, j] = bits[n-1+i-j]."""

    bits: np.ndarray

    def __post_init__(self):
        object.__setattr__(
            self, "bits", np.ascontiguousarray(self.bits, dtype=np.uint8)
        )


def random_toeplitz_seed(n: int, r: int, rng: np.random.Generator) -> ToeplitzSeed:
    return ToeplitzSeed(rng.integers(0, 2, size=n + r - 1, dtype=np.uint8))


def identity_toeplitz_seed(n: int) -> ToeplitzSeed:
    """Seed whose n -> n Toeplitz matrix is the identity."""
    bits = np.zeros(2 * n - 1, dtype=np.uint8)
    bits[n - 1] = 1
    return ToeplitzSeed(bits)


def toeplitz_hash(key_bits: np.ndarray, seed: ToeplitzSeed, r: int) -> np.ndarray:
    """r-bit image of the key under the Toeplitz matrix defined by the seed."""
    n = int(np.asarray(key_bits).size)
    if seed.bits.size != n + r - 1:
        raise SeedLengthMismatch(
            f"seed length {seed.bits.size}, expected n + r - 1 = {n + r - 1}"
        )
    # row i of T is seed[n-1+i : i-1 : -1], so T @ key is a slice of the
    # full convolution of seed and key
    conv = np.convolve(seed.bits.astype(np.int64), np.asarray(key_bits, dtype=np.int64))
    return (conv[n - 1 : n - 1 + r] % 2).astype(np.uint8)


# --- sifting -----------------------------------------------------------------

def _angle_of(basis) -> float:
    return float(getattr(basis, "angle", basis))


def sift(alice: Sequence, bob: Sequence):
    """Keep positions where Bob has a result and both bases agree.

    ``alice`` holds (basis, bit) pairs; ``bob`` holds (basis, bit) with bit
    None for non-receptions.  Returns aligned key arrays and the strictly
    increasing kept positions.
    """
    if len(alice) != len(bob):
        raise LengthMismatch(f"{len(alice)} vs {len(bob)} entries")
    n = len(alice)
    a_angle = np.array([_angle_of(b) for b, _ in alice])
    a_bits = np.array([bit for _, bit in alice], dtype=np.uint8)
    b_angle = np.array([_angle_of(b) for b, _ in bob])
    present = np.array([bit is not None for _, bit in bob], dtype=bool)
    b_bits = np.array([0 if bit is None else bit for _, bit in bob], dtype=np.uint8)
    keep = present & (a_angle == b_angle)
    positions = np.flatnonzero(keep)
    return a_bits[positions], b_bits[positions], positions


def sift_arrays(alice_angles, alice_bits, bob_angles, bob_bits, present):
    """Array fast path used by the protocol engines."""
    keep = np.asarray(present, dtype=bool) & (
        np.asarray(alice_angles) == np.asarray(bob_angles)
    )
    positions = np.flatnonzero(keep)
    return (
        np.asarray(alice_bits, dtype=np.uint8)[positions],
        np.asarray(bob_bits, dtype=np.uint8)[positions],
        positions,
    )


# --- error estimation --------------------------------------------------------

@dataclass
class ErrorEstimate:
    error_rate: float
    remaining_alice: np.ndarray
    remaining_bob: np.ndarray
    sample_positions: np.ndarray
    sample_size: int
    aborted: bool


def estimate_error_rate(
    alice_key,
    bob_key,
    sample_fraction: float,
    r_max: float,
    rng: np.random.Generator,
) -> ErrorEstimate:
    """Publicly compare a random sample, discard it, and estimate the QBER.

    ``aborted`` is set iff the estimate exceeds ``r_max``; it is a contract
    outcome (restart the protocol), not an exception.
    """
    a = np.asarray(alice_key, dtype=np.uint8)
    b = np.asarray(bob_key, dtype=np.uint8)
    if a.size != b.size:
        raise LengthMismatch(f"{a.size} vs {b.size} key bits")
    if a.size == 0:
        raise EmptyKey("cannot estimate the error rate of an empty key")
    if not 0.0 < sample_fraction < 1.0:
        raise ValueError("sample_fraction must be in (0, 1)")
    k = min(a.size, math.ceil(sample_fraction * a.size))
    sample = np.sort(rng.choice(a.size, size=k, replace=False))
    rate = float(np.mean(a[sample] != b[sample]))
    return ErrorEstimate(
        error_rate=rate,
        remaining_alice=np.delete(a, sample),
        remaining_bob=np.delete(b, sample),
        sample_positions=sample,
        sample_size=k,
        aborted=rate > r_max,
    )


# --- reconciliation ----------------------------------------------------------

@dataclass
class ReconcileResult:
    alice_key: np.ndarray
    bob_key: np.ndarray
    leaked_bits: int
    corrected_errors: int


class _ParityChannel:
    """Counts disclosed parities and optionally mirrors them to a transcript."""

    def __init__(self, transcript=None, alice_id="alice", bob_id="bob"):
        self.transcript = transcript
        self.alice_id = alice_id
        self.bob_id = bob_id
        self.leaked = 0

    def compare(self, a_bits: np.ndarray, b_bits: np.ndarray, label: str) -> bool:
        pa = int(a_bits.sum() & 1)
        pb = int(b_bits.sum() & 1)
        self.leaked += 1
        if self.transcript is not None:
            from .channel import MessageTag  # local import, avoids module cycle

            self.transcript.post(
                self.alice_id, MessageTag.PARITY, f"{label}:{pa}".encode()
            )
            self.transcript.post(
                self.bob_id,
                MessageTag.PARITY_VERDICT,
                (b"match" if pa == pb else b"mismatch"),
            )
        return pa == pb


def _bisect_error(a, b, idx: np.ndarray, chan: _ParityChannel, label: str):
    """Binary-search one error inside ``idx`` (parities known to differ).

    Compares the left half at each level (the right half's verdict is
    implied), discarding the last bit of each agreeing compared half.
    Returns (error_position, positions_to_discard).
    """
    discards = []
    level = 0
    while idx.size > 1:
        half = (idx.size + 1) // 2
        left = idx[:half]
        if chan.compare(a[left], b[left], f"{label}.b{level}"):
            discards.append(int(left[-1]))
            idx = idx[half:]
        else:
            idx = left
        level += 1
    return int(idx[0]), discards


def reconcile(
    alice_key,
    bob_key,
    error_rate: float,
    params: Optional[ReconciliationParams] = None,
    rng: Optional[np.random.Generator] = None,
    transcript=None,
    alice_id: str = "alice",
    bob_id: str = "bob",
) -> ReconcileResult:
    """Two-stage interactive reconciliation.

    ``error_rate`` feeds the block-length rule; ``rng`` supplies the public
    coins (permutations and subset draws) both parties share.
    """
    a = np.array(alice_key, dtype=np.uint8)
    b = np.array(bob_key, dtype=np.uint8)
    if a.size != b.size:
        raise LengthMismatch(f"{a.size} vs {b.size} key bits")
    params = params or ReconciliationParams()
    rng = rng or np.random.default_rng(0)
    chan = _ParityChannel(transcript, alice_id, bob_id)
    corrected = 0

    # stage 1: permuted fixed-length blocks
    for pass_i in range(params.passes):
        n = a.size
        if n < 2:
            break
        perm = rng.permutation(n)
        ell = params.block_length_rule(error_rate, n)
        drop = []
        for start in range(0, n, ell):
            blk = perm[start : start + ell]
            label = f"s1.p{pass_i}.k{start // ell}"
            if chan.compare(a[blk], b[blk], label):
                drop.append(int(blk[-1]))
            else:
                err, extra = _bisect_error(a, b, blk, chan, label)
                corrected += 1
                drop.append(err)
                drop.extend(extra)
        if drop:
            a = np.delete(a, drop)
            b = np.delete(b, drop)

    # stage 2: random subsets until N consecutive clean rounds
    clean = 0
    round_i = 0
    while clean < params.stage2_rounds and a.size > 1:
        round_i += 1
        if round_i > _STAGE2_ROUND_CAP:
            break
        subset = np.sort(rng.choice(a.size, size=max(1, a.size // 2), replace=False))
        label = f"s2.r{round_i}"
        if chan.compare(a[subset], b[subset], label):
            clean += 1
            a = np.delete(a, subset[-1])
            b = np.delete(b, subset[-1])
        else:
            clean = 0
            err, extra = _bisect_error(a, b, subset, chan, label)
            corrected += 1
            drop = [err] + extra
            a = np.delete(a, drop)
            b = np.delete(b, drop)

    return ReconcileResult(a, b, chan.leaked, corrected)


# --- privacy amplification ---------------------------------------------------

def leak_budget(error_rate: float, n: int, reconciliation_leak: int) -> int:
    """Adversary-information budget t = leak + ceil(2*n*R), clamped below n.

    The 2*n*R term is a conservative allowance for what intercept-style
    attacks learn from the bits behind the observed error rate; the clamp
    keeps privacy amplification well defined and is reported when it bites.
    """
    if not 0.0 <= error_rate < 0.5:
        raise ValueError(f"error_rate must be in [0, 0.5), got {error_rate}")
    if n < 0 or reconciliation_leak < 0:
        raise ValueError("n and reconciliation_leak must be >= 0")
    t = reconciliation_leak + math.ceil(2.0 * n * error_rate)
    if n == 0:
        return 0
    return min(t, n - 1)


def privacy_amplify(key: KeyMaterial, t: int, s: int, seed: ToeplitzSeed) -> KeyMaterial:
    """Compress the reconciled key to r = n - t - s bits via the Toeplitz hash."""
    n = len(key)
    if t + s >= n:
        raise BudgetExceeded(f"t + s = {t + s} >= key length {n}")
    r = n - t - s
    out = toeplitz_hash(key.bits, seed, r)
    return key.derive(out, "final")
