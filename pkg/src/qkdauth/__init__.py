"""Deterministic simulator for EPR-based QKD with mutual identity verification."""

from .adversary import AttackKind, AttackStrategy, BasisPolicy, EveView, run_mitm
from .bell import (
    BellEstimate,
    PairRecord,
    chsh_s,
    correlation_coefficient,
    detect_eavesdropping,
)
from .channel import (
    ClassicalMessage,
    MessageTag,
    QuantumChannelConfig,
    RngStreams,
    Transcript,
    rng_stream,
    transmit_batch,
    transmit_qubit,
)
from .postprocessing import (
    KeyMaterial,
    ReconciliationParams,
    ToeplitzSeed,
    estimate_error_rate,
    leak_budget,
    privacy_amplify,
    reconcile,
    sift,
    toeplitz_hash,
)
from .protocols import (
    AuthInitConfig,
    AuthKey,
    AuthSessionConfig,
    BasisSequence,
    Bb84Config,
    CenterState,
    EprConfig,
    MitmConfig,
    PipelineParams,
    key_to_bases,
    otp_decrypt,
    otp_encrypt,
    run_auth_init,
    run_auth_session,
    run_bb84,
    run_epr,
    verify_peer,
)
from .quantum import (
    MeasurementDirection,
    MeasurementOutcome,
    StateVector,
    TotalSpinResult,
    born_probability,
    make_singlet,
    measure_spin,
    measure_total_spin,
    tensor,
)
from .reports import SessionReport

__version__ = "0.1.0"
