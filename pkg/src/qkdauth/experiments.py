"""Batch experiment runner: validated configs in, per-run reports plus an
aggregate summary out.

Repetition i runs with seed ``seed + i``; every report embeds the resolved
configuration and a git-style content hash of it, so a (config, seed) pair
reproduces byte-identical output.  Optional acceptance bounds turn an
experiment into a self-checking artifact (the CLI exits 3 when one misses).
"""
from __future__ import annotations

import csv
import hashlib
import io
import json
import math
from typing import Literal, Optional

import numpy as np
from pydantic import BaseModel, Field, ValidationError, field_validator

from . import bell
from .adversary import AttackKind, AttackStrategy, BasisPolicy
from .channel import QuantumChannelConfig, rng_stream
from .errors import AbortSession, ConfigInvalid
from .postprocessing import ReconciliationParams
from .protocols import (
    AuthInitConfig,
    AuthSessionConfig,
    Bb84Config,
    CenterState,
    EprConfig,
    MitmConfig,
    PipelineParams,
    run_auth_init,
    run_auth_session,
    run_bb84,
    run_epr,
    run_mitm_session,
)
from .reports import SessionReport

PROTOCOL_MINIMUMS = {
    "bb84": 64,
    "epr": 256,
    "auth_init": 256,
    "auth_session": 256,
    "mitm_demo": 256,
}


class AttackSpec(BaseModel):
    kind: Literal["none", "intercept_resend", "mitm_impersonation"] = "none"
    fraction: float = Field(default=1.0, ge=0.0, le=1.0)
    policy: Literal["random_conjugate", "random_angle"] = "random_conjugate"

    def build(self) -> Optional[AttackStrategy]:
        if self.kind == "none":
            return None
        return AttackStrategy(
            AttackKind(self.kind), fraction=self.fraction,
            policy=BasisPolicy(self.policy),
        )


class ChannelSpec(BaseModel):
    loss_probability: float = Field(default=0.0, ge=0.0, le=1.0)
    depolarize_probability: float = Field(default=0.0, ge=0.0, le=1.0)

    def build(self) -> QuantumChannelConfig:
        return QuantumChannelConfig(self.loss_probability, self.depolarize_probability)


class PipelineSpec(BaseModel):
    r_max: float = Field(default=0.11, gt=0.0, lt=0.5)
    sample_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)
    s: int = Field(default=16, ge=0)
    stage1_passes: int = Field(default=2, ge=1)
    stage2_rounds: int = Field(default=20, ge=1)

    def build(self) -> PipelineParams:
        return PipelineParams(
            r_max=self.r_max,
            sample_fraction=self.sample_fraction,
            s=self.s,
            reconciliation=ReconciliationParams(
                passes=self.stage1_passes, stage2_rounds=self.stage2_rounds
            ),
        )


class AuthSpec(BaseModel):
    init_rounds: int = Field(default=1024, ge=256)
    check_rounds: int = Field(default=64, ge=1)
    auth_fraction: float = Field(default=0.25, gt=0.0, lt=1.0)
    min_auth_rounds: int = Field(default=64, ge=1)
    convention: Literal["stated", "example"] = "stated"
    verify_tolerance: float = Field(default=0.0, ge=0.0, lt=1.0)


class AcceptanceCheck(BaseModel):
    metric: str
    min: Optional[float] = None
    max: Optional[float] = None


class OutputSpec(BaseModel):
    path: str = "reports"
    format: Literal["json", "csv", "both"] = "json"


class ExperimentConfig(BaseModel):
    """One declarative experiment: protocol, sizes, seed, attack, pipeline."""

    protocol: Literal["bb84", "epr", "auth_init", "auth_session", "mitm_demo"]
    num_rounds: int
    seed: int = 0
    repetitions: int = Field(default=1, ge=1)
    attack: AttackSpec = Field(default_factory=AttackSpec)
    channel: ChannelSpec = Field(default_factory=ChannelSpec)
    pipeline: PipelineSpec = Field(default_factory=PipelineSpec)
    auth: AuthSpec = Field(default_factory=AuthSpec)
    bell_threshold: float = Field(default=2.0)
    bell_rounds: Optional[int] = None
    mitm_target: Literal["epr_plain", "auth_session"] = "epr_plain"
    include_transcript: bool = False
    output: OutputSpec = Field(default_factory=OutputSpec)
    acceptance: list[AcceptanceCheck] = Field(default_factory=list)

    @field_validator("seed")
    @classmethod
    def _seed_64bit(cls, v):
        if not -(2**63) <= v < 2**64:
            raise ValueError("seed must fit in 64 bits")
        return v

    def model_post_init(self, _ctx):
        minimum = PROTOCOL_MINIMUMS[self.protocol]
        if self.num_rounds < minimum:
            raise ValueError(
                f"{self.protocol} needs num_rounds >= {minimum}, got {self.num_rounds}"
            )
        if not bell.SQRT2 < self.bell_threshold < 2 * bell.SQRT2:
            raise ValueError("bell_threshold must lie in (sqrt(2), 2*sqrt(2))")


class AggregateStats(BaseModel):
    runs: int
    aborted_runs: int
    abort_rate: float
    qber_mean: Optional[float] = None
    qber_std: Optional[float] = None
    bell_s_mean: Optional[float] = None
    bell_s_std: Optional[float] = None
    abs_bell_s_mean: Optional[float] = None
    alice_verified_rate: Optional[float] = None
    bob_verified_rate: Optional[float] = None
    equal_keys_rate: Optional[float] = None
    final_key_len_mean: Optional[float] = None
    leaked_bits_mean: Optional[float] = None
    kept_fraction_mean: Optional[float] = None
    eve_success_rate: Optional[float] = None
    rejection_rate: Optional[float] = None


class ExperimentBatch(BaseModel):
    config: ExperimentConfig
    config_hash: str
    runs: list[SessionReport]
    aggregate: AggregateStats
    acceptance_passed: Optional[bool] = None
    acceptance_detail: list[dict] = Field(default_factory=list)


def git_blob_hash(content: bytes) -> str:
    """sha1 of the git blob encoding of ``content``."""
    return hashlib.sha1(b"blob %d\0" % len(content) + content).hexdigest()


def config_hash(config: ExperimentConfig) -> str:
    canonical = json.dumps(
        config.model_dump(mode="json"), sort_keys=True, separators=(",", ":")
    ).encode()
    return git_blob_hash(canonical)


def _strip_transcript(report: SessionReport, keep: bool) -> SessionReport:
    if keep:
        return report
    return report.model_copy(update={"transcript": []})


def _aborted_report(protocol, seed, num_rounds, reason) -> SessionReport:
    return SessionReport(
        protocol=protocol, seed=seed, num_rounds=num_rounds,
        aborted=True, abort_reason=reason,
    )


def _run_single(config: ExperimentConfig, seed: int) -> list[SessionReport]:
    attack = config.attack.build()
    channel = config.channel.build()
    pipeline = config.pipeline.build()

    if config.protocol == "bb84":
        return [run_bb84(Bb84Config(config.num_rounds, seed, pipeline), channel, attack)]

    if config.protocol == "epr":
        cfg = EprConfig(
            config.num_rounds, seed, pipeline,
            bell_threshold=config.bell_threshold, bell_rounds=config.bell_rounds,
        )
        return [run_epr(cfg, channel, attack)]

    if config.protocol == "auth_init":
        center = CenterState()
        center.register("alice")
        center.register("bob")
        cfg = AuthInitConfig(
            config.num_rounds, seed, check_rounds=config.auth.check_rounds,
            check_tolerance=config.auth.verify_tolerance, pipeline=pipeline,
        )
        attacked = QuantumChannelConfig(
            channel.loss_probability, channel.depolarize_probability, attack
        )
        try:
            return [run_auth_init(cfg, center, attacked, channel).report]
        except AbortSession as abort:
            return [_aborted_report("auth_init", seed, config.num_rounds, abort.reason)]

    if config.protocol == "auth_session":
        init_seed = int(rng_stream(seed, "auth-init").integers(0, 2**63))
        center = CenterState()
        center.register("alice")
        center.register("bob")
        try:
            init = run_auth_init(
                AuthInitConfig(config.auth.init_rounds, init_seed, pipeline=pipeline),
                center,
            )
        except AbortSession as abort:
            return [_aborted_report("auth_session", seed, config.num_rounds, abort.reason)]
        session_cfg = AuthSessionConfig(
            config.num_rounds, seed,
            auth_fraction=config.auth.auth_fraction,
            min_auth_rounds=config.auth.min_auth_rounds,
            verify_tolerance=config.auth.verify_tolerance,
            bell_threshold=config.bell_threshold,
            convention=config.auth.convention,
            pipeline=pipeline,
        )
        result = run_auth_session(
            session_cfg, init.alice_key, init.bob_key, channel, attack
        )
        return [result.report]

    # mitm_demo: one outcome is a pair of segment reports
    mitm = run_mitm_session(
        MitmConfig(
            target=config.mitm_target, seed=seed, num_rounds=config.num_rounds,
            pipeline=pipeline,
        )
    )
    side_a, side_b = mitm.report_alice_side, mitm.report_bob_side
    if config.mitm_target == "epr_plain":
        recovered = (
            not side_a.aborted and not side_b.aborted
            and mitm.eve_view.k_ae == side_a.final_key_alice
            and mitm.eve_view.k_eb == side_b.final_key_bob
            and len(side_a.final_key_alice) > 0
        )
        rejected = False
    else:
        recovered = False
        rejected = side_a.bob_verified is False or side_b.alice_verified is False
    side_a.stats["eve_success"] = 1.0 if recovered else 0.0
    side_a.stats["rejected"] = 1.0 if rejected else 0.0
    return [side_a, side_b]


def _mean_std(values) -> tuple[Optional[float], Optional[float]]:
    vals = [v for v in values if v is not None]
    if not vals:
        return None, None
    arr = np.asarray(vals, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def aggregate_runs(runs: list[SessionReport]) -> AggregateStats:
    aborted = sum(1 for r in runs if r.aborted)
    qber_mean, qber_std = _mean_std(r.qber for r in runs if not r.aborted)
    s_mean, s_std = _mean_std(r.bell_s for r in runs)
    abs_s_mean, _ = _mean_std(
        abs(r.bell_s) if r.bell_s is not None else None for r in runs
    )
    verified_a = [r.alice_verified for r in runs if r.alice_verified is not None]
    verified_b = [r.bob_verified for r in runs if r.bob_verified is not None]
    complete = [r for r in runs if not r.aborted]
    equal = [
        1.0 if (r.final_key_alice == r.final_key_bob and r.final_key_alice) else 0.0
        for r in complete
    ]
    kept = [r.stats["kept_fraction"] for r in runs if "kept_fraction" in r.stats]
    eve = [r.stats["eve_success"] for r in runs if "eve_success" in r.stats]
    rej = [r.stats["rejected"] for r in runs if "rejected" in r.stats]
    return AggregateStats(
        runs=len(runs),
        aborted_runs=aborted,
        abort_rate=aborted / len(runs) if runs else 0.0,
        qber_mean=qber_mean,
        qber_std=qber_std,
        bell_s_mean=s_mean,
        bell_s_std=s_std,
        abs_bell_s_mean=abs_s_mean,
        alice_verified_rate=float(np.mean(verified_a)) if verified_a else None,
        bob_verified_rate=float(np.mean(verified_b)) if verified_b else None,
        equal_keys_rate=float(np.mean(equal)) if equal else None,
        final_key_len_mean=_mean_std(len(r.final_key_alice) for r in complete)[0],
        leaked_bits_mean=_mean_std(float(r.leaked_bits) for r in runs)[0],
        kept_fraction_mean=float(np.mean(kept)) if kept else None,
        eve_success_rate=float(np.mean(eve)) if eve else None,
        rejection_rate=float(np.mean(rej)) if rej else None,
    )


def check_acceptance(
    aggregate: AggregateStats, checks: list[AcceptanceCheck]
) -> tuple[Optional[bool], list[dict]]:
    if not checks:
        return None, []
    detail, passed = [], True
    values = aggregate.model_dump()
    for check in checks:
        value = values.get(check.metric)
        ok = value is not None
        if ok and check.min is not None:
            ok = value >= check.min
        if ok and check.max is not None:
            ok = value <= check.max
        passed = passed and ok
        detail.append(
            {"metric": check.metric, "value": value, "min": check.min,
             "max": check.max, "passed": ok}
        )
    return passed, detail


def run_experiment(config: ExperimentConfig) -> ExperimentBatch:
    """Execute ``repetitions`` seeded runs and aggregate them."""
    runs: list[SessionReport] = []
    for i in range(config.repetitions):
        for report in _run_single(config, config.seed + i):
            runs.append(_strip_transcript(report, config.include_transcript))
    agg = aggregate_runs(runs)
    passed, detail = check_acceptance(agg, config.acceptance)
    return ExperimentBatch(
        config=config,
        config_hash=config_hash(config),
        runs=runs,
        aggregate=agg,
        acceptance_passed=passed,
        acceptance_detail=detail,
    )


# --- bell-test and attack-demo operations -------------------------------------

class BellTestRequest(BaseModel):
    pairs: int = Field(default=100_000, ge=256)
    seed: int = 0


class BellTestReport(BaseModel):
    pairs: int
    seed: int
    s: float
    deviation_from_quantum: float  # | |S| - 2*sqrt(2) |
    verdict: str
    qber: Optional[float] = None


def run_bell_test(request: BellTestRequest) -> BellTestReport:
    report = run_epr(EprConfig(request.pairs, request.seed))
    s = report.bell_s
    return BellTestReport(
        pairs=request.pairs,
        seed=request.seed,
        s=s,
        deviation_from_quantum=abs(abs(s) - 2.0 * bell.SQRT2),
        verdict="clean" if not report.aborted else report.abort_reason,
        qber=report.qber,
    )


class AttackDemoRequest(BaseModel):
    seed: int = 0
    repetitions: int = Field(default=20, ge=1)
    num_rounds: int = Field(default=1024, ge=256)
    auth_key_length: int = Field(default=128, ge=64)


class AttackDemoRow(BaseModel):
    protocol: str
    runs: int
    eve_key_recovery_rate: float
    rejection_rate: float
    mean_check_bits: float


class AttackDemoReport(BaseModel):
    seed: int
    rows: list[AttackDemoRow]


def run_attack_demo(request: AttackDemoRequest) -> AttackDemoReport:
    """MITM against plain EPR vs the authenticated session, side by side."""
    rows = []
    for target in ("epr_plain", "auth_session"):
        recovered, rejected, checks = [], [], []
        for i in range(request.repetitions):
            outcome = run_mitm_session(
                MitmConfig(
                    target=target, seed=request.seed + i,
                    num_rounds=request.num_rounds,
                    auth_key_length=request.auth_key_length,
                )
            )
            side_a, side_b = outcome.report_alice_side, outcome.report_bob_side
            if target == "epr_plain":
                recovered.append(
                    1.0
                    if (
                        not side_a.aborted and not side_b.aborted
                        and outcome.eve_view.k_ae == side_a.final_key_alice
                        and outcome.eve_view.k_eb == side_b.final_key_bob
                        and len(side_a.final_key_alice) > 0
                    )
                    else 0.0
                )
                rejected.append(0.0)
                checks.append(0.0)
            else:
                recovered.append(0.0)
                rejected.append(
                    1.0
                    if (side_a.bob_verified is False or side_b.alice_verified is False)
                    else 0.0
                )
                checks.append(side_a.stats.get("matching_checks", 0.0))
        rows.append(
            AttackDemoRow(
                protocol=target,
                runs=request.repetitions,
                eve_key_recovery_rate=float(np.mean(recovered)),
                rejection_rate=float(np.mean(rejected)),
                mean_check_bits=float(np.mean(checks)),
            )
        )
    return AttackDemoReport(seed=request.seed, rows=rows)


# --- report files ---------------------------------------------------------------

CSV_COLUMNS = [
    "run_index", "seed", "protocol", "aborted", "abort_reason", "qber", "bell_s",
    "alice_verified", "bob_verified", "final_key_len", "leaked_bits",
]


def batch_to_csv(batch: ExperimentBatch) -> str:
    """One row per run in the fixed column order above."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_COLUMNS)
    for i, r in enumerate(batch.runs):
        writer.writerow([
            i, r.seed, r.protocol, r.aborted, r.abort_reason or "",
            "" if r.qber is None else repr(r.qber),
            "" if r.bell_s is None else repr(r.bell_s),
            "" if r.alice_verified is None else r.alice_verified,
            "" if r.bob_verified is None else r.bob_verified,
            len(r.final_key_alice), r.leaked_bits,
        ])
    return buf.getvalue()


def batch_to_json(batch: ExperimentBatch) -> str:
    return json.dumps(batch.model_dump(mode="json"), indent=2, sort_keys=True) + "\n"


def load_config(data: dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigInvalid(str(exc)) from exc
