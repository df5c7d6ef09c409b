"""Correlation estimation and the CHSH eavesdropping gate."""
import math

import numpy as np
import pytest

from qkdauth.bell import (
    ALICE_ANGLES,
    BOB_ANGLES,
    CHSH_PAIRS,
    PairRecord,
    chsh_s,
    correlation_coefficient,
    correlation_from_values,
    detect_eavesdropping,
    estimate_bell,
)
from qkdauth.errors import EmptyRecords, InvalidThreshold, MissingPair
from qkdauth.quantum import MeasurementDirection, collapse_angle, plus_probability

SQRT2 = math.sqrt(2)


def _pair_record(a, b, va, vb):
    return PairRecord(MeasurementDirection(a), MeasurementDirection(b), va, vb)


def sample_singlet_values(a, b, n, rng):
    """Monte Carlo singlet pairs at fixed directions (engine formulas)."""
    a_vals = np.where(rng.random(n) < 0.5, 1, -1)
    fly = collapse_angle(np.full(n, a, dtype=float), -a_vals)
    p = plus_probability(b, fly)
    b_vals = np.where(rng.random(n) < p, 1, -1)
    return a_vals, b_vals


class TestCorrelationCoefficient:
    def test_perfect_anticorrelation(self):
        records = [_pair_record(0.0, 0.0, +1, -1) for _ in range(10)]
        assert correlation_coefficient(records) == -1.0

    def test_even_split_is_zero(self):
        records = [
            _pair_record(0.0, 0.0, va, vb)
            for va in (+1, -1)
            for vb in (+1, -1)
        ]
        assert correlation_coefficient(records) == 0.0

    def test_empty_records(self):
        with pytest.raises(EmptyRecords):
            correlation_coefficient([])
        with pytest.raises(EmptyRecords):
            correlation_from_values(np.array([]), np.array([]))

    def test_singlet_law_minus_cosine(self):
        rng = np.random.default_rng(101)
        for delta in (0.0, math.pi / 4, math.pi / 2, 2.0):
            a_vals, b_vals = sample_singlet_values(0.0, delta, 100_000, rng)
            e = correlation_from_values(a_vals.astype(float), b_vals.astype(float))
            assert e == pytest.approx(-math.cos(delta), abs=0.03)

    def test_bounds_and_permutation_invariance(self):
        rng = np.random.default_rng(5)
        records = [
            _pair_record(0.0, 1.0, int(rng.choice([1, -1])), int(rng.choice([1, -1])))
            for _ in range(500)
        ]
        e = correlation_coefficient(records)
        assert -1.0 <= e <= 1.0
        shuffled = list(records)
        rng.shuffle(shuffled)
        assert correlation_coefficient(shuffled) == e


class TestChshS:
    def test_exact_singlet_values_reach_quantum_bound(self):
        e_values = {
            pair: -math.cos(pair[0] - pair[1]) for pair in CHSH_PAIRS
        }
        assert chsh_s(e_values) == pytest.approx(-2 * SQRT2, abs=1e-12)

    def test_all_zero(self):
        assert chsh_s({pair: 0.0 for pair in CHSH_PAIRS}) == 0.0

    def test_missing_pair(self):
        partial = {pair: -0.7 for pair in CHSH_PAIRS[:3]}
        with pytest.raises(MissingPair):
            chsh_s(partial)

    def test_flipping_bob_negates_s(self):
        rng = np.random.default_rng(7)
        e_values = {pair: float(rng.uniform(-1, 1)) for pair in CHSH_PAIRS}
        flipped = {pair: -e for pair, e in e_values.items()}
        assert chsh_s(flipped) == pytest.approx(-chsh_s(e_values))

    def test_estimate_bell_groups_records(self):
        rng = np.random.default_rng(11)
        records = []
        for pair in CHSH_PAIRS:
            a_vals, b_vals = sample_singlet_values(pair[0], pair[1], 4000, rng)
            records.extend(
                _pair_record(pair[0], pair[1], int(va), int(vb))
                for va, vb in zip(a_vals, b_vals)
            )
        est = estimate_bell(records)
        assert est.s == pytest.approx(-2 * SQRT2, abs=0.1)
        assert all(est.counts[pair] == 4000 for pair in CHSH_PAIRS)

    def test_intercept_resend_lands_in_classical_band(self):
        # Eve measures each flying qubit along an independent uniform angle
        rng = np.random.default_rng(13)
        n = 50_000
        e_values = {}
        for pair in CHSH_PAIRS:
            a_vals = np.where(rng.random(n) < 0.5, 1, -1)
            fly = collapse_angle(np.full(n, pair[0]), -a_vals)
            eve_angles = rng.random(n) * math.pi
            p_eve = plus_probability(eve_angles, fly)
            eve_vals = np.where(rng.random(n) < p_eve, 1, -1)
            forwarded = collapse_angle(eve_angles, eve_vals)
            p_bob = plus_probability(pair[1], forwarded)
            b_vals = np.where(rng.random(n) < p_bob, 1, -1)
            e_values[pair] = correlation_from_values(
                a_vals.astype(float), b_vals.astype(float)
            )
        s = chsh_s(e_values)
        assert abs(s) <= SQRT2 + 0.05

    def test_convergence_error_shrinks_with_sample_size(self):
        # mean |S - (-2*sqrt(2))| over 20 seeds must decrease as N grows
        sizes = (1000, 10_000, 100_000)
        mean_errors = []
        for n in sizes:
            errors = []
            for seed in range(20):
                rng = np.random.default_rng(1000 + seed)
                e_values = {}
                for pair in CHSH_PAIRS:
                    a_vals, b_vals = sample_singlet_values(pair[0], pair[1], n // 4, rng)
                    e_values[pair] = correlation_from_values(
                        a_vals.astype(float), b_vals.astype(float)
                    )
                errors.append(abs(chsh_s(e_values) + 2 * SQRT2))
            mean_errors.append(np.mean(errors))
        assert mean_errors[0] > mean_errors[1] > mean_errors[2]


class TestDetectEavesdropping:
    def test_quantum_value_is_clean(self):
        assert detect_eavesdropping(-2.8, 2.0) == "clean"

    def test_classical_value_is_compromised(self):
        assert detect_eavesdropping(-1.3, 2.0) == "compromised"

    def test_boundary_excluded(self):
        assert detect_eavesdropping(-2.0, 2.0) == "compromised"

    def test_positive_s_symmetric(self):
        assert detect_eavesdropping(2.5, 2.0) == "clean"

    @pytest.mark.parametrize("threshold", [1.0, SQRT2, 2 * SQRT2, 3.0])
    def test_invalid_threshold(self, threshold):
        with pytest.raises(InvalidThreshold):
            detect_eavesdropping(-2.5, threshold)


def test_direction_sets_are_the_e91_construction():
    assert ALICE_ANGLES == (0.0, math.pi / 4, math.pi / 2)
    assert BOB_ANGLES == (math.pi / 4, math.pi / 2, 3 * math.pi / 4)
    # key pairs are the equal-angle combinations, excluded from S
    for pair in CHSH_PAIRS:
        assert pair[0] != pair[1]
