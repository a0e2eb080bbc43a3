import csv
import math
import random
from collections import Counter

import pytest

import oracles
from qrsim.error_basis import BELL_LABELS, PairError
from qrsim.sim_kernel import KernelStats
from qrsim.tomography_stats import (
    BASES,
    COMBOS,
    RunResult,
    TomographyError,
    TomographyRecord,
    analytic_oracle,
    correlator,
    estimate_fidelity,
    fidelity_standard_error,
    ideal_outcome,
    local_outcome,
    purification_oracle,
    reconstruct_density_matrix,
    write_results,
)

ALL_BITS = list(BELL_LABELS)


def sample_record(pair: PairError, ba: str, bb: str, rng, meas_error=0.0) -> TomographyRecord:
    a_ideal = ideal_outcome(pair, ba, rng)
    a = -a_ideal if meas_error and rng.random() < meas_error else a_ideal
    b = local_outcome(pair, bb, 1, rng, meas_error, partner=(ba, a_ideal))
    return TomographyRecord(ba, bb, a, b)


def records_from_mixture(weights, n, rng, meas_error=0.0):
    labels = list(weights)
    cum = [weights[k] for k in labels]
    out = []
    for i in range(n):
        bits = rng.choices(labels, cum)[0]
        ba, bb = COMBOS[i % 9]
        out.append(sample_record(PairError(*bits), ba, bb, rng, meas_error))
    return out


@pytest.mark.parametrize("bits", ALL_BITS)
@pytest.mark.parametrize("basis", BASES)
def test_same_basis_correlator_matches_state_vector(bits, basis):
    assert correlator(PairError(*bits), basis) == round(oracles.bell_correlator(bits, basis, basis))


@pytest.mark.parametrize("bits", ALL_BITS)
def test_sampled_correlations_match_oracle(bits, rng):
    pair = PairError(*bits)
    for ba, bb in COMBOS:
        n = 3000
        total = 0
        for _ in range(n):
            r = sample_record(pair, ba, bb, rng)
            total += r.outcome_a * r.outcome_b
        expected = oracles.bell_correlator(bits, ba, bb)
        # exact correlations for same bases, zero within 3 sigma otherwise
        assert abs(total / n - expected) <= 3 / math.sqrt(n) + 1e-12


def test_phi_plus_zz_outcomes_equal(rng):
    for _ in range(200):
        r = sample_record(PairError(), "Z", "Z", rng)
        assert r.outcome_a == r.outcome_b


def test_psi_plus_zz_outcomes_opposite(rng):
    for _ in range(200):
        r = sample_record(PairError(1, 0), "Z", "Z", rng)
        assert r.outcome_a == -r.outcome_b


def test_mismatched_bases_uncorrelated(rng):
    n = 10_000
    s = sum(r.outcome_a * r.outcome_b for r in (sample_record(PairError(), "X", "Z", rng) for _ in range(n)))
    assert abs(s / n) <= 3 / math.sqrt(n)


def test_decohered_pair_gives_uniform_outcomes(rng):
    pair = PairError(decohered=True)
    n = 10_000
    s = sum(r.outcome_a * r.outcome_b for r in (sample_record(pair, "Z", "Z", rng) for _ in range(n)))
    assert abs(s / n) <= 3 / math.sqrt(n)


def test_lost_pair_cannot_be_measured(rng):
    with pytest.raises(TomographyError):
        local_outcome(PairError(lost=True), "Z", 0, rng)


def test_measurement_error_flips_outcome(rng):
    n = 20_000
    flips = sum(local_outcome(PairError(), "Z", 0, rng, 0.1, partner=("Z", 1)) == -1 for _ in range(n))
    assert abs(flips / n - 0.1) <= 3 * math.sqrt(0.09 / n)


def test_fidelity_of_pure_phi_plus_is_one(rng):
    recs = records_from_mixture({(0, 0): 1.0}, 900, rng)
    assert estimate_fidelity(recs) == 1.0


def test_fidelity_of_mixture_converges(rng):
    # 90% Phi+ / 10% Psi+: (1 + 1 + 0.8 + 0.8) / 4
    weights = {(0, 0): 0.9, (1, 0): 0.1}
    assert oracles.mixture_fidelity(weights) == pytest.approx(0.9)
    recs = records_from_mixture(weights, 90_000, rng)
    assert abs(estimate_fidelity(recs) - 0.9) <= 3 * fidelity_standard_error(recs)


def test_uniform_mixture_gives_quarter(rng):
    weights = {b: 0.25 for b in ALL_BITS}
    recs = records_from_mixture(weights, 90_000, rng)
    assert abs(estimate_fidelity(recs) - 0.25) <= 3 * fidelity_standard_error(recs)


def test_fidelity_is_clamped():
    recs = [TomographyRecord("X", "X", 1, 1), TomographyRecord("Y", "Y", 1, -1), TomographyRecord("Z", "Z", 1, 1)]
    assert estimate_fidelity(recs) == 1.0


def test_missing_basis_is_named():
    recs = [TomographyRecord("X", "X", 1, 1), TomographyRecord("Z", "Z", 1, 1)]
    with pytest.raises(TomographyError, match="YY"):
        estimate_fidelity(recs)


@pytest.mark.parametrize("n", [1_000, 10_000])
def test_standard_error_shrinks_like_root_n(n):
    weights = {(0, 0): 0.8, (0, 1): 0.2}
    target = oracles.mixture_fidelity(weights)
    estimates = []
    for seed in range(40):
        recs = records_from_mixture(weights, n, random.Random(seed))
        estimates.append(estimate_fidelity(recs))
        se = fidelity_standard_error(recs)
    mean = sum(estimates) / len(estimates)
    spread = math.sqrt(sum((e - mean) ** 2 for e in estimates) / (len(estimates) - 1))
    assert abs(mean - target) <= 3 * spread / math.sqrt(len(estimates))
    # the analytic standard error tracks the observed spread
    assert 0.6 < se / spread < 1.6


def test_round_robin_covers_all_combinations():
    counts = Counter(COMBOS[i % 9] for i in range(7000))
    assert len(counts) == 9
    assert max(counts.values()) - min(counts.values()) <= 1


def test_linear_inversion_recovers_bell_state(rng):
    import numpy as np

    recs = records_from_mixture({(0, 0): 1.0}, 9000, rng)
    rho = reconstruct_density_matrix(recs)
    phi = np.array([1, 0, 0, 1]) / math.sqrt(2)
    assert float(np.real(phi @ rho @ phi)) == pytest.approx(1.0, abs=0.03)


def test_linear_inversion_needs_every_combination():
    with pytest.raises(TomographyError):
        reconstruct_density_matrix([TomographyRecord("X", "X", 1, 1)])


@pytest.mark.parametrize("px,d,p_clean,f_ac", [
    (0.0, 7, 1.0, 1.0),
    (0.02, 1, 0.98, 0.9608),
    (0.02, 10, 0.832417, 0.7210),
])
def test_analytic_oracle_examples(px, d, p_clean, f_ac):
    p, f = analytic_oracle(px, d)
    assert p == pytest.approx(p_clean, abs=1e-6)
    assert f == pytest.approx(f_ac, abs=1e-4)


def test_analytic_oracle_rejects_bad_inputs():
    with pytest.raises(ValueError):
        analytic_oracle(0.6, 1)
    with pytest.raises(ValueError):
        analytic_oracle(0.1, -1)


@pytest.mark.parametrize("q", [0.05, 0.1, 0.2])
def test_purification_closed_form_matches_circuit_oracle(q):
    assert purification_oracle(q) == pytest.approx(oracles.purification_mixture_oracle(q))


def _run(records, target, completed=True):
    r = RunResult(0, "A", "C", target, started_at=0.0)
    r.records = records
    r.completed = completed
    return r


def test_write_results_summary_and_csv(tmp_path, rng):
    recs = records_from_mixture({(0, 0): 1.0}, 90, rng)
    recs = [TomographyRecord(r.basis_a, r.basis_b, r.outcome_a, r.outcome_b, (i + 1) * 1e-4)
            for i, r in enumerate(recs)]
    runs = [_run(recs, 90), _run(recs[:9], 90, completed=False)]
    runs[1].connection_id = 1
    stats = KernelStats(events_processed=42, final_time=1.0, wall_clock_seconds=0.5)
    write_results(runs, tmp_path, 42, stats)
    summary = (tmp_path / "summary.txt").read_text()
    for key in ("fidelity = ", "bellpair_per_sec = ", "tomography_time = ", "tomography_measurements = 90"):
        assert key in summary
    assert "partial: 9 of 90" in summary
    rows = list(csv.DictReader((tmp_path / "results.csv").open()))
    assert len(rows) == 2
    assert rows[0]["fidelity"] == "1.0"
    assert rows[0]["events_processed"] == "42"
    assert rows[1]["completed"] == "0"
    ks = list(csv.DictReader((tmp_path / "kernel_stats.csv").open()))
    assert ks[0]["events_per_sec"] == "84.0"


def test_bellpair_rate_uses_tomography_time():
    recs = [TomographyRecord("Z", "Z", 1, 1, t) for t in (0.5, 1.0, 2.0)]
    r = _run(recs, 3)
    assert r.tomography_time == 2.0
    assert r.bellpair_per_sec == 1.5


def test_write_results_unwritable_path(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    with pytest.raises(OSError, match="cannot write results"):
        write_results([], blocker / "sub")
