import math

import pytest

from qrsim.config_io import ParamSet, parse_topology
from qrsim.experiments import linear_chain, two_hop
from qrsim.sim_kernel import TraceRecorder
from qrsim.simulation import Network, simulate
from qrsim.tomography_stats import analytic_oracle, fidelity_standard_error, write_results


def _zz_disagreements(records):
    zz = [r for r in records if r.basis_a == r.basis_b == "Z"]
    return sum(r.outcome_a != r.outcome_b for r in zz), len(zz)


def test_two_hop_statistics_match_analytic_flip_probability():
    px, d = 0.02, 4
    params = ParamSet(channel_x_error_rate=px, measurement_count=4500, initiator="A", responder="C")
    results, _, net = simulate(two_hop(d), params, seed=11)
    run = results[0]
    assert run.completed
    _, f_ac = analytic_oracle(px, d)
    # X flips never disturb X readouts
    xx = [r for r in run.records if r.basis_a == r.basis_b == "X"]
    assert xx and all(r.outcome_a == r.outcome_b for r in xx)
    # Z readouts disagree exactly when a net flip survived
    k, n = _zz_disagreements(run.records)
    assert abs(k / n - (1 - f_ac)) <= 3 * math.sqrt(f_ac * (1 - f_ac) / n)
    assert abs(run.fidelity - f_ac) <= 3 * fidelity_standard_error(run.records)
    assert all(net.audit().values())


def test_swap_once_ready_matches_analytic_curve():
    px, d = 0.02, 3
    params = ParamSet(channel_x_error_rate=px, measurement_count=4500, swap_policy="swap-once-ready",
                      initiator="A", responder="C")
    results, _, net = simulate(two_hop(d), params, seed=5)
    _, f_ac = analytic_oracle(px, d)
    assert abs(results[0].fidelity - f_ac) <= 3 * fidelity_standard_error(results[0].records)
    assert all(net.audit().values())


def test_longer_chain_composes_link_flips():
    # four MM links of 1 km: the net X flip is the parity of four independent flips
    px = 0.02
    q = 1 - analytic_oracle(px, 1)[0]
    p = (1 - (1 - 2 * q) ** 4) / 2
    params = ParamSet(channel_x_error_rate=px, measurement_count=4500, initiator="A", responder="Z")
    results, _, net = simulate(linear_chain(3, arch="MM"), params, seed=2)
    k, n = _zz_disagreements(results[0].records)
    assert abs(k / n - p) <= 3 * math.sqrt(p * (1 - p) / n)
    assert all(net.audit().values())


@pytest.mark.parametrize("policy", ["binary-tree", "swap-once-ready"])
def test_pair_conservation_with_purification_and_loss(policy):
    params = ParamSet(channel_x_error_rate=0.01, channel_loss_rate=0.02, memory_z_error_rate=1e-5,
                      emission_success_probability=0.9, bsa_success_probability=0.5,
                      link_purification_rounds=1, e2e_purification_rounds=1, purification_type="XZ",
                      measurement_count=180, swap_policy=policy, initiator="A", responder="Z")
    results, _, net = simulate(linear_chain(3, qnic_size=20), params, seed=9)
    assert results[0].completed
    assert results[0].measurement_count == 180
    assert net.audit() == {"pairs": True, "qubits": True}
    for node in net.nodes.values():
        assert node.engine.held() == 0
        assert all(q.reserved_by is None for q in node.qnics)


def test_same_seed_gives_identical_trace_and_results(tmp_path):
    params = ParamSet(channel_x_error_rate=0.01, memory_x_error_rate=1e-5, measurement_count=90,
                      e2e_purification_rounds=1, initiator="A", responder="Z")
    outputs = []
    for i in range(2):
        trace = TraceRecorder()
        results, stats, _ = simulate(linear_chain(2, qnic_size=10), params, seed=4, trace=trace)
        out = tmp_path / str(i)
        write_results(results, out, stats.events_processed, stats)
        outputs.append((trace.text(), (out / "results.csv").read_bytes(), (out / "summary.txt").read_bytes()))
    assert outputs[0] == outputs[1]
    assert len(outputs[0][0]) > 0


def test_different_seeds_differ():
    params = ParamSet(channel_x_error_rate=0.05, measurement_count=90, initiator="A", responder="Z")
    a = simulate(linear_chain(1, qnic_size=10), params, seed=1)[0][0].records
    b = simulate(linear_chain(1, qnic_size=10), params, seed=2)[0][0].records
    assert a != b


def test_time_limit_yields_partial_result(tmp_path):
    params = ParamSet(measurement_count=10**6, sim_time_limit=2e-3, initiator="A", responder="Z")
    results, stats, net = simulate(linear_chain(1, qnic_size=10), params)
    run = results[0]
    assert not run.completed
    assert 0 < run.measurement_count < 10**6
    assert stats.stopped_by == "time-limit"
    write_results(results, tmp_path, stats.events_processed, stats)
    assert "partial" in (tmp_path / "summary.txt").read_text()


def test_event_limit_stops_the_run():
    params = ParamSet(measurement_count=1000, initiator="A", responder="Z")
    _, stats, _ = simulate(linear_chain(1, qnic_size=10), params, max_events=50)
    assert stats.events_processed == 50
    assert stats.stopped_by == "event-limit"


STAR = """
node H Router qnic_size=30
node A EndNode qnic_size=10
node B EndNode qnic_size=10
node C EndNode qnic_size=10
link A H distance=1
link B H distance=1
link C H distance=1
"""


def test_all_to_random_traffic_resolves_contention():
    params = ParamSet(traffic_pattern="all-to-random", measurement_count=45)
    results, _, net = simulate(parse_topology(STAR), params, seed=3)
    assert len(results) == 3
    assert all(r.completed for r in results)
    assert all(net.audit().values())


def test_unreachable_responder_reported():
    topo = parse_topology("node A EndNode\nnode B EndNode\n")
    results, _, _ = simulate(topo, ParamSet(initiator="A", responder="B"))
    assert not results[0].completed
    assert "no route" in results[0].error


def test_traffic_rejects_unknown_initiator():
    net = Network(linear_chain(1), ParamSet(initiator="R1"))
    with pytest.raises(ValueError, match="not an end node"):
        net.traffic()


def test_link_characterization_reported():
    params = ParamSet(channel_x_error_rate=0.02, link_tomography_pairs=900, measurement_count=9,
                      initiator="A", responder="Z")
    results, _, _ = simulate(linear_chain(1, arch="MM"), params, seed=1)
    stats = results[0].link_stats
    assert [s.link for s in stats] == ["A-R1", "R1-Z"]
    p_clean, _ = analytic_oracle(0.02, 1)
    for s in stats:
        assert s.pairs == 900
        assert abs(s.fidelity - p_clean) < 0.05
