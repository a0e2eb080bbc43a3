import logging

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from qrsim.config_io import (
    ConfigError,
    ParamSet,
    parse_params,
    parse_topology,
    serialize_params,
    serialize_topology,
)
from qrsim.experiments import linear_chain

TWO_MIM = """
# qrsim-topology v1
node A EndNode
node B Repeater
node C EndNode
link A B distance=1
link B C distance=1
"""


def test_two_mim_links_give_five_nodes():
    topo = parse_topology(TWO_MIM)
    assert len(topo.nodes) == 5
    assert sorted(n for n, s in topo.nodes.items() if s.kind == "BSA") == ["A-B.bsa", "B-C.bsa"]
    assert topo.end_nodes == ["A", "C"]
    assert topo.repeater_count == 1


def test_unknown_node_reports_line_number():
    with pytest.raises(ConfigError, match=r"line 3: .*'Q'"):
        parse_topology("node A EndNode\nnode B EndNode\nlink A Q distance=1\n")


def test_duplicate_node_name():
    with pytest.raises(ConfigError, match="line 2: duplicate"):
        parse_topology("node A EndNode\nnode A Repeater\n")


def test_negative_distance():
    with pytest.raises(ConfigError, match="negative distance"):
        parse_topology("node A EndNode\nnode B EndNode\nlink A B distance=-1\n")


@pytest.mark.parametrize("text,fragment", [
    ("node A Teleporter", "unknown node kind"),
    ("node A EndNode qnic_size=0", "at least 1"),
    ("node A EndNode\nnode B EndNode\nlink A B", "distance"),
    ("node A EndNode\nnode B EndNode\nlink A B distance=1 arch=XYZ", "arch"),
    ("node A EndNode\nnode B EndNode\nlink A A distance=1", "differ"),
    ("node A EndNode\nnode B EndNode\nlink A B distance=abc", "number"),
    ("node A EndNode\nnode B EndNode\nlink A B distance=1 cost=0", "cost"),
    ("edge A B", "unknown declaration"),
])
def test_malformed_topology(text, fragment):
    with pytest.raises(ConfigError, match=fragment):
        parse_topology(text)


def test_disconnected_topology_warns(caplog):
    with caplog.at_level(logging.WARNING):
        parse_topology("node A EndNode\nnode B EndNode\n")
    assert "not connected" in caplog.text


def test_seven_repeater_chain_qubit_count():
    topo = linear_chain(7, qnic_size=100)
    assert topo.repeater_count == 7
    assert len(topo.links) == 8
    assert topo.total_qubits() == 1600


def test_mm_link_hosts_analyzer_at_b():
    topo = parse_topology("node A EndNode\nnode B EndNode\nlink A B distance=2 arch=MM\n")
    link = topo.links[0]
    assert link.bsa is None
    assert link.bsa_host == "B"
    assert link.segments == (2.0, 0.0)


def test_declared_bsa_node():
    topo = parse_topology("node A EndNode\nnode B EndNode\nnode M BSA\nlink A B distance=2 bsa=M\n")
    assert topo.links[0].bsa == "M"
    assert topo.links[0].segments == (1.0, 1.0)


names = st.lists(st.from_regex(r"[A-Za-z][A-Za-z0-9_]{0,6}", fullmatch=True), min_size=2, max_size=6,
                 unique=True)


@st.composite
def topologies(draw):
    ns = draw(names)
    lines = [f"node {n} {draw(st.sampled_from(['EndNode', 'Repeater', 'Router']))} "
             f"qnic_size={draw(st.integers(1, 500))}" for n in ns]
    for a, b in zip(ns, ns[1:]):
        dist = draw(st.floats(0, 1000, allow_nan=False).map(lambda x: round(x, 3)))
        arch = draw(st.sampled_from(["MIM", "MM"]))
        cost = draw(st.floats(0.1, 10).map(lambda x: round(x, 2)))
        lines.append(f"link {a} {b} distance={dist} arch={arch} cost={cost}")
    return parse_topology("\n".join(lines))


@given(topologies())
@settings(max_examples=60, deadline=None)
def test_topology_round_trip(topo):
    again = parse_topology(serialize_topology(topo))
    assert again == topo


def test_emission_probability_parsed():
    assert parse_params("emission_success_probability = 0.8\n").emission_success_probability == 0.8


def test_empty_params_give_defaults():
    assert parse_params("") == ParamSet()
    assert ParamSet().seed == 1


def test_out_of_range_measurement_error():
    with pytest.raises(ConfigError, match="measurement_error_rate"):
        parse_params("Measurement_error_rate = 1.5\n")


def test_rates_summing_over_one_rejected():
    with pytest.raises(ConfigError, match="memory"):
        parse_params("memory_x_error_rate = 0.6\nmemory_z_error_rate = 0.6\n")


@pytest.mark.parametrize("line,field,value", [
    ("Measurement_error_rate = 0.03", "measurement_error_rate", 0.03),
    ("TrafficPattern = 2", "traffic_pattern", "all-to-random"),
    ("TrafficPattern = 1", "traffic_pattern", "single-random"),
    ("distant_measure_count = 7000", "measurement_count", 7000),
    ("buffers = 40", "qnic_size", 40),
    ("sim-time-limit = 5s", "sim_time_limit", 5.0),
    ('swap_policy = "swap-once-ready"', "swap_policy", "swap-once-ready"),
])
def test_aliases_and_codes(line, field, value):
    assert getattr(parse_params(line), field) == value


def test_unknown_key_warns(caplog):
    with caplog.at_level(logging.WARNING):
        p = parse_params("frobnication = 3\n")
    assert p == ParamSet()
    assert "frobnication" in caplog.text


@pytest.mark.parametrize("text", [
    "swap_policy = sometimes",
    "purification_type = Y",
    "measurement_count = 0",
    "link_purification_rounds = -1",
    "emission_interval = 0",
    "measurement_count = many",
    "just words",
])
def test_invalid_params(text):
    with pytest.raises(ConfigError):
        parse_params(text)


def test_measurement_error_split_evenly():
    p = ParamSet(measurement_error_rate=0.03)
    assert p.measurement_pauli() == pytest.approx((0.01, 0.01, 0.01))
    q = ParamSet(measurement_error_rate=0.03, measurement_z_error_rate=0.0)
    assert q.measurement_pauli() == pytest.approx((0.01, 0.01, 0.0))


probs = st.floats(0, 0.3, allow_nan=False)


@given(x=probs, z=probs, loss=probs, count=st.integers(1, 10**6), seed=st.integers(0, 2**31),
       policy=st.sampled_from(["binary-tree", "swap-once-ready"]),
       ptype=st.sampled_from(["X", "Z", "XZ"]), size=st.none() | st.integers(1, 1000))
@settings(max_examples=80, deadline=None)
def test_params_round_trip(x, z, loss, count, seed, policy, ptype, size):
    p = ParamSet(channel_x_error_rate=x, channel_z_error_rate=z, channel_loss_rate=loss,
                 measurement_count=count, seed=seed, swap_policy=policy, purification_type=ptype,
                 qnic_size=size, initiator="A")
    assert parse_params(serialize_params(p)) == p
