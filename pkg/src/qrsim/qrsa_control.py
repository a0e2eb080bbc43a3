"""Node control software: routing, connection setup, RuleSet construction.

Each :class:`QuantumNode` bundles the connection manager (setup, reject,
teardown), the real-time controller (photon trains on its QNICs), the rule
engine and a routing table.  Link characterization happens once at start-up
in :func:`characterize_link`.
"""

from __future__ import annotations

import heapq
import logging
import math
from dataclasses import dataclass

from .backend import K
from .error_basis import CLEAN, PairError, evolve, sample_error
from .network_model import (
    LinkPhysics,
    NoiseModel,
    Photon,
    PhysicalLayer,
    Qnic,
    QubitRecord,
    bsa_process,
)
from .ruleset_engine import (
    EnoughResource,
    MeasureCount,
    PartnerRequest,
    Purify,
    Rule,
    RuleEngine,
    RuleSet,
    Swap,
    Tomography,
    Wait,
)
from .sim_kernel import Event, MessageKind, make
from .tomography_stats import (
    COMBOS,
    LinkStats,
    TomographyError,
    TomographyRecord,
    estimate_fidelity,
    ideal_outcome,
)

log = logging.getLogger(__name__)


# ---- routing -----------------------------------------------------------------

def routing_table(source: str, graph: dict[str, list[tuple[str, int, float]]], order: dict[str, int],
                  end_nodes: set[str]) -> dict[str, tuple[str, int, float]]:
    """Dijkstra from ``source``: destination -> (next hop, link index, path cost).

    End nodes terminate paths but never relay.  Equal-distance nodes are
    settled in declaration order and the first path found is kept, so
    routes are deterministic.
    """
    dist = {source: 0.0}
    first: dict[str, tuple[str, int]] = {}
    heap = [(0.0, order[source], source)]
    done = set()
    while heap:
        d, _, u = heapq.heappop(heap)
        if u in done:
            continue
        done.add(u)
        if u != source and u in end_nodes:
            continue
        for v, link, cost in graph[u]:
            nd = d + cost
            hop = first[u] if u != source else (v, link)
            if v not in dist or nd < dist[v] - 1e-12:
                dist[v] = nd
                first[v] = hop
                heapq.heappush(heap, (nd, order[v], v))
    return {v: (hop[0], hop[1], dist[v]) for v, hop in first.items()}


# ---- swap order ----------------------------------------------------------------

def swap_order_binary_tree(path: list[str]) -> dict[str, tuple[int, str, str]]:
    """Stage and swap partners of every repeater on ``path``.

    The middle repeater of a span swaps last; each half is ordered the same
    way.  A repeater swaps with the nearest node on each side whose stage is
    higher (the end nodes count as infinitely high).
    """
    inner = path[1:-1]
    stage: dict[str, int] = {}

    def assign(nodes: list[str]) -> int:
        if not nodes:
            return 0
        mid = len(nodes) // 2
        s = 1 + max(assign(nodes[:mid]), assign(nodes[mid + 1:]))
        stage[nodes[mid]] = s
        return s

    assign(inner)
    level = [math.inf] + [stage[n] for n in inner] + [math.inf]
    out = {}
    for i in range(1, len(path) - 1):
        left = next(j for j in range(i - 1, -1, -1) if level[j] > level[i])
        right = next(j for j in range(i + 1, len(path)) if level[j] > level[i])
        out[path[i]] = (stage[path[i]], path[left], path[right])
    return out


def _round_basis(kind: str, k: int) -> str:
    if kind == "XZ":
        return "X" if k % 2 == 1 else "Z"
    return kind


def build_rulesets(connection_id: int, path: list[str], links: list[int], measurement_count: int,
                   link_rounds: int = 0, e2e_rounds: int = 0, purification_type: str = "X",
                   swap_policy: str = "binary-tree", expected_fidelity: float = 1.0) -> dict[str, RuleSet]:
    if len(path) < 2:
        raise ValueError("a connection needs at least two nodes")
    initiator, responder = path[0], path[-1]
    order = swap_order_binary_tree(path) if swap_policy == "binary-tree" else {}
    out = {}
    for i, node in enumerate(path):
        rules: list[Rule] = []
        entry: dict[int, int] = {}
        lane_tails: list[int] = []
        for side in (0, 1):
            if (side == 0 and i == 0) or (side == 1 and i == len(path) - 1):
                continue
            nb = path[i - 1] if side == 0 else path[i + 1]
            link = links[i - 1] if side == 0 else links[i]
            leader = side == 1  # the node nearer the initiator leads link-level rounds
            entry[side] = len(rules)
            for k in range(1, link_rounds + 1):
                clauses = (EnoughResource(2, nb),) if leader else (PartnerRequest(nb),)
                rules.append(Rule(len(rules), f"purify:link{link}:{k}", clauses,
                                  Purify(_round_basis(purification_type, k), nb, leader), None))
                if k < link_rounds:
                    rules[-1].next = len(rules)
            if link_rounds:
                lane_tails.append(len(rules) - 1)
            else:
                entry[side] = -1  # filled in below with the lane's destination
        dest = len(rules)
        for tail in lane_tails:
            rules[tail].next = dest
        for side in entry:
            if entry[side] == -1:
                entry[side] = dest
        if 0 < i < len(path) - 1:
            if swap_policy == "binary-tree":
                _, left, right = order[node]
                notify = (left, right)
            else:
                left, right = path[i - 1], path[i + 1]
                notify = (initiator, responder)
            rules.append(Rule(len(rules), "swap", (EnoughResource(1, left), EnoughResource(1, right)),
                              Swap(left, right, *notify)))
        else:
            other = responder if i == 0 else initiator
            leader = i == 0
            rules.append(Rule(len(rules), "wait", (EnoughResource(1, other),), Wait(other), len(rules) + 1))
            for k in range(1, e2e_rounds + 1):
                clauses = (EnoughResource(2, other),) if leader else (PartnerRequest(other),)
                rules.append(Rule(len(rules), f"purify:e2e:{k}", clauses,
                                  Purify(_round_basis(purification_type, k), other, leader), len(rules) + 1))
            if leader:
                clauses = (EnoughResource(1, other), MeasureCount(measurement_count))
            else:
                clauses = (PartnerRequest(other),)
            rules.append(Rule(len(rules), "tomography", clauses,
                              Tomography(other, leader, measurement_count)))
        out[node] = RuleSet(connection_id * 1000 + i, connection_id, node, path, links, rules, entry,
                            expected_fidelity)
    return out


# ---- link characterization -----------------------------------------------------

def characterize_link(link: LinkPhysics, noise: NoiseModel, emission_success: tuple[float, float],
                      n_pairs: int, rng, max_slots: int | None = None) -> LinkStats:
    """Estimate a link's pair fidelity and generation rate without the event loop.

    Each slot emits one photon per side, runs the analyzer, and on success
    measures the pair in the next round-robin basis combination after the
    heralding round trip's worth of memory noise.
    """
    spec = link.spec
    max_slots = max_slots or 1000 * n_pairs
    wait_steps = int(2 * link.max_delay / noise.interval)
    readout = noise.readout
    records = []
    slots = successes = 0
    while len(records) < n_pairs and slots < max_slots:
        slots += 1
        photons = []
        vectors = []
        for side in (0, 1):
            lost = rng.random() >= emission_success[side] or rng.random() < link.loss[side]
            v = CLEAN
            if not lost and not link.channels[side].is_identity:
                v = K.vecmat(v, link.channels[side].flat)
            vectors.append(v)
            photons.append(Photon(None, lost))
        res = bsa_process(photons[0], photons[1], spec.bsa_success_probability,
                          spec.bsa_dark_count_probability, rng)
        if not res.success:
            continue
        successes += 1
        kinds = []
        for v in vectors:
            if wait_steps and not noise.memory.is_identity:
                v = evolve(v, noise.memory, wait_steps)
            kinds.append(sample_error(v, rng))
        pair = PairError.from_kinds(*kinds).xor(PairError(decohered=res.decohered))
        if pair.lost:
            continue
        ba, bb = COMBOS[len(records) % len(COMBOS)]
        oa = ideal_outcome(pair, ba, rng)
        ob = ideal_outcome(pair, bb, rng, partner=(ba, oa))
        if rng.random() < readout.get(ba, 0.0):
            oa = -oa
        if rng.random() < readout.get(bb, 0.0):
            ob = -ob
        records.append(TomographyRecord(ba, bb, oa, ob))
    try:
        fidelity = estimate_fidelity(records)
    except TomographyError:
        fidelity = math.nan
    per_slot = successes / slots if slots else 0.0
    rate = per_slot * link.n_slots / link.train_period
    return LinkStats(f"{spec.a}-{spec.b}", fidelity, rate, len(records))


# ---- the node --------------------------------------------------------------------

@dataclass
class PendingSetup:
    responder: str
    pair_count: int
    attempt: int = 0


class QuantumNode:
    """Kernel module for one EndNode, Repeater or Router."""

    def __init__(self, name: str, kind: str, network):
        self.name = name
        self.kind = kind
        self.net = network
        self.phys: PhysicalLayer = network.phys
        self.qnics: list[Qnic] = []
        self.qnic_by_link: dict[int, Qnic] = {}
        self.routes: dict[str, tuple[str, int, float]] = {}
        self.trains: dict[tuple[int, int], tuple[int | None, list[QubitRecord]]] = {}
        self.setups: dict[int, PendingSetup] = {}
        self.reservations: dict[int, list[Qnic]] = {}
        self.engine = RuleEngine(name, self.phys, self.send, self._release)

    def add_qnic(self, link: LinkPhysics, side: int, size: int, emission_success: float) -> Qnic:
        q = Qnic(self.name, len(self.qnics), link.index, side, link.spec.architecture, size,
                 emission_success)
        self.qnics.append(q)
        self.qnic_by_link[link.index] = q
        link.qnics[side] = q
        return q

    def send(self, dest: str, msg) -> None:
        self.net.kernel.send(self.net.latency(self.name, dest), dest, msg)

    def _release(self, qubit: QubitRecord) -> None:
        self.qnics[qubit.qnic].release(qubit, self.net.kernel.now())

    def handle(self, event: Event) -> None:
        msg = event.payload
        kind = msg.kind
        if kind is MessageKind.BSM_RESULT:
            self._on_bsm_result(msg)
        elif kind is MessageKind.TIMER:
            tag = msg["tag"]
            if tag == "emit":
                self._emit(*msg["data"])
            elif tag == "start":
                self.initiate(*msg["data"])
            else:
                raise ValueError(f"unknown timer {tag!r}")
        elif kind is MessageKind.SETUP_REQUEST:
            self._on_setup_request(msg)
        elif kind is MessageKind.SETUP_RESPONSE:
            self._on_setup_response(msg)
        elif kind is MessageKind.SETUP_REJECT:
            self._on_reject(msg)
        elif kind is MessageKind.TEARDOWN:
            self._teardown(msg["connection"])
        else:
            self.engine.handle_message(msg)

    # ---- real-time control: photon trains -------------------------------------

    def _lane_side(self, rs: RuleSet, link: int) -> int:
        return 0 if rs.pos > 0 and rs.links[rs.pos - 1] == link else 1

    def _emit(self, qnic_index: int, train: int, arrival_start: float) -> None:
        qnic = self.qnics[qnic_index]
        conn = qnic.reserved_by
        if conn is None or conn not in self.engine.rulesets:
            return
        link = self.net.links[qnic.link]
        qubits = self.phys.emit_photon_train(qnic, qnic.free_count, link.interval, train, arrival_start)
        if qubits:
            self.trains[(qnic_index, train)] = (conn, qubits)

    def _on_bsm_result(self, msg) -> None:
        link_index = msg["link"]
        qnic = self.qnic_by_link[link_index]
        link = self.net.links[link_index]
        train = msg["train"]
        conn, qubits = self.trains.pop((qnic.index, train), (None, []))
        rs = self.engine.rulesets.get(conn) if conn is not None else None
        if qubits:
            used = [False] * len(qubits)
            for slot, success, cx, cz in msg["results"]:
                if slot >= len(qubits):
                    continue
                q = qubits[slot]
                used[slot] = True
                if success and rs is not None and q.live_partner() is not None:
                    if qnic.side == 1:
                        q.xor_frame((cx, cz))
                    self.engine.admit(conn, self._lane_side(rs, link_index), (link_index, train, slot), q)
                else:
                    self._release(q)
            for slot, flag in enumerate(used):
                if not flag:
                    self._release(qubits[slot])
            if rs is not None and conn in self.engine.rulesets:
                self.engine.evaluate(rs)
        # rounding can put this a hair before now when the delays are equal
        at = max(msg["next_train_at"] - link.delays[qnic.side], self.net.kernel.now())
        self.net.kernel.schedule(Event(at, self.name, make(
            MessageKind.TIMER, self.name, tag="emit",
            data=[qnic.index, train + 1, msg["next_train_at"]])))

    # ---- connection management ------------------------------------------------

    def _reserve(self, conn: int, qnics: list[Qnic]) -> bool:
        if any(q.reserved_by is not None and q.reserved_by != conn for q in qnics):
            return False
        held = self.reservations.setdefault(conn, [])
        for q in qnics:
            q.reserved_by = conn
            if q not in held:
                held.append(q)
        return True

    def _unreserve(self, conn: int) -> None:
        for q in self.reservations.pop(conn, []):
            if q.reserved_by == conn:
                q.reserved_by = None

    def initiate(self, conn: int, responder: str, pair_count: int, attempt: int = 0) -> None:
        if responder == self.name or responder not in self.routes:
            reason = "connection to itself" if responder == self.name else f"no route to {responder}"
            self.net.on_setup_failed(conn, reason)
            return
        self.setups[conn] = PendingSetup(responder, pair_count, attempt)
        nxt, link, _ = self.routes[responder]
        qnic = self.qnic_by_link[link]
        if not self._reserve(conn, [qnic]):
            self._schedule_retry(conn)
            return
        hop = self._hop_entry(None, link)
        self.send(nxt, make(MessageKind.SETUP_REQUEST, self.name, connection=conn, attempt=attempt,
                            initiator=self.name, responder=responder, hops=[hop],
                            pair_count=pair_count, target_fidelity=0.0))

    def _hop_entry(self, link_in: int | None, link_out: int | None) -> dict:
        entry = {"node": self.name, "qnic_in": None, "qnic_out": None,
                 "link_in": link_in, "link_out": link_out}
        if link_in is not None:
            entry["qnic_in"] = self.qnic_by_link[link_in].index
        if link_out is not None:
            entry["qnic_out"] = self.qnic_by_link[link_out].index
            stats = self.net.link_stats[link_out]
            entry["cost"] = self.net.links[link_out].spec.cost
            entry["link_fidelity"] = stats.fidelity if stats else 1.0
        return entry

    def _on_setup_request(self, msg) -> None:
        conn = msg["connection"]
        hops = list(msg["hops"])
        prev = hops[-1]
        link_in = prev["link_out"]
        qnics = [self.qnic_by_link[link_in]]
        responder = msg["responder"]
        link_out = None
        if self.name != responder:
            if self.kind == "EndNode" or responder not in self.routes:
                self._reject(msg, hops)
                return
            nxt, link_out, _ = self.routes[responder]
            qnics.append(self.qnic_by_link[link_out])
        if not self._reserve(conn, qnics):
            self._reject(msg, hops)
            return
        hops.append(self._hop_entry(link_in, link_out))
        if self.name != responder:
            self.send(nxt, make(MessageKind.SETUP_REQUEST, self.name, connection=conn,
                                attempt=msg["attempt"], initiator=msg["initiator"], responder=responder,
                                hops=hops, pair_count=msg["pair_count"],
                                target_fidelity=msg["target_fidelity"]))
            return
        path = [h["node"] for h in hops]
        links = [h["link_out"] for h in hops[:-1]]
        expected = 1.0
        for h in hops[:-1]:
            f = h.get("link_fidelity", 1.0)
            expected *= f if f == f else 1.0
        params = self.net.params
        rulesets = build_rulesets(conn, path, links, msg["pair_count"], params.link_purification_rounds,
                                  params.e2e_purification_rounds, params.purification_type,
                                  params.swap_policy, expected)
        self.net.on_path_found(conn, path, rulesets)
        for node, rs in rulesets.items():
            self.send(node, make(MessageKind.SETUP_RESPONSE, self.name, connection=conn,
                                 attempt=msg["attempt"], ruleset=rs.to_dict()))

    def _reject(self, msg, hops) -> None:
        path = [h["node"] for h in hops]
        back = make(MessageKind.SETUP_REJECT, self.name, connection=msg["connection"],
                    attempt=msg["attempt"], path=path, rejected_by=self.name)
        self.send(path[-1], back)

    def _on_reject(self, msg) -> None:
        conn = msg["connection"]
        path = list(msg["path"])
        self._unreserve(conn)
        idx = path.index(self.name)
        if idx > 0:
            self.send(path[idx - 1], make(MessageKind.SETUP_REJECT, self.name, connection=conn,
                                          attempt=msg["attempt"], path=path,
                                          rejected_by=msg["rejected_by"]))
            return
        setup = self.setups.get(conn)
        if setup is not None and setup.attempt == msg["attempt"]:
            self._schedule_retry(conn)

    def _schedule_retry(self, conn: int) -> None:
        setup = self.setups[conn]
        setup.attempt += 1
        delay = self.net.params.retry_interval * (0.5 + self.net.control_rng.random())
        self.net.kernel.send(delay, self.name, make(
            MessageKind.TIMER, self.name, tag="start",
            data=[conn, setup.responder, setup.pair_count, setup.attempt]))

    def _on_setup_response(self, msg) -> None:
        rs = RuleSet.from_dict(msg["ruleset"])
        conn = rs.connection_id
        if conn in self.net.finished:
            return
        self.engine.install(rs)
        self.net.on_installed(self.name, rs)

    def _teardown(self, conn: int) -> None:
        self.engine.uninstall(conn)
        self._unreserve(conn)
        self.setups.pop(conn, None)
        self.net.on_torn_down(self.name, conn)
