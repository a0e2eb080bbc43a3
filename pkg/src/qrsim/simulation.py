"""Assemble a network from a topology and parameters, run it, collect results."""

from __future__ import annotations

import heapq
import logging
import math
import random
from dataclasses import replace

from .config_io import ParamSet, Topology
from .error_basis import make_transition_matrix
from .network_model import (
    BellStateAnalyzer,
    LinkPhysics,
    NoiseModel,
    PhysicalLayer,
    classical_latency,
)
from .qrsa_control import QuantumNode, characterize_link, routing_table
from .sim_kernel import Event, Kernel, KernelStats, MessageKind, make
from .tomography_stats import RunResult

log = logging.getLogger(__name__)

GATES = ("h", "x", "z", "cnot")


def noise_from_params(p: ParamSet) -> NoiseModel:
    return NoiseModel(
        memory=make_transition_matrix(p.memory_rates()),
        interval=p.memory_update_interval,
        gates={g: make_transition_matrix(p.gate_rates(g)) for g in GATES},
        readout=NoiseModel.readout_from_pauli(*p.measurement_pauli()),
    )


class Network:
    """Every module of one simulation plus the bookkeeping that spans nodes."""

    def __init__(self, topology: Topology, params: ParamSet, seed: int | None = None, trace=None):
        self.topology = topology
        self.params = params
        self.seed = params.seed if seed is None else seed
        self.kernel = Kernel(trace)
        self.rng = random.Random(self.seed)
        # independent streams so that changing one subsystem keeps the others reproducible
        self.control_rng = random.Random(f"{self.seed}-control")
        self.hm_rng = random.Random(f"{self.seed}-hm")
        self.traffic_rng = random.Random(f"{self.seed}-traffic")
        self.noise = noise_from_params(params)
        self.phys = PhysicalLayer(self.kernel, self.rng, self.noise)
        self.nodes: dict[str, QuantumNode] = {}
        self.links: list[LinkPhysics] = []
        self.bsas: list[BellStateAnalyzer] = []
        self.link_stats: list = []
        self.results: dict[int, RunResult] = {}
        self.paths: dict[int, list[str]] = {}
        self.finished: set[int] = set()
        self.torn_down: dict[int, set[str]] = {}
        self._latency: dict[str, dict[str, float]] = {}
        self._build()

    def _size(self, name: str) -> int:
        if self.params.qnic_size is not None:
            return self.params.qnic_size
        return self.topology.nodes[name].qnic_size

    def _build(self) -> None:
        topo, p = self.topology, self.params
        for spec in topo.nodes.values():
            if spec.kind != "BSA":
                node = QuantumNode(spec.name, spec.kind, self)
                self.nodes[spec.name] = node
                self.kernel.register(spec.name, node)
        for i, spec in enumerate(topo.links):
            spec = replace(spec, channel_rates=p.channel_rates(),
                           bsa_success_probability=p.bsa_success_probability,
                           bsa_dark_count_probability=p.bsa_dark_count_probability)
            bsa_name = spec.bsa if spec.architecture == "MIM" else f"{spec.b}.bsa{i}"
            n_slots = max(self._size(spec.a), self._size(spec.b))
            link = LinkPhysics(i, spec, bsa_name, n_slots, p.emission_interval)
            self.links.append(link)
            self.nodes[spec.a].add_qnic(link, 0, self._size(spec.a), p.emission_success_probability)
            self.nodes[spec.b].add_qnic(link, 1, self._size(spec.b), p.emission_success_probability)
            bsa = BellStateAnalyzer(bsa_name, link, self.phys)
            self.bsas.append(bsa)
            self.kernel.register(bsa_name, bsa)
        self.phys.links = self.links
        graph = {n: [] for n in self.nodes}
        for i, l in enumerate(topo.links):
            graph[l.a].append((l.b, i, l.cost))
            graph[l.b].append((l.a, i, l.cost))
        order = {n: k for k, n in enumerate(self.nodes)}
        ends = {n for n, node in self.nodes.items() if node.kind == "EndNode"}
        for name, node in self.nodes.items():
            node.routes = routing_table(name, graph, order, ends)

    def latency(self, src: str, dst: str) -> float:
        """Classical latency along the shortest fibre route between two nodes."""
        if src == dst:
            return 0.0
        table = self._latency.get(src)
        if table is None:
            table = self._fibre_distances(src)
            self._latency[src] = table
        return table[dst]

    def _fibre_distances(self, src: str) -> dict[str, float]:
        dist = {src: 0.0}
        heap = [(0.0, src)]
        while heap:
            d, u = heapq.heappop(heap)
            if d > dist[u]:
                continue
            for l in self.topology.links:
                if u not in (l.a, l.b):
                    continue
                v = l.b if u == l.a else l.a
                nd = d + l.distance_km
                if nd < dist.get(v, math.inf):
                    dist[v] = nd
                    heapq.heappush(heap, (nd, v))
        return {n: classical_latency(d) for n, d in dist.items()}

    # ---- traffic -----------------------------------------------------------

    def traffic(self) -> list[tuple[str, str]]:
        p = self.params
        ends = [n for n, node in self.nodes.items() if node.kind == "EndNode"]
        if len(ends) < 2:
            raise ValueError("traffic needs at least two end nodes")
        rng = self.traffic_rng
        if p.traffic_pattern == "single-random" or p.initiator is not None:
            initiator = p.initiator or rng.choice(ends)
            if initiator not in ends:
                raise ValueError(f"initiator {initiator!r} is not an end node")
            responder = p.responder or rng.choice([e for e in ends if e != initiator])
            if responder not in ends or responder == initiator:
                raise ValueError(f"responder {responder!r} is not another end node")
            return [(initiator, responder)]
        return [(e, rng.choice([o for o in ends if o != e])) for e in ends]

    # ---- callbacks from nodes ------------------------------------------------

    def on_path_found(self, conn: int, path: list[str], rulesets) -> None:
        self.paths[conn] = path

    def on_setup_failed(self, conn: int, reason: str) -> None:
        log.error("connection %d cannot be set up: %s", conn, reason)
        self.results[conn].error = reason
        self.finished.add(conn)
        self._maybe_stop()

    def on_installed(self, node: str, rs) -> None:
        result = self.results[rs.connection_id]
        if node == result.initiator:
            result.started_at = self.kernel.now()
            self.nodes[node].engine.on_record = self._on_record

    def _on_record(self, rs, record) -> None:
        result = self.results[rs.connection_id]
        result.records.append(record)
        if len(result.records) >= result.target_count and rs.connection_id not in self.finished:
            self._complete(rs.connection_id)

    def _complete(self, conn: int) -> None:
        result = self.results[conn]
        result.completed = True
        result.finished_at = self.kernel.now()
        self.finished.add(conn)
        initiator = self.nodes[result.initiator]
        for node in self.paths[conn]:
            initiator.send(node, make(MessageKind.TEARDOWN, initiator.name, connection=conn))

    def on_torn_down(self, node: str, conn: int) -> None:
        self.torn_down.setdefault(conn, set()).add(node)
        self._maybe_stop()

    def _maybe_stop(self) -> None:
        # stop once every connection is over and its resources are back
        if len(self.finished) < len(self.results):
            return
        for conn in self.finished:
            if not self.torn_down.get(conn, set()) >= set(self.paths.get(conn, ())):
                return
        self.kernel.stop()

    # ---- running -----------------------------------------------------------

    def characterize_links(self) -> None:
        p = self.params
        self.link_stats = [
            characterize_link(link, self.noise, (p.emission_success_probability,) * 2,
                              p.link_tomography_pairs, self.hm_rng)
            for link in self.links
        ]

    def run(self, max_events: int | None = None) -> KernelStats:
        p = self.params
        self.characterize_links()
        for bsa in self.bsas:
            bsa.start()
        for conn, (src, dst) in enumerate(self.traffic()):
            self.results[conn] = RunResult(conn, src, dst, p.measurement_count,
                                           link_stats=self.link_stats)
            self.kernel.schedule(Event(0.0, src, make(MessageKind.TIMER, src, tag="start",
                                                      data=[conn, dst, p.measurement_count, 0])))
        return self.kernel.run_until(p.sim_time_limit, max_events)

    def audit(self) -> dict[str, bool]:
        """Conservation checks: every admitted pair half is accounted for."""
        pairs_ok = all(node.engine.audit() for node in self.nodes.values())
        qubits_ok = True
        for node in self.nodes.values():
            for qnic in node.qnics:
                in_flight = sum(len(qs) for (qi, _), (_, qs) in node.trains.items() if qi == qnic.index)
                held = sum(1 for rs in node.engine.rulesets.values()
                           for res in rs.resources.values() if res.qubit.qnic == qnic.index)
                if qnic.free_count + in_flight + held != qnic.size:
                    qubits_ok = False
        return {"pairs": pairs_ok, "qubits": qubits_ok}

    def run_results(self) -> list[RunResult]:
        return [self.results[c] for c in sorted(self.results)]


def simulate(topology: Topology, params: ParamSet, seed: int | None = None, trace=None,
             max_events: int | None = None) -> tuple[list[RunResult], KernelStats, Network]:
    net = Network(topology, params, seed, trace)
    stats = net.run(max_events)
    return net.run_results(), stats, net
