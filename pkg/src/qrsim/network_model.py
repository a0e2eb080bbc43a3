"""Physical layer: stationary qubits, QNICs, fibre channels and BSAs.

Node software never reads qubit records directly to make decisions; it calls
into :class:`PhysicalLayer` to operate on its own qubits and learns results
from classical messages, the way real hardware would report them.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field

from .error_basis import (
    CLEAN,
    ErrorKind,
    PairError,
    TransitionMatrix,
    channel_matrix,
    conditional_no_loss,
    evolve,
    indicator,
    make_transition_matrix,
    rates_from_errors,
    sample_error,
)
from .backend import K
from .sim_kernel import Event, Kernel, MessageKind, make

C_FIBER = 2.08e8  # m/s, photons and classical messages alike
NO_ERRORS = rates_from_errors()


def classical_latency(distance_km: float) -> float:
    if distance_km < 0:
        raise ValueError("distance must be non-negative")
    return distance_km * 1000.0 / C_FIBER


class Lifecycle(str, enum.Enum):
    FREE = "free"
    EMITTING = "emitting"
    ENTANGLED = "entangled"
    RESERVED = "reserved-by-rule"
    MEASURED = "measured"


class QubitRecord:
    """One stationary qubit and its tracked errors.

    ``frame`` holds Pauli bits known to sit on the qubit on top of what the
    error vector describes (BSM projections, swap outcomes, corrections).
    ``stash`` carries what the partner qubit's earlier measurement revealed,
    so the second half of a joint operation can be resolved.
    """

    __slots__ = (
        "node", "qnic", "index", "vector", "last_update", "lifecycle", "partner",
        "partner_gen", "generation", "fx", "fz", "decohered", "stash",
    )

    def __init__(self, node: str, qnic: int, index: int):
        self.node = node
        self.qnic = qnic
        self.index = index
        self.generation = 0
        self.reset(0.0)

    def reset(self, now: float) -> None:
        self.vector = CLEAN
        self.last_update = now
        self.lifecycle = Lifecycle.FREE
        self.partner = None
        self.partner_gen = -1
        self.fx = 0
        self.fz = 0
        self.decohered = False
        self.stash = None

    @property
    def address(self) -> tuple[str, int, int]:
        return (self.node, self.qnic, self.index)

    @property
    def frame(self) -> tuple[int, int]:
        return (self.fx, self.fz)

    def xor_frame(self, bits) -> None:
        self.fx ^= bits[0]
        self.fz ^= bits[1]

    def live_partner(self) -> "QubitRecord | None":
        p = self.partner
        if p is None or p.generation != self.partner_gen:
            return None
        return p

    def __repr__(self):
        return f"Qubit({self.node}/{self.qnic}/{self.index} {self.lifecycle.value})"


def entangle(a: QubitRecord, b: QubitRecord) -> None:
    a.partner, a.partner_gen = b, b.generation
    b.partner, b.partner_gen = a, a.generation
    a.lifecycle = b.lifecycle = Lifecycle.ENTANGLED


class Qnic:
    """Buffer of ``size`` qubits attached to one link endpoint."""

    def __init__(self, owner: str, index: int, link: int, side: int, kind: str, size: int,
                 emission_success_probability: float = 1.0):
        if size < 1:
            raise ValueError("a QNIC needs at least one qubit")
        self.owner = owner
        self.index = index
        self.link = link
        self.side = side
        self.kind = kind
        self.size = size
        self.emission_success_probability = emission_success_probability
        self.qubits = [QubitRecord(owner, index, i) for i in range(size)]
        self._free = list(range(size))
        self.reserved_by: int | None = None

    @property
    def free_count(self) -> int:
        return len(self._free)

    def take_free(self, count: int) -> list[QubitRecord]:
        count = min(count, len(self._free))
        return [self.qubits[heapq.heappop(self._free)] for _ in range(count)]

    def release(self, qubit: QubitRecord, now: float) -> None:
        qubit.generation += 1
        qubit.reset(now)
        heapq.heappush(self._free, qubit.index)


@dataclass(frozen=True)
class LinkSpec:
    a: str
    b: str
    distance_km: float
    architecture: str = "MIM"
    cost: float = 1.0
    bsa: str | None = None
    channel_rates: tuple = NO_ERRORS
    bsa_success_probability: float = 1.0
    bsa_dark_count_probability: float = 0.0

    @property
    def segments(self) -> tuple[float, float]:
        if self.architecture == "MIM":
            return (self.distance_km / 2, self.distance_km / 2)
        # MM: the analyzer sits at endpoint b
        return (self.distance_km, 0.0)

    @property
    def bsa_host(self) -> str:
        return self.bsa if self.architecture == "MIM" else self.b


@dataclass(frozen=True)
class BsmResult:
    success: bool
    correction: tuple[int, int] | None = None
    timestamp: float = 0.0
    decohered: bool = False


@dataclass
class Photon:
    qubit: QubitRecord
    lost: bool


def bsa_process(a: Photon | None, b: Photon | None, success_probability: float,
                dark_count_probability: float, rng, now: float = 0.0) -> BsmResult:
    """Bell-state measurement on the two photons of one time slot."""
    if a is None or b is None:
        return BsmResult(False, timestamp=now)
    if not a.lost and not b.lost and rng.random() < success_probability:
        return BsmResult(True, (rng.getrandbits(1), rng.getrandbits(1)), now)
    if dark_count_probability > 0 and rng.random() < dark_count_probability:
        return BsmResult(True, (rng.getrandbits(1), rng.getrandbits(1)), now, decohered=True)
    return BsmResult(False, timestamp=now)


@dataclass
class NoiseModel:
    """Memory, gate and readout error parameters shared by every node."""

    memory: TransitionMatrix = field(default_factory=lambda: make_transition_matrix(NO_ERRORS))
    interval: float = 1e-6
    gates: dict[str, TransitionMatrix] = field(default_factory=dict)
    # flip probability of a readout in each basis
    readout: dict[str, float] = field(default_factory=lambda: {"X": 0.0, "Y": 0.0, "Z": 0.0})

    @staticmethod
    def readout_from_pauli(px: float, py: float, pz: float) -> dict[str, float]:
        return {"Z": px + py, "X": pz + py, "Y": px + pz}


class LinkPhysics:
    """Precomputed per-link quantities used on every photon."""

    def __init__(self, index: int, spec: LinkSpec, bsa_name: str, n_slots: int, interval: float):
        self.index = index
        self.spec = spec
        self.bsa_name = bsa_name
        self.n_slots = n_slots
        self.interval = interval
        self.delays = tuple(classical_latency(s) for s in spec.segments)
        self.endpoints = (spec.a, spec.b)
        survive = conditional_no_loss(spec.channel_rates)
        self.channels = tuple(channel_matrix(survive, s) for s in spec.segments)
        pl = spec.channel_rates[ErrorKind.L]
        self.loss = tuple(1.0 - (1.0 - pl) ** s for s in spec.segments)
        self.qnics: list[Qnic | None] = [None, None]

    @property
    def max_delay(self) -> float:
        return max(self.delays)

    @property
    def train_period(self) -> float:
        return self.n_slots * self.interval + 2 * self.max_delay


class PhysicalLayer:
    """Owns qubit physics: lazy decoherence, gates, sampling, photon emission."""

    def __init__(self, kernel: Kernel, rng, noise: NoiseModel):
        self.kernel = kernel
        self.rng = rng
        self.noise = noise
        self.links: list[LinkPhysics] = []

    def advance(self, q: QubitRecord) -> None:
        """Apply the memory steps elapsed since the qubit was last touched."""
        now = self.kernel.now()
        noise = self.noise
        steps = int(math.floor((now - q.last_update) / noise.interval + 1e-9))
        if steps <= 0:
            return
        if not noise.memory.is_identity:
            q.vector = evolve(q.vector, noise.memory, steps)
        q.last_update += steps * noise.interval

    def gate(self, q: QubitRecord, name: str) -> None:
        m = self.noise.gates.get(name)
        if m is not None and not m.is_identity:
            q.vector = K.vecmat(q.vector, m.flat)

    def collapse(self, q: QubitRecord) -> ErrorKind:
        """Touch and sample the qubit; its vector becomes the sampled indicator."""
        self.advance(q)
        kind = sample_error(q.vector, self.rng)
        q.vector = indicator(kind)
        return kind

    def readout_flip(self, basis: str) -> int:
        p = self.noise.readout.get(basis, 0.0)
        return 1 if p > 0 and self.rng.random() < p else 0

    def half_error(self, q: QubitRecord, kind: ErrorKind) -> PairError:
        """This qubit's contribution to its pair's error."""
        return PairError.from_kinds(kind, frame=q.frame).xor(PairError(decohered=q.decohered))

    def emit_photon_train(self, qnic: Qnic, count: int, interval: float, train: int,
                          arrival_start: float) -> list[QubitRecord]:
        """Emit photons from up to ``count`` free qubits toward the link's BSA.

        Slot ``j`` arrives at ``arrival_start + j * interval``.  Photons that
        fail emission or are lost in the fibre still produce a loss-marked
        arrival so the analyzer can close the slot.  Returns the emitting
        qubits in slot order.
        """
        if count <= 0:
            return []
        link = self.links[qnic.link]
        side = qnic.side
        channel = link.channels[side]
        loss = link.loss[side]
        p_emit = qnic.emission_success_probability
        rng = self.rng
        kernel = self.kernel
        qubits = qnic.take_free(count)
        for slot, q in enumerate(qubits):
            q.lifecycle = Lifecycle.EMITTING
            self.advance(q)
            lost = (p_emit < 1.0 and rng.random() >= p_emit) or (loss > 0.0 and rng.random() < loss)
            if not lost and not channel.is_identity:
                q.vector = K.vecmat(q.vector, channel.flat)
            msg = make(MessageKind.PHOTON_ARRIVAL, qnic.owner, link=link.index, side=side,
                       train=train, slot=slot, qubit=q.index, lost=lost)
            kernel.schedule(Event(arrival_start + slot * interval, link.bsa_name, msg))
        return qubits


class BellStateAnalyzer:
    """Kernel module pairing photons by time slot and reporting outcomes.

    The analyzer also paces the link: every result message tells both ends
    when the next train must reach it, so emissions stay synchronised.
    """

    def __init__(self, name: str, link: LinkPhysics, phys: PhysicalLayer):
        self.name = name
        self.link = link
        self.phys = phys
        self.train = 0
        self.slots: dict[int, list] = {}
        self.successes = 0
        self.slots_seen = 0

    def start(self) -> None:
        first = self.phys.kernel.now() + 2 * self.link.max_delay
        self._announce(-1, [], first)

    def handle(self, event: Event) -> None:
        msg = event.payload
        if msg.kind is MessageKind.PHOTON_ARRIVAL:
            if msg["train"] != self.train:
                return
            qnic = self.link.qnics[msg["side"]]
            photon = Photon(qnic.qubits[msg["qubit"]], msg["lost"])
            self.slots.setdefault(msg["slot"], [None, None])[msg["side"]] = photon
        elif msg.kind is MessageKind.TIMER:
            self._close_train()

    def _announce(self, train: int, results: list, next_at: float) -> None:
        kernel = self.phys.kernel
        for side, node in enumerate(self.link.endpoints):
            msg = make(MessageKind.BSM_RESULT, self.name, link=self.link.index, train=train,
                       results=results, next_train_at=next_at)
            kernel.send(self.link.delays[side], node, msg)
        self.train = train + 1
        end = next_at + self.link.n_slots * self.link.interval
        kernel.schedule(Event(end, self.name, make(MessageKind.TIMER, self.name, tag="train-end", data=None)))

    def _close_train(self) -> None:
        link = self.link
        spec = link.spec
        now = self.phys.kernel.now()
        results = []
        for slot in sorted(self.slots):
            a, b = self.slots[slot]
            res = bsa_process(a, b, spec.bsa_success_probability, spec.bsa_dark_count_probability,
                              self.phys.rng, now)
            self.slots_seen += 1
            if res.success:
                self.successes += 1
                qa, qb = a.qubit, b.qubit
                entangle(qa, qb)
                # the projected Bell state shows up as a frame on side b until b corrects it
                qb.xor_frame(res.correction)
                if res.decohered:
                    qa.decohered = qb.decohered = True
                results.append([slot, True, res.correction[0], res.correction[1]])
            else:
                results.append([slot, False, 0, 0])
        self.slots = {}
        self._announce(self.train, results, now + 2 * link.max_delay)
