"""RuleSets and the per-node engine that executes them.

A RuleSet is an ordered list of rules for one connection at one node.  Each
rule owns the Bell pairs currently assigned to it, fires its action when all
of its condition clauses hold, and promotes surviving pairs to the rule named
by its ``next`` pointer.

Pairs are named by the link-level pair they grew from: ``(link, train,
slot)``.  Swaps join chains of link pairs; every node keeps a union-find
:class:`ChainBook` of the joins it has been told about, from which it derives
each local pair's current partner and a name both ends agree on.
"""

from __future__ import annotations

import logging
from dataclasses import asdict, dataclass, field
from typing import Any, Callable

from .error_basis import CLEAN, PairError, purify
from .network_model import PhysicalLayer, QubitRecord, entangle
from .sim_kernel import Message, MessageKind, make
from .tomography_stats import COMBOS, TomographyRecord, ideal_outcome

log = logging.getLogger(__name__)

LOST_BIT = 2  # parity report meaning "no detection"


# ---- condition clauses -------------------------------------------------------

@dataclass(frozen=True)
class EnoughResource:
    threshold: int = 1
    partner: str | None = None

    def __post_init__(self):
        if self.threshold < 1:
            raise ValueError("resource threshold must be at least 1")


@dataclass(frozen=True)
class MeasureCount:
    total: int

    def __post_init__(self):
        if self.total < 1:
            raise ValueError("measurement count must be at least 1")


@dataclass(frozen=True)
class Timer:
    deadline: float


@dataclass(frozen=True)
class Fidelity:
    """Holds when the fidelity expected for this connection reaches ``threshold``."""

    threshold: float


@dataclass(frozen=True)
class PartnerRequest:
    """Holds when the partner asked for a joint operation on pairs this rule owns."""

    partner: str


# ---- action clauses ----------------------------------------------------------

@dataclass(frozen=True)
class Purify:
    basis: str
    partner: str
    leader: bool


@dataclass(frozen=True)
class Swap:
    left: str
    right: str
    notify_left: str
    notify_right: str


@dataclass(frozen=True)
class Tomography:
    partner: str
    leader: bool
    total: int


@dataclass(frozen=True)
class Wait:
    """Hold pairs until their partner is ``partner``, then pass them on."""

    partner: str


CLAUSES = {c.__name__: c for c in (EnoughResource, MeasureCount, Timer, Fidelity, PartnerRequest)}
ACTIONS = {a.__name__: a for a in (Purify, Swap, Tomography, Wait)}


class RuleSetError(ValueError):
    pass


@dataclass(eq=False)
class Resource:
    pid: tuple
    qubit: QubitRecord
    side: int  # 0: link toward the initiator, 1: toward the responder
    partner: str = ""
    busy: bool = False
    rule: "Rule | None" = None


@dataclass
class Rule:
    rule_id: int
    key: str
    clauses: tuple
    action: Any
    next: int | None = None
    # runtime bookkeeping, not part of the serialized form
    resources: dict = field(default_factory=dict)
    idle: dict = field(default_factory=dict)  # partner -> {pid: resource}, insertion ordered
    requests: list = field(default_factory=list)
    pending: dict = field(default_factory=dict)
    issued: int = 0
    combo_counter: int = 0
    retry_combos: list = field(default_factory=list)

    def add(self, res: Resource) -> None:
        res.rule = self
        res.busy = False
        self.resources[res.pid] = res
        self.idle.setdefault(res.partner, {})[res.pid] = res

    def discard(self, res: Resource) -> None:
        res.rule = None
        self.resources.pop(res.pid, None)
        bucket = self.idle.get(res.partner)
        if bucket is not None:
            bucket.pop(res.pid, None)

    def set_busy(self, res: Resource) -> None:
        res.busy = True
        self.idle[res.partner].pop(res.pid, None)

    def repartner(self, res: Resource, partner: str) -> None:
        if not res.busy:
            self.idle[res.partner].pop(res.pid, None)
            self.idle.setdefault(partner, {})[res.pid] = res
        res.partner = partner

    def idle_count(self, partner: str | None) -> int:
        if partner is None:
            return sum(len(b) for b in self.idle.values())
        bucket = self.idle.get(partner)
        return len(bucket) if bucket else 0

    def idle_list(self, partner: str | None, limit: int | None = None) -> list:
        if partner is None:
            items = [r for b in self.idle.values() for r in b.values()]
        else:
            items = list(self.idle.get(partner, {}).values())
        return items if limit is None else items[:limit]

    def to_dict(self) -> dict:
        return {
            "id": self.rule_id,
            "key": self.key,
            "clauses": [{"kind": type(c).__name__, **asdict(c)} for c in self.clauses],
            "action": {"kind": type(self.action).__name__, **asdict(self.action)},
            "next": self.next,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Rule":
        clauses = tuple(CLAUSES[c["kind"]](**{k: v for k, v in c.items() if k != "kind"})
                        for c in d["clauses"])
        a = d["action"]
        action = ACTIONS[a["kind"]](**{k: v for k, v in a.items() if k != "kind"})
        return cls(d["id"], d["key"], clauses, action, d["next"])


class ChainBook:
    """Union-find over link pair ids with per-chain span, name and correction."""

    def __init__(self, positions: dict[int, int]):
        self.positions = positions  # link index -> position along the path
        self.parent: dict = {}
        self.lo: dict = {}
        self.hi: dict = {}
        self.members: dict = {}
        self.correction: dict = {}
        self.failed: set = set()

    def find(self, pid: tuple) -> tuple:
        parent = self.parent
        if pid not in parent:
            parent[pid] = pid
            pos = self.positions[pid[0]]
            self.lo[pid] = self.hi[pid] = pos
            self.members[pid] = [pid]
            self.correction[pid] = (0, 0)
            return pid
        root = pid
        while parent[root] != root:
            root = parent[root]
        while parent[pid] != root:
            parent[pid], pid = root, parent[pid]
        return root

    def union(self, pids) -> tuple:
        roots = []
        for p in pids:
            r = self.find(tuple(p))
            if r not in roots:
                roots.append(r)
        # the smallest member is the chain's name, so keep it as root
        roots.sort()
        root = roots[0]
        for r in roots[1:]:
            self.parent[r] = root
            self.lo[root] = min(self.lo[root], self.lo.pop(r))
            self.hi[root] = max(self.hi[root], self.hi.pop(r))
            self.members[root].extend(self.members.pop(r))
            cx, cz = self.correction.pop(r)
            x, z = self.correction[root]
            self.correction[root] = (x ^ cx, z ^ cz)
            if r in self.failed:
                self.failed.discard(r)
                self.failed.add(root)
        return root

    def span(self, pid) -> tuple[int, int]:
        r = self.find(pid)
        return self.lo[r], self.hi[r]

    def name(self, pid) -> tuple:
        return self.find(pid)

    def chain(self, pid) -> list:
        return sorted(self.members[self.find(pid)])

    def add_correction(self, pid, bits) -> None:
        r = self.find(pid)
        x, z = self.correction[r]
        self.correction[r] = (x ^ bits[0], z ^ bits[1])

    def take_correction(self, pid) -> tuple[int, int]:
        r = self.find(pid)
        bits = self.correction[r]
        self.correction[r] = (0, 0)
        return bits

    def fail(self, pid) -> None:
        self.failed.add(self.find(pid))

    def is_failed(self, pid) -> bool:
        return self.find(pid) in self.failed


class RuleSet:
    def __init__(self, ruleset_id: int, connection_id: int, owner: str, path: list[str],
                 links: list[int], rules: list[Rule], entry: dict[int, int],
                 expected_fidelity: float = 1.0):
        self.ruleset_id = ruleset_id
        self.connection_id = connection_id
        self.owner = owner
        self.path = list(path)
        self.links = list(links)
        self.rules = rules
        self.entry = dict(entry)  # side -> rule id receiving fresh link pairs
        self.expected_fidelity = expected_fidelity
        self.validate()
        self.pos = self.path.index(owner)
        self.book = ChainBook({l: i for i, l in enumerate(self.links)})
        self.resources: dict[tuple, Resource] = {}
        self.records: list[TomographyRecord] = []
        self.started_at: float | None = None

    @property
    def initiator(self) -> str:
        return self.path[0]

    @property
    def responder(self) -> str:
        return self.path[-1]

    def validate(self) -> None:
        if len(self.links) != len(self.path) - 1:
            raise RuleSetError("path and link list disagree")
        if self.owner not in self.path:
            raise RuleSetError(f"{self.owner} is not on the path")
        end = self.owner in (self.path[0], self.path[-1])
        for i, rule in enumerate(self.rules):
            if rule.rule_id != i:
                raise RuleSetError("rule ids must follow rule order")
            if rule.next is not None and not i < rule.next < len(self.rules):
                raise RuleSetError(f"rule {i} points backwards or out of range")
            if isinstance(rule.action, Swap) and end:
                raise RuleSetError("swap rules belong on intermediate nodes")
            if isinstance(rule.action, Tomography) and not end:
                raise RuleSetError("tomography rules belong on end nodes")
        for side, rid in self.entry.items():
            if side not in (0, 1) or not 0 <= rid < len(self.rules):
                raise RuleSetError("bad entry rule")

    def rule_by_key(self, key: str) -> Rule | None:
        for r in self.rules:
            if r.key == key:
                return r
        return None

    def to_dict(self) -> dict:
        return {
            "ruleset_id": self.ruleset_id,
            "connection_id": self.connection_id,
            "owner": self.owner,
            "path": self.path,
            "links": self.links,
            "entry": {str(k): v for k, v in self.entry.items()},
            "expected_fidelity": self.expected_fidelity,
            "rules": [r.to_dict() for r in self.rules],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RuleSet":
        return cls(d["ruleset_id"], d["connection_id"], d["owner"], d["path"], d["links"],
                   [Rule.from_dict(r) for r in d["rules"]],
                   {int(k): v for k, v in d["entry"].items()}, d.get("expected_fidelity", 1.0))

    def dump_text(self) -> str:
        lines = [f"RuleSet {self.ruleset_id} connection {self.connection_id} at {self.owner}",
                 f"  path: {' - '.join(self.path)}"]
        for side, rid in sorted(self.entry.items()):
            lines.append(f"  entry[{'left' if side == 0 else 'right'}] -> rule {rid}")
        for r in self.rules:
            conds = ", ".join(_fmt_dc(c) for c in r.clauses)
            nxt = "terminal" if r.next is None else f"rule {r.next}"
            lines.append(f"  rule {r.rule_id} [{r.key}] if {conds} then {_fmt_dc(r.action)} -> {nxt}")
        return "\n".join(lines) + "\n"


def _fmt_dc(obj) -> str:
    args = ", ".join(f"{k}={v}" for k, v in asdict(obj).items())
    return f"{type(obj).__name__}({args})"


class RuleEngine:
    """Runs every installed RuleSet at one node.

    ``send(dest, msg)`` delivers a classical message; ``release(qubit)``
    returns a qubit to its QNIC.  ``on_record`` is called at the tomography
    leader for every completed measurement record.
    """

    def __init__(self, node: str, phys: PhysicalLayer, send: Callable[[str, Message], None],
                 release: Callable[[QubitRecord], None]):
        self.node = node
        self.phys = phys
        self.send = send
        self.release = release
        self.rulesets: dict[int, RuleSet] = {}
        self.on_record: Callable[[RuleSet, TomographyRecord], None] | None = None
        self.dropped_messages = 0
        self.counters = {
            "admitted": 0, "purify_consumed": 0, "swap_consumed": 0,
            "measured": 0, "discarded": 0,
        }

    # ---- bookkeeping -------------------------------------------------------

    def install(self, rs: RuleSet) -> None:
        if rs.owner != self.node:
            raise RuleSetError(f"ruleset for {rs.owner} installed at {self.node}")
        self.rulesets[rs.connection_id] = rs
        rs.started_at = self.phys.kernel.now()

    def uninstall(self, connection_id: int) -> RuleSet | None:
        rs = self.rulesets.pop(connection_id, None)
        if rs is not None:
            for res in list(rs.resources.values()):
                self._drop(rs, res, "discarded")
        return rs

    def held(self) -> int:
        return sum(len(rs.resources) for rs in self.rulesets.values())

    def audit(self) -> bool:
        c = self.counters
        used = c["purify_consumed"] + c["swap_consumed"] + c["measured"] + c["discarded"]
        return c["admitted"] == used + self.held()

    def partner_of(self, rs: RuleSet, res: Resource) -> str:
        lo, hi = rs.book.span(res.pid)
        return rs.path[lo] if res.side == 0 else rs.path[hi + 1]

    def admit(self, connection_id: int, side: int, pid: tuple, qubit: QubitRecord) -> None:
        """A fresh link-level pair enters the ruleset's entry rule for ``side``."""
        rs = self.rulesets[connection_id]
        res = Resource(pid, qubit, side)
        res.partner = self.partner_of(rs, res)
        rs.resources[pid] = res
        self.counters["admitted"] += 1
        if rs.book.is_failed(pid):
            self._drop(rs, res, "discarded")
            return
        rs.rules[rs.entry[side]].add(res)

    def _remove(self, rs: RuleSet, res: Resource) -> None:
        rs.resources.pop(res.pid, None)
        if res.rule is not None:
            res.rule.discard(res)

    def _drop(self, rs: RuleSet, res: Resource, counter: str) -> None:
        self._remove(rs, res)
        self.counters[counter] += 1
        self.release(res.qubit)

    def promote(self, rs: RuleSet, res: Resource, from_rule: Rule, to_rule: int | None) -> None:
        if res.rule is not from_rule:
            log.warning("%s: promote of pair %s not held by rule %s", self.node, res.pid, from_rule.key)
            return
        from_rule.discard(res)
        if to_rule is None:
            # nothing after the last rule: the pair has been handed over
            rs.resources.pop(res.pid, None)
            self.counters["measured"] += 1
            self.release(res.qubit)
            return
        rs.rules[to_rule].add(res)

    def _fold(self, rs: RuleSet, res: Resource) -> QubitRecord:
        """Apply corrections announced for this pair's chain to the local qubit."""
        bits = rs.book.take_correction(res.pid)
        if bits != (0, 0):
            res.qubit.xor_frame(bits)
        return res.qubit

    # ---- rule evaluation ---------------------------------------------------

    def _local(self, rs: RuleSet, name: tuple) -> Resource | None:
        """This node's resource on the chain called ``name``, if any."""
        book = rs.book
        if name not in book.parent:
            return None
        for pid in book.members[book.find(name)]:
            res = rs.resources.get(pid)
            if res is not None:
                return res
        return None

    def _find_request(self, rs: RuleSet, rule: Rule):
        for i, (names, msg) in enumerate(rule.requests):
            found = []
            for name in names:
                res = self._local(rs, name)
                if res is None or res.rule is not rule or res.busy:
                    break
                found.append(res)
            else:
                return i, found
        return None

    def check_conditions(self, rs: RuleSet, rule: Rule) -> bool:
        now = self.phys.kernel.now()
        for clause in rule.clauses:
            if isinstance(clause, EnoughResource):
                if rule.idle_count(clause.partner) < clause.threshold:
                    return False
            elif isinstance(clause, MeasureCount):
                if rule.issued >= clause.total:
                    return False
            elif isinstance(clause, Timer):
                if now < clause.deadline:
                    return False
            elif isinstance(clause, Fidelity):
                if rs.expected_fidelity < clause.threshold:
                    return False
            elif isinstance(clause, PartnerRequest):
                if self._find_request(rs, rule) is None:
                    return False
        return True

    def evaluate(self, rs: RuleSet) -> None:
        progress = True
        while progress and rs.connection_id in self.rulesets:
            progress = False
            for rule in rs.rules:
                while rs.connection_id in self.rulesets and self.check_conditions(rs, rule):
                    self.execute_action(rs, rule)
                    progress = True

    def run(self) -> None:
        for rs in list(self.rulesets.values()):
            self.evaluate(rs)

    def execute_action(self, rs: RuleSet, rule: Rule) -> None:
        a = rule.action
        if isinstance(a, Wait):
            ready = rule.idle_list(a.partner)
            for res in ready:
                self.promote(rs, res, rule, rule.next)
        elif isinstance(a, Purify):
            if a.leader:
                self._purify_lead(rs, rule, a)
            else:
                self._purify_follow(rs, rule, a)
        elif isinstance(a, Swap):
            self._swap(rs, rule, a)
        elif isinstance(a, Tomography):
            if a.leader:
                self._tomo_lead(rs, rule, a)
            else:
                self._tomo_follow(rs, rule, a)
        else:
            raise RuleSetError(f"unknown action {a!r}")

    # ---- purification ------------------------------------------------------

    def _readout_basis(self, basis: str) -> str:
        # X-type compares Z readouts of the sacrificed pair, Z-type the dual
        return "Z" if basis == "X" else "X"

    def _local_halves(self, rs: RuleSet, kept: Resource, sac: Resource):
        phys = self.phys
        qk, qs = self._fold(rs, kept), self._fold(rs, sac)
        phys.advance(qk)
        phys.advance(qs)
        phys.gate(qk, "cnot")
        phys.gate(qs, "cnot")
        hk = phys.half_error(qk, phys.collapse(qk))
        hs = phys.half_error(qs, phys.collapse(qs))
        return qk, qs, hk, hs

    def _purify_lead(self, rs: RuleSet, rule: Rule, a: Purify) -> None:
        kept, sac = rule.idle_list(a.partner, 2)
        rule.set_busy(kept)
        rule.set_busy(sac)
        qk, qs, hk, hs = self._local_halves(rs, kept, sac)
        pk, ps = qk.live_partner(), qs.live_partner()
        if hk.lost or hs.lost or pk is None or ps is None:
            bit = LOST_BIT
        else:
            r = self.phys.rng.getrandbits(1)
            # the leader's error contribution travels with the partner's qubits
            ps.stash = ("purify", hk, hs, r)
            bit = r ^ self.phys.readout_flip(self._readout_basis(a.basis))
        qk.vector = CLEAN
        qk.fx = qk.fz = 0
        qk.decohered = False
        names = (rs.book.name(kept.pid), rs.book.name(sac.pid))
        rule.pending[names] = (kept, sac, bit)
        self.send(a.partner, make(MessageKind.PURIFICATION_PARITY, self.node, ruleset=rs.connection_id,
                                  rule=rule.key, stage="request", kept=names[0], sacrificed=names[1],
                                  basis=a.basis, bit=bit))

    def _purify_follow(self, rs: RuleSet, rule: Rule, a: Purify) -> None:
        i, (kept, sac) = self._find_request(rs, rule)
        _, msg = rule.requests.pop(i)
        qk, qs, hk, hs = self._local_halves(rs, kept, sac)
        stash = qs.stash
        if hk.lost or hs.lost or msg["bit"] == LOST_BIT or not stash or stash[0] != "purify":
            bit = LOST_BIT
            success = False
        else:
            _, lk, ls, r = stash
            res = purify(lk.xor(hk), ls.xor(hs), a.basis)
            bit = r ^ (0 if res.success else 1) ^ self.phys.readout_flip(self._readout_basis(a.basis))
            success = bit == msg["bit"]
            # the pair's error now lives entirely in this qubit's frame
            qk.vector = CLEAN
            qk.fx, qk.fz = res.kept.bits
            qk.decohered = res.kept.decohered
        self.send(a.partner, make(MessageKind.PURIFICATION_PARITY, self.node, ruleset=rs.connection_id,
                                  rule=rule.key, stage="reply", kept=msg["kept"],
                                  sacrificed=msg["sacrificed"], basis=a.basis, bit=bit))
        self._finish_purify(rs, rule, kept, sac, success)

    def _finish_purify(self, rs: RuleSet, rule: Rule, kept: Resource, sac: Resource, success: bool) -> None:
        self._drop(rs, sac, "purify_consumed")
        if success:
            self.promote(rs, kept, rule, rule.next)
        else:
            self._drop(rs, kept, "purify_consumed")

    # ---- swapping ----------------------------------------------------------

    def _swap(self, rs: RuleSet, rule: Rule, a: Swap) -> None:
        (left,) = rule.idle_list(a.left, 1)
        (right,) = rule.idle_list(a.right, 1)
        phys = self.phys
        q1, q2 = self._fold(rs, left), self._fold(rs, right)
        phys.advance(q1)
        phys.advance(q2)
        phys.gate(q1, "cnot")
        phys.gate(q2, "cnot")
        phys.gate(q1, "h")
        h1 = phys.half_error(q1, phys.collapse(q1))
        h2 = phys.half_error(q2, phys.collapse(q2))
        pa, pc = q1.live_partner(), q2.live_partner()
        members_l = rs.book.chain(left.pid)
        members_r = rs.book.chain(right.pid)
        ok = not (h1.lost or h2.lost or pa is None or pc is None)
        correction = (0, 0)
        if ok:
            m = (phys.rng.getrandbits(1), phys.rng.getrandbits(1))
            # Bell outcome m plus this node's errors land on the right partner's qubit
            carried = h1.xor(h2).xor(PairError(*m))
            pc.xor_frame(carried.bits)
            if carried.decohered:
                pc.decohered = True
            entangle(pa, pc)
            correction = (m[0] ^ phys.readout_flip("Z"), m[1] ^ phys.readout_flip("X"))
        self._drop(rs, left, "swap_consumed")
        self._drop(rs, right, "swap_consumed")
        for dest, bits in ((a.notify_left, (0, 0)), (a.notify_right, correction)):
            self.send(dest, make(MessageKind.SWAP_RESULT, self.node, ruleset=rs.connection_id,
                                 swapper=self.node, left=members_l, right=members_r,
                                 correction=bits, success=ok))

    # ---- tomography --------------------------------------------------------

    def _tomo_lead(self, rs: RuleSet, rule: Rule, a: Tomography) -> None:
        (res,) = rule.idle_list(a.partner, 1)
        if rule.retry_combos:
            combo = rule.retry_combos.pop(0)
        else:
            combo = rule.combo_counter % len(COMBOS)
            rule.combo_counter += 1
        ba, bb = COMBOS[combo]
        phys = self.phys
        q = self._fold(rs, res)
        h = phys.half_error(q, phys.collapse(q))
        p = q.live_partner()
        name = rs.book.name(res.pid)
        lost = h.lost or p is None
        outcome = 0
        if not lost:
            ideal = ideal_outcome(h, ba, phys.rng)
            p.stash = ("tomo", h, ba, ideal)
            outcome = -ideal if phys.readout_flip(ba) else ideal
            rule.issued += 1
            rule.pending[name] = (combo, outcome)
        else:
            rule.retry_combos.append(combo)
        self._remove(rs, res)
        self.counters["measured"] += 1
        self.release(q)
        self.send(a.partner, make(MessageKind.TOMOGRAPHY_RESULT, self.node, ruleset=rs.connection_id,
                                  stage="request", pair=name, combo=combo, basis=bb,
                                  outcome=outcome, lost=lost))

    def _tomo_follow(self, rs: RuleSet, rule: Rule, a: Tomography) -> None:
        i, (res,) = self._find_request(rs, rule)
        _, msg = rule.requests.pop(i)
        phys = self.phys
        q = self._fold(rs, res)
        h = phys.half_error(q, phys.collapse(q))
        stash = q.stash
        lost = msg["lost"] or h.lost or not stash or stash[0] != "tomo"
        outcome = 0
        if not lost:
            _, ha, ba, ideal_a = stash
            pair = ha.xor(h)
            bb = msg["basis"]
            ideal = ideal_outcome(pair, bb, phys.rng, partner=(ba, ideal_a))
            outcome = -ideal if phys.readout_flip(bb) else ideal
        self._remove(rs, res)
        self.counters["measured"] += 1
        self.release(q)
        if not msg["lost"]:
            self.send(a.partner, make(MessageKind.TOMOGRAPHY_RESULT, self.node, ruleset=rs.connection_id,
                                      stage="reply", pair=msg["pair"], combo=msg["combo"],
                                      basis=msg["basis"], outcome=outcome, lost=lost))

    # ---- messages ----------------------------------------------------------

    def handle_message(self, msg: Message) -> None:
        rs = self.rulesets.get(msg["ruleset"])
        if rs is None:
            self.dropped_messages += 1  # connection already torn down here
            return
        kind = msg.kind
        if kind is MessageKind.SWAP_RESULT:
            root = rs.book.union(list(msg["left"]) + list(msg["right"]))
            for pid in rs.book.members[root]:
                res = rs.resources.get(pid)
                if res is not None and res.rule is not None:
                    res.rule.repartner(res, self.partner_of(rs, res))
            if not msg["success"]:
                rs.book.fail(root)
                for pid in list(rs.book.members[root]):
                    res = rs.resources.get(pid)
                    if res is not None:
                        self._drop(rs, res, "discarded")
            elif msg["correction"] != (0, 0):
                rs.book.add_correction(root, msg["correction"])
        elif kind is MessageKind.PURIFICATION_PARITY:
            rule = rs.rule_by_key(msg["rule"])
            if rule is None:
                raise RuleSetError(f"{self.node}: no rule {msg['rule']!r}")
            names = (tuple(msg["kept"]), tuple(msg["sacrificed"]))
            if msg["stage"] == "request":
                rule.requests.append((names, msg))
            else:
                kept, sac, bit = rule.pending.pop(names)
                success = bit != LOST_BIT and bit == msg["bit"]
                self._finish_purify(rs, rule, kept, sac, success)
        elif kind is MessageKind.TOMOGRAPHY_RESULT:
            rule = next(r for r in rs.rules if isinstance(r.action, Tomography))
            name = tuple(msg["pair"])
            if msg["stage"] == "request":
                # a lost request still frees our half, without a reply
                rule.requests.append(((name,), msg))
            else:
                combo, outcome = rule.pending.pop(name)
                if msg["lost"]:
                    rule.issued -= 1
                    rule.retry_combos.append(combo)
                else:
                    ba, bb = COMBOS[combo]
                    record = TomographyRecord(ba, bb, outcome, msg["outcome"], self.phys.kernel.now())
                    rs.records.append(record)
                    if self.on_record is not None:
                        self.on_record(rs, record)
        else:
            raise RuleSetError(f"rule engine cannot handle {kind.value}")
        if rs.connection_id in self.rulesets:
            self.evaluate(rs)

