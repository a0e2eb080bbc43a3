"""Topology and parameter file formats.

Topology grammar (one declaration per line, ``#`` starts a comment)::

    # qrsim-topology v1
    node <name> <EndNode|Repeater|Router|BSA> [qnic_size=<n>]
    link <a> <b> distance=<km> [arch=MIM|MM] [cost=<c>] [bsa=<name>]

MIM links get an analyzer node named ``<a>-<b>.bsa`` unless ``bsa=`` names
a declared BSA node.  MM links put the analyzer at endpoint ``b``.

Parameter files are ``key = value`` lines, optionally headed by
``# qrsim-params v1``.  Unknown keys produce a warning and are ignored.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, fields, replace
from typing import Any

from .error_basis import InvalidRatesError, make_transition_matrix, rates_from_errors
from .network_model import LinkSpec

log = logging.getLogger(__name__)

NODE_KINDS = ("EndNode", "Repeater", "Router", "BSA")
ARCHITECTURES = ("MIM", "MM")
DEFAULT_QNIC_SIZE = 100
DEFAULT_SEED = 1
TOPOLOGY_HEADER = "# qrsim-topology v1"
PARAMS_HEADER = "# qrsim-params v1"


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class NodeSpec:
    name: str
    kind: str
    qnic_size: int = DEFAULT_QNIC_SIZE
    declared: bool = True  # False for analyzers created implicitly by MIM links


@dataclass
class Topology:
    nodes: dict[str, NodeSpec] = field(default_factory=dict)
    links: list[LinkSpec] = field(default_factory=list)

    @property
    def end_nodes(self) -> list[str]:
        return [n.name for n in self.nodes.values() if n.kind == "EndNode"]

    @property
    def repeater_count(self) -> int:
        return sum(1 for n in self.nodes.values() if n.kind in ("Repeater", "Router"))

    def total_qubits(self) -> int:
        """One QNIC per link endpoint, sized by the owning node."""
        return sum(self.nodes[l.a].qnic_size + self.nodes[l.b].qnic_size for l in self.links)

    def neighbors(self, name: str) -> list[tuple[str, int]]:
        out = []
        for i, l in enumerate(self.links):
            if l.a == name:
                out.append((l.b, i))
            elif l.b == name:
                out.append((l.a, i))
        return out

    def is_connected(self) -> bool:
        names = [n for n, spec in self.nodes.items() if spec.kind != "BSA"]
        if not names:
            return True
        seen = {names[0]}
        stack = [names[0]]
        while stack:
            for nb, _ in self.neighbors(stack.pop()):
                if nb not in seen:
                    seen.add(nb)
                    stack.append(nb)
        return seen >= set(names)


def _kv(tokens: list[str], lineno: int) -> dict[str, str]:
    out = {}
    for tok in tokens:
        if "=" not in tok:
            raise ConfigError(f"line {lineno}: expected key=value, got {tok!r}")
        k, v = tok.split("=", 1)
        out[k] = v
    return out


def _number(text: str, key: str, lineno: int, cast=float):
    try:
        value = cast(text)
    except ValueError:
        raise ConfigError(f"line {lineno}: {key} must be a number, got {text!r}") from None
    if isinstance(value, float) and not math.isfinite(value):
        raise ConfigError(f"line {lineno}: {key} must be finite")
    return value


def parse_topology(text: str) -> Topology:
    topo = Topology()
    pending_links = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        tokens = line.split()
        head = tokens[0]
        if head == "node":
            if len(tokens) < 3:
                raise ConfigError(f"line {lineno}: node needs a name and a kind")
            name, kind = tokens[1], tokens[2]
            if kind not in NODE_KINDS:
                raise ConfigError(f"line {lineno}: unknown node kind {kind!r}")
            if name in topo.nodes:
                raise ConfigError(f"line {lineno}: duplicate node name {name!r}")
            opts = _kv(tokens[3:], lineno)
            size = DEFAULT_QNIC_SIZE
            for k, v in opts.items():
                if k != "qnic_size":
                    raise ConfigError(f"line {lineno}: unknown node option {k!r}")
                size = _number(v, k, lineno, int)
                if size < 1:
                    raise ConfigError(f"line {lineno}: qnic_size must be at least 1")
            topo.nodes[name] = NodeSpec(name, kind, size)
        elif head == "link":
            if len(tokens) < 3:
                raise ConfigError(f"line {lineno}: link needs two endpoints")
            pending_links.append((lineno, tokens[1], tokens[2], _kv(tokens[3:], lineno)))
        else:
            raise ConfigError(f"line {lineno}: unknown declaration {head!r}")

    for lineno, a, b, opts in pending_links:
        for end in (a, b):
            if end not in topo.nodes:
                raise ConfigError(f"line {lineno}: link references unknown node {end!r}")
            if topo.nodes[end].kind == "BSA":
                raise ConfigError(f"line {lineno}: BSA node {end!r} cannot terminate a link")
        if a == b:
            raise ConfigError(f"line {lineno}: link endpoints must differ")
        unknown = set(opts) - {"distance", "arch", "cost", "bsa"}
        if unknown:
            raise ConfigError(f"line {lineno}: unknown link option {sorted(unknown)[0]!r}")
        if "distance" not in opts:
            raise ConfigError(f"line {lineno}: link needs distance=<km>")
        dist = _number(opts["distance"], "distance", lineno)
        if dist < 0:
            raise ConfigError(f"line {lineno}: negative distance")
        arch = opts.get("arch", "MIM")
        if arch not in ARCHITECTURES:
            raise ConfigError(f"line {lineno}: arch must be MIM or MM")
        cost = _number(opts.get("cost", "1"), "cost", lineno)
        if cost <= 0:
            raise ConfigError(f"line {lineno}: cost must be positive")
        bsa = None
        if arch == "MIM":
            bsa = opts.get("bsa", f"{a}-{b}.bsa")
            if "bsa" in opts:
                if bsa not in topo.nodes or topo.nodes[bsa].kind != "BSA":
                    raise ConfigError(f"line {lineno}: bsa={bsa!r} is not a declared BSA node")
            elif bsa in topo.nodes:
                raise ConfigError(f"line {lineno}: implicit analyzer name {bsa!r} already taken")
            else:
                topo.nodes[bsa] = NodeSpec(bsa, "BSA", 1, declared=False)
        elif "bsa" in opts:
            raise ConfigError(f"line {lineno}: MM links host their analyzer at {b!r}")
        if bsa is not None and any(l.bsa == bsa for l in topo.links):
            raise ConfigError(f"line {lineno}: analyzer {bsa!r} already serves another link")
        topo.links.append(LinkSpec(a, b, dist, arch, cost, bsa))

    if not topo.is_connected():
        log.warning("topology graph is not connected")
    return topo


def _fmt(x: float) -> str:
    x = float(x)
    return str(int(x)) if x.is_integer() and abs(x) < 1e15 else repr(x)


def serialize_topology(topo: Topology) -> str:
    lines = [TOPOLOGY_HEADER]
    for n in topo.nodes.values():
        if not n.declared:
            continue
        extra = f" qnic_size={n.qnic_size}" if n.kind != "BSA" else ""
        lines.append(f"node {n.name} {n.kind}{extra}")
    for l in topo.links:
        parts = [f"link {l.a} {l.b} distance={_fmt(l.distance_km)} arch={l.architecture} cost={_fmt(l.cost)}"]
        if l.architecture == "MIM" and topo.nodes[l.bsa].declared:
            parts.append(f"bsa={l.bsa}")
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class ParamSet:
    # channel, per km
    channel_x_error_rate: float = 0.0
    channel_y_error_rate: float = 0.0
    channel_z_error_rate: float = 0.0
    channel_loss_rate: float = 0.0
    # memory, per update interval
    memory_x_error_rate: float = 0.0
    memory_y_error_rate: float = 0.0
    memory_z_error_rate: float = 0.0
    memory_relaxation_rate: float = 0.0
    memory_excitation_rate: float = 0.0
    memory_loss_rate: float = 0.0
    memory_update_interval: float = 1e-6
    # gates
    h_gate_x_error_rate: float = 0.0
    h_gate_y_error_rate: float = 0.0
    h_gate_z_error_rate: float = 0.0
    x_gate_x_error_rate: float = 0.0
    x_gate_y_error_rate: float = 0.0
    x_gate_z_error_rate: float = 0.0
    z_gate_x_error_rate: float = 0.0
    z_gate_y_error_rate: float = 0.0
    z_gate_z_error_rate: float = 0.0
    cnot_gate_x_error_rate: float = 0.0
    cnot_gate_y_error_rate: float = 0.0
    cnot_gate_z_error_rate: float = 0.0
    # readout: total rate split evenly over X/Y/Z unless given per component
    measurement_error_rate: float = 0.0
    measurement_x_error_rate: float | None = None
    measurement_y_error_rate: float | None = None
    measurement_z_error_rate: float | None = None
    # link hardware
    bsa_success_probability: float = 1.0
    bsa_dark_count_probability: float = 0.0
    emission_success_probability: float = 1.0
    emission_interval: float = 1e-6
    link_tomography_pairs: int = 1000
    # application and protocol
    traffic_pattern: str = "single-random"
    initiator: str | None = None
    responder: str | None = None
    measurement_count: int = 8000
    link_purification_rounds: int = 0
    e2e_purification_rounds: int = 0
    purification_type: str = "X"
    swap_policy: str = "binary-tree"
    retry_interval: float = 1e-3
    sim_time_limit: float = 10.0
    seed: int = DEFAULT_SEED
    qnic_size: int | None = None

    def channel_rates(self) -> tuple:
        return rates_from_errors(self.channel_x_error_rate, self.channel_y_error_rate,
                                 self.channel_z_error_rate, loss=self.channel_loss_rate)

    def memory_rates(self) -> tuple:
        return rates_from_errors(self.memory_x_error_rate, self.memory_y_error_rate,
                                 self.memory_z_error_rate, self.memory_relaxation_rate,
                                 self.memory_excitation_rate, self.memory_loss_rate)

    def gate_rates(self, gate: str) -> tuple:
        g = gate.lower()
        return rates_from_errors(getattr(self, f"{g}_gate_x_error_rate"),
                                 getattr(self, f"{g}_gate_y_error_rate"),
                                 getattr(self, f"{g}_gate_z_error_rate"))

    def measurement_pauli(self) -> tuple[float, float, float]:
        third = self.measurement_error_rate / 3.0
        comps = (self.measurement_x_error_rate, self.measurement_y_error_rate,
                 self.measurement_z_error_rate)
        return tuple(third if c is None else c for c in comps)

    def with_overrides(self, **kw) -> "ParamSet":
        return validate_params(replace(self, **kw))


_PROBABILITIES = [
    f.name for f in fields(ParamSet)
    if f.name.endswith(("_rate", "_probability")) and f.name != "retry_interval"
]
_CHOICES = {
    "traffic_pattern": ("single-random", "all-to-random"),
    "purification_type": ("X", "Z", "XZ"),
    "swap_policy": ("binary-tree", "swap-once-ready"),
}
# names accepted for compatibility with the original parameter files
ALIASES = {
    "Measurement_error_rate": "measurement_error_rate",
    "TrafficPattern": "traffic_pattern",
    "distant_measure_count": "measurement_count",
    "buffers": "qnic_size",
    "sim-time-limit": "sim_time_limit",
    "sim_time_limit_s": "sim_time_limit",
}
_TRAFFIC_CODES = {"1": "single-random", "2": "all-to-random"}


def validate_params(p: ParamSet) -> ParamSet:
    for name in _PROBABILITIES:
        v = getattr(p, name)
        if v is None:
            continue
        if not (0.0 <= v <= 1.0):
            raise ConfigError(f"{name} must lie in [0, 1], got {v}")
    for name, options in _CHOICES.items():
        if getattr(p, name) not in options:
            raise ConfigError(f"{name} must be one of {', '.join(options)}")
    for name in ("memory_update_interval", "emission_interval", "retry_interval"):
        if not getattr(p, name) > 0:
            raise ConfigError(f"{name} must be positive")
    if not p.sim_time_limit > 0:
        raise ConfigError("sim_time_limit must be positive")
    for name in ("measurement_count", "link_tomography_pairs"):
        if getattr(p, name) < 1:
            raise ConfigError(f"{name} must be at least 1")
    for name in ("link_purification_rounds", "e2e_purification_rounds"):
        if getattr(p, name) < 0:
            raise ConfigError(f"{name} must be non-negative")
    if p.qnic_size is not None and p.qnic_size < 1:
        raise ConfigError("qnic_size must be at least 1")
    groups = {
        "channel": p.channel_rates,
        "memory": p.memory_rates,
        "h_gate": lambda: p.gate_rates("h"),
        "x_gate": lambda: p.gate_rates("x"),
        "z_gate": lambda: p.gate_rates("z"),
        "cnot_gate": lambda: p.gate_rates("cnot"),
        "measurement": lambda: rates_from_errors(*p.measurement_pauli()),
    }
    for group, rates in groups.items():
        try:
            make_transition_matrix(rates())
        except InvalidRatesError as exc:
            raise ConfigError(f"{group} error rates are not a valid distribution: {exc}") from None
    return p


def _coerce(name: str, text: str, lineno: int) -> Any:
    ftype = {f.name: f.type for f in fields(ParamSet)}[name]
    if name == "traffic_pattern":
        return _TRAFFIC_CODES.get(text, text)
    if ftype in ("str", "str | None"):
        return text
    text_l = text.lower()
    if ftype in ("int", "int | None"):
        return _number(text, name, lineno, int)
    if text_l in ("inf", "infinity"):
        return math.inf
    value = _number(text.rstrip("s") if name == "sim_time_limit" else text, name, lineno)
    return value


def parse_params(text: str) -> ParamSet:
    known = {f.name for f in fields(ParamSet)}
    values: dict[str, Any] = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        value = value.strip('"')
        name = ALIASES.get(key, key)
        if name not in known:
            log.warning("line %d: unknown parameter %r ignored", lineno, key)
            continue
        values[name] = _coerce(name, value, lineno)
    return validate_params(ParamSet(**values))


def serialize_params(p: ParamSet) -> str:
    lines = [PARAMS_HEADER]
    for f in fields(ParamSet):
        v = getattr(p, f.name)
        if v is None:
            continue
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
