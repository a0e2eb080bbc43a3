"""Discrete-event simulator for quantum repeater networks in the error basis."""

from .config_io import ParamSet, Topology, parse_params, parse_topology
from .simulation import Network, simulate

__version__ = "0.1.0"

__all__ = ["Network", "ParamSet", "Topology", "parse_params", "parse_topology", "simulate"]
