"""Canned experiments: the two-hop validation sweep, chain scaling, backend timing."""

from __future__ import annotations

import random
import time
from dataclasses import dataclass

import numpy as np

from . import backend
from .config_io import ParamSet, Topology, parse_topology
from .error_basis import make_transition_matrix, rates_from_errors
from .simulation import simulate
from .tomography_stats import analytic_oracle, fidelity_standard_error


def linear_chain(n_repeaters: int, distance_km: float = 1.0, qnic_size: int = 100,
                 arch: str = "MIM") -> Topology:
    names = ["A"] + [f"R{i}" for i in range(1, n_repeaters + 1)] + ["Z"]
    lines = [f"node {n} {'EndNode' if n in ('A', 'Z') else 'Repeater'} qnic_size={qnic_size}" for n in names]
    lines += [f"link {a} {b} distance={distance_km} arch={arch}" for a, b in zip(names, names[1:])]
    return parse_topology("\n".join(lines))


def two_hop(distance_km: float, qnic_size: int = 100) -> Topology:
    """A - B - C with the analyzer of each link at its far end."""
    return parse_topology(
        f"node A EndNode qnic_size={qnic_size}\nnode B Repeater qnic_size={qnic_size}\n"
        f"node C EndNode qnic_size={qnic_size}\n"
        f"link A B distance={distance_km} arch=MM\nlink B C distance={distance_km} arch=MM\n"
    )


@dataclass
class ValidationRow:
    distance_km: float
    fidelities: list
    mean: float
    pooled_se: float
    p_clean: float
    oracle: float

    @property
    def deviation(self) -> float:
        return self.mean - self.oracle

    @property
    def within(self) -> bool:
        return abs(self.deviation) <= 3 * self.pooled_se


def validation_sweep(px: float = 0.02, distances=range(1, 11), measurements: int = 7000,
                     seeds=range(1, 11), base: ParamSet | None = None, progress=None) -> list[ValidationRow]:
    base = base or ParamSet()
    params = base.with_overrides(channel_x_error_rate=px, measurement_count=measurements,
                                 initiator="A", responder="C")
    rows = []
    for d in distances:
        fids, pooled = [], []
        for seed in seeds:
            results, _, _ = simulate(two_hop(d), params, seed=seed)
            fids.append(results[0].fidelity)
            pooled.extend(results[0].records)
        p_clean, f_ac = analytic_oracle(px, d)
        rows.append(ValidationRow(d, fids, float(np.mean(fids)), fidelity_standard_error(pooled), p_clean, f_ac))
        if progress:
            progress(rows[-1])
    return rows


@dataclass
class ScalingRow:
    repeaters: int
    pairs: int
    cpu_seconds: float
    wall_seconds: float
    events: int
    completed: bool

    @property
    def cpu_per_pair(self) -> float:
        return self.cpu_seconds / self.pairs

    @property
    def events_per_pair(self) -> float:
        return self.events / self.pairs

    @property
    def events_per_second(self) -> float:
        return self.events / self.wall_seconds if self.wall_seconds > 0 else 0.0


def scaling_params(pairs: int = 200, success: float = 0.32, base: ParamSet | None = None) -> ParamSet:
    base = base or ParamSet()
    return base.with_overrides(bsa_success_probability=success, measurement_count=pairs,
                               link_purification_rounds=1, e2e_purification_rounds=1,
                               swap_policy="binary-tree", initiator="A", responder="Z")


def scaling_sweep(repeaters=(1, 3, 7, 15), qnic_size: int = 100, success: float = 0.32, pairs: int = 200,
                  seed: int = 1, base: ParamSet | None = None, progress=None) -> list[ScalingRow]:
    params = scaling_params(pairs, success, base)
    rows = []
    for n in repeaters:
        results, stats, _ = simulate(linear_chain(n, qnic_size=qnic_size), params, seed=seed)
        rows.append(ScalingRow(n, results[0].measurement_count, stats.cpu_seconds,
                               stats.wall_clock_seconds, stats.events_processed, results[0].completed))
        if progress:
            progress(rows[-1])
    return rows


def polynomial_fit(x, y, degree: int = 2) -> tuple[np.ndarray, float]:
    """Least-squares polynomial and its coefficient of determination."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    coeffs = np.polyfit(x, y, degree)
    resid = y - np.polyval(coeffs, x)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 - float(np.sum(resid ** 2)) / ss_tot if ss_tot > 0 else 1.0
    return coeffs, r2


@dataclass
class BackendTiming:
    backend: str
    kernel_seconds: float
    simulation_seconds: float | None


def _kernel_workload(n: int = 20000) -> float:
    rng = random.Random(5)
    q = make_transition_matrix(rates_from_errors(0.001, 0.001, 0.002, 0.0005, 0.0005, 0.0001))
    start = time.perf_counter()
    v = (1.0, 0, 0, 0, 0, 0, 0)
    for i in range(n):
        v = backend.K.evolve_powers(v, q.power_table(1 + i % 500), 1 + i % 500)
        backend.K.sample_index(v, rng.random())
        v = backend.K.vecmat(v, q.flat)
    return time.perf_counter() - start


def backend_benchmark(with_simulation: bool = True, repeaters: int = 3) -> list[BackendTiming]:
    """Time the error-vector kernels and one chain run under each available backend."""
    previous = backend.active()
    out = []
    try:
        for name in ("compiled", "python"):
            if name not in backend.available():
                continue
            backend.use(name)
            k = _kernel_workload()
            sim = None
            if with_simulation:
                # memory and channel noise so the run actually exercises the kernels
                noisy = ParamSet(memory_x_error_rate=1e-4, memory_z_error_rate=1e-4,
                                 channel_x_error_rate=0.01)
                _, stats, _ = simulate(linear_chain(repeaters), scaling_params(base=noisy), seed=1)
                sim = stats.cpu_seconds
            out.append(BackendTiming(name, k, sim))
    finally:
        backend.use(previous)
    return out
