"""Tomography of Bell pairs in the error basis and run reporting."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from itertools import product

import numpy as np

from .error_basis import PairError

BASES = ("X", "Y", "Z")
COMBOS = tuple(product(BASES, BASES))  # round-robin schedule, index = 3*a + b

# sign of the same-basis correlator for each Bell label, by (x, z) bits
_SIGNS = {
    "X": lambda x, z: -1 if z else 1,
    "Y": lambda x, z: 1 if x ^ z else -1,
    "Z": lambda x, z: -1 if x else 1,
}


class TomographyError(ValueError):
    pass


def correlator(pair: PairError, basis: str) -> int:
    """Expected product of same-basis outcomes on a pure Bell pair."""
    return _SIGNS[basis](pair.x, pair.z)


def ideal_outcome(pair: PairError, basis: str, rng, partner: tuple[str, int] | None = None) -> int:
    """Error-free outcome of measuring one half of ``pair`` in ``basis``.

    ``partner`` is the (basis, outcome) already obtained on the other half.
    Without it, or for mismatched bases or decohered pairs, the outcome is a
    fair coin, which is what a maximally entangled half looks like locally.
    """
    if pair.lost:
        raise TomographyError("cannot measure a lost pair")
    coin = 1 if rng.random() < 0.5 else -1
    if partner is None or pair.decohered or partner[0] != basis:
        return coin
    return partner[1] * correlator(pair, basis)


def local_outcome(pair: PairError, basis: str, side: int, rng, meas_error: float = 0.0,
                  partner: tuple[str, int] | None = None) -> int:
    """Observed outcome on ``side`` including a readout flip of probability ``meas_error``.

    ``side`` only documents which end is measuring; the joint statistics do
    not depend on the order.
    """
    if side not in (0, 1):
        raise ValueError("side must be 0 or 1")
    out = ideal_outcome(pair, basis, rng, partner)
    if meas_error > 0 and rng.random() < meas_error:
        out = -out
    return out


@dataclass(frozen=True)
class TomographyRecord:
    basis_a: str
    basis_b: str
    outcome_a: int
    outcome_b: int
    timestamp: float = 0.0


def correlators(records) -> dict[str, tuple[float, int]]:
    """Same-basis correlator means and sample counts."""
    sums = {b: 0 for b in BASES}
    counts = {b: 0 for b in BASES}
    for r in records:
        if r.basis_a == r.basis_b:
            sums[r.basis_a] += r.outcome_a * r.outcome_b
            counts[r.basis_a] += 1
    return {b: (sums[b] / counts[b] if counts[b] else math.nan, counts[b]) for b in BASES}


def estimate_fidelity(records) -> float:
    """Fidelity to Phi+ from the XX, YY and ZZ correlators, clamped to [0, 1]."""
    c = correlators(records)
    for b in BASES:
        if c[b][1] == 0:
            raise TomographyError(f"no {b}{b} records")
    f = (1 + c["X"][0] - c["Y"][0] + c["Z"][0]) / 4
    return min(1.0, max(0.0, f))


def fidelity_standard_error(records) -> float:
    c = correlators(records)
    var = 0.0
    for b in BASES:
        mean, n = c[b]
        if n == 0:
            raise TomographyError(f"no {b}{b} records")
        var += (1 - mean * mean) / n
    return math.sqrt(var) / 4


_PAULI = {
    "I": np.eye(2, dtype=complex),
    "X": np.array([[0, 1], [1, 0]], dtype=complex),
    "Y": np.array([[0, -1j], [1j, 0]], dtype=complex),
    "Z": np.array([[1, 0], [0, -1]], dtype=complex),
}


def reconstruct_density_matrix(records) -> np.ndarray:
    """Linear-inversion two-qubit state from the nine basis combinations.

    Single-qubit expectations are pooled over every record measuring that
    side in the basis.  The result may be slightly non-physical at low counts.
    """
    corr: dict[tuple[str, str], list] = {}
    side_a: dict[str, list] = {b: [] for b in BASES}
    side_b: dict[str, list] = {b: [] for b in BASES}
    for r in records:
        corr.setdefault((r.basis_a, r.basis_b), []).append(r.outcome_a * r.outcome_b)
        side_a[r.basis_a].append(r.outcome_a)
        side_b[r.basis_b].append(r.outcome_b)
    missing = [a + b for a, b in COMBOS if (a, b) not in corr]
    if missing:
        raise TomographyError(f"no {missing[0]} records")
    rho = np.kron(_PAULI["I"], _PAULI["I"])
    for b in BASES:
        rho = rho + np.mean(side_a[b]) * np.kron(_PAULI[b], _PAULI["I"])
        rho = rho + np.mean(side_b[b]) * np.kron(_PAULI["I"], _PAULI[b])
    for a, b in COMBOS:
        rho = rho + np.mean(corr[(a, b)]) * np.kron(_PAULI[a], _PAULI[b])
    return rho / 4


def analytic_oracle(px_per_km: float, distance_km: float) -> tuple[float, float]:
    """Clean-photon probability and swapped-pair fidelity for X-only channel errors.

    A photon crossing ``d`` km flips an odd number of times with probability
    ``(1 - (1 - 2p)^d) / 2``; the two-hop pair is clean when both links are
    clean or both flipped.
    """
    if not 0.0 <= px_per_km <= 0.5:
        raise ValueError("X error rate must lie in [0, 0.5]")
    if distance_km < 0:
        raise ValueError("distance must be non-negative")
    p_clean = 0.5 * (1 + (1 - 2 * px_per_km) ** distance_km)
    return p_clean, p_clean ** 2 + (1 - p_clean) ** 2


def purification_oracle(q: float) -> tuple[float, float]:
    """Success probability and post-selected fidelity of one X-type round.

    Both input pairs carry an X flip independently with probability ``q``;
    the round keeps the pair when the parities agree.
    """
    success = (1 - q) ** 2 + q ** 2
    return success, (1 - q) ** 2 / success


@dataclass
class LinkStats:
    link: str
    fidelity: float
    generation_rate: float
    pairs: int


@dataclass
class RunResult:
    connection_id: int
    initiator: str
    responder: str
    target_count: int
    records: list = field(default_factory=list)
    started_at: float | None = None
    finished_at: float | None = None
    completed: bool = False
    link_stats: list = field(default_factory=list)
    error: str | None = None

    @property
    def measurement_count(self) -> int:
        return len(self.records)

    @property
    def fidelity(self) -> float:
        try:
            return estimate_fidelity(self.records)
        except TomographyError:
            return math.nan

    @property
    def tomography_time(self) -> float:
        if self.started_at is None or not self.records:
            return 0.0
        return self.records[-1].timestamp - self.started_at

    @property
    def bellpair_per_sec(self) -> float:
        t = self.tomography_time
        return self.measurement_count / t if t > 0 else 0.0


def _num(x: float) -> str:
    return repr(float(x))


def write_results(runs, path, events_processed: int = 0, kernel_stats=None) -> list[str]:
    """Write ``summary.txt`` and ``results.csv`` (plus ``kernel_stats.csv``) under ``path``.

    ``results.csv`` only holds simulated quantities so identical seeds give
    identical bytes; host timing goes to ``kernel_stats.csv``.
    """
    try:
        os.makedirs(path, exist_ok=True)
        written = []
        summary = os.path.join(path, "summary.txt")
        with open(summary, "w") as fh:
            for run in runs:
                fh.write(f"[connection {run.connection_id}: {run.initiator} -> {run.responder}]\n")
                fh.write(f"fidelity = {run.fidelity:.6f}\n")
                fh.write(f"bellpair_per_sec = {run.bellpair_per_sec:.6f}\n")
                fh.write(f"tomography_time = {run.tomography_time:.9f}\n")
                fh.write(f"tomography_measurements = {run.measurement_count}\n")
                fh.write(f"completed = {str(run.completed).lower()}\n")
                if run.error:
                    fh.write(f"error = {run.error}\n")
                if not run.completed:
                    fh.write(f"note = partial: {run.measurement_count} of {run.target_count} measurements\n")
                for ls in run.link_stats:
                    fh.write(f"link {ls.link} fidelity = {ls.fidelity:.6f}\n")
                    fh.write(f"link {ls.link} generation_rate = {ls.generation_rate:.6f}\n")
                fh.write("\n")
        written.append(summary)
        results = os.path.join(path, "results.csv")
        with open(results, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["connection_id", "initiator", "responder", "fidelity", "bellpair_per_sec",
                        "tomography_time_s", "measurements", "events_processed", "completed"])
            for run in runs:
                w.writerow([run.connection_id, run.initiator, run.responder, _num(run.fidelity),
                            _num(run.bellpair_per_sec), _num(run.tomography_time),
                            run.measurement_count, events_processed, int(run.completed)])
        written.append(results)
        if kernel_stats is not None:
            ks = os.path.join(path, "kernel_stats.csv")
            with open(ks, "w", newline="") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["events_processed", "final_time_s", "wall_clock_s", "cpu_s",
                            "events_per_sec", "stopped_by"])
                w.writerow([kernel_stats.events_processed, _num(kernel_stats.final_time),
                            _num(kernel_stats.wall_clock_seconds), _num(kernel_stats.cpu_seconds),
                            _num(kernel_stats.events_per_second), kernel_stats.stopped_by])
            written.append(ks)
    except OSError as exc:
        raise OSError(f"cannot write results to {path}: {exc}") from exc
    return written
