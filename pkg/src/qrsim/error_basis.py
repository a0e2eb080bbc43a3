"""Error-basis state model.

A qubit is described by a probability vector over seven discrete error
kinds ``(I, X, Y, Z, R, E, L)`` rather than by its quantum state.  Memory and
channel noise evolve the vector with a right-stochastic transition matrix;
the vector is sampled right before an operation touches the qubit.  Bell
pairs are then tracked as a two-bit Pauli label relative to ``|Phi+>``.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Sequence

from .backend import K

DIM = 7
NORM_TOL = 1e-9


class ErrorKind(enum.IntEnum):
    I = 0
    X = 1
    Y = 2
    Z = 3
    R = 4  # relaxation: collapses to |0>
    E = 5  # excitation: collapses to |1>
    L = 6  # photon / qubit loss, absorbing

    @property
    def is_pauli(self) -> bool:
        return self <= ErrorKind.Z


PAULI_KINDS = (ErrorKind.I, ErrorKind.X, ErrorKind.Y, ErrorKind.Z)
KIND_NAMES = tuple(k.name for k in ErrorKind)

# (x, z) components; Y carries both, global phase dropped
PAULI_BITS = {ErrorKind.I: (0, 0), ErrorKind.X: (1, 0), ErrorKind.Z: (0, 1), ErrorKind.Y: (1, 1)}
_BITS_TO_PAULI = {bits: kind for kind, bits in PAULI_BITS.items()}

CLEAN = (1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0)


class InvalidRatesError(ValueError):
    pass


def error_vector(values: Sequence[float]) -> tuple:
    """Validate and return a 7-element error probability vector."""
    v = tuple(float(p) for p in values)
    if len(v) != DIM:
        raise ValueError(f"error vector needs {DIM} entries, got {len(v)}")
    if any(p < -NORM_TOL or p > 1 + NORM_TOL for p in v):
        raise ValueError(f"probabilities out of [0, 1]: {v}")
    if abs(sum(v) - 1.0) > NORM_TOL:
        raise ValueError(f"error vector sums to {sum(v)!r}, not 1")
    return v


def indicator(kind: ErrorKind) -> tuple:
    v = [0.0] * DIM
    v[int(kind)] = 1.0
    return tuple(v)


def rates_from_errors(x=0.0, y=0.0, z=0.0, r=0.0, e=0.0, loss=0.0) -> tuple:
    """Per-step probabilities ``(P_I, ..., P_L)`` with ``P_I`` filling the remainder."""
    errs = (x, y, z, r, e, loss)
    if any(p < 0 for p in errs):
        raise InvalidRatesError(f"negative error probability in {errs}")
    total = math.fsum(errs)
    if total > 1.0 + NORM_TOL:
        raise InvalidRatesError(f"error probabilities sum to {total} > 1")
    return (max(0.0, 1.0 - total),) + tuple(float(p) for p in errs)


class TransitionMatrix:
    """7x7 right-stochastic matrix advancing an error vector by one step.

    Powers ``Q**(2**i)`` are cached on first use so that lazily advancing a
    qubit by ``n`` steps costs ``O(log n)`` vector-matrix products.
    """

    __slots__ = ("flat", "rates", "is_identity", "_powers")

    def __init__(self, flat: Sequence[float], rates: tuple | None = None):
        if len(flat) != DIM * DIM:
            raise ValueError("transition matrix must have 49 entries")
        self.flat = tuple(float(x) for x in flat)
        self.rates = rates
        self.is_identity = self.flat == K.identity()
        self._powers = [self.flat]

    def __getitem__(self, ij):
        i, j = ij
        return self.flat[i * DIM + j]

    def __eq__(self, other):
        return isinstance(other, TransitionMatrix) and self.flat == other.flat

    def __hash__(self):
        return hash(self.flat)

    def __repr__(self):
        return f"TransitionMatrix(rates={self.rates})"

    def row(self, i: int) -> tuple:
        return self.flat[i * DIM:(i + 1) * DIM]

    def rows(self) -> list[tuple]:
        return [self.row(i) for i in range(DIM)]

    def as_array(self):
        import numpy as np

        return np.array(self.flat).reshape(DIM, DIM)

    def power_table(self, steps: int) -> list:
        need = max(steps.bit_length(), 1)
        powers = self._powers
        while len(powers) < need:
            last = powers[-1]
            powers.append(K.matmul(last, last))
        return powers

    def power(self, steps: int) -> "TransitionMatrix":
        return TransitionMatrix(K.matpow(self.flat, steps))


def make_transition_matrix(rates: Sequence[float] | Mapping[str, float]) -> TransitionMatrix:
    """Build the transition matrix from per-step error probabilities.

    ``rates`` is ``(P_I, P_X, P_Y, P_Z, P_R, P_E, P_L)`` or a mapping keyed by
    kind name.  Pauli rows permute the Pauli columns by group composition;
    relaxed/excited qubits never return to a Pauli state, and loss is
    absorbing.
    """
    if isinstance(rates, Mapping):
        unknown = set(rates) - set(KIND_NAMES)
        if unknown:
            raise InvalidRatesError(f"unknown error kinds {sorted(unknown)}")
        rates = [rates.get(name, 0.0) for name in KIND_NAMES]
    p = tuple(float(x) for x in rates)
    if len(p) != DIM:
        raise InvalidRatesError(f"need {DIM} rates, got {len(p)}")
    if any(x < 0 or x > 1 for x in p):
        raise InvalidRatesError(f"rates must lie in [0, 1]: {p}")
    if abs(math.fsum(p) - 1.0) > NORM_TOL:
        raise InvalidRatesError(f"rates sum to {math.fsum(p)!r}, expected 1")
    pi, px, py, pz, pr, pe, pl = p
    q = [
        pi, px, py, pz, pr, pe, pl,
        px, pi, pz, py, pr, pe, pl,
        py, pz, pi, px, pr, pe, pl,
        pz, py, px, pi, pr, pe, pl,
        0.0, 0.0, 0.0, 0.0, pi + pz + pr, px + py + pe, pl,
        0.0, 0.0, 0.0, 0.0, px + py + pr, pi + pz + pe, pl,
        0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0,
    ]
    return TransitionMatrix(q, rates=p)


def kind_matrix(kind: ErrorKind) -> TransitionMatrix:
    """Matrix that applies ``kind`` with certainty."""
    return make_transition_matrix(indicator(kind))


def evolve(v: Sequence[float], q: TransitionMatrix, steps: int) -> tuple:
    """Return ``v @ Q**steps`` by binary powers of ``q``."""
    if steps < 0:
        raise ValueError("steps must be non-negative")
    if steps == 0 or q.is_identity:
        return tuple(v)
    return K.evolve_powers(v, q.power_table(steps), steps)


def sample_error(v: Sequence[float], rng) -> ErrorKind:
    """Draw an error kind with probability ``v[j]``; ``rng`` is a ``random.Random``."""
    return ErrorKind(K.sample_index(v, rng.random()))


def conditional_no_loss(rates: Sequence[float]) -> tuple:
    """Rates of the same process conditioned on the qubit not being lost."""
    pl = rates[ErrorKind.L]
    if pl >= 1.0:
        raise InvalidRatesError("loss probability 1 leaves nothing to condition on")
    scale = 1.0 / (1.0 - pl)
    out = [x * scale for x in rates[:ErrorKind.L]] + [0.0]
    out[0] = max(0.0, 1.0 - math.fsum(out[1:]))
    return tuple(out)


def channel_matrix(per_km_rates: Sequence[float], distance_km: float) -> TransitionMatrix:
    """Per-km transition matrix raised to ``distance_km``.

    Whole kilometres use exact integer powers; a fractional remainder uses the
    principal real matrix power, which matches ``(1 - 2p)**d`` style closed
    forms for Pauli channels.
    """
    if distance_km < 0:
        raise ValueError("distance must be non-negative")
    q = make_transition_matrix(per_km_rates)
    whole = int(math.floor(distance_km + 1e-12))
    frac = distance_km - whole
    flat = K.matpow(q.flat, whole)
    if frac > 1e-12 and not q.is_identity:
        flat = K.matmul(flat, _fractional_power(q, frac))
    return TransitionMatrix(flat)


def _fractional_power(q: TransitionMatrix, frac: float) -> tuple:
    import numpy as np
    from scipy.linalg import fractional_matrix_power

    m = np.real_if_close(fractional_matrix_power(q.as_array(), frac), tol=1e6)
    m = np.clip(np.real(m), 0.0, None)
    m /= m.sum(axis=1, keepdims=True)
    return tuple(m.ravel().tolist())


def apply_channel(v: Sequence[float], per_km_rates: Sequence[float], distance_km: float) -> tuple:
    """Evolve ``v`` through ``distance_km`` of fibre with per-km error rates."""
    if distance_km == 0:
        return tuple(v)
    return K.vecmat(v, channel_matrix(per_km_rates, distance_km).flat)


def compose_pauli(e1: ErrorKind, e2: ErrorKind) -> ErrorKind:
    """Product of two Pauli errors modulo phase."""
    try:
        x1, z1 = PAULI_BITS[ErrorKind(e1)]
        x2, z2 = PAULI_BITS[ErrorKind(e2)]
    except KeyError:
        raise ValueError(f"compose_pauli takes I/X/Y/Z only, got {e1!r}, {e2!r}") from None
    return _BITS_TO_PAULI[(x1 ^ x2, z1 ^ z2)]


BELL_LABELS = {(0, 0): "Phi+", (1, 0): "Psi+", (0, 1): "Phi-", (1, 1): "Psi-"}


@dataclass(frozen=True, slots=True)
class PairError:
    """Deviation of a Bell pair from ``|Phi+>``.

    ``x``/``z`` are the Pauli components; ``lost`` and ``decohered`` mark
    pairs that no longer carry a Bell label.
    """

    x: int = 0
    z: int = 0
    lost: bool = False
    decohered: bool = False

    @classmethod
    def from_label(cls, label: str) -> "PairError":
        for bits, name in BELL_LABELS.items():
            if name == label:
                return cls(*bits)
        raise ValueError(f"unknown Bell label {label!r}")

    @classmethod
    def from_kinds(cls, *kinds: ErrorKind, frame: tuple[int, int] = (0, 0)) -> "PairError":
        """Combine single-qubit error kinds (any side) into one pair error."""
        x, z = frame
        lost = decohered = False
        for k in kinds:
            if k == ErrorKind.L:
                lost = True
            elif k in (ErrorKind.R, ErrorKind.E):
                decohered = True
            else:
                kx, kz = PAULI_BITS[k]
                x ^= kx
                z ^= kz
        return cls(x, z, lost, decohered)

    @property
    def bits(self) -> tuple[int, int]:
        return (self.x, self.z)

    @property
    def label(self) -> str | None:
        if self.lost or self.decohered:
            return None
        return BELL_LABELS[(self.x, self.z)]

    def xor(self, other: "PairError") -> "PairError":
        return PairError(
            self.x ^ other.x,
            self.z ^ other.z,
            self.lost or other.lost,
            self.decohered or other.decohered,
        )


def swap_outcome(a: PairError, b: PairError) -> PairError | None:
    """Pair error left after a Bell measurement joins pairs ``a`` and ``b``.

    Returns ``None`` when either input is lost: the swap failed and both
    partner pairs must be discarded.
    """
    if a.lost or b.lost:
        return None
    return a.xor(b)


@dataclass(frozen=True, slots=True)
class PurifyResult:
    success: bool
    kept: PairError


X_TYPE = "X"
Z_TYPE = "Z"


def purify(kept: PairError, sacrificed: PairError, basis: str) -> PurifyResult:
    """Single-selection parity check between two pairs.

    X-type applies bilateral CNOTs (kept as control) and compares Z-basis
    readouts of the sacrificed pair, so it detects bit flips; Z-type is the
    dual.  ``kept`` in the result is the kept pair's state after the CNOTs,
    which the caller keeps only on success.
    """
    if kept.lost or sacrificed.lost:
        return PurifyResult(False, PairError(kept.x, kept.z, lost=True))
    decohered = kept.decohered or sacrificed.decohered
    if basis == X_TYPE:
        success = kept.x == sacrificed.x
        out = PairError(kept.x, kept.z ^ sacrificed.z, decohered=decohered)
    elif basis == Z_TYPE:
        success = kept.z == sacrificed.z
        out = PairError(kept.x ^ sacrificed.x, kept.z, decohered=decohered)
    else:
        raise ValueError(f"unknown purification basis {basis!r}")
    return PurifyResult(success, out)
