"""Brute-force quantum oracles, independent of the error-basis code paths.

Everything here works on explicit state vectors / density matrices with
numpy.  Bell labels are returned as (x, z) bit pairs relative to |Phi+>.
"""

from __future__ import annotations

import itertools

import numpy as np

I2 = np.eye(2, dtype=complex)
X = np.array([[0, 1], [1, 0]], dtype=complex)
Z = np.array([[1, 0], [0, -1]], dtype=complex)
Y = np.array([[0, -1j], [1j, 0]], dtype=complex)
H = np.array([[1, 1], [1, -1]], dtype=complex) / np.sqrt(2)
PAULI = {"I": I2, "X": X, "Y": Y, "Z": Z}
PAULI_OF_BITS = {(0, 0): "I", (1, 0): "X", (0, 1): "Z", (1, 1): "Y"}

_ket = {0: np.array([1, 0], dtype=complex), 1: np.array([0, 1], dtype=complex)}
PHI_P = (np.kron(_ket[0], _ket[0]) + np.kron(_ket[1], _ket[1])) / np.sqrt(2)
BELL = {bits: np.kron(I2, PAULI[PAULI_OF_BITS[bits]]) @ PHI_P for bits in PAULI_OF_BITS}


def op_on(n: int, ops: dict[int, np.ndarray]) -> np.ndarray:
    out = np.array([[1.0 + 0j]])
    for q in range(n):
        out = np.kron(out, ops.get(q, I2))
    return out


def cnot(n: int, control: int, target: int) -> np.ndarray:
    p0 = np.array([[1, 0], [0, 0]], dtype=complex)
    p1 = np.array([[0, 0], [0, 1]], dtype=complex)
    return op_on(n, {control: p0}) + op_on(n, {control: p1, target: X})


def bell_label_of(state2: np.ndarray) -> tuple[int, int]:
    """Identify a (pure or mixed) two-qubit Bell state; asserts it is one."""
    if state2.ndim == 1:
        rho = np.outer(state2, state2.conj())
    else:
        rho = state2
    fids = {bits: float(np.real(b.conj() @ rho @ b)) for bits, b in BELL.items()}
    bits = max(fids, key=fids.get)
    assert abs(fids[bits] - 1.0) < 1e-9, fids
    return bits


def swap_oracle(err1: str, err2: str) -> set[tuple[int, int]]:
    """Labels of the A-C pair after a corrected Bell measurement on B1, B2.

    Qubits: 0=A, 1=B1, 2=B2, 3=C; pair A-B1 carries Pauli ``err1`` on B1 and
    pair B2-C carries ``err2`` on C.  Returns the set of labels over all
    measurement outcomes with nonzero probability.
    """
    psi = np.kron(np.kron(I2, PAULI[err1]) @ PHI_P, np.kron(I2, PAULI[err2]) @ PHI_P)
    clean = np.kron(PHI_P, PHI_P)
    labels = set()
    for bits, bell in BELL.items():
        proj = np.kron(np.kron(I2, np.outer(bell, bell.conj())), I2)
        post = proj @ psi
        if np.linalg.norm(post) < 1e-12:
            continue
        ref = proj @ clean
        ac, ref_ac = _reduce_ac(post), _reduce_ac(ref)
        # correction is chosen from the clean outcome: undo its label on C
        corr = np.kron(I2, PAULI[PAULI_OF_BITS[bell_label_of(ref_ac)]])
        labels.add(bell_label_of(corr @ ac @ corr.conj().T))
    return labels


def _reduce_ac(state4: np.ndarray) -> np.ndarray:
    t = state4.reshape(2, 2, 2, 2)
    # trace out B1, B2 explicitly
    m = np.zeros((4, 4), dtype=complex)
    for a, c, a2, c2 in itertools.product(range(2), repeat=4):
        m[2 * a + c, 2 * a2 + c2] = sum(
            t[a, b1, b2, c] * np.conj(t[a2, b1, b2, c2]) for b1 in range(2) for b2 in range(2)
        )
    return m / np.trace(m)


def purify_oracle(kept: tuple[int, int], sac: tuple[int, int], basis: str):
    """Run one single-selection purification on explicit density matrices.

    Qubits: 0=kept_A, 1=kept_B, 2=sac_A, 3=sac_B.  Returns
    ``(success_probability, kept_label_on_success, kept_label_on_failure)``;
    labels are None for branches with zero probability.
    """
    psi = np.kron(BELL[kept], BELL[sac])
    rho = np.outer(psi, psi.conj())
    if basis == "X":
        u = cnot(4, 1, 3) @ cnot(4, 0, 2)
        meas = np.eye(16)
    elif basis == "Z":
        u = cnot(4, 3, 1) @ cnot(4, 2, 0)
        meas = op_on(4, {2: H, 3: H})
    else:
        raise ValueError(basis)
    rho = meas @ u @ rho @ u.conj().T @ meas.conj().T
    p_succ = 0.0
    branches = {True: np.zeros((4, 4), dtype=complex), False: np.zeros((4, 4), dtype=complex)}
    t = rho.reshape([2] * 8)
    for ma, mb in itertools.product(range(2), repeat=2):
        block = t[:, :, ma, mb, :, :, ma, mb].reshape(4, 4)
        branches[ma == mb] += block
    p_succ = float(np.real(np.trace(branches[True])))
    out = []
    for ok in (True, False):
        tr = np.real(np.trace(branches[ok]))
        out.append(bell_label_of(branches[ok] / tr) if tr > 1e-12 else None)
    return p_succ, out[0], out[1]


def bell_correlator(bits: tuple[int, int], basis_a: str, basis_b: str) -> float:
    psi = BELL[bits]
    op = np.kron(PAULI[basis_a], PAULI[basis_b])
    return float(np.real(psi.conj() @ op @ psi))


def mixture_fidelity(weights: dict[tuple[int, int], float]) -> float:
    rho = sum(w * np.outer(BELL[b], BELL[b].conj()) for b, w in weights.items())
    return float(np.real(PHI_P.conj() @ rho @ PHI_P))


def purification_mixture_oracle(q: float, basis: str = "X") -> tuple[float, float]:
    """Success probability and post-selected Phi+ fidelity for two pairs with
    independent X flips of probability ``q``, from the circuit oracle."""
    weights = {(0, 0): 1 - q, (1, 0): q}
    p_total = 0.0
    p_good = 0.0
    for kb, wk in weights.items():
        for sb, ws in weights.items():
            p_succ, on_success, _ = purify_oracle(kb, sb, basis)
            p_total += wk * ws * p_succ
            if on_success == (0, 0):
                p_good += wk * ws * p_succ
    return p_total, p_good / p_total


def walk_distribution(q: np.ndarray, start: int, steps: int, walks: int, seed: int) -> np.ndarray:
    """Final-state counts of ``walks`` independent ``steps``-step Markov walks."""
    cum = np.cumsum(q, axis=1)
    gen = np.random.default_rng(seed)
    state = np.full(walks, start)
    for _ in range(steps):
        u = gen.random(walks)
        state = np.minimum((u[:, None] >= cum[state]).sum(axis=1), q.shape[0] - 1)
    return np.bincount(state, minlength=q.shape[0])


def chi_square_pvalue(observed: np.ndarray, expected: np.ndarray) -> float:
    """Goodness of fit, folding cells expected below 5 into one."""
    from scipy import stats

    keep = expected > 5
    obs, exp = observed[keep], expected[keep]
    if expected[~keep].sum() > 0:
        obs = np.append(obs, observed[~keep].sum())
        exp = np.append(exp, expected[~keep].sum())
    return float(stats.chisquare(obs, exp * obs.sum() / exp.sum()).pvalue)
