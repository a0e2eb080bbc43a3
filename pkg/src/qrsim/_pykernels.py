"""Pure-Python implementations of the error-vector kernels.

Matrices are flat row-major tuples of ``DIM * DIM`` floats, vectors are tuples
of ``DIM`` floats.  ``_ckernels.pyx`` implements the same functions in C and
must stay numerically interchangeable with this module.
"""

from __future__ import annotations

DIM = 7


def matmul(a, b):
    out = [0.0] * (DIM * DIM)
    for i in range(DIM):
        ri = i * DIM
        for k in range(DIM):
            aik = a[ri + k]
            if aik == 0.0:
                continue
            rk = k * DIM
            for j in range(DIM):
                out[ri + j] += aik * b[rk + j]
    return tuple(out)


def vecmat(v, m):
    out = [0.0] * DIM
    for k in range(DIM):
        vk = v[k]
        if vk == 0.0:
            continue
        rk = k * DIM
        for j in range(DIM):
            out[j] += vk * m[rk + j]
    return tuple(out)


def matpow(m, n):
    result = identity()
    base = tuple(m)
    while n:
        if n & 1:
            result = matmul(result, base)
        n >>= 1
        if n:
            base = matmul(base, base)
    return result


def evolve_powers(v, powers, steps):
    """Return ``v @ Q**steps`` where ``powers[i] == Q**(2**i)``.

    ``powers`` must cover every set bit of ``steps``.
    """
    out = tuple(v)
    i = 0
    while steps:
        if steps & 1:
            out = vecmat(out, powers[i])
        steps >>= 1
        i += 1
    return out


def sample_index(v, u):
    acc = 0.0
    last = 0
    for j in range(DIM):
        p = v[j]
        if p > 0.0:
            acc += p
            last = j
            if u < acc:
                return j
    # u landed in the rounding gap above the cumulative sum
    return last


def identity():
    return tuple(1.0 if i == j else 0.0 for i in range(DIM) for j in range(DIM))
